"""K-fold discovery/estimation and pooling across validation folds."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import AnalysisConfig, Dataset, ShiftSpec, resolve_shift
from .errors import ConfigError, EstimationError
from .learners import derive_seed
from .search import PartitionRule, region_stats, select_max_modifier
from .tmle import fit_first_stage

log = logging.getLogger(__name__)

Z975 = float(norm.ppf(0.975))


def make_folds(n: int, K: int, seed: int = 0) -> list[np.ndarray]:
    if K < 2:
        raise ConfigError("need at least 2 folds")
    if n < 2 * K:
        raise ConfigError("n = %d is too small for %d folds" % (n, K))
    perm = np.random.default_rng([seed, 104729]).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, K)]


def two_sided_p(z: float) -> float:
    return float(2.0 * norm.sf(abs(z)))


@dataclass(frozen=True)
class Estimate:
    psi: float
    se: float

    @property
    def variance(self) -> float:
        return self.se ** 2

    @property
    def ci(self) -> tuple[float, float]:
        return ci95(self.psi, self.se)

    @property
    def p_value(self) -> float:
        if self.se > 0:
            return two_sided_p(self.psi / self.se)
        return 0.0 if self.psi != 0 else 1.0

    def to_dict(self) -> dict:
        lo, hi = self.ci
        return {"psi": self.psi, "variance": self.variance, "se": self.se, "ci_lo": lo, "ci_hi": hi,
                "p_value": self.p_value}


def ci95(psi: float, se: float) -> tuple[float, float]:
    return psi - 1.96 * se, psi + 1.96 * se


def mean_estimate(iie, phi) -> Estimate:
    """Mean of the IIEs with the EIF standard error sd(phi)/sqrt(n)."""
    iie = np.asarray(iie, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n = len(iie)
    se = float(phi.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(iie.mean()), se)


def difference_test(psi_v: float, var_v: float, psi_vc: float, var_vc: float):
    """(diff, se, z, p) for psi_v - psi_vc, ignoring covariance between regions."""
    if not (var_v > 0 and var_vc > 0):
        raise EstimationError("variances must be positive")
    diff = psi_v - psi_vc
    se = float(np.sqrt(var_v + var_vc))
    z = diff / se
    return diff, se, z, two_sided_p(z)


@dataclass(eq=False)
class FoldResult:
    fold: int
    exposure: str | None
    rule: PartitionRule | None
    effect_v: Estimate | None
    effect_vc: Estimate | None
    n_v: int
    n_vc: int
    marginal: tuple[Estimate, ...]
    train_t: float = float("nan")
    flagged: bool = False
    note: str = ""
    # validation rows, kept for pooling
    rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    in_v: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    iie: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    phi: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def has_modifier(self) -> bool:
        return self.rule is not None

    def to_dict(self) -> dict:
        return {
            "fold": self.fold,
            "exposure": self.exposure,
            "rule": None if self.rule is None else self.rule.to_dict(),
            "effect_v": None if self.effect_v is None else self.effect_v.to_dict(),
            "effect_vc": None if self.effect_vc is None else self.effect_vc.to_dict(),
            "n_v": self.n_v,
            "n_vc": self.n_vc,
            "train_t": self.train_t,
            "flagged": self.flagged,
            "note": self.note,
            "marginal": [m.to_dict() for m in self.marginal],
        }


def run_fold(train: Dataset, valid: Dataset, shift: ShiftSpec, config: AnalysisConfig, fold_index: int,
             rows=None) -> FoldResult:
    """Discover a rule on ``train``; estimate region and marginal effects on ``valid``."""
    seed = derive_seed(config.seed, 11, fold_index)
    stage = fit_first_stage(train, shift, config, seed=seed)
    found = select_max_modifier(stage.effects, train.covariates, config, train.covariate_names)
    veff = stage.apply(valid)
    phi = veff.eif_values
    marginal = tuple(mean_estimate(veff.iie[:, k], phi[:, k]) for k in range(valid.p))
    rows = np.arange(valid.n) if rows is None else np.asarray(rows)
    base = dict(fold=fold_index, marginal=marginal, rows=rows, iie=veff.iie, phi=phi)
    if not found.found:
        return FoldResult(exposure=None, rule=None, effect_v=None, effect_vc=None, n_v=0, n_vc=0,
                          note="no significant modifier", **base)
    k = valid.exposure_index(found.exposure)
    rule = found.split.rule
    in_v = rule.mask(valid.covariates, valid.covariate_names)
    n_v, n_vc = int(in_v.sum()), int((~in_v).sum())
    # two rows give a one-degree-of-freedom variance; treat that as unusable too
    if n_v <= 2 or n_vc <= 2:
        return FoldResult(exposure=found.exposure, rule=rule, effect_v=None, effect_vc=None, n_v=n_v, n_vc=n_vc,
                          train_t=found.split.t_stat, flagged=True, in_v=in_v,
                          note="validation region has 2 or fewer rows on one side", **base)
    ev = mean_estimate(veff.iie[in_v, k], phi[in_v, k])
    evc = mean_estimate(veff.iie[~in_v, k], phi[~in_v, k])
    return FoldResult(exposure=found.exposure, rule=rule, effect_v=ev, effect_vc=evc, n_v=n_v, n_vc=n_vc,
                      train_t=found.split.t_stat, in_v=in_v, **base)


@dataclass(eq=False)
class PooledReport:
    per_region: dict  # "v" / "vc" -> Estimate
    difference: dict | None
    modal_rule: PartitionRule | None
    modal_exposure: str | None
    agreement: float
    exposure_agreement: float
    variable_importance: dict  # exposure -> Estimate
    folds_used: int
    folds_flagged: int
    folds_no_modifier: int
    notes: list = field(default_factory=list)

    @property
    def found(self) -> bool:
        return bool(self.per_region)

    def to_dict(self) -> dict:
        return {
            "per_region": {k: v.to_dict() for k, v in self.per_region.items()},
            "difference": self.difference,
            "modal_rule": None if self.modal_rule is None else self.modal_rule.to_dict(),
            "modal_exposure": self.modal_exposure,
            "agreement": self.agreement,
            "exposure_agreement": self.exposure_agreement,
            "variable_importance": {k: v.to_dict() for k, v in self.variable_importance.items()},
            "folds_used": self.folds_used,
            "folds_flagged": self.folds_flagged,
            "folds_no_modifier": self.folds_no_modifier,
            "notes": list(self.notes),
        }


def _modal_rule(folds):
    roots = [f.rule.conditions[0] for f in folds if f.rule is not None and f.rule.depth]
    if not roots:
        return None, 0.0
    counts = Counter(c for c, _, _ in roots)
    top = max(counts.values())
    # most frequent root covariate; first seen wins ties
    name = next(c for c, _, _ in roots if counts[c] == top)
    thr = float(np.median([t for c, _, t in roots if c == name]))
    return PartitionRule(((name, "<=", thr),)), top / len(folds)


def pool(fold_results, exposure_names=None) -> PooledReport:
    """Stack validation rows across folds and re-estimate on the union."""
    fold_results = list(fold_results)
    if not fold_results:
        raise EstimationError("no fold results to pool")
    usable = [f for f in fold_results if f.has_modifier and not f.flagged]
    flagged = sum(f.flagged for f in fold_results)
    no_mod = sum(not f.has_modifier for f in fold_results)
    notes = []
    if flagged:
        notes.append("%d fold(s) flagged and excluded from region pooling" % flagged)
    p = fold_results[0].iie.shape[1] if fold_results[0].iie.ndim == 2 else 0
    names = list(exposure_names) if exposure_names is not None else ["A%d" % (k + 1) for k in range(p)]
    all_iie = np.vstack([f.iie for f in fold_results])
    all_phi = np.vstack([f.phi for f in fold_results])
    vim = {names[k]: mean_estimate(all_iie[:, k], all_phi[:, k]) for k in range(p)}

    per_region, difference = {}, None
    modal_rule, agreement = _modal_rule(fold_results)
    exposures = [f.exposure for f in fold_results if f.exposure is not None]
    modal_exposure, ex_agree = None, 0.0
    if exposures:
        counts = Counter(exposures)
        modal_exposure = next(e for e in exposures if counts[e] == max(counts.values()))
        ex_agree = counts[modal_exposure] / len(fold_results)
    if usable:
        iie_v, phi_v, iie_c, phi_c = [], [], [], []
        for f in usable:
            k = names.index(f.exposure)
            iie_v.append(f.iie[f.in_v, k])
            phi_v.append(f.phi[f.in_v, k])
            iie_c.append(f.iie[~f.in_v, k])
            phi_c.append(f.phi[~f.in_v, k])
        ev = mean_estimate(np.concatenate(iie_v), np.concatenate(phi_v))
        evc = mean_estimate(np.concatenate(iie_c), np.concatenate(phi_c))
        per_region = {"v": ev, "vc": evc}
        if ev.variance > 0 and evc.variance > 0:
            diff, se, z, pv = difference_test(ev.psi, ev.variance, evc.psi, evc.variance)
            difference = {"psi_diff": diff, "se": se, "z": z, "p_value": pv}
        if len({str(f.rule) for f in usable}) > 1 or len({f.exposure for f in usable}) > 1:
            notes.append("folds disagree on the rule; regions are applied fold by fold")
    elif flagged == len(fold_results):
        raise EstimationError("all folds flagged")
    return PooledReport(per_region, difference, modal_rule, modal_exposure, agreement, ex_agree, vim,
                        len(usable), flagged, no_mod, notes)


@dataclass(eq=False)
class AnalysisResult:
    folds: list
    pooled: PooledReport
    shift: ShiftSpec
    config: AnalysisConfig
    fold_index: list
    exposure_names: tuple
    n: int
    dropped: int = 0

    def membership(self) -> np.ndarray:
        """Per-row V membership under each row's own fold rule (True where no rule)."""
        out = np.ones(self.n, dtype=bool)
        for f in self.folds:
            if f.rule is not None and len(f.in_v):
                out[f.rows] = f.in_v
        return out


def _fold_job(args):
    dataset, idx_train, idx_valid, shift, config, k = args
    return run_fold(dataset.subset(idx_train), dataset.subset(idx_valid), shift, config, k, rows=idx_valid)


def run_analysis(dataset: Dataset, shift: ShiftSpec, config: AnalysisConfig = AnalysisConfig()) -> AnalysisResult:
    """Full K-fold discovery/estimation with pooled summaries."""
    raw = resolve_shift(dataset, shift)
    folds = make_folds(dataset.n, config.folds, config.seed)
    jobs = []
    for k, valid_idx in enumerate(folds):
        train_idx = np.setdiff1d(np.arange(dataset.n), valid_idx)
        jobs.append((dataset, train_idx, valid_idx, raw, config, k + 1))
    if config.threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=config.threads) as ex:
            results = list(ex.map(_fold_job, jobs))
    else:
        results = [_fold_job(j) for j in jobs]
    pooled = pool(results, dataset.exposure_names)
    return AnalysisResult(results, pooled, raw, config, folds, dataset.exposure_names, dataset.n, dataset.dropped)
