"""Greedy recursive partitioning of the covariate space by t-statistic.

A split compares the mean IIE inside a region V = {w_j <= s} with its
complement; the variance of each region mean is the within-region sample
variance of the influence values divided by the region size.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import AnalysisConfig

_TINY = 1e-300


@dataclass(frozen=True)
class PartitionRule:
    conditions: tuple[tuple[str, str, float], ...] = ()

    def __post_init__(self):
        for name, op, thr in self.conditions:
            if op not in ("<=", ">"):
                raise ValueError("comparator must be '<=' or '>', got %r" % op)
        object.__setattr__(self, "conditions", tuple((str(c), str(o), float(t)) for c, o, t in self.conditions))

    @property
    def depth(self) -> int:
        return len(self.conditions)

    def mask(self, covariates: np.ndarray, names: Sequence[str]) -> np.ndarray:
        """Rows satisfying every condition (all rows for the empty rule)."""
        names = list(names)
        m = np.ones(len(covariates), dtype=bool)
        for name, op, thr in self.conditions:
            col = covariates[:, names.index(name)]
            m &= (col <= thr) if op == "<=" else (col > thr)
        return m

    def refine(self, name, op, thr) -> "PartitionRule":
        return PartitionRule(self.conditions + ((name, op, thr),))

    def negated_last(self) -> "PartitionRule":
        *head, (name, op, thr) = self.conditions
        return PartitionRule(tuple(head) + ((name, ">" if op == "<=" else "<=", thr),))

    def __str__(self) -> str:
        if not self.conditions:
            return "all"
        return " & ".join("%s %s %s" % (c, o, _fmt(t)) for c, o, t in self.conditions)

    def complement_str(self) -> str:
        if not self.conditions:
            return "none"
        if len(self.conditions) == 1:
            return str(self.negated_last())
        return "not (%s)" % self

    def to_dict(self) -> dict:
        return {"conditions": [{"covariate": c, "op": o, "threshold": t} for c, o, t in self.conditions],
                "text": str(self)}

    @classmethod
    def from_dict(cls, d) -> "PartitionRule":
        return cls(tuple((c["covariate"], c["op"], c["threshold"]) for c in d["conditions"]))


def _fmt(x: float) -> str:
    return ("%.6g" % x) if x != int(x) else str(int(x))


@dataclass(frozen=True)
class SplitStat:
    rule: PartitionRule
    exposure: str | None
    psi_v: float
    psi_vc: float
    psi_diff: float
    var_diff: float
    t_stat: float
    n_v: int
    n_vc: int

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("exposure", "psi_v", "psi_vc", "psi_diff", "var_diff", "t_stat",
                                            "n_v", "n_vc")}
        d["rule"] = self.rule.to_dict()
        return d


def region_stats(iie, ice, mask):
    """(psi_v, psi_vc, var_diff, n_v, n_vc) for a membership mask."""
    iie = np.asarray(iie, dtype=float)
    ice = np.asarray(ice, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    a, b = iie[mask], iie[~mask]
    ia, ib = ice[mask], ice[~mask]
    n_v, n_vc = len(a), len(b)
    psi_v = float(a.mean()) if n_v else float("nan")
    psi_vc = float(b.mean()) if n_vc else float("nan")
    var_v = ia.var(ddof=1) / n_v if n_v > 1 else 0.0
    var_vc = ib.var(ddof=1) / n_vc if n_vc > 1 else 0.0
    return psi_v, psi_vc, float(var_v + var_vc), n_v, n_vc


def split_stat(iie, ice, mask, rule=PartitionRule(), exposure=None) -> SplitStat:
    psi_v, psi_vc, var, n_v, n_vc = region_stats(iie, ice, mask)
    diff = psi_v - psi_vc
    var = max(var, _TINY)
    t = diff / np.sqrt(var) if diff != 0 else 0.0
    return SplitStat(rule, exposure, psi_v, psi_vc, diff, var, float(t), n_v, n_vc)


def evaluate_split(iie, ice, covariate, threshold, min_obs, name="W", exposure=None) -> SplitStat | None:
    """Statistics for V = {covariate <= threshold}; None if a side is under min_obs."""
    mask = np.asarray(covariate) <= threshold
    n_v = int(mask.sum())
    if n_v < min_obs or len(mask) - n_v < min_obs:
        return None
    return split_stat(iie, ice, mask, PartitionRule(((name, "<=", threshold),)), exposure)


def candidate_thresholds(x, max_thresholds=1000) -> np.ndarray:
    """Midpoints of consecutive unique values, thinned to equally spaced ranks."""
    u = np.unique(x)
    mids = 0.5 * (u[1:] + u[:-1])
    if max_thresholds and len(mids) > max_thresholds:
        pick = np.unique(np.round(np.linspace(0, len(mids) - 1, max_thresholds)).astype(int))
        mids = mids[pick]
    return mids


def _scan_covariate(x, iie, ice, min_obs, max_thresholds):
    """|t| for every candidate threshold of one covariate, via prefix sums."""
    thr = candidate_thresholds(x, max_thresholds)
    if len(thr) == 0:
        return thr, np.empty(0)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    d = iie[order]
    c = ice[order] - ice.mean()
    n = len(x)
    cd, cc, cq = np.cumsum(d), np.cumsum(c), np.cumsum(c * c)
    n_v = np.searchsorted(xs, thr, side="right")
    n_vc = n - n_v
    ok = (n_v >= max(min_obs, 2)) & (n_vc >= max(min_obs, 2))
    nv = np.maximum(n_v, 1)
    nvc = np.maximum(n_vc, 1)
    i = nv - 1
    sd_v, sc_v, sq_v = cd[i], cc[i], cq[i]
    sd_c, sc_c, sq_c = cd[-1] - sd_v, cc[-1] - sc_v, cq[-1] - sq_v
    with np.errstate(divide="ignore", invalid="ignore"):
        var_v = (sq_v - sc_v ** 2 / nv) / np.maximum(nv - 1, 1) / nv
        var_c = (sq_c - sc_c ** 2 / nvc) / np.maximum(nvc - 1, 1) / nvc
        diff = sd_v / nv - sd_c / nvc
        t = np.abs(diff) / np.sqrt(np.maximum(var_v + var_c, _TINY))
    t = np.where(ok & (diff != 0), t, np.where(ok, 0.0, -1.0))
    return thr, t


def best_split(iie, ice, covariates, config: AnalysisConfig, names=None, rows=None, exposure=None,
               min_obs=None) -> SplitStat | None:
    """Highest-|t| single split over all covariates, or None when insignificant."""
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    names = list(names) if names is not None else ["W%d" % (j + 1) for j in range(covariates.shape[1])]
    rows = np.arange(len(iie)) if rows is None else np.asarray(rows)
    iie_r = np.asarray(iie, dtype=float)[rows]
    ice_r = np.asarray(ice, dtype=float)[rows]
    if min_obs is None:
        min_obs = config.resolved_min_obs(len(iie))
    best = None  # (|t|, j, threshold)
    for j in range(covariates.shape[1]):
        thr, t = _scan_covariate(covariates[rows, j], iie_r, ice_r, min_obs, config.max_thresholds)
        if len(t) == 0 or t.max() < 0:
            continue
        i = int(np.argmax(t))  # first maximum -> lowest threshold on ties
        if best is None or t[i] > best[0]:
            best = (float(t[i]), j, float(thr[i]))
    if best is None or best[0] < config.significance_z:
        return None
    _, j, s = best
    mask = covariates[rows, j] <= s
    return split_stat(iie_r, ice_r, mask, PartitionRule(((names[j], "<=", s),)), exposure)


@dataclass
class PartitionNode:
    rule: PartitionRule
    rows: np.ndarray
    depth: int
    split: SplitStat | None = None
    left: "PartitionNode | None" = None
    right: "PartitionNode | None" = None

    def leaves(self) -> list["PartitionNode"]:
        if self.split is None:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def splits(self) -> list["PartitionNode"]:
        if self.split is None:
            return []
        return [self] + self.left.splits() + self.right.splits()


def t_part(iie, ice, covariates, config: AnalysisConfig, names=None, depth=0, rows=None, rule=PartitionRule(),
           exposure=None, min_obs=None) -> PartitionNode:
    """Recursive T-statistic partitioning down to config.max_depth."""
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    names = list(names) if names is not None else ["W%d" % (j + 1) for j in range(covariates.shape[1])]
    rows = np.arange(len(iie)) if rows is None else np.asarray(rows)
    if min_obs is None:
        min_obs = config.resolved_min_obs(len(iie))
    node = PartitionNode(rule, rows, depth)
    if depth >= config.max_depth:
        return node
    found = best_split(iie, ice, covariates, config, names, rows, exposure, min_obs)
    if found is None:
        return node
    name, _, s = found.rule.conditions[0]
    left_rule = rule.refine(name, "<=", s)
    node.split = SplitStat(left_rule, exposure, found.psi_v, found.psi_vc, found.psi_diff, found.var_diff,
                           found.t_stat, found.n_v, found.n_vc)
    m = covariates[rows, names.index(name)] <= s
    node.left = t_part(iie, ice, covariates, config, names, depth + 1, rows[m], left_rule, exposure, min_obs)
    node.right = t_part(iie, ice, covariates, config, names, depth + 1, rows[~m], rule.refine(name, ">", s),
                        exposure, min_obs)
    return node


def candidate_region(tree: PartitionNode, iie, ice, covariates, names, exposure=None) -> SplitStat | None:
    """Region V of the highest-|t| split in the tree, compared against everything else."""
    nodes = tree.splits()
    if not nodes:
        return None
    top = max(nodes, key=lambda nd: abs(nd.split.t_stat))  # max() keeps the first (shallowest) on ties
    rule = top.split.rule
    mask = rule.mask(np.asarray(covariates, dtype=float).reshape(len(iie), -1), names)
    return split_stat(iie, ice, mask, rule, exposure)


@dataclass(frozen=True)
class ModifierResult:
    exposure: str | None
    split: SplitStat | None
    per_exposure: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return self.split is not None


def select_max_modifier(effects, covariates, config: AnalysisConfig, names=None) -> ModifierResult:
    """Run t_part per exposure and keep the exposure/region with the largest |t|."""
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates[:, None]
    names = list(names) if names is not None else ["W%d" % (j + 1) for j in range(covariates.shape[1])]
    best_name, best = None, None
    per = {}
    for k, ex in enumerate(effects.exposure_names):
        iie, ice = effects.iie[:, k], effects.ice[:, k]
        tree = t_part(iie, ice, covariates, config, names, exposure=ex)
        region = candidate_region(tree, iie, ice, covariates, names, ex)
        per[ex] = region
        if region is not None and (best is None or abs(region.t_stat) > abs(best.t_stat)):
            best_name, best = ex, region
    return ModifierResult(best_name, best, per)
