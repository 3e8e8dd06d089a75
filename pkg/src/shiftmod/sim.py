"""Simulation study: the binary- and continuous-modifier designs, analytic
truth, replication grids and estimator/detection metrics."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import AnalysisConfig, Dataset, ShiftSpec
from .errors import ConfigError
from .pipeline import run_analysis

log = logging.getLogger(__name__)

DGPS = ("binary", "continuous")
SHIFT = 0.5  # reduction applied to every exposure
THRESHOLD = 55.0
COVARIATES = ("W1", "W2", "W3")
EXPOSURES = ("A1", "A2", "A3")


@dataclass(frozen=True, eq=False)
class SimTruth:
    modifier: str
    true_threshold: float
    psi_v_true: float
    psi_vc_true: float
    true_membership: np.ndarray  # True for rows in V (the low-effect side)


def _outcome_mean(W, A, modifier):
    W1, W2, W3 = W[:, 0], W[:, 1], W[:, 2]
    return (2 + A[:, 0] + 0.5 * A[:, 1] + 0.2 * A[:, 2]
            + 0.5 * modifier - 0.3 * W2 + 0.4 * W1 + 2 * A[:, 0] * modifier)


def _finish(W, modifier, rng):
    n = len(W)
    W1, W2 = W[:, 0], W[:, 1]
    A = np.column_stack([
        rng.normal(0.5 * modifier + 0.3 * W2 + 0.4 * W1, 1.0),
        rng.normal(0.3 * W2 + 0.3 * W1, 1.0),
        rng.normal(0.2 * W1, 1.0),
    ])
    Y = _outcome_mean(W, A, modifier) + rng.normal(0.0, 1.0, n)
    return A, Y


def region_truth(delta=SHIFT):
    """Analytic per-region effect of A1 -> A1 - delta: -delta * (1 + 2 * modifier)."""
    return -delta * 1.0, -delta * 3.0


def gen_binary_dgp(n: int, seed=0):
    """W3 ~ Bernoulli(0.5) modifies the A1 effect."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    W1 = rng.binomial(1, 0.5, n).astype(float)
    W2 = rng.binomial(1, 0.5, n).astype(float)
    W3 = rng.binomial(1, 0.5, n).astype(float)
    W = np.column_stack([W1, W2, W3])
    A, Y = _finish(W, W3, rng)
    psi_v, psi_vc = region_truth()
    ds = Dataset(W, A, Y, COVARIATES, EXPOSURES, "Y")
    return ds, SimTruth("W3", 0.5, psi_v, psi_vc, W3 == 0)


def gen_continuous_dgp(n: int, seed=0):
    """W3 ~ N(40, 10); the indicator W3 > 55 modifies the A1 effect, the data carry W3 itself."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    rng = np.random.default_rng(seed)
    W1 = rng.binomial(1, 0.5, n).astype(float)
    W2 = rng.binomial(1, 0.5, n).astype(float)
    W3 = rng.normal(40.0, 10.0, n)
    W = np.column_stack([W1, W2, W3])
    high = (W3 > THRESHOLD).astype(float)
    A, Y = _finish(W, high, rng)
    psi_v, psi_vc = region_truth()
    ds = Dataset(W, A, Y, COVARIATES, EXPOSURES, "Y")
    return ds, SimTruth("W3", THRESHOLD, psi_v, psi_vc, W3 <= THRESHOLD)


GENERATORS = {"binary": gen_binary_dgp, "continuous": gen_continuous_dgp}


def simulated_truth(dgp: str, n_pop: int = 10000, seed=0, delta=SHIFT):
    """Large-population check of the analytic truth: mean of Y(A1 - delta) - Y by region."""
    ds, truth = GENERATORS[dgp](n_pop, seed)
    W, A = ds.covariates, ds.exposures
    modifier = W[:, 2] if dgp == "binary" else (W[:, 2] > THRESHOLD).astype(float)
    A_shift = np.array(A, copy=True)
    A_shift[:, 0] -= delta
    diff = _outcome_mean(W, A_shift, modifier) - _outcome_mean(W, A, modifier)
    v = truth.true_membership
    return float(diff[v].mean()), float(diff[~v].mean())


def detection_metrics(predicted, truth):
    """Accuracy, precision, recall, F1 with the high-effect side (not V) as positive.

    Returns ``(accuracy, precision, recall, f1, precision_undefined)``.
    """
    pred_pos = ~np.asarray(predicted, dtype=bool)
    true_pos = ~np.asarray(truth, dtype=bool)
    if pred_pos.shape != true_pos.shape:
        raise ValueError("membership vectors differ in length")
    tp = int(np.sum(pred_pos & true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    acc = float(np.mean(pred_pos == true_pos))
    undefined = tp + fp == 0
    precision = 0.0 if undefined else tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return acc, precision, recall, f1, undefined


def f1_score(precision, recall):
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class RepResult:
    dgp: str
    n: int
    rep: int
    ok: bool
    psi_v: float = float("nan")
    se_v: float = float("nan")
    psi_vc: float = float("nan")
    se_vc: float = float("nan")
    exposure: str | None = None
    root_covariate: str | None = None
    root_threshold: float = float("nan")
    agreement: float = 0.0
    accuracy: float = float("nan")
    precision: float = float("nan")
    recall: float = float("nan")
    f1: float = float("nan")
    precision_undefined: bool = False
    tp: int = 0
    fp: int = 0
    fn: int = 0
    error: str = ""


@dataclass
class MetricsRow:
    dgp: str
    n: int
    region: str
    bias: float
    variance: float
    mse: float
    coverage: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    failed_reps: int
    f1_pooled: float = float("nan")
    reps: int = 0

    def as_dict(self):
        return asdict(self)


METRIC_COLUMNS = ("dgp", "n", "region", "bias", "variance", "mse", "coverage", "accuracy", "precision", "recall",
                  "f1", "failed_reps", "f1_pooled", "reps")


def rep_seed(seed, n, rep):
    return np.random.SeedSequence([int(seed), int(n), int(rep)])


def run_replication(dgp: str, n: int, rep: int, config: AnalysisConfig, seed: int = 0) -> RepResult:
    if dgp not in GENERATORS:
        raise ConfigError("unknown dgp %r; choose from %s" % (dgp, ", ".join(DGPS)))
    ss = rep_seed(seed, n, rep)
    data_ss, fit_ss = ss.spawn(2)
    ds, truth = GENERATORS[dgp](n, np.random.default_rng(data_ss))
    cfg = config.with_(seed=int(fit_ss.generate_state(1)[0] % (2 ** 31)))
    out = RepResult(dgp, n, rep, ok=False)
    try:
        res = run_analysis(ds, ShiftSpec.uniform(EXPOSURES, SHIFT), cfg)
    except Exception as exc:  # recorded, counted, excluded
        log.warning("rep %d (n=%d, %s) failed: %s", rep, n, dgp, exc)
        out.error = "%s: %s" % (type(exc).__name__, exc)
        return out
    pooled = res.pooled
    member = res.membership()
    acc, prec, rec, f1, undefined = detection_metrics(member, truth.true_membership)
    pred_pos, true_pos = ~member, ~truth.true_membership
    out.accuracy, out.precision, out.recall, out.f1, out.precision_undefined = acc, prec, rec, f1, undefined
    out.tp = int(np.sum(pred_pos & true_pos))
    out.fp = int(np.sum(pred_pos & ~true_pos))
    out.fn = int(np.sum(~pred_pos & true_pos))
    out.exposure = pooled.modal_exposure
    out.agreement = pooled.agreement
    if pooled.modal_rule is not None:
        out.root_covariate, _, out.root_threshold = pooled.modal_rule.conditions[0]
    if pooled.found:
        out.ok = True
        out.psi_v, out.se_v = pooled.per_region["v"].psi, pooled.per_region["v"].se
        out.psi_vc, out.se_vc = pooled.per_region["vc"].psi, pooled.per_region["vc"].se
    else:
        out.error = "no modifier found"
    return out


def summarize(reps, dgp=None, n=None) -> list[MetricsRow]:
    """Bias/variance/MSE/coverage per region and averaged detection stats."""
    reps = list(reps)
    dgp = dgp or (reps[0].dgp if reps else "")
    n = n if n is not None else (reps[0].n if reps else 0)
    truth_v, truth_vc = region_truth()
    good = [r for r in reps if r.ok]
    failed = len(reps) - len(good)
    scored = [r for r in reps if not np.isnan(r.accuracy)]
    det = {k: float(np.mean([getattr(r, k) for r in scored])) if scored else float("nan")
           for k in ("accuracy", "precision", "recall", "f1")}
    tp = sum(r.tp for r in scored)
    fp = sum(r.fp for r in scored)
    fn = sum(r.fn for r in scored)
    f1_pooled = f1_score(tp / (tp + fp) if tp + fp else 0.0, tp / (tp + fn) if tp + fn else 0.0)
    rows = []
    for region, truth, est, se in (("v", truth_v, "psi_v", "se_v"), ("vc", truth_vc, "psi_vc", "se_vc")):
        if good:
            psi = np.array([getattr(r, est) for r in good])
            s = np.array([getattr(r, se) for r in good])
            err = psi - truth
            bias = float(err.mean())
            variance = float(psi.var())
            mse = float(np.mean(err ** 2))
            coverage = float(np.mean((psi - 1.96 * s <= truth) & (truth <= psi + 1.96 * s)))
        else:
            bias = variance = mse = coverage = float("nan")
        rows.append(MetricsRow(dgp, n, region, bias, variance, mse, coverage, det["accuracy"], det["precision"],
                               det["recall"], det["f1"], failed, f1_pooled, len(reps)))
    return rows


def simulate_reps(dgp: str, n: int, reps: int, config: AnalysisConfig = AnalysisConfig(), seed: int = 0,
                  threads: int = 1) -> list[RepResult]:
    if reps < 1:
        raise ConfigError("reps must be >= 1")
    if dgp not in GENERATORS:
        raise ConfigError("unknown dgp %r; choose from %s" % (dgp, ", ".join(DGPS)))
    jobs = [(dgp, n, r, config, seed) for r in range(reps)]
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(_rep_job, jobs))
    return [_rep_job(j) for j in jobs]


def _rep_job(args):
    return run_replication(*args)


def run_sim_grid(ns, reps: int, dgp: str, config: AnalysisConfig = AnalysisConfig(), seed: int = 0,
                 threads: int = 1) -> list[MetricsRow]:
    rows = []
    for n in ns:
        rows.extend(summarize(simulate_reps(dgp, n, reps, config, seed, threads), dgp, n))
    return rows


FIXTURE_COVARIATES = ("age", "sex", "bmi", "education", "cotinine")
FIXTURE_EXPOSURES = ("pcb118", "pcb156", "hxcdd", "pncdf", "hxcdf", "tcdd")
FIXTURE_MODIFIED = "hxcdf"
FIXTURE_AGE_CUT = 20.0
FIXTURE_SLOPE = -0.25


def gen_nhanes_like(n: int = 1000, seed=20240601):
    """Synthetic survey-shaped data with one planted interaction.

    Log-scale exposures share an age-driven body-burden factor; the outcome (a
    telomere-length-like ratio) falls with ``hxcdf`` only for ``age <= 20``.
    Returns the dataset and a truth record.
    """
    rng = np.random.default_rng(seed)
    age = rng.integers(6, 81, n).astype(float)
    sex = rng.binomial(1, 0.5, n).astype(float)
    bmi = np.round(rng.normal(22 + 0.08 * age, 4.0), 1)
    education = rng.integers(1, 6, n).astype(float)
    cotinine = np.round(rng.lognormal(-1.0, 1.5, n), 3)
    burden = (age - 43) / 21 + 0.4 * rng.normal(size=n)
    A = np.column_stack([0.5 * burden + 0.2 * sex + rng.normal(0, 1, n) for _ in FIXTURE_EXPOSURES])
    A = np.round(A, 4)
    young = age <= FIXTURE_AGE_CUT
    k = FIXTURE_EXPOSURES.index(FIXTURE_MODIFIED)
    Y = (1.05 - 0.004 * age + 0.03 * sex - 0.01 * (bmi - 27) / 5 + 0.01 * np.log1p(cotinine)
         + 0.02 * A.sum(axis=1) + FIXTURE_SLOPE * A[:, k] * young + rng.normal(0, 0.15, n))
    Y = np.round(Y, 5)
    W = np.column_stack([age, sex, bmi, education, cotinine])
    ds = Dataset(W, A, Y, FIXTURE_COVARIATES, FIXTURE_EXPOSURES, "telomere_ts")
    sd = float(A[:, k].std(ddof=1))
    truth = {
        "modifier": "age",
        "threshold": FIXTURE_AGE_CUT,
        "exposure": FIXTURE_MODIFIED,
        "region": "age <= %g" % FIXTURE_AGE_CUT,
        "shift_units": "sd_multiple",
        "shift": 1.0,
        # Y is linear in the exposure, so reducing it by one SD changes Y by -slope * SD
        "psi_v_true": -(FIXTURE_SLOPE + 0.02) * sd,
        "psi_vc_true": -0.02 * sd,
        "n": n,
        "seed": seed,
    }
    return ds, truth
