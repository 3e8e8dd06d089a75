"""First stage: outcome regression, TMLE fluctuation and per-row effect vectors.

For exposure k shifted down by delta, the individual intervention effect is
IIE_i = Q*(A_k - delta, A_-k, W) - Q*(A_k, A_-k, W), and the influence curve
estimate is ICE_i = H_i (Y_i - Q*_i) + IIE_i - mean(IIE). The clever
covariate H for the downward shift is g(A_k + delta | .) / g(A_k | .), so the
ratio estimators are called with ``-delta``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .data import AnalysisConfig, Dataset, ShiftSpec
from .errors import EstimationError
from .learners import DEFAULT_ROSTER, derive_seed, fit_stacked
from .ratio import RatioEstimate, estimate_ratio_classification, estimate_ratio_direct

log = logging.getLogger(__name__)

_BOUND_EPS = 1e-5


@dataclass(frozen=True, eq=False)
class QbarFit:
    fit: object  # anything with predict(X) over the design [A, W]
    outcome_bounds: tuple[float, float]
    scale: str = "linear"

    def predict(self, X) -> np.ndarray:
        q = np.asarray(self.fit.predict(X), dtype=float)
        if self.scale == "bounded_logit":
            q = np.clip(q, *self.outcome_bounds)
        return q

    def scaled(self, q):
        lo, hi = self.outcome_bounds
        span = hi - lo if hi > lo else 1.0
        return np.clip((q - lo) / span, _BOUND_EPS, 1 - _BOUND_EPS)

    def scaled_outcome(self, y):
        """Outcome mapped to [0, 1] without the clipping applied to predictions."""
        lo, hi = self.outcome_bounds
        span = hi - lo if hi > lo else 1.0
        return (np.asarray(y, dtype=float) - lo) / span

    def unscaled(self, s):
        lo, hi = self.outcome_bounds
        span = hi - lo if hi > lo else 1.0
        return lo + span * s


def fit_outcome_regression(dataset: Dataset, roster=DEFAULT_ROSTER, seed: int = 0, scale: str = "linear",
                           inner_folds: int = 5) -> QbarFit:
    y = dataset.outcome
    bounds = (float(y.min()), float(y.max()))
    if bounds[0] == bounds[1]:
        return QbarFit(_Constant(bounds[0], dataset.p + dataset.q), bounds, scale)
    fit = fit_stacked(dataset.design(), y, "regression", roster, inner_folds=inner_folds, seed=seed)
    return QbarFit(fit, bounds, scale)


class _Constant:
    def __init__(self, value, n_features):
        self.value = value
        self.n_features = n_features

    def predict(self, X):
        return np.full(len(X), self.value)


@dataclass(frozen=True, eq=False)
class FluctuatedQbar:
    base: QbarFit
    epsilon: float
    clever_covariate: np.ndarray
    exposure: int = 0
    delta: float = 0.0
    ratio: RatioEstimate | None = None

    def updated(self, X, H) -> np.ndarray:
        """Q* at design rows X given clever-covariate values H there."""
        q = self.base.predict(X)
        if self.base.scale == "linear":
            return q + self.epsilon * H
        s = expit(logit(self.base.scaled(q)) + self.epsilon * H)
        return self.base.unscaled(s)

    def clever(self, exposures, covariates) -> np.ndarray:
        if self.ratio is None or self.ratio.model is None:
            raise EstimationError("no ratio model to evaluate the clever covariate off-sample")
        return self.ratio.evaluate(exposures, covariates)[0]

    def score(self, dataset: Dataset) -> float:
        """Fluctuation estimating equation sum H (Y - Q*) on the fitting data."""
        H = self.clever_covariate
        return float(np.sum(H * (dataset.outcome - self.updated(dataset.design(), H))))


def tmle_fluctuate(qbar: QbarFit, ratios: RatioEstimate | np.ndarray, dataset: Dataset, exposure=0,
                   delta: float = 0.0) -> FluctuatedQbar:
    """Solve the one-dimensional fluctuation along H = ratios."""
    if isinstance(ratios, RatioEstimate):
        H = np.asarray(ratios.ratios, dtype=float)
        ratio = ratios
    else:
        H = np.asarray(ratios, dtype=float)
        ratio = None
    k = dataset.exposure_index(exposure) if isinstance(exposure, str) else int(exposure)
    y = dataset.outcome
    if len(H) != len(y):
        raise EstimationError("clever covariate has %d rows, data has %d" % (len(H), len(y)))
    hh = float(np.sum(H * H))
    if not hh > 0:
        raise EstimationError("clever covariate is identically zero")
    q = qbar.predict(dataset.design())
    if qbar.scale == "linear":
        eps = float(np.sum(H * (y - q)) / hh)
    else:
        eps = _logistic_fluctuation(qbar.scaled_outcome(y), logit(qbar.scaled(q)), H)
    return FluctuatedQbar(qbar, eps, H, k, float(delta), ratio)


def _logistic_fluctuation(ys, offset, H, tol=1e-12, max_iter=100):
    eps = 0.0
    for _ in range(max_iter):
        p = expit(offset + eps * H)
        score = np.sum(H * (ys - p))
        info = np.sum(H * H * p * (1 - p))
        if not info > 0:
            break
        step = score / info
        # damp to keep Newton stable on flat likelihoods
        step = float(np.clip(step, -5.0, 5.0))
        eps += step
        if abs(step) < tol:
            break
    return float(eps)


def compute_iie(fluct: FluctuatedQbar, dataset: Dataset, exposure=None, delta: float | None = None,
                clever=None) -> np.ndarray:
    """Q*(A_k - delta, A_-k, W) - Q*(A_k, A_-k, W) per row."""
    k = fluct.exposure if exposure is None else (
        dataset.exposure_index(exposure) if isinstance(exposure, str) else int(exposure))
    delta = fluct.delta if delta is None else float(delta)
    if delta == 0.0:
        return np.zeros(dataset.n)
    A_shift = dataset.shifted_exposures(k, delta)
    if clever is None:
        clever = fluct.clever_covariate
    if fluct.epsilon == 0.0:
        H_obs = H_shift = np.zeros(dataset.n)
    else:
        H_obs = clever
        H_shift = fluct.clever(A_shift, dataset.covariates)
    q_shift = fluct.updated(dataset.design(A_shift), H_shift)
    q_obs = fluct.updated(dataset.design(), H_obs)
    return q_shift - q_obs


def compute_ice(fluct: FluctuatedQbar, ratios, dataset: Dataset, iie, psi_hat: float) -> np.ndarray:
    """H (Y - Q*(A, W)) + IIE - psi_hat."""
    H = ratios.ratios if isinstance(ratios, RatioEstimate) else np.asarray(ratios, dtype=float)
    resid = dataset.outcome - fluct.updated(dataset.design(), H)
    return H * resid + np.asarray(iie) - psi_hat


@dataclass(frozen=True, eq=False)
class EffectMatrices:
    iie: np.ndarray
    ice: np.ndarray
    marginal_psi: np.ndarray
    clever: np.ndarray
    exposure_names: tuple[str, ...]
    clamp_counts: tuple[int, ...] = ()
    epsilons: tuple[float, ...] = ()

    @property
    def eif_values(self) -> np.ndarray:
        """Uncentered influence values H (Y - Q*) + IIE, one column per exposure."""
        return self.ice + self.marginal_psi


def _resolve_scale(config: AnalysisConfig, y) -> str:
    if config.outcome_scale != "auto":
        return config.outcome_scale
    return "bounded_logit" if np.isin(y, (0.0, 1.0)).all() else "linear"


@dataclass(frozen=True, eq=False)
class FirstStage:
    """Nuisance fits from one (training) sample, reusable on new rows."""

    qbar: QbarFit
    flucts: tuple[FluctuatedQbar, ...]
    deltas: np.ndarray
    exposure_names: tuple[str, ...]
    effects: EffectMatrices

    def apply(self, dataset: Dataset) -> EffectMatrices:
        """IIE/ICE for new rows from the fitted (not refitted) nuisances."""
        n, p = dataset.n, len(self.flucts)
        iie = np.zeros((n, p))
        phi = np.zeros((n, p))
        clever = np.zeros((n, p))
        for k, fl in enumerate(self.flucts):
            H = fl.clever(dataset.exposures, dataset.covariates)
            clever[:, k] = H
            iie[:, k] = compute_iie(fl, dataset, k, self.deltas[k], clever=H)
            phi[:, k] = H * (dataset.outcome - fl.updated(dataset.design(), H)) + iie[:, k]
        psi = iie.mean(axis=0)
        return EffectMatrices(iie, phi - psi, psi, clever, self.exposure_names)


def fit_first_stage(dataset: Dataset, shift: ShiftSpec, config: AnalysisConfig = AnalysisConfig(),
                    seed: int | None = None) -> FirstStage:
    seed = config.seed if seed is None else seed
    deltas = shift.deltas(dataset.exposure_names)
    scale = _resolve_scale(config, dataset.outcome)
    qbar = fit_outcome_regression(dataset, config.roster, derive_seed(seed, 0), scale, config.inner_folds)
    n, p = dataset.n, dataset.p
    iie = np.zeros((n, p))
    ice = np.zeros((n, p))
    clever = np.zeros((n, p))
    psi = np.zeros(p)
    flucts, clamps = [], []
    for k, name in enumerate(dataset.exposure_names):
        try:
            # clever covariate for A_k -> A_k - delta is g(a + delta) / g(a)
            if config.ratio_method == "classification":
                ratio = estimate_ratio_classification(
                    dataset, name, -deltas[k], config.roster, derive_seed(seed, 1, k),
                    config.ratio_bounds, config.inner_folds)
            else:
                ratio = estimate_ratio_direct(dataset, name, -deltas[k], config.direct_bins,
                                              derive_seed(seed, 1, k), config.ratio_bounds)
            fl = tmle_fluctuate(qbar, ratio, dataset, k, deltas[k])
            iie[:, k] = compute_iie(fl, dataset)
            psi[k] = iie[:, k].mean()
            ice[:, k] = compute_ice(fl, ratio, dataset, iie[:, k], psi[k])
        except EstimationError as exc:
            raise EstimationError("exposure %s: %s" % (name, exc)) from exc
        clever[:, k] = ratio.ratios
        flucts.append(fl)
        clamps.append(ratio.clamp_count)
        if ratio.clamp_count:
            log.info("exposure %s: %d ratios clamped", name, ratio.clamp_count)
    effects = EffectMatrices(iie, ice, psi, clever, dataset.exposure_names, tuple(clamps),
                             tuple(f.epsilon for f in flucts))
    return FirstStage(qbar, tuple(flucts), deltas, dataset.exposure_names, effects)


def first_stage(dataset: Dataset, shift: ShiftSpec, config: AnalysisConfig = AnalysisConfig()) -> EffectMatrices:
    return fit_first_stage(dataset, shift, config).effects
