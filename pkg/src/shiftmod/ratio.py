"""Shift density ratios r(a, w) = g(a - delta | w) / g(a | w).

Two estimators share one interface: a probabilistic classifier trained to
tell observed rows from rows whose exposure was moved up by ``delta``
(balanced 1:1, so the odds are the density ratio), and a direct
histogram-within-tree-leaves conditional density estimate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import EstimationError
from .learners import DEFAULT_ROSTER, RegressionTree, StackedFit, fit_stacked

DEFAULT_BOUNDS = (0.01, 100.0)


def analytic_gaussian_ratio(a, mu, sigma, delta):
    """Exact ratio N(a - delta; mu, sigma) / N(a; mu, sigma)."""
    a = np.asarray(a, dtype=float)
    return np.exp((2.0 * delta * (a - mu) - delta * delta) / (2.0 * sigma * sigma))


def clamp_ratios(raw, bounds):
    lo, hi = bounds
    raw = np.asarray(raw, dtype=float)
    outside = (raw < lo) | (raw > hi)
    return np.clip(raw, lo, hi), int(outside.sum())


def _features(exposures: np.ndarray, covariates: np.ndarray, k: int) -> np.ndarray:
    # exposure of interest first, then the other exposures, then W
    others = np.delete(exposures, k, axis=1)
    return np.hstack([exposures[:, [k]], others, covariates])


class ClassifierRatioModel:
    """Odds of a fitted 'was shifted' classifier, evaluated anywhere."""

    method = "classification"

    def __init__(self, fit: StackedFit, k: int, delta: float, bounds):
        self.fit = fit
        self.k = k
        self.delta = delta
        self.bounds = bounds

    def raw(self, exposures, covariates) -> np.ndarray:
        if self.delta == 0.0:
            return np.ones(len(exposures))
        p = self.fit.predict(_features(exposures, covariates, self.k))
        return p / (1.0 - p)

    def __call__(self, exposures, covariates):
        return clamp_ratios(self.raw(exposures, covariates), self.bounds)


class HistogramRatioModel:
    """Conditional density from a shallow tree on (A_-k, W) plus per-leaf histograms."""

    method = "direct"

    def __init__(self, k, delta, bounds, bins, depth=2, min_leaf=None):
        self.k = k
        self.delta = delta
        self.bounds = bounds
        self.bins = bins
        self.depth = depth
        self.min_leaf = min_leaf

    def fit(self, exposures, covariates):
        a = exposures[:, self.k]
        Z = np.hstack([np.delete(exposures, self.k, axis=1), covariates])
        n = len(a)
        min_leaf = self.min_leaf or max(10 * self.bins, n // 8)
        self.tree = None
        if Z.shape[1] and n >= 2 * min_leaf:
            self.tree = RegressionTree(max_depth=self.depth, min_leaf=min_leaf).fit(Z, a, "regression")
        leaves = self._leaves(Z)
        self.hist = {}
        for leaf in np.unique(leaves):
            vals = a[leaves == leaf]
            lo, hi = vals.min(), vals.max()
            if hi <= lo:
                hi = lo + 1e-12
            counts, edges = np.histogram(vals, bins=self.bins, range=(lo, hi))
            dens = counts / (len(vals) * np.diff(edges))
            self.hist[leaf] = (edges, dens)
        return self

    def _leaves(self, Z):
        if self.tree is None:
            return np.zeros(len(Z), dtype=int)
        return self.tree.leaf_index(Z)

    def density(self, a, leaves):
        out = np.zeros(len(a))
        for leaf, (edges, dens) in self.hist.items():
            m = leaves == leaf
            x = a[m]
            j = np.searchsorted(edges, x, side="right") - 1
            j[x == edges[-1]] = len(dens) - 1
            inside = (x >= edges[0]) & (x <= edges[-1])
            vals = np.zeros(len(x))
            vals[inside] = dens[j[inside]]
            out[m] = vals
        return out

    def raw(self, exposures, covariates):
        if self.delta == 0.0:
            return np.ones(len(exposures))
        a = exposures[:, self.k]
        Z = np.hstack([np.delete(exposures, self.k, axis=1), covariates])
        leaves = self._leaves(Z)
        num = self.density(a - self.delta, leaves)
        den = self.density(a, leaves)
        lo, hi = self.bounds
        with np.errstate(divide="ignore", invalid="ignore"):
            r = num / den
        # empty bins: floor the ratio rather than divide by zero
        r = np.where(num <= 0, lo, np.where(den <= 0, hi, r))
        return r

    def __call__(self, exposures, covariates):
        return clamp_ratios(self.raw(exposures, covariates), self.bounds)


@dataclass(frozen=True, eq=False)
class RatioEstimate:
    ratios: np.ndarray
    clamp_count: int
    method: str
    model: object = None

    def evaluate(self, exposures, covariates):
        """Clamped ratios of the fitted model at arbitrary rows."""
        return self.model(exposures, covariates)


def estimate_ratio_classification(
    dataset: Dataset,
    exposure: str,
    delta: float,
    roster=DEFAULT_ROSTER,
    seed: int = 0,
    bounds=DEFAULT_BOUNDS,
    inner_folds: int = 5,
) -> RatioEstimate:
    k = dataset.exposure_index(exposure)
    A, W = dataset.exposures, dataset.covariates
    n = dataset.n
    shifted = np.array(A, copy=True)
    shifted[:, k] += delta
    X = np.vstack([_features(A, W, k), _features(shifted, W, k)])
    z = np.concatenate([np.zeros(n), np.ones(n)])
    fit = fit_stacked(X, z, "probability", roster, inner_folds=inner_folds, seed=seed)
    model = ClassifierRatioModel(fit, k, float(delta), bounds)
    if delta != 0.0:
        p = fit.predict(X[:n])
        if np.ptp(p) == 0 and (p[0] <= 1e-6 or p[0] >= 1 - 1e-6):
            raise EstimationError("separable augmentation for exposure %s" % exposure)
    ratios, clamps = model(A, W)
    return RatioEstimate(ratios, clamps, "classification", model)


def estimate_ratio_direct(
    dataset: Dataset,
    exposure: str,
    delta: float,
    bins: int = 20,
    seed: int = 0,
    bounds=DEFAULT_BOUNDS,
    depth: int = 2,
) -> RatioEstimate:
    if bins < 5:
        raise EstimationError("direct ratio estimation needs at least 5 bins")
    k = dataset.exposure_index(exposure)
    model = HistogramRatioModel(k, float(delta), bounds, bins, depth=depth).fit(dataset.exposures, dataset.covariates)
    ratios, clamps = model(dataset.exposures, dataset.covariates)
    return RatioEstimate(ratios, clamps, "direct", model)
