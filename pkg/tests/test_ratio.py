import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from shiftmod.data import Dataset
from shiftmod.learners import LearnerSpec
from shiftmod.ratio import (analytic_gaussian_ratio, clamp_ratios, estimate_ratio_classification,
                            estimate_ratio_direct)
from shiftmod.sim import gen_binary_dgp


def _single(a):
    n = len(a)
    return Dataset(np.zeros((n, 0)), a[:, None], np.zeros(n), (), ("A",))


def test_analytic_at_mean():
    # oracle: quotient of two normal pdfs
    assert analytic_gaussian_ratio(0.0, 0.0, 1.0, 0.5) == pytest.approx(norm.pdf(-0.5) / norm.pdf(0.0), rel=1e-14)
    assert analytic_gaussian_ratio(0.0, 0.0, 1.0, 0.5) == pytest.approx(0.88250, abs=5e-6)


@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(-2, 2))
def test_analytic_symmetry_point(mu, sigma, delta):
    assert analytic_gaussian_ratio(mu + delta / 2, mu, sigma, delta) == pytest.approx(1.0, abs=1e-12)
    a = mu + 0.3 * sigma
    ref = norm.pdf(a - delta, mu, sigma) / norm.pdf(a, mu, sigma)
    assert analytic_gaussian_ratio(a, mu, sigma, delta) == pytest.approx(ref, rel=1e-9)


def test_analytic_zero_shift():
    a = np.linspace(-3, 3, 7)
    assert np.all(analytic_gaussian_ratio(a, 0.2, 1.3, 0.0) == 1.0)


def test_clamp_rule():
    vals, count = clamp_ratios([250.0, 1.0, 0.001, 100.0], (0.01, 100.0))
    assert vals.tolist() == [100.0, 1.0, 0.01, 100.0]
    assert count == 2


@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=50))
def test_clamp_accounting(raw):
    vals, count = clamp_ratios(raw, (0.01, 100.0))
    raw = np.array(raw)
    assert count == int(np.sum((raw < 0.01) | (raw > 100.0)))
    assert np.all((vals >= 0.01) & (vals <= 100.0))


def test_zero_shift_intercept_only_exact(rng):
    ds = _single(rng.normal(size=200))
    est = estimate_ratio_classification(ds, "A", 0.0, (LearnerSpec("intercept_only"),))
    assert np.all(est.ratios == 1.0)
    assert est.clamp_count == 0


def test_classification_at_conditional_mean():
    ds, _ = gen_binary_dgp(5000, 11)
    W = ds.covariates
    mu = 0.5 * W[:, 2] + 0.3 * W[:, 1] + 0.4 * W[:, 0]
    est = estimate_ratio_classification(ds, "A1", 0.5, seed=1)
    A_at_mu = np.array(ds.exposures, copy=True)
    A_at_mu[:, 0] = mu
    got, _ = est.evaluate(A_at_mu, W)
    assert np.max(np.abs(got - np.exp(-0.125))) <= 0.05


def test_classification_ratios_in_bounds(rng):
    a = rng.normal(size=300)
    est = estimate_ratio_classification(_single(a), "A", 3.0, (LearnerSpec("logistic_glm"),), bounds=(0.5, 2.0))
    assert np.all((est.ratios >= 0.5) & (est.ratios <= 2.0))
    assert est.clamp_count > 0


def test_direct_uniform_zero_shift(rng):
    est = estimate_ratio_direct(_single(rng.uniform(size=500)), "A", 0.0, bins=10)
    assert np.all(est.ratios == 1.0)


def test_direct_gaussian_oracle():
    a = np.random.default_rng(2).normal(size=5000)
    est = estimate_ratio_direct(_single(a), "A", 0.5, bins=20)
    lo, hi = np.quantile(a, [0.05, 0.95])
    mid = (a >= lo) & (a <= hi)
    err = np.abs(est.ratios[mid] - analytic_gaussian_ratio(a[mid], 0.0, 1.0, 0.5))
    assert np.median(err) <= 0.1


def test_direct_floor_below_support(rng):
    a = rng.uniform(size=400)
    est = estimate_ratio_direct(_single(a), "A", 0.5, bins=10)
    # a - delta falls below the sample minimum
    got, _ = est.evaluate(np.array([[0.1]]), np.zeros((1, 0)))
    assert got[0] == 0.01


def test_direct_with_covariates_positive(rng):
    ds, _ = gen_binary_dgp(2000, 3)
    est = estimate_ratio_direct(ds, "A1", 0.5)
    assert np.all(est.ratios > 0) and np.all(est.ratios <= 100)
