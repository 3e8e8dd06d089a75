import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shiftmod.data import AnalysisConfig, Dataset, ShiftSpec
from shiftmod.learners import LearnerSpec
from shiftmod.sim import gen_binary_dgp
from shiftmod.tmle import (FluctuatedQbar, QbarFit, compute_ice, compute_iie, first_stage, fit_outcome_regression,
                           tmle_fluctuate)

OLS_ONLY = (LearnerSpec("linear_ols"),)


class RowStub:
    """Returns fixed values for the rows it was built with."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def predict(self, X):
        return self.values[: len(X)]


class TrueBinaryQ:
    def predict(self, X):
        A, W = X[:, :3], X[:, 3:]
        return (2 + A[:, 0] + 0.5 * A[:, 1] + 0.2 * A[:, 2] + 0.5 * W[:, 2] - 0.3 * W[:, 1] + 0.4 * W[:, 0]
                + 2 * A[:, 0] * W[:, 2])


def _tiny(y):
    n = len(y)
    return Dataset(np.zeros((n, 1)), np.arange(n, dtype=float)[:, None], y, ("W",), ("A",))


def test_epsilon_closed_form():
    ds = _tiny(np.array([0.0, 1.0]))
    q = QbarFit(RowStub([0.2, 0.4]), (0.0, 1.0), "linear")
    fl = tmle_fluctuate(q, np.array([1.0, 2.0]), ds)
    assert fl.epsilon == pytest.approx((1 * -0.2 + 2 * 0.6) / 5, abs=1e-15)
    assert fl.epsilon == pytest.approx(0.2, abs=1e-15)


def test_epsilon_zero_when_orthogonal():
    ds = _tiny(np.array([0.0, 1.0]))
    fl = tmle_fluctuate(QbarFit(RowStub([0.5, 0.5]), (0.0, 1.0)), np.array([1.0, 1.0]), ds)
    assert fl.epsilon == 0.0


@settings(max_examples=100)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["linear", "bounded_logit"]))
def test_score_identity(seed, scale):
    r = np.random.default_rng(seed)
    n = 60
    y = r.normal(size=n) if scale == "linear" else (r.random(n) < 0.4).astype(float)
    lo, hi = float(y.min()), float(y.max())
    qv = r.uniform(lo, hi, n) if hi > lo else np.full(n, lo)
    H = r.uniform(0.05, 5.0, n)
    ds = _tiny(y)
    fl = tmle_fluctuate(QbarFit(RowStub(qv), (lo, hi), scale), H, ds)
    tol = 1e-8 * n * max(float(np.std(y)), 1e-12)
    assert abs(fl.score(ds)) <= tol


def test_noiseless_outcome_regression(rng):
    W = rng.normal(size=(80, 2))
    A = rng.normal(size=(80, 2))
    ds = Dataset(W, A, 2 + A[:, 0], ("W1", "W2"), ("A1", "A2"))
    q = fit_outcome_regression(ds, OLS_ONLY)
    assert np.max(np.abs(q.predict(ds.design()) - ds.outcome)) <= 1e-8
    assert q.outcome_bounds == (float(ds.outcome.min()), float(ds.outcome.max()))


def test_constant_outcome(rng):
    ds = Dataset(rng.normal(size=(20, 1)), rng.normal(size=(20, 1)), np.full(20, 3.5), ("W",), ("A",))
    q = fit_outcome_regression(ds)
    assert np.all(q.predict(ds.design()) == 3.5)
    assert q.outcome_bounds == (3.5, 3.5)


@pytest.mark.parametrize("w3, expected", [(0.0, -0.5), (1.0, -1.5)])
def test_iie_true_q(w3, expected):
    ds, _ = gen_binary_dgp(200, 0)
    W = np.array(ds.covariates, copy=True)
    W[:, 2] = w3
    ds = Dataset(W, ds.exposures, ds.outcome, ds.covariate_names, ds.exposure_names)
    fl = FluctuatedQbar(QbarFit(TrueBinaryQ(), (-50, 50)), 0.0, np.ones(ds.n), 0, 0.5)
    # oracle: shifting A1 by -0.5 moves the structural mean by -0.5 * (1 + 2 * W3)
    assert np.allclose(compute_iie(fl, ds), -0.5 * (1 + 2 * w3), atol=1e-12)


def test_iie_zero_shift():
    ds, _ = gen_binary_dgp(50, 0)
    fl = FluctuatedQbar(QbarFit(TrueBinaryQ(), (-50, 50)), 0.7, np.ones(ds.n), 0, 0.0)
    assert np.all(compute_iie(fl, ds) == 0.0)


def test_ice_single_row():
    ds = Dataset(np.zeros((1, 1)), np.zeros((1, 1)), np.array([1.3]), ("W",), ("A",))
    fl = FluctuatedQbar(QbarFit(RowStub([1.0]), (0.0, 2.0)), 0.0, np.array([2.0]), 0, 0.5)
    phi = compute_ice(fl, np.array([2.0]), ds, np.array([1.0]), 0.8)
    assert phi[0] == pytest.approx(2 * 0.3 + 1 - 0.8, abs=1e-12)


def test_ice_zero_under_perfect_fit():
    y = np.array([1.0, 2.0, 3.0])
    ds = _tiny(y)
    fl = FluctuatedQbar(QbarFit(RowStub(y), (1.0, 3.0)), 0.0, np.ones(3), 0, 0.5)
    iie = np.full(3, 0.4)
    assert np.allclose(compute_ice(fl, np.ones(3), ds, iie, 0.4), 0.0)


@pytest.fixture(scope="module")
def binary_effects():
    ds, _ = gen_binary_dgp(5000, 21)
    return ds, first_stage(ds, ShiftSpec.uniform(ds.exposure_names, 0.5), AnalysisConfig(seed=2))


def test_first_stage_shape_and_identities(binary_effects):
    ds, eff = binary_effects
    assert eff.iie.shape == (5000, 3) and eff.ice.shape == (5000, 3)
    assert eff.exposure_names == ("A1", "A2", "A3")
    for k in range(3):
        assert eff.iie[:, k].mean() == eff.marginal_psi[k]
    assert np.all(np.abs(eff.ice.mean(axis=0)) <= 1e-8 * ds.outcome.std())


def test_first_stage_marginal_truth(binary_effects):
    _, eff = binary_effects
    # oracle: -0.5 * (1 + 2 * E[W3]) with E[W3] = 0.5
    assert eff.marginal_psi[0] == pytest.approx(-0.5 * (1 + 2 * 0.5), abs=0.05)
    # A2, A3 enter linearly with slopes 0.5 and 0.2
    assert eff.marginal_psi[1] == pytest.approx(-0.25, abs=0.05)
    assert eff.marginal_psi[2] == pytest.approx(-0.1, abs=0.05)


def test_first_stage_zero_shift(rng):
    ds, _ = gen_binary_dgp(300, 5)
    eff = first_stage(ds, ShiftSpec.uniform(ds.exposure_names, 0.0), AnalysisConfig(roster=OLS_ONLY +
                                                                                         (LearnerSpec("logistic_glm"),)))
    assert np.all(eff.iie == 0.0) and np.all(eff.marginal_psi == 0.0)


def test_shift_linearity(rng):
    n = 400
    W = rng.normal(size=(n, 2))
    A = rng.normal(size=(n, 2)) + 0.3 * W[:, :1]
    y = 1 + 2 * A[:, 0] - A[:, 1] + W[:, 0]
    ds = Dataset(W, A, y, ("W1", "W2"), ("A1", "A2"))
    cfg = AnalysisConfig(roster=OLS_ONLY + (LearnerSpec("logistic_glm"),))
    one = first_stage(ds, ShiftSpec.uniform(ds.exposure_names, 0.3), cfg).iie
    two = first_stage(ds, ShiftSpec.uniform(ds.exposure_names, 0.6), cfg).iie
    assert np.allclose(two, 2 * one, atol=1e-8)
    assert np.allclose(one[:, 0], -0.6, atol=1e-8)


def test_bounded_logit_binary_outcome(rng):
    n = 400
    W = rng.normal(size=(n, 1))
    A = rng.normal(size=(n, 1))
    y = (rng.random(n) < 1 / (1 + np.exp(-(A[:, 0] + W[:, 0])))).astype(float)
    ds = Dataset(W, A, y, ("W",), ("A",))
    eff = first_stage(ds, ShiftSpec({"A": 0.5}), AnalysisConfig(roster=OLS_ONLY + (LearnerSpec("logistic_glm"),)))
    assert np.all(np.abs(eff.iie) < 1)
    assert eff.marginal_psi[0] < 0
    assert np.abs(eff.ice.mean()) <= 1e-8
