"""Base learners and a convex-weight stacking ensemble.

All learners are plain numpy; each supports the ``regression`` task, the
``probability`` task (binary labels, predictions are P(y = 1)), or both.
The ensemble picks simplex weights from inner cross-validated predictions.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import cKDTree
from scipy.special import expit

from .errors import ConfigError, EstimationError

log = logging.getLogger(__name__)

PROB_EPS = 1e-6
TASKS = ("regression", "probability")


@dataclass(frozen=True)
class LearnerSpec:
    identifier: str
    hyperparameters: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.identifier not in LEARNERS:
            raise ConfigError("unknown learner %r; choose from %s" % (self.identifier, ", ".join(LEARNERS)))
        cls = LEARNERS[self.identifier]
        unknown = set(self.hyperparameters) - set(cls.defaults)
        if unknown:
            raise ConfigError("learner %s does not accept %s" % (self.identifier, ", ".join(sorted(unknown))))
        object.__setattr__(self, "hyperparameters", dict(self.hyperparameters))

    def build(self) -> "BaseLearner":
        return LEARNERS[self.identifier](**self.hyperparameters)

    def supports(self, task: str) -> bool:
        return task in LEARNERS[self.identifier].tasks

    @property
    def label(self) -> str:
        if not self.hyperparameters:
            return self.identifier
        args = ",".join("%s=%s" % kv for kv in sorted(self.hyperparameters.items()))
        return "%s(%s)" % (self.identifier, args)

    def to_dict(self) -> dict:
        return {"identifier": self.identifier, "hyperparameters": dict(sorted(self.hyperparameters.items()))}


def _literal(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_learner_line(line: str) -> LearnerSpec:
    """``"k_nearest k=10"`` -> LearnerSpec('k_nearest', {'k': 10})."""
    tokens = line.split()
    params = {}
    for tok in tokens[1:]:
        if "=" not in tok:
            raise ConfigError("learner option %r is not key=value" % tok)
        key, value = tok.split("=", 1)
        params[key] = _literal(value)
    return LearnerSpec(tokens[0], params)


class BaseLearner:
    tasks: tuple = TASKS
    defaults: dict = {}

    def __init__(self, **params):
        self.params = {**self.defaults, **params}
        self.task = None

    def fit(self, X, y, task):
        raise NotImplementedError

    def predict(self, X):
        raise NotImplementedError


class InterceptOnly(BaseLearner):
    def fit(self, X, y, task):
        self.task = task
        self.value = float(np.mean(y))
        return self

    def predict(self, X):
        return np.full(len(X), self.value)


def _pairwise(X):
    n, d = X.shape
    if d < 2:
        return np.empty((n, 0))
    i, j = np.triu_indices(d, k=1)
    return X[:, i] * X[:, j]


class LinearOLS(BaseLearner):
    """Least squares on main terms, optionally with all pairwise products."""

    tasks = ("regression",)
    defaults = {"interactions": False, "ridge": 1e-8}

    def _design(self, X):
        Z = (X - self.center) / self.scale
        parts = [np.ones((len(Z), 1)), Z]
        if self.params["interactions"]:
            parts.append(_pairwise(Z))
        return np.hstack(parts)

    def fit(self, X, y, task):
        self.task = task
        self.center = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)
        D = self._design(X)
        rank = np.linalg.matrix_rank(D)
        self.ridge_used = rank < D.shape[1]
        if self.ridge_used:
            # rank-deficient design: stabilise instead of failing
            G = D.T @ D
            lam = self.params["ridge"] * max(np.trace(G) / G.shape[0], 1.0)
            self.coef = np.linalg.solve(G + lam * np.eye(G.shape[0]), D.T @ y)
            log.warning("linear_ols: singular design (rank %d < %d), used ridge %.2e", rank, D.shape[1], lam)
        else:
            self.coef = np.linalg.lstsq(D, y, rcond=None)[0]
        return self

    def predict(self, X):
        return self._design(X) @ self.coef


class LogisticGLM(BaseLearner):
    """Logistic regression by Newton-Raphson with a small ridge penalty."""

    tasks = ("probability",)
    defaults = {"interactions": False, "l2": 1e-4, "max_iter": 50}

    def _design(self, X):
        Z = (X - self.center) / self.scale
        parts = [np.ones((len(Z), 1)), Z]
        if self.params["interactions"]:
            parts.append(_pairwise(Z))
        return np.hstack(parts)

    def fit(self, X, y, task):
        self.task = task
        self.center = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)
        D = self._design(X)
        n, d = D.shape
        pen = np.full(d, self.params["l2"] * n)
        pen[0] = 0.0
        beta = np.zeros(d)
        ybar = np.clip(y.mean(), 1e-6, 1 - 1e-6)
        beta[0] = np.log(ybar / (1 - ybar))
        for _ in range(self.params["max_iter"]):
            p = expit(D @ beta)
            grad = D.T @ (y - p) - pen * beta
            w = p * (1 - p) + 1e-12
            hess = (D * w[:, None]).T @ D + np.diag(pen) + 1e-10 * np.eye(d)
            step = np.linalg.solve(hess, grad)
            beta = beta + step
            if np.max(np.abs(step)) < 1e-10:
                break
        self.coef = beta
        return self

    def predict(self, X):
        return expit(self._design(X) @ self.coef)


def _best_split_sorted(x, y, min_leaf):
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = len(xs)
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    nl = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
    if not valid.any():
        return None
    sl, ql = csum[:-1], csq[:-1]
    sr, qr = csum[-1] - sl, csq[-1] - ql
    sse = (ql - sl * sl / nl) + (qr - sr * sr / (n - nl))
    sse = np.where(valid, sse, np.inf)
    i = int(np.argmin(sse))
    return sse[i], 0.5 * (xs[i] + xs[i + 1])


class RegressionTree(BaseLearner):
    """CART with variance-reduction splits; leaves predict the mean."""

    defaults = {"max_depth": 4, "min_leaf": 5}

    def fit(self, X, y, task):
        self.task = task
        self.nodes = []  # (feature, threshold, left, right, value)
        self._grow(X, y, 0)
        return self

    def _grow(self, X, y, depth):
        idx = len(self.nodes)
        self.nodes.append([-1, 0.0, -1, -1, float(np.mean(y))])
        if depth >= self.params["max_depth"] or len(y) < 2 * self.params["min_leaf"]:
            return idx
        base = float(np.sum((y - y.mean()) ** 2))
        best = None
        for j in range(X.shape[1]):
            found = _best_split_sorted(X[:, j], y, self.params["min_leaf"])
            if found is not None and found[0] < base - 1e-12 and (best is None or found[0] < best[0]):
                best = (found[0], j, found[1])
        if best is None:
            return idx
        _, j, thr = best
        mask = X[:, j] <= thr
        left = self._grow(X[mask], y[mask], depth + 1)
        right = self._grow(X[~mask], y[~mask], depth + 1)
        self.nodes[idx][:4] = [j, thr, left, right]
        return idx

    def predict(self, X):
        out = np.empty(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, rows = stack.pop()
            j, thr, left, right, value = self.nodes[node]
            if j < 0:
                out[rows] = value
                continue
            m = X[rows, j] <= thr
            stack.append((left, rows[m]))
            stack.append((right, rows[~m]))
        return out

    def leaf_index(self, X):
        out = np.empty(len(X), dtype=int)
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, rows = stack.pop()
            j, thr, left, right, _ = self.nodes[node]
            if j < 0:
                out[rows] = node
                continue
            m = X[rows, j] <= thr
            stack.append((left, rows[m]))
            stack.append((right, rows[~m]))
        return out


def _bin_edges(x, max_bins):
    u = np.unique(x)
    if len(u) <= max_bins:
        return 0.5 * (u[1:] + u[:-1])
    qs = np.quantile(x, np.arange(1, max_bins) / max_bins)
    return np.unique(qs)


class GradientBoostedStumps(BaseLearner):
    """Histogram gradient boosting of shallow trees.

    Squared loss for regression, binomial deviance for probability. Features
    are quantile-binned once; every tree is grown level by level to ``depth``.
    """

    defaults = {"rounds": 200, "depth": 2, "shrinkage": 0.1, "min_leaf": 5, "bins": 255, "l2": 0.0}

    def _binned(self, X):
        out = np.empty(X.shape, dtype=np.int64)
        for j, edges in enumerate(self.edges):
            out[:, j] = np.searchsorted(edges, X[:, j], side="left")
        return out

    def fit(self, X, y, task):
        self.task = task
        P = self.params
        n, d = X.shape
        self.edges = [_bin_edges(X[:, j], P["bins"]) for j in range(d)]
        B = max([len(e) for e in self.edges] + [0]) + 1
        Xb = self._binned(X)
        flat = (Xb + np.arange(d) * B).ravel()
        depth, min_leaf, lr = P["depth"], P["min_leaf"], P["shrinkage"]
        lam = P["l2"] if task == "regression" else max(P["l2"], 1.0)
        if task == "regression":
            self.base = float(np.mean(y))
        else:
            ybar = np.clip(np.mean(y), PROB_EPS, 1 - PROB_EPS)
            self.base = float(np.log(ybar / (1 - ybar)))
        F = np.full(n, self.base)
        rows = np.arange(n)
        self.trees = []
        for _ in range(P["rounds"]):
            if task == "regression":
                g = F - y
                h = None
            else:
                pr = expit(F)
                g = pr - y
                h = pr * (1 - pr)
            node = np.zeros(n, dtype=np.int64)
            feats, thrs = [], []
            for level in range(depth):
                n_nodes = 1 << level
                idx = np.repeat(node * (d * B), d) + flat
                size = n_nodes * d * B
                Gh = np.bincount(idx, weights=np.repeat(g, d), minlength=size).reshape(n_nodes, d, B)
                Ch = np.bincount(idx, minlength=size).reshape(n_nodes, d, B).astype(float)
                Hh = Ch if h is None else np.bincount(idx, weights=np.repeat(h, d), minlength=size).reshape(n_nodes, d, B)
                GL, HL, CL = np.cumsum(Gh, 2), np.cumsum(Hh, 2), np.cumsum(Ch, 2)
                Gt, Ht, Ct = GL[:, :, -1:], HL[:, :, -1:], CL[:, :, -1:]
                GR, HR, CR = Gt - GL, Ht - HL, Ct - CL
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - Gt ** 2 / (Ht + lam)
                ok = (CL >= min_leaf) & (CR >= min_leaf) & (HL + lam > 0) & (HR + lam > 0)
                gain = np.where(ok, gain, -np.inf).reshape(n_nodes, d * B)
                best = np.argmax(gain, axis=1)
                has = np.isfinite(gain[np.arange(n_nodes), best]) & (gain[np.arange(n_nodes), best] > 1e-12)
                f = np.where(has, best // B, 0)
                t = np.where(has, best % B, B)  # bin <= B always true -> all rows go left
                feats.append(f)
                thrs.append(t)
                node = 2 * node + (Xb[rows, f[node]] > t[node])
            n_leaves = 1 << depth
            Gl = np.bincount(node, weights=g, minlength=n_leaves)
            Hl = np.bincount(node, minlength=n_leaves).astype(float) if h is None else np.bincount(node, weights=h, minlength=n_leaves)
            with np.errstate(divide="ignore", invalid="ignore"):
                leaf = np.where(Hl + lam > 0, -Gl / (Hl + lam), 0.0) * lr
            F = F + leaf[node]
            self.trees.append((feats, thrs, leaf))
        return self

    def decision_function(self, X):
        Xb = self._binned(X)
        n = len(X)
        rows = np.arange(n)
        F = np.full(n, self.base)
        for feats, thrs, leaf in self.trees:
            node = np.zeros(n, dtype=np.int64)
            for f, t in zip(feats, thrs):
                node = 2 * node + (Xb[rows, f[node]] > t[node])
            F += leaf[node]
        return F

    def predict(self, X):
        F = self.decision_function(X)
        return F if self.task == "regression" else expit(F)


class KNearest(BaseLearner):
    """Mean response of the k nearest training rows in standardized space."""

    defaults = {"k": 10}

    def fit(self, X, y, task):
        self.task = task
        self.center = X.mean(axis=0)
        sd = X.std(axis=0)
        self.scale = np.where(sd > 0, sd, 1.0)
        self.tree = cKDTree((X - self.center) / self.scale)
        self.y = np.asarray(y, dtype=float)
        self.k = int(min(self.params["k"], len(y)))
        return self

    def predict(self, X):
        _, idx = self.tree.query((X - self.center) / self.scale, k=self.k)
        idx = np.asarray(idx).reshape(len(X), -1)
        return self.y[idx].mean(axis=1)


LEARNERS = {
    "intercept_only": InterceptOnly,
    "linear_ols": LinearOLS,
    "logistic_glm": LogisticGLM,
    "regression_tree": RegressionTree,
    "gradient_boosted_stumps": GradientBoostedStumps,
    "k_nearest": KNearest,
}

DEFAULT_ROSTER = (
    LearnerSpec("intercept_only"),
    LearnerSpec("linear_ols"),
    LearnerSpec("linear_ols", {"interactions": True}),
    LearnerSpec("logistic_glm"),
    LearnerSpec("gradient_boosted_stumps", {"rounds": 200, "depth": 2, "shrinkage": 0.1}),
    LearnerSpec("k_nearest", {"k": 10}),
)


def _risk(pred, y, task):
    if task == "regression":
        return float(np.mean((y - pred) ** 2))
    p = np.clip(pred, PROB_EPS, 1 - PROB_EPS)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def _simplex_weights_sq(Z, y):
    w, _ = nnls(Z, y)
    s = w.sum()
    if not s > 0:
        return None
    return w / s


def _simplex_weights_logloss(Z, y, iters=500, step=0.1):
    """Exponentiated-gradient descent of the log-loss over the simplex."""
    L = Z.shape[1]
    w = np.full(L, 1.0 / L)
    Zc = np.clip(Z, PROB_EPS, 1 - PROB_EPS)
    for _ in range(iters):
        p = np.clip(Zc @ w, PROB_EPS, 1 - PROB_EPS)
        grad = -((y / p - (1 - y) / (1 - p))[:, None] * Zc).mean(axis=0)
        w = w * np.exp(-step * (grad - grad.min()))
        w /= w.sum()
    return w


@dataclass(frozen=True, eq=False)
class StackedFit:
    base_fits: tuple
    weights: np.ndarray
    cv_risks: np.ndarray
    task: str
    labels: tuple = ()
    n_features: int = 0
    ensemble_cv_risk: float = float("nan")

    def predict(self, X) -> np.ndarray:
        return predict(self, X)


def make_inner_folds(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def fit_stacked(X, y, task: str, roster, inner_folds: int = 5, seed: int = 0) -> StackedFit:
    """Fit every roster learner, weight them on the simplex by inner-CV risk."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != len(y):
        raise EstimationError("X has %s rows but y has %d" % (X.shape[:1], len(y)))
    if task not in TASKS:
        raise ConfigError("unknown task %r" % task)
    if inner_folds < 2:
        raise ConfigError("inner_folds must be >= 2")
    specs = [s for s in roster if s.supports(task)]
    if not specs:
        raise ConfigError("no learner in the roster supports task %s" % task)
    n = len(y)
    L = len(specs)
    rng = np.random.default_rng([seed, 7919])
    folds = make_inner_folds(n, min(inner_folds, n), rng)
    Z = np.full((n, L), np.nan)
    failed = np.zeros(L, dtype=bool)
    if L > 1:
        for l, spec in enumerate(specs):
            try:
                for hold in folds:
                    train = np.ones(n, dtype=bool)
                    train[hold] = False
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        Z[hold, l] = spec.build().fit(X[train], y[train], task).predict(X[hold])
                if not np.all(np.isfinite(Z[:, l])):
                    raise FloatingPointError("non-finite predictions")
            except Exception as exc:  # a single broken learner is dropped, not fatal
                log.warning("learner %s failed in inner CV: %s", spec.label, exc)
                failed[l] = True
        if failed.all():
            raise EstimationError("all learners failed")
        risks = np.array([np.inf if failed[l] else _risk(Z[:, l], y, task) for l in range(L)])
        ok = ~failed
        Zok = Z[:, ok]
        if task == "probability":
            Zok = np.clip(Zok, PROB_EPS, 1 - PROB_EPS)
            w_ok = _simplex_weights_logloss(Zok, y)
        else:
            w_ok = _simplex_weights_sq(Zok, y)
        weights = np.zeros(L)
        best = int(np.argmin(risks))
        if w_ok is not None:
            weights[ok] = w_ok
        ens_risk = _risk(Z[:, ok] @ w_ok, y, task) if w_ok is not None else np.inf
        if not ens_risk <= risks[best]:
            weights = np.zeros(L)
            weights[best] = 1.0
            ens_risk = risks[best]
    else:
        weights = np.ones(1)
        risks = np.array([np.nan])
        ens_risk = float("nan")
    weights[weights < 1e-12] = 0.0
    weights = weights / weights.sum()
    fits = []
    for l, spec in enumerate(specs):
        if weights[l] > 0:
            try:
                fits.append(spec.build().fit(X, y, task))
            except Exception as exc:
                raise EstimationError("learner %s failed on full data: %s" % (spec.label, exc)) from exc
        else:
            fits.append(None)
    return StackedFit(
        tuple(fits), weights, risks, task, tuple(s.label for s in specs), X.shape[1], float(ens_risk)
    )


def predict(fit: StackedFit, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != fit.n_features:
        raise EstimationError("expected %d columns, got %s" % (fit.n_features, X.shape[1:] or "a vector"))
    out = np.zeros(len(X))
    for w, base in zip(fit.weights, fit.base_fits):
        if w > 0:
            out += w * base.predict(X)
    if fit.task == "probability":
        out = np.clip(out, PROB_EPS, 1 - PROB_EPS)
    return out


def derive_seed(seed: int, *keys: int) -> int:
    """Independent child seed for a (seed, key...) stream."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])
