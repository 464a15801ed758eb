"""Supervised learners and feature screeners behind one fit/predict contract.

Every learner is deterministic given (spec, task, seed), honors observation
weights, and respects the task family: quasi-binomial fits predict in [0, 1],
gaussian fits predict finite reals.  Tree-based learners wrap scikit-learn;
the linear, neural-net, hinge-basis, and spline learners are implemented
here directly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import minimize
from scipy.special import expit
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.linear_model import ElasticNetCV
from sklearn.model_selection import KFold
from sklearn.tree import DecisionTreeRegressor

GAUSSIAN = "gaussian"
QUASIBINOMIAL = "quasi-binomial"


class LearnerError(ValueError):
    """Raised when a learner or screener cannot produce a usable fit."""


class TaskError(ValueError):
    """Raised for malformed training tasks."""


@dataclass(frozen=True, eq=False)
class TrainingTask:
    """One weighted regression task: predictors, response, weights, family."""

    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    family: str = GAUSSIAN

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if X.shape[0] != y.shape[0] or w.shape != y.shape:
            raise TaskError(f"inconsistent shapes X{X.shape} y{y.shape} w{w.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise TaskError("task contains non-finite values")
        if np.any(w < 0) or not np.any(w > 0):
            raise TaskError("weights must be nonnegative and not all zero")
        if self.family not in (GAUSSIAN, QUASIBINOMIAL):
            raise TaskError(f"unknown family {self.family!r}")
        if self.family == QUASIBINOMIAL and (y.min() < -1e-9 or y.max() > 1 + 1e-9):
            raise TaskError("quasi-binomial response must lie in [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, rows: np.ndarray) -> "TrainingTask":
        return TrainingTask(self.X[rows], self.y[rows], self.weights[rows], self.family)

    def with_features(self, cols: Sequence[int]) -> "TrainingTask":
        return TrainingTask(self.X[:, list(cols)], self.y, self.weights, self.family)


@dataclass(frozen=True)
class ScreenerSpec:
    kind: str  # pearson_corr | elastic_net | rf_importance | cramers_v
    limit: int = 8
    alpha: float = 0.75  # elastic-net mixing weight

    def __post_init__(self):
        if self.kind not in ("pearson_corr", "elastic_net", "rf_importance", "cramers_v"):
            raise LearnerError(f"unknown screener {self.kind!r}")
        if self.limit < 1:
            raise LearnerError("screener limit must be >= 1")
        if not 0 < self.alpha <= 1:
            raise LearnerError("elastic-net alpha must be in (0, 1]")


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    screener: Union[ScreenerSpec, None] = None
    params: tuple[tuple[str, Any], ...] = ()

    @property
    def label(self) -> str:
        base = self.kind
        if self.params:
            base += "(" + ",".join(f"{k}={v}" for k, v in self.params) + ")"
        if self.screener:
            base += f"[{self.screener.kind}]"
        return base

    def param(self, name: str, default=None):
        for k, v in self.params:
            if k == name:
                return v
        return default


def learner(kind: str, screener: Union[ScreenerSpec, None] = None, **params) -> LearnerSpec:
    return LearnerSpec(kind, screener, tuple(sorted(params.items())))


def _derived_seed(*parts) -> int:
    h = hashlib.blake2b(":".join(repr(p) for p in parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big") % (2**32)


# ---------------------------------------------------------------------------
# Weighted linear / logistic building blocks
# ---------------------------------------------------------------------------


def _add_intercept(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(X.shape[0]), X])


def _wls(X1: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X1 * sw[:, None], y * sw, rcond=None)
    return coef


def _logistic_irls(
    X1: np.ndarray,
    y: np.ndarray,
    w: np.ndarray,
    penalty: Union[np.ndarray, None] = None,
    max_iter: int = 60,
    tol: float = 1e-10,
) -> np.ndarray:
    """Weighted quasi-binomial ML (optionally ridge-penalized, intercept free)."""
    n, p = X1.shape
    beta = np.zeros(p)
    pen = np.zeros(p) if penalty is None else penalty
    for _ in range(max_iter):
        eta = np.clip(X1 @ beta, -30.0, 30.0)
        mu = expit(eta)
        wirls = w * mu * (1.0 - mu)
        wirls = np.maximum(wirls, 1e-10 * max(w.max(), 1.0))
        z = eta + (y - mu) / np.maximum(mu * (1.0 - mu), 1e-10)
        sw = np.sqrt(wirls)
        A = X1 * sw[:, None]
        if pen.any():
            A = np.vstack([A, np.diag(np.sqrt(pen))])
            b = np.concatenate([z * sw, np.zeros(p)])
        else:
            b = z * sw
        new, *_ = np.linalg.lstsq(A, b, rcond=None)
        step = np.max(np.abs(new - beta))
        beta = new
        if step < tol * (1.0 + np.max(np.abs(beta))):
            break
    return beta


@dataclass(frozen=True)
class _WeightedScaler:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray, w: np.ndarray) -> "_WeightedScaler":
        wsum = w.sum()
        mean = (X * w[:, None]).sum(axis=0) / wsum
        var = (w[:, None] * (X - mean) ** 2).sum(axis=0) / wsum
        scale = np.sqrt(var)
        scale = np.where(scale < 1e-12, 1.0, scale)
        return cls(mean, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.scale


# ---------------------------------------------------------------------------
# Inner models
# ---------------------------------------------------------------------------


class _Mean:
    def __init__(self, task: TrainingTask, params, seed):
        self.mu = float(np.average(task.y, weights=task.weights))

    def predict(self, X):
        return np.full(X.shape[0], self.mu)


class _Glm:
    def __init__(self, task: TrainingTask, params, seed):
        X1 = _add_intercept(task.X)
        if task.family == GAUSSIAN:
            self.coef = _wls(X1, task.y, task.weights)
        else:
            self.coef = _logistic_irls(X1, task.y, task.weights)
        self.family = task.family

    def predict(self, X):
        eta = _add_intercept(X) @ self.coef
        return expit(np.clip(eta, -30, 30)) if self.family == QUASIBINOMIAL else eta


def _twoway_expand(X: np.ndarray) -> np.ndarray:
    n, p = X.shape
    cols = [X]
    for i in range(p):
        cols.append(X[:, i : i + 1] * X[:, i + 1 :])
    return np.column_stack(cols) if p > 1 else X


class _GlmTwoWay:
    def __init__(self, task: TrainingTask, params, seed):
        Xe = _twoway_expand(task.X)
        X1 = _add_intercept(Xe)
        if task.family == GAUSSIAN:
            self.coef = _wls(X1, task.y, task.weights)
        else:
            self.coef = _logistic_irls(X1, task.y, task.weights)
        self.family = task.family

    def predict(self, X):
        eta = _add_intercept(_twoway_expand(X)) @ self.coef
        return expit(np.clip(eta, -30, 30)) if self.family == QUASIBINOMIAL else eta


class _Ridge:
    """GLM with an independent Gaussian prior on standardized coefficients."""

    def __init__(self, task: TrainingTask, params, seed):
        prior_sd = params.get("prior_sd", 2.5)
        lam = 1.0 / (prior_sd**2)
        self.scaler = _WeightedScaler.fit(task.X, task.weights)
        Xs = self.scaler.transform(task.X)
        X1 = _add_intercept(Xs)
        pen = np.full(X1.shape[1], lam)
        pen[0] = 0.0  # flat prior on the intercept
        if task.family == GAUSSIAN:
            sw = np.sqrt(task.weights)
            A = np.vstack([X1 * sw[:, None], np.diag(np.sqrt(pen))])
            b = np.concatenate([task.y * sw, np.zeros(X1.shape[1])])
            self.coef, *_ = np.linalg.lstsq(A, b, rcond=None)
        else:
            self.coef = _logistic_irls(X1, task.y, task.weights, penalty=pen)
        self.family = task.family

    def predict(self, X):
        eta = _add_intercept(self.scaler.transform(X)) @ self.coef
        return expit(np.clip(eta, -30, 30)) if self.family == QUASIBINOMIAL else eta


class _SkTree:
    def __init__(self, task: TrainingTask, params, seed):
        self.est = DecisionTreeRegressor(
            max_depth=params.get("max_depth", 10),
            min_samples_leaf=params.get("min_leaf", 5),
            random_state=seed % (2**31),
        )
        self.est.fit(task.X, task.y, sample_weight=task.weights)

    def predict(self, X):
        return self.est.predict(X)


class _SkForest:
    def __init__(self, task: TrainingTask, params, seed):
        self.est = RandomForestRegressor(
            n_estimators=params.get("trees", 500),
            max_features="sqrt",
            min_samples_leaf=params.get("min_leaf", 5),
            bootstrap=True,
            random_state=seed % (2**31),
            n_jobs=1,
        )
        self.est.fit(task.X, task.y, sample_weight=task.weights)

    def predict(self, X):
        return self.est.predict(X)


class _SkGbm:
    def __init__(self, task: TrainingTask, params, seed):
        self.est = GradientBoostingRegressor(
            n_estimators=params.get("trees", 100),
            max_depth=params.get("max_depth", 3),
            random_state=seed % (2**31),
        )
        self.est.fit(task.X, task.y, sample_weight=task.weights)

    def predict(self, X):
        return self.est.predict(X)


class _NeuralNet:
    """Single hidden layer, logistic activations, weight decay, L-BFGS."""

    def __init__(self, task: TrainingTask, params, seed):
        hidden = params.get("hidden", 5)
        decay = params.get("decay", 0.01)
        max_iter = params.get("max_iter", 500)
        self.family = task.family
        self.scaler = _WeightedScaler.fit(task.X, task.weights)
        X = self.scaler.transform(task.X)
        y, w = task.y, task.weights / task.weights.sum()
        n, d = X.shape
        nparam = d * hidden + hidden + hidden + 1
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
        theta0 = rng.uniform(-0.7, 0.7, size=nparam)
        squash = self.family == QUASIBINOMIAL

        def unpack(theta):
            w1 = theta[: d * hidden].reshape(d, hidden)
            b1 = theta[d * hidden : d * hidden + hidden]
            w2 = theta[d * hidden + hidden : d * hidden + 2 * hidden]
            b2 = theta[-1]
            return w1, b1, w2, b2

        def loss_grad(theta):
            w1, b1, w2, b2 = unpack(theta)
            z1 = X @ w1 + b1
            h = expit(z1)
            z2 = h @ w2 + b2
            f = expit(z2) if squash else z2
            r = f - y
            loss = 0.5 * np.sum(w * r * r) + 0.5 * decay * np.sum(theta * theta)
            dz2 = w * r * (f * (1 - f)) if squash else w * r
            gw2 = h.T @ dz2
            gb2 = dz2.sum()
            dh = np.outer(dz2, w2) * h * (1 - h)
            gw1 = X.T @ dh
            gb1 = dh.sum(axis=0)
            grad = np.concatenate([gw1.ravel(), gb1, gw2, [gb2]]) + decay * theta
            return loss, grad

        res = minimize(
            loss_grad,
            theta0,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "ftol": 1e-12, "gtol": 1e-8},
        )
        self.theta = res.x
        self._unpack = unpack

    def predict(self, X):
        w1, b1, w2, b2 = self._unpack(self.theta)
        z2 = expit(self.scaler.transform(X) @ w1 + b1) @ w2 + b2
        return expit(z2) if self.family == QUASIBINOMIAL else z2


class _MarsLite:
    """Forward-pass hinge-basis selection: paired hinges, degree <= 2, no prune.

    Candidate pairs are scored by their exact squared-error gain against the
    current fit, computed by projecting out an orthonormalized copy of the
    selected basis rather than refitting per candidate.
    """

    def __init__(self, task: TrainingTask, params, seed):
        max_terms = params.get("max_terms", 21)
        n_knots = params.get("n_knots", 15)
        degree = params.get("degree", 2)
        X, y, w = task.X, task.y, task.weights
        n, p = X.shape
        self.family = task.family
        knots = []
        for j in range(p):
            qs = np.quantile(X[:, j], np.linspace(0.05, 0.95, n_knots))
            knots.append(np.unique(qs))
        sw = np.sqrt(w / w.sum())
        ys = y * sw
        terms: list[tuple] = [()]  # factor tuples (feat, knot, sign)
        B = np.ones((n, 1))

        def orthonormalize(col, Q):
            u = col - Q @ (Q.T @ col)
            u = u - Q @ (Q.T @ u)  # second pass for stability
            nrm = np.linalg.norm(u)
            return (u / nrm, nrm) if nrm > 1e-9 else (None, 0.0)

        q0 = np.ones(n) * sw
        Q = (q0 / np.linalg.norm(q0)).reshape(-1, 1)
        resid = ys - Q @ (Q.T @ ys)
        sse = float(resid @ resid)
        while len(terms) + 2 <= max_terms:
            found = None  # (gain, parent, feat, knot)
            for pi, parent in enumerate(terms):
                if len(parent) >= degree:
                    continue
                used = {f for f, _, _ in parent}
                base = B[:, pi] * sw
                for j in range(p):
                    if j in used:
                        continue
                    ks = knots[j]
                    C1 = base[:, None] * np.maximum(X[:, j : j + 1] - ks[None, :], 0.0)
                    C2 = base[:, None] * np.maximum(ks[None, :] - X[:, j : j + 1], 0.0)
                    U1 = C1 - Q @ (Q.T @ C1)
                    U2 = C2 - Q @ (Q.T @ C2)
                    n1 = np.einsum("ij,ij->j", U1, U1)
                    g1 = np.where(n1 > 1e-18, (U1.T @ resid) ** 2 / np.maximum(n1, 1e-300), 0.0)
                    # orthogonalize the down hinge against the up hinge
                    dot12 = np.einsum("ij,ij->j", U1, U2)
                    U2o = U2 - U1 * np.where(n1 > 1e-18, dot12 / np.maximum(n1, 1e-300), 0.0)
                    n2 = np.einsum("ij,ij->j", U2o, U2o)
                    g2 = np.where(n2 > 1e-18, (U2o.T @ resid) ** 2 / np.maximum(n2, 1e-300), 0.0)
                    gains = g1 + g2
                    kbest = int(np.argmax(gains))
                    if gains[kbest] > 1e-18 and (found is None or gains[kbest] > found[0] + 1e-15):
                        found = (float(gains[kbest]), parent, j, float(ks[kbest]))
            if found is None or found[0] <= max(sse, 1e-12) * 1e-8:
                break
            _, parent, j, knot = found
            c1 = B[:, terms.index(parent)] * np.maximum(X[:, j] - knot, 0.0)
            c2 = B[:, terms.index(parent)] * np.maximum(knot - X[:, j], 0.0)
            terms.append(parent + ((j, knot, 1),))
            terms.append(parent + ((j, knot, -1),))
            B = np.column_stack([B, c1, c2])
            for col in (c1 * sw, c2 * sw):
                qn, nrm = orthonormalize(col, Q)
                if qn is not None:
                    Q = np.column_stack([Q, qn])
            resid = ys - Q @ (Q.T @ ys)
            sse = float(resid @ resid)
        coef, *_ = np.linalg.lstsq(B * sw[:, None], ys, rcond=None)
        self.coef = coef
        self.terms = terms

    def _basis(self, X):
        cols = []
        for term in self.terms:
            col = np.ones(X.shape[0])
            for f, knot, sign in term:
                col = col * np.maximum(sign * (X[:, f] - knot), 0.0)
            cols.append(col)
        return np.column_stack(cols)

    def predict(self, X):
        out = self._basis(X) @ self.coef
        return np.clip(out, 0.0, 1.0) if self.family == QUASIBINOMIAL else out


class _GamSpline:
    """Penalized additive model: per-feature cubic B-spline basis into ridge."""

    def __init__(self, task: TrainingTask, params, seed):
        n_knots = params.get("knots", 5)
        lam = params.get("penalty", 1e-2)
        X, y, w = task.X, task.y, task.weights
        self.family = task.family
        self.features = []
        for j in range(X.shape[1]):
            lo, hi = float(X[:, j].min()), float(X[:, j].max())
            if hi - lo < 1e-12:
                continue
            interior = np.unique(np.quantile(X[:, j], np.linspace(0, 1, n_knots + 2)[1:-1]))
            interior = interior[(interior > lo) & (interior < hi)]
            t = np.concatenate([[lo] * 4, interior, [hi] * 4])
            self.features.append((j, lo, hi, t))
        B = self._basis(X)
        pen = np.full(B.shape[1], lam)
        pen[0] = 0.0
        if task.family == GAUSSIAN:
            sw = np.sqrt(w)
            A = np.vstack([B * sw[:, None], np.diag(np.sqrt(pen))])
            b = np.concatenate([y * sw, np.zeros(B.shape[1])])
            self.coef, *_ = np.linalg.lstsq(A, b, rcond=None)
        else:
            self.coef = _logistic_irls(B, y, w, penalty=pen)

    def _basis(self, X):
        cols = [np.ones(X.shape[0])]
        for j, lo, hi, t in self.features:
            x = np.clip(X[:, j], lo, hi)
            dm = BSpline.design_matrix(x, t, 3).toarray()
            cols.append(dm)
        return np.column_stack(cols)

    def predict(self, X):
        eta = self._basis(X) @ self.coef
        return expit(np.clip(eta, -30, 30)) if self.family == QUASIBINOMIAL else eta


_FITTERS: dict[str, Callable] = {
    "mean": _Mean,
    "glm_main": _Glm,
    "glm_twoway": _GlmTwoWay,
    "ridge_gaussian_prior": _Ridge,
    "cart": _SkTree,
    "random_forest": _SkForest,
    "gbm": _SkGbm,
    "neural_net_1hidden": _NeuralNet,
    "mars_lite": _MarsLite,
    "gam_spline": _GamSpline,
}


def register_learner(kind: str, fitter: Callable) -> None:
    """Extend the registry (used by tests and optional learners)."""
    _FITTERS[kind] = fitter


# ---------------------------------------------------------------------------
# Screeners
# ---------------------------------------------------------------------------


def _weighted_corr(task: TrainingTask) -> np.ndarray:
    X, y, w = task.X, task.y, task.weights
    wn = w / w.sum()
    xm = X - (X * wn[:, None]).sum(axis=0)
    ym = y - float(np.dot(wn, y))
    sx = np.sqrt((wn[:, None] * xm**2).sum(axis=0))
    sy = np.sqrt(float(np.dot(wn, ym**2)))
    cov = (wn[:, None] * xm * ym[:, None]).sum(axis=0)
    denom = sx * sy
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 1e-12, cov / np.maximum(denom, 1e-300), 0.0)
    return corr


def _nonconstant_mask(X: np.ndarray) -> np.ndarray:
    return np.ptp(X, axis=0) > 1e-12


def _top_by_score(scores: np.ndarray, mask: np.ndarray, limit: int) -> np.ndarray:
    scores = np.where(mask, scores, -np.inf)
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = [j for j in order if np.isfinite(scores[j])][:limit]
    if not keep:
        raise LearnerError("nothing to screen: all features are constant")
    return np.array(sorted(keep), dtype=int)


def _bin_codes(x: np.ndarray, max_bins: int = 4) -> np.ndarray:
    vals = np.unique(x)
    if len(vals) <= max_bins:
        return np.searchsorted(vals, x)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, max_bins + 1)[1:-1]))
    return np.searchsorted(edges, x)


def _cramers_v(x_codes: np.ndarray, y_codes: np.ndarray) -> float:
    r, c = x_codes.max() + 1, y_codes.max() + 1
    if r < 2 or c < 2:
        return 0.0
    table = np.zeros((r, c))
    np.add.at(table, (x_codes, y_codes), 1.0)
    n = table.sum()
    exp = np.outer(table.sum(axis=1), table.sum(axis=0)) / n
    with np.errstate(invalid="ignore", divide="ignore"):
        chi2 = np.where(exp > 0, (table - exp) ** 2 / np.where(exp > 0, exp, 1.0), 0.0).sum()
    return float(np.sqrt(chi2 / (n * (min(r, c) - 1))))


def screen_features(task: TrainingTask, screener: ScreenerSpec, seed: int = 0) -> np.ndarray:
    """Deterministic nonempty feature subset of size <= screener.limit."""
    mask = _nonconstant_mask(task.X)
    if not mask.any():
        raise LearnerError("nothing to screen: all features are constant")
    if screener.kind == "pearson_corr":
        return _top_by_score(np.abs(_weighted_corr(task)), mask, screener.limit)
    if screener.kind == "cramers_v":
        y_codes = _bin_codes(task.y)
        scores = np.zeros(task.p)
        for j in range(task.p):
            if mask[j]:
                scores[j] = _cramers_v(_bin_codes(task.X[:, j]), y_codes)
        return _top_by_score(scores, mask, screener.limit)
    if screener.kind == "rf_importance":
        est = RandomForestRegressor(
            n_estimators=100, max_features="sqrt", min_samples_leaf=5,
            random_state=_derived_seed(seed, "rf_screen") % (2**31), n_jobs=1,
        )
        est.fit(task.X[:, mask], task.y, sample_weight=task.weights)
        scores = np.zeros(task.p)
        scores[np.nonzero(mask)[0]] = est.feature_importances_
        return _top_by_score(scores, mask, screener.limit)
    # elastic net: CV over the regularization path, keep the nonzero support
    scaler = _WeightedScaler.fit(task.X[:, mask], task.weights)
    Xs = scaler.transform(task.X[:, mask])
    est = ElasticNetCV(
        l1_ratio=screener.alpha,
        n_alphas=24,
        cv=KFold(n_splits=5, shuffle=False),
        max_iter=3000,
        tol=1e-4,
    )
    with np.errstate(all="ignore"):
        est.fit(Xs, task.y)
    coefs = np.zeros(task.p)
    coefs[np.nonzero(mask)[0]] = np.abs(est.coef_)
    if not (coefs > 1e-12).any():
        # degenerate path (e.g. nearly constant response): keep the single
        # most correlated feature so the contract stays nonempty
        return _top_by_score(np.abs(_weighted_corr(task)), mask, 1)
    return _top_by_score(np.where(coefs > 1e-12, coefs, -np.inf), mask, screener.limit)


# ---------------------------------------------------------------------------
# fit / predict
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FittedLearner:
    spec: LearnerSpec
    family: str
    features: np.ndarray  # column indices used after screening
    p_train: int
    inner: Any


def fit_learner(
    spec: LearnerSpec,
    task: TrainingTask,
    seed: int = 0,
    screen_cache: Union[dict, None] = None,
) -> FittedLearner:
    """Fit one learner, screening first when the spec asks for it.

    ``screen_cache`` shares screening results across learners trained on the
    same task (keyed by the screener spec).
    """
    if spec.kind not in _FITTERS:
        raise LearnerError(f"unknown learner kind {spec.kind!r}")
    if spec.screener is not None and spec.kind != "mean":
        cache = screen_cache if screen_cache is not None else {}
        if spec.screener not in cache:
            cache[spec.screener] = screen_features(task, spec.screener, seed=seed)
        features = cache[spec.screener]
        sub = task.with_features(features)
    else:
        features = np.arange(task.p)
        sub = task
    if sub.p < 1 and spec.kind != "mean":
        raise LearnerError(f"{spec.label}: no features to fit")
    inner = _FITTERS[spec.kind](sub, dict(spec.params), _derived_seed(seed, spec))
    return FittedLearner(spec, task.family, np.asarray(features), task.p, inner)


def predict_learner(fit: FittedLearner, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != fit.p_train:
        raise LearnerError(
            f"{fit.spec.label}: predictor matrix has {X.shape[1]} columns, trained on {fit.p_train}"
        )
    out = np.asarray(fit.inner.predict(X[:, fit.features]), dtype=float)
    if fit.family == QUASIBINOMIAL:
        out = np.clip(out, 0.0, 1.0)
    if not np.all(np.isfinite(out)):
        raise LearnerError(f"{fit.spec.label}: non-finite predictions")
    return out


# ---------------------------------------------------------------------------
# Named learner sets
# ---------------------------------------------------------------------------


def learner_set(name: str, screen_limit: int = 8, rf_trees: int = 500) -> tuple[LearnerSpec, ...]:
    """Named learner/screener bundles used throughout the estimators.

    GLM: main-terms GLM only.  L1: mean, GLM, ridge-prior GLM, CART.
    L2: the L1 learners behind correlation screening plus elastic-net-screened
    hinge-basis splines, additive splines, two-way GLM, and GLM.  L3: L2 plus
    neural nets (raw and elastic-net-screened) and a random forest.
    """
    pearson = ScreenerSpec("pearson_corr", limit=screen_limit)
    enet = ScreenerSpec("elastic_net", limit=screen_limit)
    base = (
        learner("mean"),
        learner("glm_main"),
        learner("ridge_gaussian_prior"),
        learner("cart"),
    )
    if name == "GLM":
        return (learner("glm_main"),)
    if name == "L1":
        return base
    screened = tuple(LearnerSpec(sp.kind, pearson, sp.params) for sp in base)
    l2 = screened + (
        learner("mars_lite", enet),
        learner("gam_spline", enet),
        learner("glm_twoway", enet),
        learner("glm_main", enet),
    )
    if name == "L2":
        return l2
    if name == "L3":
        return l2 + (
            learner("neural_net_1hidden"),
            learner("neural_net_1hidden", enet),
            learner("random_forest", trees=rf_trees),
        )
    raise LearnerError(f"unknown learner set {name!r} (expected GLM, L1, L2, or L3)")
