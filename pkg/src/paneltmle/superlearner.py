"""Cross-validated stacking: out-of-fold risks and simplex-constrained weights.

Folds are assigned at the unit level by hashing (seed, unit id), so the plan
is invariant to row order.  The meta-learner solves the simplex-constrained
weighted least-squares problem exactly (active set); the classical
nonnegative-least-squares-then-normalize variant sits behind a flag.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.optimize import nnls as _scipy_nnls

from .learners import (
    QUASIBINOMIAL,
    FittedLearner,
    LearnerSpec,
    TrainingTask,
    _derived_seed,
    fit_learner,
    predict_learner,
)
from .panel import stable_unit_digest

SL_CLAMP = 5e-4


class SuperLearnerError(ValueError):
    """Raised when no learner survives cross-validation."""


@dataclass(frozen=True)
class CvPlan:
    """k-fold partition of units, hashed on unit identity."""

    folds: tuple[int, ...]
    k: int
    seed: int

    def __post_init__(self):
        counts = np.bincount(np.asarray(self.folds), minlength=self.k)
        if len(counts) != self.k or counts.min() < 1:
            raise SuperLearnerError("folds must partition units with every fold nonempty")


def make_cv_plan(unit_ids: Sequence, k: int = 10, seed: int = 0) -> CvPlan:
    """Deal units into k folds in hash order of (seed, unit id)."""
    n = len(unit_ids)
    if not 1 < k <= n:
        raise SuperLearnerError(f"need 2 <= k <= n, got k={k}, n={n}")
    digests = np.array([stable_unit_digest(seed, uid) for uid in unit_ids], dtype=np.uint64)
    order = np.lexsort((np.arange(n), digests))
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % k
    return CvPlan(tuple(int(f) for f in folds), k, seed)


@dataclass(frozen=True, eq=False)
class CvResult:
    oof: np.ndarray  # (n, m) out-of-fold predictions, nan where failed
    risks: np.ndarray  # (m,) weighted MSE on the task scale, nan where failed
    ok: np.ndarray  # (m,) bool
    messages: tuple[str, ...]


def cv_predictions(
    task: TrainingTask,
    specs: Sequence[LearnerSpec],
    plan: CvPlan,
    seed: int = 0,
) -> CvResult:
    """Out-of-fold predictions and CV risks; failing learners are flagged."""
    if not specs:
        raise SuperLearnerError("need at least one learner")
    n, m = task.n, len(specs)
    if len(plan.folds) != n:
        raise SuperLearnerError("CV plan does not match task size")
    folds = np.asarray(plan.folds)
    oof = np.full((n, m), np.nan)
    ok = np.ones(m, dtype=bool)
    messages: list[str] = []
    fold_tasks = []
    for f in range(plan.k):
        holdout = folds == f
        # screening results are shared across learners within a fold
        fold_tasks.append((task.subset(~holdout), holdout, {}))
    for j, spec in enumerate(specs):
        for f, (train, holdout, screen_cache) in enumerate(fold_tasks):
            try:
                fit = fit_learner(
                    spec,
                    train,
                    seed=_derived_seed(seed, spec, "fold", f),
                    screen_cache=screen_cache,
                    screen_seed=_derived_seed(seed, "screen", f),
                )
                oof[holdout, j] = predict_learner(fit, task.X[holdout])
            except Exception as exc:  # noqa: BLE001 - learner failures are data-dependent
                ok[j] = False
                messages.append(f"{spec.label} failed on fold {f}: {exc}")
                oof[:, j] = np.nan
                break
    wsum = task.weights.sum()
    risks = np.full(m, np.nan)
    for j in range(m):
        if ok[j]:
            r = task.y - oof[:, j]
            risks[j] = float(np.sum(task.weights * r * r) / wsum)
    return CvResult(oof, risks, ok, tuple(messages))


def _simplex_kkt(Q: np.ndarray, c: np.ndarray, active: np.ndarray) -> np.ndarray:
    """Solve the equality-constrained subproblem on the active support."""
    idx = np.nonzero(active)[0]
    k = len(idx)
    M = np.zeros((k + 1, k + 1))
    M[:k, :k] = Q[np.ix_(idx, idx)]
    M[:k, k] = 1.0
    M[k, :k] = 1.0
    rhs = np.concatenate([c[idx], [1.0]])
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    w = np.zeros(len(c))
    w[idx] = sol[:k]
    return w


def solve_simplex_weights(
    Z: np.ndarray,
    y: np.ndarray,
    weights: Union[np.ndarray, None] = None,
    tol: float = 1e-10,
) -> np.ndarray:
    """Minimize the weighted squared error of Z @ w over the probability simplex.

    Active-set iteration from the uniform start; a relative 1e-12 Tikhonov
    term makes ties (identical columns) resolve to equal weights.
    """
    Z = np.asarray(Z, dtype=float)
    n, m = Z.shape
    if m == 1:
        return np.ones(1)
    w_obs = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w_obs / w_obs.sum())
    A = Z * sw[:, None]
    b = y * sw
    Q = A.T @ A
    c = A.T @ b
    scale = max(float(np.trace(Q)) / m, 1e-300)
    Q = Q + (1e-12 * scale) * np.eye(m)

    w = np.full(m, 1.0 / m)
    active = np.ones(m, dtype=bool)
    for _ in range(200 * m):
        cand = _simplex_kkt(Q, c, active)
        if cand[active].min() < -tol:
            # step toward the candidate until the first weight hits zero
            delta = cand - w
            blocking = active & (delta < -1e-300)
            steps = -w[blocking] / delta[blocking]
            alpha = float(np.min(steps))
            w = np.maximum(w + alpha * delta, 0.0)
            drop = np.nonzero(blocking)[0][np.argmin(steps)]
            w[drop] = 0.0
            active[drop] = False
            continue
        w = np.where(active, np.maximum(cand, 0.0), 0.0)
        grad = Q @ w - c
        mu = float(np.min(grad[active]))
        violations = np.where(~active, mu - grad, -np.inf)
        worst = int(np.argmax(violations))
        if violations[worst] <= tol * max(scale, 1.0):
            break
        active[worst] = True
    total = w.sum()
    return w / total if total > 0 else np.full(m, 1.0 / m)


def nnls_normalized_weights(
    Z: np.ndarray, y: np.ndarray, weights: Union[np.ndarray, None] = None
) -> np.ndarray:
    """Nonnegative least squares rescaled to the simplex (fidelity variant)."""
    Z = np.asarray(Z, dtype=float)
    w_obs = np.ones(Z.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    sw = np.sqrt(w_obs / w_obs.sum())
    coef, _ = _scipy_nnls(Z * sw[:, None], y * sw)
    total = coef.sum()
    if total <= 0:
        return np.full(Z.shape[1], 1.0 / Z.shape[1])
    return coef / total


@dataclass(frozen=True, eq=False)
class SuperLearnerFit:
    """Fitted ensemble: specs, OOF risks, simplex weights, full-data refits.

    Refits are skipped (stored as None) for zero-weight learners; the
    ensemble prediction is unchanged by construction.
    """

    specs: tuple[LearnerSpec, ...]
    family: str
    weights: np.ndarray
    cv_risks: np.ndarray
    sl_risk: float
    refits: tuple[Union[FittedLearner, None], ...]
    messages: tuple[str, ...]

    def weight_table(self) -> list[dict]:
        rows = []
        for spec, w, r in zip(self.specs, self.weights, self.cv_risks):
            rows.append(
                {
                    "learner": spec.kind,
                    "screener": spec.screener.kind if spec.screener else "",
                    "weight": float(w),
                    "cv_risk": float(r) if np.isfinite(r) else float("nan"),
                }
            )
        return rows


def fit_super_learner(
    task: TrainingTask,
    specs: Sequence[LearnerSpec],
    plan: CvPlan,
    seed: int = 0,
    solver: str = "simplex",
    cv_single: bool = False,
) -> SuperLearnerFit:
    """Cross-validate, solve the simplex weights, refit survivors on all data.

    A single-learner list short-circuits to that learner (weight 1); set
    ``cv_single`` to still compute its CV risk.
    """
    specs = tuple(specs)
    if not specs:
        raise SuperLearnerError("need at least one learner")
    m = len(specs)
    if m == 1 and not cv_single:
        weights = np.ones(1)
        risks = np.full(1, np.nan)
        messages: tuple[str, ...] = ()
        sl_risk = float("nan")
    else:
        cv = cv_predictions(task, specs, plan, seed=seed)
        if not cv.ok.any():
            raise SuperLearnerError("all learners failed: " + "; ".join(cv.messages))
        if not cv.ok.all():
            warnings.warn(
                "dropping failed learners: "
                + ", ".join(s.label for s, o in zip(specs, cv.ok) if not o),
                stacklevel=2,
            )
        risks = cv.risks
        weights = np.zeros(m)
        live = np.nonzero(cv.ok)[0]
        if solver == "simplex":
            weights[live] = solve_simplex_weights(cv.oof[:, live], task.y, task.weights)
        elif solver == "nnls_normalize":
            weights[live] = nnls_normalized_weights(cv.oof[:, live], task.y, task.weights)
        else:
            raise SuperLearnerError(f"unknown weight solver {solver!r}")
        combo = cv.oof[:, live] @ weights[live]
        r = task.y - combo
        sl_risk = float(np.sum(task.weights * r * r) / task.weights.sum())
        messages = cv.messages
    refits: list[Union[FittedLearner, None]] = []
    for j, spec in enumerate(specs):
        if weights[j] > 0.0:
            refits.append(fit_learner(spec, task, seed=_derived_seed(seed, spec, "full")))
        else:
            refits.append(None)
    return SuperLearnerFit(specs, task.family, weights, risks, sl_risk, tuple(refits), messages)


def predict_super_learner(fit: SuperLearnerFit, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.zeros(X.shape[0])
    for w, refit in zip(fit.weights, fit.refits):
        if w > 0.0 and refit is not None:
            out += w * predict_learner(refit, X)
    if fit.family == QUASIBINOMIAL:
        out = np.clip(out, SL_CLAMP, 1.0 - SL_CLAMP)
    return out
