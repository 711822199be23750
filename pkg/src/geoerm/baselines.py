"""Reference methods the benchmark compares against.

SingleTask fits each task alone; Pooled fits one coefficient vector on all
tasks stacked; PlainERM runs step 1 with the alignment penalty switched off
and skips step 2; NaiveOrtho replaces the geometric update with a Euclidean
step followed by SVD re-orthonormalization.
"""

from __future__ import annotations

import dataclasses
import warnings
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .objective import Hyperparams, TaskData, beta_of, loss_grad_beta
from .solver import FitResult, _run_step1, step2_refine

RIDGE_JITTER = 1e-8
LOGISTIC_GD_TOL = 1e-6
LOGISTIC_GD_MAX_ITER = 10_000


class BaselineKind(Enum):
    SINGLE_TASK = "SingleTask"
    POOLED = "Pooled"
    PLAIN_ERM = "PlainERM"
    NAIVE_ORTHO = "NaiveOrtho"


def _lstsq_ridge(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = X.shape[1]
    return np.linalg.solve(X.T @ X + RIDGE_JITTER * np.eye(p), X.T @ y)


def _logistic_gd(task: TaskData) -> tuple[np.ndarray, bool]:
    """Full-batch gradient descent with step 1/L on the logistic loss."""
    smax = float(np.linalg.norm(task.X, 2))
    L = smax**2 / (4.0 * task.n)
    step = 1.0 / L if L > 0 else 1.0
    beta = np.zeros(task.p)
    for _ in range(LOGISTIC_GD_MAX_ITER):
        g = loss_grad_beta(task, beta)
        if np.linalg.norm(g) <= LOGISTIC_GD_TOL:
            return beta, True
        beta = beta - step * g
    return beta, False


def single_task_fit(task: TaskData) -> np.ndarray:
    """Per-task fit: jittered least squares (regression) or full-batch
    gradient descent on the logistic loss (classification)."""
    if task.kind == "regression":
        return _lstsq_ridge(task.X, task.y)
    beta, converged = _logistic_gd(task)
    if not converged:
        warnings.warn(
            "single-task logistic fit did not reach the gradient tolerance; "
            "returning the last iterate",
            RuntimeWarning,
            stacklevel=2,
        )
    return beta


def pooled_fit(tasks: Sequence[TaskData]) -> np.ndarray:
    """One coefficient vector for all tasks, fit on their stacked rows."""
    if len(tasks) == 0:
        raise ConfigurationError("need at least one task")
    p = tasks[0].p
    kind = tasks[0].kind
    for t, task in enumerate(tasks):
        if task.p != p:
            raise ConfigurationError(f"task {t} has p={task.p}, expected {p}")
        if task.kind != kind:
            raise ConfigurationError("pooled fit needs a single loss kind")
    stacked = TaskData(
        X=np.vstack([t.X for t in tasks]),
        y=np.concatenate([t.y for t in tasks]),
        kind=kind,
    )
    return single_task_fit(stacked)


def plain_erm_fit(data: Sequence[TaskData], r: int, hp: Hyperparams,
                  rng: np.random.Generator) -> FitResult:
    """Factorized ERM without the alignment penalty and without step 2:
    beta_t = A_t theta_t straight from step 1 run at lam = 0."""
    hp0 = dataclasses.replace(hp, lam=0.0)
    state, obj_hist, gnorm_hist = _run_step1(data, r, hp0, rng, naive=False)
    state.beta = [beta_of(A, th) for A, th in zip(state.A, state.theta)]
    return FitResult(state, obj_hist, gnorm_hist)


def naive_ortho_fit(data: Sequence[TaskData], r: int, hp: Hyperparams,
                    rng: np.random.Generator) -> FitResult:
    """Step 1 with the no-geometry update (Euclidean step on the ambient
    gradient, then SVD re-orthonormalization), followed by the same step-2
    refinement as the full method."""
    state, obj_hist, gnorm_hist = _run_step1(data, r, hp, rng, naive=True)
    betas = []
    flags = []
    for task, A, theta in zip(data, state.A, state.theta):
        res = step2_refine(task, beta_of(A, theta), hp.gamma)
        betas.append(res.beta)
        flags.append(res.converged)
    state.beta = betas
    return FitResult(state, obj_hist, gnorm_hist, tuple(flags))
