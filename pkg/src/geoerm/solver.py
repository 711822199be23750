"""Two-step fitting procedure.

Step 1 minimizes the penalized multi-task objective over per-task
representations A_t, coefficients theta_t and the shared center Abar.
Manifold parameters move by: ambient gradient -> tangent projection
(Riemannian gradient) -> optimizer direction (Adam by default, re-projected
onto the tangent space) -> polar retraction.  theta moves in flat R^r.

Step 2 refits each task's full coefficient vector beta with an l2 pull
toward the step-1 anchor A_t theta_t, by proximal gradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .manifold import (
    StiefelPoint,
    nearest_orthonormal,
    polar_retract,
    project_tangent_matrix,
    random_stiefel,
    retract_gram_matrix,
)
from .objective import (
    Hyperparams,
    ModelState,
    TaskData,
    beta_of,
    loss_grad_beta,
    loss_value_and_grad_beta,
    penalty_term,
)

THETA_INIT_STD = 0.1  # theta ~ N(0, 0.01 I)


@dataclass(eq=False)
class AdamState:
    """First/second-moment accumulators for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param))


def adam_step(state: AdamState, grad: np.ndarray) -> np.ndarray:
    """Advance the accumulators one step and return the bias-corrected
    direction m_hat / (sqrt(v_hat) + eps).  The caller scales by the
    learning rate."""
    g = np.asarray(grad, dtype=float)
    if g.shape != state.m.shape:
        raise ConfigurationError(
            f"gradient shape {g.shape} != accumulator shape {state.m.shape}"
        )
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Final state plus per-iteration traces of step 1."""

    state: ModelState
    objective_history: np.ndarray
    grad_norm_history: np.ndarray
    step2_converged: Optional[tuple[bool, ...]] = None


def _move_point(A: StiefelPoint, direction: np.ndarray,
                adam: Optional[AdamState], hp: Hyperparams,
                naive: bool) -> StiefelPoint:
    """Advance one manifold parameter by -alpha * (optimizer direction)."""
    d = adam_step(adam, direction) if adam is not None else direction
    if naive:
        return nearest_orthonormal(A.matrix - hp.alpha * d)
    if adam is not None:
        if hp.adam_reproject:
            d = project_tangent_matrix(A.matrix, d)
        else:
            # Adam direction left off the tangent space on purpose; the
            # Gram-route retraction is still well defined.
            return StiefelPoint(retract_gram_matrix(A.matrix, -hp.alpha * d))
    return polar_retract(A, -hp.alpha * d)


def _validate_tasks(data: Sequence[TaskData], r: int) -> int:
    if len(data) == 0:
        raise ConfigurationError("need at least one task")
    p = data[0].p
    for t, task in enumerate(data):
        if task.p != p:
            raise ConfigurationError(
                f"task {t} has p={task.p}, expected {p} (all tasks share p)"
            )
    if not 1 <= r <= p:
        raise ConfigurationError(f"need 1 <= r <= p, got r={r}, p={p}")
    return p


def _run_step1(data: Sequence[TaskData], r: int, hp: Hyperparams,
               rng: np.random.Generator, naive: bool = False):
    """Shared step-1 loop.

    naive=False: Riemannian updates (project, Adam, re-project, retract).
    naive=True: no-geometry variant — the optimizer direction is taken from
    the raw ambient gradient and the Euclidean step is mapped back by SVD
    re-orthonormalization instead of a retraction.
    """
    p = _validate_tasks(data, r)
    T = len(data)

    A = [random_stiefel(p, r, rng) for _ in range(T)]
    Abar = random_stiefel(p, r, rng)
    theta = [THETA_INIT_STD * rng.standard_normal(r) for _ in range(T)]

    use_adam_A = hp.optimizer == "adam"
    use_adam_th = hp.theta_opt == "adam"
    adam_A = [AdamState.like(A[t].matrix) for t in range(T)] if use_adam_A else None
    adam_Abar = AdamState.like(Abar.matrix) if use_adam_A else None
    adam_th = [AdamState.like(theta[t]) for t in range(T)] if use_adam_th else None

    warm = [None] * T  # penalty eigenvector warm starts
    obj_hist = np.empty(hp.iterations)
    gnorm_hist = np.empty(hp.iterations)

    for k in range(hp.iterations):
        # all gradients are evaluated at the start-of-iteration state
        obj = 0.0
        dir_A = []
        dir_th = []
        gAbar = np.zeros((p, r))
        for t, task in enumerate(data):
            Am = A[t].matrix
            loss, gbeta = loss_value_and_grad_beta(task, beta_of(Am, theta[t]))
            gA = np.outer(gbeta, theta[t])
            gth = Am.T @ gbeta
            obj += loss
            if hp.lam > 0:
                term = penalty_term(Am, Abar.matrix, hp.mu, hp.penalty_norm,
                                    start=warm[t], accept_ties=True)
                warm[t] = term.eigvec
                w_t = hp.lam / math.sqrt(task.n)
                obj += w_t * term.value
                gA = gA + w_t * term.grad_A
                gAbar += w_t * term.grad_Abar
            if not (np.all(np.isfinite(gA)) and np.all(np.isfinite(gth))):
                raise DivergenceError(
                    f"non-finite gradient for task {t} at iteration {k}", k
                )
            dir_A.append(gA if naive else project_tangent_matrix(Am, gA))
            dir_th.append(gth)
        if not np.all(np.isfinite(gAbar)):
            raise DivergenceError(f"non-finite center gradient at iteration {k}", k)
        dAbar = gAbar if naive else project_tangent_matrix(Abar.matrix, gAbar)

        obj_hist[k] = obj
        gnorm_hist[k] = sum(float(np.linalg.norm(d)) for d in dir_A)

        for t in range(T):
            A[t] = _move_point(A[t], dir_A[t],
                               adam_A[t] if use_adam_A else None, hp, naive)
            dth = dir_th[t]
            if use_adam_th:
                dth = adam_step(adam_th[t], dth)
            theta[t] = theta[t] - hp.alpha * dth

        Abar = _move_point(Abar, dAbar, adam_Abar, hp, naive)

    state = ModelState(A=A, theta=theta, Abar=Abar)
    return state, obj_hist, gnorm_hist


def step1(data: Sequence[TaskData], r: int, hp: Hyperparams,
          rng: np.random.Generator):
    """Manifold-constrained optimization of the penalized objective.

    Returns (state, objective_history, grad_norm_history); the histories
    record the objective (at hp.mu smoothing) and the summed Riemannian
    gradient norm at the start of each iteration.
    """
    return _run_step1(data, r, hp, rng, naive=False)


def prox_l2(v: np.ndarray, center: np.ndarray, tau: float) -> np.ndarray:
    """Proximal map of tau * ||. - center||_2: shrink v toward center,
    snapping to it when ||v - center|| <= tau (block soft-threshold)."""
    if tau < 0:
        raise ConfigurationError("tau must be >= 0")
    d = np.asarray(v, dtype=float) - center
    nd = float(np.linalg.norm(d))
    if nd <= tau:
        return np.array(center, dtype=float, copy=True)
    return center + (1.0 - tau / nd) * d


@dataclass(frozen=True)
class Step2Result:
    beta: np.ndarray
    converged: bool
    iterations: int


STEP2_TOL = 1e-8
STEP2_MAX_ITER = 5000


def step2_refine(task: TaskData, anchor: np.ndarray, gamma: float) -> Step2Result:
    """Solve argmin_beta f(beta) + (gamma / sqrt(n)) ||beta - anchor||_2 by
    proximal gradient with step 1/L, L the curvature bound of f."""
    anchor = np.asarray(anchor, dtype=float)
    if anchor.shape != (task.p,):
        raise ConfigurationError(f"anchor shape {anchor.shape} != ({task.p},)")
    tau = gamma / math.sqrt(task.n)
    smax = float(np.linalg.norm(task.X, 2))
    L = smax**2 / task.n
    if task.kind == "classification":
        L /= 4.0
    step = 1.0 / L if L > 0 else 1.0

    beta = anchor.copy()
    for k in range(1, STEP2_MAX_ITER + 1):
        nxt = prox_l2(beta - step * loss_grad_beta(task, beta), anchor, step * tau)
        delta = float(np.linalg.norm(nxt - beta))
        beta = nxt
        if delta <= STEP2_TOL:
            return Step2Result(beta, True, k)
    return Step2Result(beta, False, STEP2_MAX_ITER)


def geoerm_fit(data: Sequence[TaskData], r: int, hp: Hyperparams,
               rng: np.random.Generator) -> FitResult:
    """Full two-step fit: step 1, then per-task step-2 refinement."""
    state, obj_hist, gnorm_hist = step1(data, r, hp, rng)
    betas = []
    flags = []
    for task, A, theta in zip(data, state.A, state.theta):
        res = step2_refine(task, beta_of(A, theta), hp.gamma)
        betas.append(res.beta)
        flags.append(res.converged)
    state.beta = betas
    return FitResult(state, obj_hist, gnorm_hist, tuple(flags))
