"""Task losses, the subspace-alignment penalty, and their Euclidean gradients.

The penalized objective optimized in step 1 is

    sum_t [ f_t(A_t theta_t) + (lam / sqrt(n_t)) * pen(A_t, Abar) ]

where pen is (by default) the spectral norm of the projector gap
D = A A^T - Abar Abar^T, smoothed as sqrt(||D||_2^2 + mu^2) - mu so that its
gradient is defined everywhere.  All gradient formulas here are for the
smooth ambient extension of the objective to arbitrary p x r matrices; the
solver turns them into Riemannian gradients by tangent projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigurationError,
    DimensionError,
    KindMismatchError,
    PowerIterationError,
)
from .manifold import StiefelPoint, _as_matrix

LossKind = Literal["regression", "classification"]

# Power iteration controls for the spectral penalty.
POWER_MAX_STEPS = 10_000
POWER_REL_TOL = 1e-13
# Tie acceptance (optimizer mode only): accept the current direction as a
# subgradient choice when the eigen-residual ||D^2 w - rho w|| is small or
# has stopped improving, the signature of nearly tied extreme eigenvalues
# on which the strict criterion would creep for ~1/gap steps.
POWER_RES_GATE = 1e-3
POWER_RES_SLOW_CAP = 0.05
POWER_RES_WINDOW = 25
POWER_RES_MIN_STEPS = 3
# Below this, the projector gap is treated as zero and the penalty gradient
# is zero by convention.
SIGMA_FLOOR = 1e-150


@dataclass(frozen=True, eq=False)
class TaskData:
    """One task: design matrix X (n x p), responses y (n,), and loss kind."""

    X: np.ndarray
    y: np.ndarray
    kind: LossKind = "regression"

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2:
            raise DimensionError(f"X must be 2-d, got ndim={X.ndim}")
        if y.ndim != 1:
            raise DimensionError(f"y must be 1-d, got ndim={y.ndim}")
        if X.shape[0] != y.shape[0]:
            raise DimensionError(
                f"X has {X.shape[0]} rows but y has {y.shape[0]} entries"
            )
        if self.kind not in ("regression", "classification"):
            raise KindMismatchError(f"unknown loss kind {self.kind!r}")
        if self.kind == "classification" and not np.all(np.isin(y, (0.0, 1.0))):
            raise KindMismatchError("classification responses must lie in {0, 1}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class Hyperparams:
    """Solver configuration.

    mu is the penalty smoothing level used while optimizing; mu = 0 gives
    the exact spectral norm.  optimizer = "sgd" is the plain-gradient
    diagnostic mode; theta_optimizer defaults to the same choice.
    """

    lam: float
    gamma: float
    alpha: float = 0.01
    iterations: int = 500
    mu: float = 1e-3
    penalty_norm: Literal["spectral", "frobenius"] = "spectral"
    optimizer: Literal["adam", "sgd"] = "adam"
    theta_optimizer: Optional[Literal["adam", "sgd"]] = None
    adam_reproject: bool = True

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ConfigurationError("lam and gamma must be >= 0")
        if self.alpha <= 0:
            raise ConfigurationError("alpha must be > 0")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.mu < 0:
            raise ConfigurationError("mu must be >= 0")
        if self.penalty_norm not in ("spectral", "frobenius"):
            raise ConfigurationError(f"unknown penalty_norm {self.penalty_norm!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    @property
    def theta_opt(self) -> str:
        return self.theta_optimizer or self.optimizer


@dataclass(eq=False)
class ModelState:
    """Full parameter set: per-task (A_t, theta_t), shared Abar, and the
    refined per-task coefficients beta (populated after step 2)."""

    A: list[StiefelPoint]
    theta: list[np.ndarray]
    Abar: StiefelPoint
    beta: Optional[list[np.ndarray]] = None

    def __post_init__(self):
        if len(self.A) != len(self.theta):
            raise DimensionError("A and theta lists must have equal length")
        if self.beta is not None and len(self.beta) != len(self.A):
            raise DimensionError("beta list must have length T")

    @property
    def T(self) -> int:
        return len(self.A)


def beta_of(A, theta: np.ndarray) -> np.ndarray:
    """Task coefficients beta = A theta."""
    Am = _as_matrix(A)
    th = np.asarray(theta, dtype=float)
    if th.shape != (Am.shape[1],):
        raise DimensionError(f"theta shape {th.shape} != ({Am.shape[1]},)")
    return Am @ th


def linear_loss(task: TaskData, beta: np.ndarray) -> float:
    """Mean squared residual loss (1/2n) ||y - X beta||^2."""
    if task.kind != "regression":
        raise KindMismatchError("linear_loss needs a regression task")
    r = task.y - task.X @ beta
    return float(r @ r) / (2.0 * task.n)


def logistic_loss(task: TaskData, beta: np.ndarray) -> float:
    """Mean negative log-likelihood of the logistic model, computed in the
    overflow-safe logaddexp form."""
    if task.kind != "classification":
        raise KindMismatchError("logistic_loss needs a classification task")
    z = task.X @ beta
    return float(np.sum(np.logaddexp(0.0, z) - task.y * z)) / task.n


def loss_value(task: TaskData, beta: np.ndarray) -> float:
    if task.kind == "regression":
        return linear_loss(task, beta)
    return logistic_loss(task, beta)


def loss_grad_beta(task: TaskData, beta: np.ndarray) -> np.ndarray:
    """Gradient of the task loss with respect to beta."""
    if task.kind == "regression":
        return task.X.T @ (task.X @ beta - task.y) / task.n
    return task.X.T @ (expit(task.X @ beta) - task.y) / task.n


def loss_value_and_grad_beta(task: TaskData, beta: np.ndarray):
    """Loss and its beta-gradient from one pass over the data."""
    z = task.X @ beta
    if task.kind == "regression":
        r = z - task.y
        return float(r @ r) / (2.0 * task.n), task.X.T @ r / task.n
    value = float(np.sum(np.logaddexp(0.0, z) - task.y * z)) / task.n
    return value, task.X.T @ (expit(z) - task.y) / task.n


def grad_theta(task: TaskData, A, theta: np.ndarray) -> np.ndarray:
    """Gradient of the task loss with respect to theta, through beta = A theta."""
    Am = _as_matrix(A)
    return Am.T @ loss_grad_beta(task, beta_of(Am, theta))


def frobenius_gap_sq(A, Abar) -> float:
    """||A A^T - Abar Abar^T||_F^2 without forming the p x p gap."""
    Am, Bm = _as_matrix(A), _as_matrix(Abar)
    return float(
        np.sum((Am.T @ Am) ** 2)
        - 2.0 * np.sum((Am.T @ Bm) ** 2)
        + np.sum((Bm.T @ Bm) ** 2)
    )


def _gap_matvec(Am: np.ndarray, Bm: np.ndarray, w: np.ndarray) -> np.ndarray:
    """(A A^T - Abar Abar^T) w in O(p r)."""
    return Am @ (Am.T @ w) - Bm @ (Bm.T @ w)


def top_eigpair(A, Abar, start: Optional[np.ndarray] = None,
                max_steps: int = POWER_MAX_STEPS, accept_ties: bool = False):
    """Largest-magnitude eigenpair of the symmetric gap D = AA^T - AbarAbar^T.

    Power iteration runs on D^2 (for two subspaces of equal rank the extreme
    eigenvalues of D come in +/- pairs, on which iterating D itself would
    oscillate); an eigenvector of D with its sign is then extracted from the
    converged direction.  Returns (sigma, v, sign) with sigma = ||D||_2 >= 0,
    v a unit eigenvector of D, and sign the sign of its eigenvalue.  At
    D ~ 0 returns (0, start-direction, 1).

    accept_ties enables early acceptance when the Rayleigh quotient decays
    geometrically, the signature of nearly tied extreme eigenvalues (the
    limit is Aitken-extrapolated, the direction is a subgradient choice).
    That trades a little accuracy for bounded cost, which is what the
    optimizer wants; the default strict mode iterates to full precision or
    raises.
    """
    Am, Bm = _as_matrix(A), _as_matrix(Abar)
    if Am.shape != Bm.shape:
        raise DimensionError(f"shape mismatch: {Am.shape} vs {Bm.shape}")
    p = Am.shape[0]

    w = np.zeros(p)
    w[0] = 1.0
    if start is not None and np.linalg.norm(start) > 0:
        w = np.asarray(start, dtype=float) / np.linalg.norm(start)

    # a gap at the cancellation floor of its Gram terms is zero in disguise
    # (e.g. r = p, where both projectors are the identity)
    t1 = float(np.sum((Am.T @ Am) ** 2))
    t2 = float(np.sum((Am.T @ Bm) ** 2))
    t3 = float(np.sum((Bm.T @ Bm) ** 2))
    gap_sq = t1 - 2.0 * t2 + t3
    if gap_sq <= 1e-13 * max(t1 + 2.0 * t2 + t3, 1e-30):
        return 0.0, w, 1.0

    restarts = 0
    rho = 0.0
    rho_prev = -np.inf
    res_baseline = math.inf
    for step in range(max_steps):
        z = _gap_matvec(Am, Bm, w)
        rho = float(z @ z)  # Rayleigh quotient of D^2 at unit w
        scale = max(rho, SIGMA_FLOOR)
        if abs(rho - rho_prev) <= POWER_REL_TOL * scale:
            break
        rho_prev = rho
        y = _gap_matvec(Am, Bm, z)  # D^2 w
        if accept_ties and step >= POWER_RES_MIN_STEPS:
            res = float(np.linalg.norm(y - rho * w))
            if res <= POWER_RES_GATE * scale:
                break
            if step % POWER_RES_WINDOW == 0:
                if (res >= 0.9 * res_baseline
                        and res <= POWER_RES_SLOW_CAP * scale):
                    break
                res_baseline = res
        ny = np.linalg.norm(y)
        if ny <= SIGMA_FLOOR * max(1.0, gap_sq):
            # start vector (numerically) in the kernel: re-randomize
            restarts += 1
            if restarts > 3:
                raise PowerIterationError("power iteration stuck in the kernel")
            w = np.random.default_rng(restarts).standard_normal(p)
            w /= np.linalg.norm(w)
            rho_prev = -np.inf
            res_baseline = math.inf
            continue
        w = y / ny
    else:
        raise PowerIterationError(
            f"no convergence in {max_steps} power-iteration steps"
        )

    sigma = math.sqrt(max(rho, 0.0))
    if sigma <= SIGMA_FLOOR:
        return 0.0, w, 1.0
    z = _gap_matvec(Am, Bm, w)
    u_plus = sigma * w + z
    u_minus = sigma * w - z
    if np.linalg.norm(u_plus) >= np.linalg.norm(u_minus):
        v, sign = u_plus, 1.0
    else:
        v, sign = u_minus, -1.0
    v = v / np.linalg.norm(v)
    return sigma, v, sign


def _smoothed(x: float, mu: float) -> float:
    return math.sqrt(x * x + mu * mu) - mu


def penalty(A, Abar, mu: float = 0.0, norm: str = "spectral",
            accept_ties: bool = False) -> float:
    """Alignment penalty between the subspaces spanned by A and Abar.

    spectral: sqrt(||D||_2^2 + mu^2) - mu with D = AA^T - AbarAbar^T, the
    spectral norm obtained by power iteration; mu = 0 gives the exact norm.
    frobenius: same smoothing applied to ||D||_F.
    """
    if norm == "frobenius":
        return _smoothed(math.sqrt(max(frobenius_gap_sq(A, Abar), 0.0)), mu)
    if norm != "spectral":
        raise ConfigurationError(f"unknown penalty norm {norm!r}")
    sigma, _, _ = top_eigpair(A, Abar, accept_ties=accept_ties)
    return _smoothed(sigma, mu)


@dataclass(frozen=True)
class PenaltyTerm:
    """Value and both ambient gradients of one task's alignment penalty."""

    value: float
    grad_A: np.ndarray
    grad_Abar: np.ndarray
    eigvec: Optional[np.ndarray]  # warm start for the next power iteration


def penalty_term(A, Abar, mu: float, norm: str = "spectral",
                 start: Optional[np.ndarray] = None,
                 accept_ties: bool = False) -> PenaltyTerm:
    """Smoothed penalty with gradients in A and Abar, sharing one eigpair.

    At D = 0 both gradients are zero by convention.
    """
    Am, Bm = _as_matrix(A), _as_matrix(Abar)
    if norm == "frobenius":
        fro = math.sqrt(max(frobenius_gap_sq(Am, Bm), 0.0))
        denom = math.sqrt(fro * fro + mu * mu)
        if denom <= SIGMA_FLOOR:
            z = np.zeros_like(Am)
            return PenaltyTerm(0.0, z, z.copy(), None)
        gA = 2.0 * _gap_matvec(Am, Bm, Am) / denom
        gB = -2.0 * _gap_matvec(Am, Bm, Bm) / denom
        return PenaltyTerm(_smoothed(fro, mu), gA, gB, None)

    sigma, v, sign = top_eigpair(Am, Bm, start=start, accept_ties=accept_ties)
    if sigma <= SIGMA_FLOOR:
        z = np.zeros_like(Am)
        return PenaltyTerm(0.0, z, z.copy(), v)
    scale = sigma / math.sqrt(sigma * sigma + mu * mu)
    coef = 2.0 * scale * sign
    gA = coef * np.outer(v, v @ Am)
    gB = -coef * np.outer(v, v @ Bm)
    return PenaltyTerm(_smoothed(sigma, mu), gA, gB, v)


def grad_A_euclid(task: TaskData, A, theta: np.ndarray, Abar,
                  hp: Hyperparams) -> np.ndarray:
    """Ambient gradient of one task's term (loss + weighted penalty) in A."""
    Am = _as_matrix(A)
    th = np.asarray(theta, dtype=float)
    g = np.outer(loss_grad_beta(task, beta_of(Am, th)), th)
    if hp.lam > 0:
        term = penalty_term(Am, Abar, hp.mu, hp.penalty_norm)
        g = g + (hp.lam / math.sqrt(task.n)) * term.grad_A
    return g


def grad_Abar_euclid(state: ModelState, data: Sequence[TaskData],
                     hp: Hyperparams) -> np.ndarray:
    """Ambient gradient of the summed alignment penalty in Abar."""
    Bm = _as_matrix(state.Abar)
    g = np.zeros_like(Bm)
    if hp.lam == 0:
        return g
    for A, task in zip(state.A, data):
        term = penalty_term(_as_matrix(A), Bm, hp.mu, hp.penalty_norm)
        g += (hp.lam / math.sqrt(task.n)) * term.grad_Abar
    return g


def step1_objective(state: ModelState, data: Sequence[TaskData],
                    hp: Hyperparams, accept_ties: bool = False) -> float:
    """Penalized multi-task objective at a given state (uses hp.mu; pass a
    copy with mu = 0 for the exact spectral-norm value).

    accept_ties tolerates tied gap spectra, which optimized states usually
    have; keep it off for oracle-grade evaluation of generic states.
    """
    if len(data) != state.T:
        raise DimensionError(f"{len(data)} tasks vs state with T={state.T}")
    total = 0.0
    for task, A, theta in zip(data, state.A, state.theta):
        total += loss_value(task, beta_of(A, theta))
        if hp.lam > 0:
            total += (hp.lam / math.sqrt(task.n)) * penalty(
                A, state.Abar, hp.mu, hp.penalty_norm, accept_ties=accept_ties
            )
    return total
