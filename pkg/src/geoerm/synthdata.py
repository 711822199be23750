"""Synthetic multi-task benchmark generator and its evaluation metric.

Regular tasks share a center basis: each gets a uniformly perturbed,
re-orthonormalized copy of it and coefficients beta = A theta with theta
uniform.  Outlier tasks draw beta uniformly at random, ignoring the shared
structure, with wider-variance features.  The metric is the largest
per-task coefficient error over the regular tasks only.

Every random quantity derives from the config seed through a fixed
sub-seed schedule, so task i's data does not depend on how many tasks
follow it.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DegenerateMatrixError
from .manifold import StiefelPoint, qr_orthonormalize
from .objective import Hyperparams, LossKind, TaskData

OUTLIER_BETA_RANGE = 3.0
OUTLIER_X_VARIANCE = 2.0
PERTURB_RETRIES = 10

# spawn_key layout under the config seed: (1, 0) center, (1, 1 + t) task t,
# (2,) solver initialization.
_KEY_DATA = 1
_KEY_SOLVER = 2


def subseq(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=key)


def center_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(subseq(seed, _KEY_DATA, 0))


def task_rng(seed: int, t: int) -> np.random.Generator:
    return np.random.default_rng(subseq(seed, _KEY_DATA, 1 + t))


def solver_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(subseq(seed, _KEY_SOLVER))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to regenerate one synthetic experiment."""

    T: int
    n: int
    p: int
    r: int
    h: float
    H: float = 2.0
    eps: float = 0.0
    seed: int = 0
    loss: LossKind = "regression"
    lam: Optional[float] = None  # None: use hyperparam_defaults
    gamma: Optional[float] = None
    alpha: float = 0.01
    iterations: int = 500
    mu: float = 1e-3

    def __post_init__(self):
        if min(self.T, self.n, self.p, self.r) < 1:
            raise ConfigurationError("T, n, p, r must all be >= 1")
        if self.r > self.p:
            raise ConfigurationError(f"need r <= p, got r={self.r}, p={self.p}")
        if self.h < 0:
            raise ConfigurationError("h must be >= 0")
        if not 0 <= self.eps < 1:
            raise ConfigurationError("eps must lie in [0, 1)")
        if self.loss not in ("regression", "classification"):
            raise ConfigurationError(f"unknown loss kind {self.loss!r}")

    @property
    def n_outliers(self) -> int:
        return math.ceil(self.eps * self.T)


@dataclass(frozen=True)
class SyntheticTruth:
    """Ground truth of a generated suite: the center, all true coefficient
    vectors, and the set of regular (non-outlier) task indices."""

    center: StiefelPoint
    beta_true: tuple[np.ndarray, ...]
    regular: frozenset[int]
    config: ExperimentConfig


def hyperparam_defaults(cfg: ExperimentConfig) -> tuple[float, float]:
    """lam = sqrt(r (p + ln T)), gamma = sqrt(p + ln T)."""
    base = cfg.p + math.log(cfg.T)
    return math.sqrt(cfg.r * base), math.sqrt(base)


def resolve_hyperparams(cfg: ExperimentConfig) -> Hyperparams:
    lam_d, gamma_d = hyperparam_defaults(cfg)
    return Hyperparams(
        lam=cfg.lam if cfg.lam is not None else lam_d,
        gamma=cfg.gamma if cfg.gamma is not None else gamma_d,
        alpha=cfg.alpha,
        iterations=cfg.iterations,
        mu=cfg.mu,
    )


def gen_center(p: int, r: int, rng: np.random.Generator) -> StiefelPoint:
    """Shared basis: top-r left singular vectors of a p x p Gaussian draw,
    each column sign-fixed (largest-magnitude entry positive)."""
    g = rng.standard_normal((p, p))
    U, _, _ = np.linalg.svd(g)
    cols = U[:, :r].copy()
    for j in range(r):
        if cols[np.argmax(np.abs(cols[:, j])), j] < 0:
            cols[:, j] = -cols[:, j]
    return StiefelPoint(cols)


def _uniform_perturbation(p: int, r: int, h: float,
                          rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-h, h, size=(p, r))


def _responses(X: np.ndarray, beta: np.ndarray, kind: LossKind,
               rng: np.random.Generator) -> np.ndarray:
    if kind == "regression":
        return X @ beta + rng.standard_normal(X.shape[0])
    return (rng.random(X.shape[0]) < expit(X @ beta)).astype(float)


def gen_regular_task(center: StiefelPoint, cfg: ExperimentConfig,
                     rng: np.random.Generator):
    """One regular task: perturbed/re-orthonormalized basis, uniform theta,
    standard-normal features.  Returns (TaskData, beta_true, A_true)."""
    for attempt in range(PERTURB_RETRIES):
        delta = _uniform_perturbation(cfg.p, cfg.r, cfg.h, rng)
        try:
            A = StiefelPoint(qr_orthonormalize(center.matrix + delta))
            break
        except DegenerateMatrixError:
            continue
    else:
        raise DegenerateMatrixError(
            f"center + perturbation rank deficient {PERTURB_RETRIES} times"
        )
    theta = rng.uniform(-cfg.H, cfg.H, size=cfg.r)
    beta = A.matrix @ theta
    X = rng.standard_normal((cfg.n, cfg.p))
    y = _responses(X, beta, cfg.loss, rng)
    return TaskData(X=X, y=y, kind=cfg.loss), beta, A


def gen_outlier_task(cfg: ExperimentConfig, rng: np.random.Generator):
    """One outlier task: beta uniform on (-3, 3), features N(0, 2).
    Returns (TaskData, beta_true)."""
    beta = rng.uniform(-OUTLIER_BETA_RANGE, OUTLIER_BETA_RANGE, size=cfg.p)
    X = math.sqrt(OUTLIER_X_VARIANCE) * rng.standard_normal((cfg.n, cfg.p))
    y = _responses(X, beta, cfg.loss, rng)
    return TaskData(X=X, y=y, kind=cfg.loss), beta


def gen_suite(cfg: ExperimentConfig):
    """Generate all T tasks; the last ceil(eps T) indices are outliers.
    Returns (tasks, SyntheticTruth)."""
    center = gen_center(cfg.p, cfg.r, center_rng(cfg.seed))
    first_outlier = cfg.T - cfg.n_outliers
    tasks: list[TaskData] = []
    betas: list[np.ndarray] = []
    for t in range(cfg.T):
        rng = task_rng(cfg.seed, t)
        if t < first_outlier:
            task, beta, _ = gen_regular_task(center, cfg, rng)
        else:
            task, beta = gen_outlier_task(cfg, rng)
        tasks.append(task)
        betas.append(beta)
    truth = SyntheticTruth(
        center=center,
        beta_true=tuple(betas),
        regular=frozenset(range(first_outlier)),
        config=cfg,
    )
    return tasks, truth


def max_error(beta_hat: Sequence[np.ndarray], truth: SyntheticTruth) -> float:
    """Largest l2 estimation error over the regular tasks."""
    if len(beta_hat) != len(truth.beta_true):
        raise ConfigurationError(
            f"{len(beta_hat)} estimates for {len(truth.beta_true)} tasks"
        )
    if not truth.regular:
        raise ConfigurationError("no regular tasks: max_error undefined")
    return max(
        float(np.linalg.norm(np.asarray(beta_hat[t]) - truth.beta_true[t]))
        for t in sorted(truth.regular)
    )


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def dump_suite(tasks: Sequence[TaskData], truth: SyntheticTruth,
               out_dir) -> list[Path]:
    """Write one task_<t>.csv per task, truth.csv, and config.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    p = truth.config.p
    for t, task in enumerate(tasks):
        path = out / f"task_{t}.csv"
        header = ",".join([f"x_{j}" for j in range(p)] + ["y"])
        lines = [header]
        for i in range(task.n):
            lines.append(
                ",".join([_fmt(v) for v in task.X[i]] + [_fmt(task.y[i])])
            )
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    truth_path = out / "truth.csv"
    header = ",".join(["t", "is_outlier"] + [f"beta_{j}" for j in range(p)])
    lines = [header]
    for t, beta in enumerate(truth.beta_true):
        flag = "0" if t in truth.regular else "1"
        lines.append(",".join([str(t), flag] + [_fmt(v) for v in beta]))
    truth_path.write_text("\n".join(lines) + "\n")
    written.append(truth_path)
    cfg_path = out / "config.json"
    cfg_path.write_text(
        json.dumps(dataclasses.asdict(truth.config), indent=2, sort_keys=True)
        + "\n"
    )
    written.append(cfg_path)
    return written
