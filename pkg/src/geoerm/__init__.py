"""Geometry-aware multi-task representation learning on the Stiefel
manifold, with baselines, a synthetic benchmark generator, and an
experiment harness."""

__version__ = "0.1.0"

from .manifold import (
    StiefelPoint,
    TangentVector,
    is_tangent,
    manifold_dim,
    nearest_orthonormal,
    polar_retract,
    polar_retract_svd,
    project_tangent,
    random_stiefel,
    sym,
)
from .objective import (
    Hyperparams,
    ModelState,
    TaskData,
    beta_of,
    linear_loss,
    logistic_loss,
    penalty,
    step1_objective,
)
from .solver import FitResult, adam_step, geoerm_fit, prox_l2, step1, step2_refine
from .synthdata import (
    ExperimentConfig,
    SyntheticTruth,
    gen_suite,
    hyperparam_defaults,
    max_error,
)

__all__ = [
    "ExperimentConfig",
    "FitResult",
    "Hyperparams",
    "ModelState",
    "StiefelPoint",
    "SyntheticTruth",
    "TangentVector",
    "TaskData",
    "adam_step",
    "beta_of",
    "gen_suite",
    "geoerm_fit",
    "hyperparam_defaults",
    "is_tangent",
    "linear_loss",
    "logistic_loss",
    "manifold_dim",
    "max_error",
    "nearest_orthonormal",
    "penalty",
    "polar_retract",
    "polar_retract_svd",
    "project_tangent",
    "prox_l2",
    "random_stiefel",
    "step1",
    "step1_objective",
    "step2_refine",
    "sym",
]
