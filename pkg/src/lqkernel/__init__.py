"""l^q coefficient-regularized least squares with Gaussian kernels.

The estimator lives in the span of Gaussian bumps centred at the training
inputs and penalises ``sum |a_i|^q`` of the expansion coefficients.
"""

from lqkernel.errors import (
    ConfigError,
    InputError,
    LqKernelError,
    NumericalError,
    SolverError,
)
from lqkernel.kernel import (
    CoefficientModel,
    Dataset,
    clip,
    empirical_risk,
    eval_kernel,
    gram_matrix,
    kernel_matrix,
    predict,
)
from lqkernel.penalty import PenaltySpec, objective, penalty_value, prox, prox_scalar
from lqkernel.solvers import FitResult, SolverConfig, fit

__version__ = "0.1.0"

__all__ = [
    "CoefficientModel",
    "ConfigError",
    "Dataset",
    "FitResult",
    "InputError",
    "LqKernelError",
    "NumericalError",
    "PenaltySpec",
    "SolverConfig",
    "SolverError",
    "clip",
    "empirical_risk",
    "eval_kernel",
    "fit",
    "gram_matrix",
    "kernel_matrix",
    "objective",
    "penalty_value",
    "predict",
    "prox",
    "prox_scalar",
]
