"""Gaussian kernel, Gram matrices and sample-dependent kernel expansions.

The kernel is ``G_sigma(x, x') = exp(-||x - x'||_2^2 / sigma^2)``. Squared
distances are accumulated coordinate by coordinate from explicit differences
rather than through the ``|x|^2 + |x'|^2 - 2 x.x'`` expansion, so they never
go negative and ``gram_matrix`` is exactly symmetric. Entries whose exponent
falls below the float64 underflow threshold round to 0; the diagonal of a
Gram matrix is set to exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lqkernel.errors import InputError

__all__ = [
    "CoefficientModel",
    "Dataset",
    "clip",
    "empirical_risk",
    "eval_kernel",
    "gram_matrix",
    "kernel_matrix",
    "predict",
]


def _as_points(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(-1, 1)
    elif X.ndim != 2:
        raise InputError(f"{name} must be a point list of shape (m, d), got ndim={X.ndim}")
    return X


def _check_sigma(sigma):
    sigma = float(sigma)
    if not sigma > 0 or not np.isfinite(sigma):
        raise InputError(f"kernel width sigma must be positive and finite, got {sigma}")
    return sigma


@dataclass(frozen=True)
class Dataset:
    """A sample ``z = (x_i, y_i)`` with inputs in ``[0,1]^d`` and ``|y_i| <= M``.

    Set ``check_domain=False`` to accept inputs outside the unit cube for
    exploratory use; the output bound is always enforced.
    """

    X: np.ndarray
    y: np.ndarray
    M: float
    check_domain: bool = field(default=True, compare=False)

    def __post_init__(self):
        X = _as_points(self.X)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] < 1:
            raise InputError("dataset must contain at least one sample")
        if X.shape[0] != y.shape[0]:
            raise InputError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not self.M > 0:
            raise InputError(f"output bound M must be positive, got {self.M}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains non-finite values")
        if np.any(np.abs(y) > self.M):
            raise InputError(f"outputs exceed the bound M={self.M}: max |y| = {np.abs(y).max()}")
        if self.check_domain and (np.any(X < 0.0) or np.any(X > 1.0)):
            raise InputError("inputs must lie in [0,1]^d (pass check_domain=False to skip)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "M", float(self.M))

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class CoefficientModel:
    """``f(x) = sum_i coeffs[i] * G_sigma(centers[i], x)``."""

    sigma: float
    centers: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        centers = _as_points(self.centers, "centers")
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if centers.shape[0] != coeffs.shape[0]:
            raise InputError(
                f"{centers.shape[0]} centers but {coeffs.shape[0]} coefficients"
            )
        if not np.all(np.isfinite(coeffs)):
            raise InputError("coefficients must be finite")
        object.__setattr__(self, "sigma", _check_sigma(self.sigma))
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    def __call__(self, X):
        return predict(self, X)


def _sq_dists(A, B):
    out = np.zeros((A.shape[0], B.shape[0]))
    for k in range(A.shape[1]):
        diff = A[:, k, None] - B[None, :, k]
        out += diff * diff
    return out


def eval_kernel(x, x2, sigma) -> float:
    """Gaussian kernel value for a single pair of points."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape or x.ndim != 1:
        raise InputError(f"point dimensions differ: {x.shape} vs {x2.shape}")
    sigma = _check_sigma(sigma)
    diff = x - x2
    return float(np.exp(-np.dot(diff, diff) / sigma**2))


def kernel_matrix(A, B, sigma) -> np.ndarray:
    """Cross-kernel matrix ``K[i, j] = G_sigma(A[i], B[j])``."""
    A = _as_points(A, "A")
    B = _as_points(B, "B")
    if A.shape[1] != B.shape[1]:
        raise InputError(f"point dimensions differ: {A.shape[1]} vs {B.shape[1]}")
    sigma = _check_sigma(sigma)
    return np.exp(-_sq_dists(A, B) / sigma**2)


def gram_matrix(X, sigma) -> np.ndarray:
    """Symmetric Gram matrix of the Gaussian kernel on the points ``X``."""
    X = _as_points(X)
    if X.shape[0] < 1:
        raise InputError("gram_matrix needs at least one point")
    G = kernel_matrix(X, X, sigma)
    np.fill_diagonal(G, 1.0)
    return G


def predict(model: CoefficientModel, X):
    """Evaluate the kernel expansion at one point or at a batch of points.

    A 1-D input is read as a single point when its length equals the model
    dimension (and d > 1), otherwise as a batch of 1-D points. Returns a float
    for a single point.
    """
    X_arr = np.asarray(X, dtype=float)
    single = X_arr.ndim == 0 or (X_arr.ndim == 1 and model.d > 1)
    if single:
        X_arr = X_arr.reshape(1, -1)
    X_arr = _as_points(X_arr)
    if X_arr.shape[1] != model.d:
        raise InputError(f"input dimension {X_arr.shape[1]} != model dimension {model.d}")
    values = kernel_matrix(X_arr, model.centers, model.sigma) @ model.coeffs
    return float(values[0]) if single else values


def clip(t, M):
    """Project ``t`` onto ``[-M, M]`` (works elementwise on arrays)."""
    if not M > 0:
        raise InputError(f"clipping bound must be positive, got {M}")
    out = np.clip(t, -M, M)
    return float(out) if np.ndim(out) == 0 else out


def empirical_risk(model: CoefficientModel, data: Dataset, clipped: bool = False) -> float:
    """Mean squared residual of ``model`` (or its clipped version) on ``data``."""
    if data.m == 0:
        raise InputError("empirical risk of an empty dataset is undefined")
    if data.d != model.d:
        raise InputError(f"data dimension {data.d} != model dimension {model.d}")
    pred = kernel_matrix(data.X, model.centers, model.sigma) @ model.coeffs
    if clipped:
        pred = np.clip(pred, -data.M, data.M)
    return float(np.mean((data.y - pred) ** 2))
