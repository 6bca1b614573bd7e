"""Synthetic regression targets, bounded-noise samples and test-error estimates.

Inputs are drawn uniformly from ``[0,1]^d`` and the noise is uniform on
``[-h, h]``, so ``|y| <= sup|f| + h <= M`` holds by construction and no
rejection sampling is needed.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass

import numpy as np

from lqkernel.errors import ConfigError
from lqkernel.kernel import CoefficientModel, Dataset, predict

__all__ = [
    "FAMILIES",
    "Target",
    "TargetSpec",
    "derive_seed",
    "l2_rho_error",
    "make_target",
    "sample_dataset",
]

FAMILIES = ("cosine", "kink", "gauss-bump")

TRAIN_STREAM = 0
TEST_STREAM = 1


@dataclass(frozen=True)
class TargetSpec:
    """Parameters of a synthetic regression function.

    ``cosine``: ``amplitude * prod_j cos(2 pi frequency x_j)``.
    ``kink``: ``amplitude * ||x - center||^exponent``; Hoelder smooth of order
    ``exponent`` at the interior point ``center``.
    ``gauss-bump``: ``amplitude * exp(-||x - center||^2 / width^2)``.

    ``noise`` is the half-width of the uniform output noise. ``nominal_r`` is
    a smoothness label only; it never enters the computation.
    """

    family: str = "cosine"
    d: int = 1
    M: float = 1.0
    amplitude: float = 1.0
    frequency: int = 1
    center: float = 0.5
    exponent: float = 1.5
    width: float = 0.1
    noise: float = 0.0
    nominal_r: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown target family {self.family!r}; expected one of {FAMILIES}")
        if int(self.d) < 1:
            raise ConfigError("dimension d must be >= 1")
        if not self.M > 0:
            raise ConfigError("output bound M must be positive")
        if self.noise < 0:
            raise ConfigError("noise half-width must be nonnegative")
        if self.family == "kink" and not self.exponent > 0:
            raise ConfigError("kink exponent must be positive")
        if self.family == "gauss-bump" and not self.width > 0:
            raise ConfigError("bump width must be positive")
        if self.family == "kink" and not 0.0 < self.center < 1.0:
            raise ConfigError("kink center must be interior to (0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Target:
    """Callable regression function with a known sup-norm on the unit cube."""

    def __init__(self, spec: TargetSpec):
        self.spec = spec
        self.d = int(spec.d)
        A = float(spec.amplitude)
        if spec.family == "cosine":
            self.sup = abs(A)
        elif spec.family == "kink":
            # farthest corner of [0,1]^d from the center
            far = max(spec.center, 1.0 - spec.center)
            self.sup = abs(A) * (self.d * far * far) ** (spec.exponent / 2.0)
        else:
            self.sup = abs(A)

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        scalar = X.ndim == 0 or (X.ndim == 1 and self.d > 1)
        X2 = X.reshape(1, -1) if scalar else X.reshape(-1, self.d)
        s = self.spec
        if s.family == "cosine":
            vals = s.amplitude * np.prod(np.cos(2.0 * np.pi * s.frequency * X2), axis=1)
        elif s.family == "kink":
            r = np.sqrt(np.sum((X2 - s.center) ** 2, axis=1))
            vals = s.amplitude * r**s.exponent
        else:
            r2 = np.sum((X2 - s.center) ** 2, axis=1)
            vals = s.amplitude * np.exp(-r2 / s.width**2)
        if scalar:
            return float(vals[0])
        return vals.reshape(X.shape[:-1]) if X.ndim == 2 else vals.reshape(X.shape)


def make_target(spec: TargetSpec) -> Target:
    """Instantiate the regression function described by ``spec``."""
    return Target(spec)


def derive_seed(master_seed: int, m: int, trial: int, stream: int = TRAIN_STREAM, q=None) -> int:
    """Stable 64-bit seed for one (m, trial[, q]) job.

    Mixes the integers and, when given, the IEEE-754 bit pattern of ``q``
    through :class:`numpy.random.SeedSequence`, so the value does not depend
    on the order in which jobs are scheduled. Leaving ``q`` out gives every
    exponent the same sample (common random numbers).
    """
    words = [int(master_seed), int(m), int(trial), int(stream)]
    if q is not None:
        (qbits,) = struct.unpack("<Q", struct.pack("<d", float(q)))
        words.append(qbits)
    ss = np.random.SeedSequence(words)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_dataset(target: Target, m: int, noise: float, M: float, seed: int) -> Dataset:
    """Draw ``m`` samples ``y = f(x) + eta`` with ``x ~ U[0,1]^d``, ``eta ~ U[-noise, noise]``."""
    if int(m) < 1:
        raise ConfigError("m must be >= 1")
    if target.sup + noise > M:
        raise ConfigError(
            f"sup|f| + noise = {target.sup + noise:g} exceeds the output bound M = {M:g}"
        )
    rng = np.random.default_rng(seed)
    X = rng.random((int(m), target.d))
    f = target(X)
    if noise > 0:
        y = f + rng.uniform(-noise, noise, size=int(m))
    else:
        y = f.copy()
    if np.any(np.abs(y) > M):
        raise AssertionError("generated outputs violate |y| <= M")
    return Dataset(X, y, M)


def l2_rho_error(model: CoefficientModel, target: Target, M: float, n_test: int, seed: int):
    """Monte Carlo estimate of ``||pi_M f - f_rho||^2`` under uniform inputs.

    Returns
    -------
    (float, float)
        The estimate and its standard error.
    """
    if int(n_test) < 1:
        raise ConfigError("n_test must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.random((int(n_test), target.d))
    pred = np.clip(predict(model, X), -M, M)
    sq = (pred - target(X)) ** 2
    n = sq.shape[0]
    se = float(np.std(sq, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(sq)), se
