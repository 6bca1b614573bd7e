"""Hyperparameter schedules and the approximation/decomposition apparatus.

The schedules set ``sigma = m^(-1/(2r+d))`` and a polynomially decaying
``lam``. Two lambda exponents are available because the statement of the
main rate result and the argument that proves it use different ones:

================  ==================================  ======================
variant           0 < q <= 2                          q > 2
================  ==================================  ======================
theorem-statement ``(-12r - 6d + 2rq + qd)/(4r+2d)``  ``-(4r + 2d)/(2r+d)``
proof-section     ``(-12r - 4d + 2rq + qd)/(4r+2d)``  ``(-4r - d)/(2r+d)``
================  ==================================  ======================

The rest of the module builds the smooth surrogate ``f0 = K * F`` of a target
``f`` on the unit interval, where ``F`` is the even 2-periodic extension of
``f`` and ``K`` is a signed combination of normalised Gaussians of widths
``j sigma / sqrt(2)``, ``j = 1..r``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lqkernel.errors import ConfigError, InputError, NumericalError
from lqkernel.kernel import CoefficientModel, Dataset, empirical_risk, gram_matrix, predict
from lqkernel.penalty import PenaltySpec, penalty_value
from lqkernel.solvers import solve_rkhs_rls

__all__ = [
    "VARIANTS",
    "ApproxDecayReport",
    "DecompositionReport",
    "QuadConfig",
    "Schedule",
    "SmoothnessSpec",
    "coefficient_radius",
    "conv_kernel",
    "conv_kernel_weights",
    "decompose_check",
    "approx_decay",
    "f0_eval",
    "fold",
    "hypothesis_error_bound",
    "kernel_mass",
    "mirror_extend_eval",
    "modulus_of_smoothness",
    "reference_exponent",
    "schedule",
]

VARIANTS = ("theorem-statement", "proof-section")
_VARIANT_ALIASES = {"theorem": "theorem-statement", "proof": "proof-section"}


@dataclass(frozen=True)
class SmoothnessSpec:
    r: float
    c0: float = 1.0
    d: int = 1

    def __post_init__(self):
        if not self.r > 0 or not self.c0 > 0 or int(self.d) < 1:
            raise ConfigError("smoothness needs r > 0, c0 > 0 and d >= 1")


@dataclass(frozen=True)
class Schedule:
    sigma: float
    lam: float
    variant: str
    m: int
    q: float


def _variant(name):
    name = _VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ConfigError(f"unknown schedule variant {name!r}; expected one of {VARIANTS}")
    return name


def schedule(m, r, d, q, M=1.0, variant="proof-section") -> Schedule:
    """Kernel width and regularization weight for sample size ``m``."""
    m = int(m)
    if m < 1:
        raise ConfigError("schedule needs m >= 1")
    if not (r > 0 and q > 0 and M > 0 and int(d) >= 1):
        raise ConfigError("schedule needs r > 0, q > 0, M > 0, d >= 1")
    variant = _variant(variant)
    d = int(d)
    sigma = m ** (-1.0 / (2 * r + d))
    if q <= 2:
        head = -6 * d if variant == "theorem-statement" else -4 * d
        expo = (-12 * r + head + 2 * r * q + q * d) / (4 * r + 2 * d)
    elif variant == "theorem-statement":
        expo = -(4 * r + 2 * d) / (2 * r + d)
    else:
        expo = (-4 * r - d) / (2 * r + d)
    return Schedule(sigma=sigma, lam=M**2 * m**expo, variant=variant, m=m, q=float(q))


def reference_exponent(r, d) -> float:
    """Minimax exponent ``-2r/(2r+d)`` of the squared-error learning rate."""
    if not r > 0 or int(d) < 1:
        raise ConfigError("reference exponent needs r > 0 and d >= 1")
    return -2.0 * r / (2.0 * r + d)


def hypothesis_error_bound(m, lam, q, M) -> float:
    """``m^(2-q/2) lam M^q`` for q <= 2, ``lam m M^q`` for q > 2."""
    if not (m > 0 and lam > 0 and q > 0 and M > 0):
        raise ConfigError("hypothesis_error_bound needs positive arguments")
    if q <= 2:
        return m ** (2.0 - q / 2.0) * lam * M**q
    return lam * m * M**q


def coefficient_radius(m, lam, q, M) -> float:
    """Bound on ``sum |a_i|`` for any coefficients with objective <= M^2."""
    base = (M**2 / lam) ** (1.0 / q)
    return base if q < 1 else m ** (1.0 - 1.0 / q) * base


def fold(t):
    """Map reals onto ``[0, 1]`` by even, 2-periodic reflection."""
    t = np.asarray(t, dtype=float)
    s = np.mod(t, 2.0)
    s = np.where(s > 1.0, s - 2.0, s)
    return np.abs(s)


def mirror_extend_eval(f, u):
    """Evaluate the even, 2-periodic extension of ``f`` at ``u``.

    ``u`` is a scalar, a 1-D array of points (d = 1) or an ``(n, d)`` array.
    """
    folded = fold(u)
    return f(folded)


def conv_kernel_weights(r, d=1):
    """Coefficients ``binom(R, j) (-1)^(1-j) / j^d`` and width multipliers ``j``.

    ``R = ceil(r)`` for non-integer smoothness.
    """
    if not r > 0:
        raise ConfigError(f"kernel order must be positive, got {r}")
    R = int(math.ceil(r - 1e-12))
    return [(math.comb(R, j) * (-1.0) ** (1 - j) / j**d, float(j)) for j in range(1, R + 1)]


def conv_kernel(x, r, sigma, d=1):
    """``K(x)``: signed sum of unit-mass Gaussians of widths ``j sigma / sqrt 2``."""
    x = np.asarray(x, dtype=float)
    sq = x * x if d == 1 else np.sum(x * x, axis=-1)
    norm = (2.0 / (sigma**2 * np.pi)) ** (d / 2.0)
    out = np.zeros(np.shape(sq))
    for coef, j in conv_kernel_weights(r, d):
        out = out + coef * norm * np.exp(-2.0 * sq / (j * sigma) ** 2)
    return out


@dataclass(frozen=True)
class QuadConfig:
    """Composite Gauss-Legendre settings for one-dimensional integrals."""

    nodes: int = 20
    panels: int = 8
    max_panels: int = 4096
    rtol: float = 1e-8
    atol: float = 1e-14
    # truncation radius in units of r * sigma / sqrt(2)
    radius: float = 8.0


def _gl_integrate(func, a, b, quad: QuadConfig):
    """Integrate a vectorised ``func(u) -> array (..., n)`` over ``[a, b]``.

    Panels are doubled until successive estimates agree to ``rtol``.
    """
    xg, wg = np.polynomial.legendre.leggauss(quad.nodes)
    prev = None
    panels = quad.panels
    while panels <= quad.max_panels:
        edges = np.linspace(a, b, panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        u = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
        w = (half[:, None] * wg[None, :]).ravel()
        val = func(u) @ w
        if prev is not None:
            err = np.max(np.abs(val - prev))
            if err <= quad.rtol * max(float(np.max(np.abs(val))), 0.0) + quad.atol:
                return val
        prev = val
        panels *= 2
    raise NumericalError("Gauss-Legendre quadrature did not converge")


def kernel_mass(r, sigma, quad: QuadConfig | None = None) -> float:
    """One-dimensional integral of ``K`` over its truncation window."""
    quad = quad or QuadConfig()
    R = quad.radius * math.ceil(r - 1e-12) * sigma / math.sqrt(2.0)
    return float(_gl_integrate(lambda u: conv_kernel(u, r, sigma), -R, R, quad))


def f0_eval(target, r, sigma, x, quad: QuadConfig | None = None):
    """``(K * F)(x)`` in one dimension, ``F`` the mirror extension of ``target``.

    ``x`` may be a scalar or a 1-D array of points; the integral is truncated
    to ``|u - x| <= radius * r * sigma / sqrt(2)``.
    """
    if not sigma > 0:
        raise ConfigError("sigma must be positive")
    quad = quad or QuadConfig()
    x_arr = np.asarray(x, dtype=float)
    if x_arr.ndim == 2:
        if x_arr.shape[1] != 1:
            raise InputError("f0_eval supports d = 1 only")
        x_arr = x_arr[:, 0]
    scalar = x_arr.ndim == 0
    xs = np.atleast_1d(x_arr)
    R = quad.radius * math.ceil(r - 1e-12) * sigma / math.sqrt(2.0)

    def integrand(w):
        # substitution u = x - w
        vals = mirror_extend_eval(target, (xs[:, None] - w[None, :]).ravel())
        return np.asarray(vals).reshape(xs.size, w.size) * conv_kernel(w, r, sigma)[None, :]

    out = _gl_integrate(integrand, -R, R, quad)
    return float(out[0]) if scalar else out


def modulus_of_smoothness(f, r, t, nx=2048, nh=256, domain=(0.0, 1.0)) -> float:
    """Grid estimate of ``sup_{0<h<=t} sup_x |Delta_h^r f(x)|`` on ``domain``.

    Only ``x`` with ``x + r h`` inside the domain are used. Negative shifts give
    the same set of differences up to sign, so only ``h > 0`` is scanned. The
    result never exceeds the true modulus.
    """
    r = int(r)
    if r < 1 or not t > 0:
        raise ConfigError("modulus_of_smoothness needs r >= 1 and t > 0")
    lo, hi = float(domain[0]), float(domain[1])
    t = min(float(t), (hi - lo) / r)
    hs = np.linspace(t / nh, t, nh)
    coefs = [math.comb(r, j) * (-1.0) ** (r - j) for j in range(r + 1)]
    best = 0.0
    for h in hs:
        xs = np.linspace(lo, hi - r * h, nx)
        diff = np.zeros(nx)
        for j, c in enumerate(coefs):
            diff += c * np.asarray(f(xs + j * h), dtype=float)
        best = max(best, float(np.max(np.abs(diff))))
    return best


@dataclass
class ApproxDecayReport:
    """Sup-grid errors ``e(sigma) = max |f0 - f|`` and successive ratios.

    ``ratios[k] = errors[k + 1] / errors[k]``; with halving widths the
    nominal order predicts ``2^-r`` for each.
    """

    r: int
    sigmas: list
    errors: list
    ratios: list
    expected_ratio: float
    modulus: list
    grid_points: int

    def to_dict(self):
        return asdict(self)


def approx_decay(target, r, sigmas, grid_points=512, quad: QuadConfig | None = None):
    """Approximation error of ``f0`` against ``target`` for each width in ``sigmas``.

    Also records the grid modulus of smoothness ``omega_r(target, sigma)``.
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas or any(not s > 0 for s in sigmas):
        raise ConfigError("sigmas must be a non-empty list of positive widths")
    xs = np.linspace(0.0, 1.0, int(grid_points))
    fx = np.asarray(target(xs), dtype=float)
    errors = [float(np.max(np.abs(f0_eval(target, r, s, xs, quad) - fx))) for s in sigmas]
    ratios = [b / a if a > 0 else float("nan") for a, b in zip(errors, errors[1:])]
    mod = [modulus_of_smoothness(target, math.ceil(r - 1e-12), s) for s in sigmas]
    return ApproxDecayReport(
        r=int(math.ceil(r - 1e-12)),
        sigmas=sigmas,
        errors=errors,
        ratios=ratios,
        expected_ratio=2.0 ** (-float(r)),
        modulus=mod,
        grid_points=int(grid_points),
    )


@dataclass
class DecompositionReport:
    """Computable pieces of the excess-risk decomposition for one fit.

    ``P_hat`` is ``E_z(pi_M f) + lam sum|a_i|^q - (E_z(f_z) + |f_z|_sigma^2 / m)``
    where ``f_z`` solves ``(I + G) b = y``; ``chain_holds`` is
    ``P_hat <= P_bound``. ``D_hat`` (``||f0 - f_rho||^2``) and ``S_hat`` need
    the target and are ``None`` without it. For q < 1 ``advisory`` is True:
    the solver may return a non-global point, so a failed chain is not an
    error.
    """

    D_hat: float | None
    S_hat: float | None
    P_hat: float
    P_bound: float
    chain_holds: bool
    lhs: float
    rhs: float
    m: int
    q: float
    lam: float
    sigma: float
    advisory: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _l2_uniform(func, quad_nodes=64, panels=64):
    """``int_0^1 func(x)^2 dx`` by fixed composite Gauss-Legendre."""
    xg, wg = np.polynomial.legendre.leggauss(quad_nodes)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    w = (half[:, None] * wg[None, :]).ravel()
    return float(np.asarray(func(u)) ** 2 @ w)


def decompose_check(
    data: Dataset,
    coeffs,
    spec: PenaltySpec,
    sigma: float,
    target=None,
    r=1,
    quad: QuadConfig | None = None,
    *,
    gram=None,
    rls_coeffs=None,
) -> DecompositionReport:
    """Evaluate the hypothesis-error chain (and, given a target, D and S).

    ``gram`` and ``rls_coeffs`` (the solution of ``(I + G) b = y``) may be
    passed in when several fits share one sample.
    """
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
    if coeffs.shape[0] != data.m:
        raise InputError(f"{coeffs.shape[0]} coefficients for {data.m} samples")
    m, M = data.m, data.M
    G = gram_matrix(data.X, sigma) if gram is None else np.asarray(gram, dtype=float)
    model = CoefficientModel(sigma, data.X, coeffs)

    pen = spec.lam * penalty_value(coeffs, spec.q)
    fitted = G @ coeffs
    lhs = float(np.mean((data.y - np.clip(fitted, -M, M)) ** 2)) + pen
    b = solve_rkhs_rls(G, data.y, 1.0 / m) if rls_coeffs is None else np.asarray(rls_coeffs)
    resid = G @ b - data.y
    rhs_base = float(resid @ resid) / m + float(b @ G @ b) / m
    P_hat = lhs - rhs_base
    P_bound = hypothesis_error_bound(m, spec.lam, spec.q, M)

    D_hat = S_hat = None
    extra = {}
    if target is not None:
        if data.d != 1:
            raise InputError("D and S estimates are available for d = 1 only")
        quad = quad or QuadConfig()

        def f0(x):
            return f0_eval(target, r, sigma, x, quad)

        def clipped_model(x):
            return np.clip(predict(model, np.asarray(x).reshape(-1, 1)), -M, M)

        D_hat = _l2_uniform(lambda x: f0(x) - target(x))
        excess_fit = _l2_uniform(lambda x: clipped_model(x) - target(x))
        emp_f0 = float(np.mean((data.y - f0(data.X[:, 0])) ** 2))
        emp_fit = empirical_risk(model, data, clipped=True)
        # noise variance cancels between the two generalization errors
        S_hat = (emp_f0 - D_hat) + (excess_fit - emp_fit)
        extra = {"excess_risk": excess_fit, "empirical_risk_f0": emp_f0}

    return DecompositionReport(
        D_hat=D_hat,
        S_hat=S_hat,
        P_hat=P_hat,
        P_bound=P_bound,
        chain_holds=bool(P_hat <= P_bound),
        lhs=lhs,
        rhs=rhs_base + P_bound,
        m=m,
        q=spec.q,
        lam=spec.lam,
        sigma=float(sigma),
        advisory=spec.q < 1,
        extra=extra,
    )
