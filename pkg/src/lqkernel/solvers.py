"""Solvers for ``min_a (1/m)||G a - y||^2 + lam * sum |a_i|^q``.

Available methods:

``closed-form-q2``
    Normal equations ``(G^T G + m lam I) a = G^T y`` (q = 2 only).
``prox-grad``
    Monotone proximal gradient. Convex exponents (q >= 1) use the monotone
    variant of FISTA with restarts; q < 1 uses plain ISTA. Every accepted
    iterate has an objective no larger than the previous one.
``irls``
    Iteratively reweighted least squares on a smoothed penalty (q <= 1),
    returning whichever of the IRLS point and a zeros-initialised prox-grad
    point has the lower true objective.

The RKHS ridge system ``(G + m lam I) b = y`` is available separately as
:func:`solve_rkhs_rls`. Both linear systems carry a positive diagonal shift,
so duplicated centers (singular ``G``) need no special handling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from lqkernel.errors import ConfigError, InputError, NumericalError, SolverError
from lqkernel.penalty import PenaltySpec, penalty_value, prox

__all__ = [
    "METHODS",
    "BudgetExceeded",
    "FitResult",
    "GramFactors",
    "SolverConfig",
    "fit",
    "kkt_residual",
    "lipschitz_estimate",
    "solve_closed_form_q2",
    "solve_irls",
    "solve_proximal_gradient",
    "solve_rkhs_rls",
]

METHODS = ("closed-form-q2", "prox-grad", "irls")
STEP_RULES = ("fixed-lipschitz", "backtracking")
INITS = ("zeros", "rls-warm-start")

# consecutive small-decrease iterations required before stopping
_PATIENCE = 5


class BudgetExceeded(SolverError):
    """The wall-clock deadline passed to a solver expired."""


@dataclass(frozen=True)
class SolverConfig:
    method: str = "prox-grad"
    max_iters: int = 5000
    tol: float = 1e-8
    step_rule: str = "fixed-lipschitz"
    init: str = "zeros"
    irls_epsilon_floor: float = 1e-10
    accelerate: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown solver method {self.method!r}; expected one of {METHODS}")
        if self.step_rule not in STEP_RULES:
            raise ConfigError(f"unknown step rule {self.step_rule!r}; expected one of {STEP_RULES}")
        if self.init not in INITS:
            raise ConfigError(f"unknown init {self.init!r}; expected one of {INITS}")
        if int(self.max_iters) < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not self.irls_epsilon_floor > 0:
            raise ConfigError("irls_epsilon_floor must be positive")

    def to_dict(self):
        return {
            "method": self.method,
            "max_iters": int(self.max_iters),
            "tol": float(self.tol),
            "step_rule": self.step_rule,
            "init": self.init,
            "irls_epsilon_floor": float(self.irls_epsilon_floor),
            "accelerate": bool(self.accelerate),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FitResult:
    """Coefficients plus convergence diagnostics.

    ``status`` is ``"optimal"`` for convex exponents and ``"stationary"`` for
    q < 1, where only a stationary point is certified.
    """

    coeffs: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    kkt_residual: float | None = None
    status: str = "optimal"
    method: str = "prox-grad"
    meta: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _check_system(gram, y):
    gram = np.asarray(gram, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    m = y.shape[0]
    if gram.shape != (m, m):
        raise InputError(f"gram shape {gram.shape} does not match {m} outputs")
    return gram, y


def _check_lam(lam):
    if not lam > 0:
        raise ConfigError(f"regularization weight must be positive, got {lam}")
    return float(lam)


def _spd_solve(A, b, what):
    try:
        c, low = linalg.cho_factor(A, check_finite=True)
        x = linalg.cho_solve((c, low), b)
    except (linalg.LinAlgError, ValueError) as exc:
        cond = float(np.linalg.cond(A)) if np.all(np.isfinite(A)) else float("inf")
        raise SolverError(f"{what}: linear solve failed ({exc}); cond ~ {cond:.3g}", cond) from exc
    if not np.all(np.isfinite(x)):
        raise SolverError(f"{what}: non-finite solution")
    return x


def solve_closed_form_q2(gram, y, lam, m=None):
    """Exact minimizer of ``(1/m)||G a - y||^2 + lam ||a||^2``."""
    gram, y = _check_system(gram, y)
    lam = _check_lam(lam)
    m = y.shape[0] if m is None else int(m)
    A = gram.T @ gram
    A[np.diag_indices_from(A)] += m * lam
    return _spd_solve(A, gram.T @ y, "closed-form q=2")


def solve_rkhs_rls(gram, y, lam, m=None):
    """Representer coefficients of RKHS ridge regression, ``(G + m lam I) b = y``.

    With ``lam = 1/m`` this is the system ``(I + G) b = y``.
    """
    gram, y = _check_system(gram, y)
    lam = _check_lam(lam)
    m = y.shape[0] if m is None else int(m)
    A = gram.copy()
    A[np.diag_indices_from(A)] += m * lam
    return _spd_solve(A, y, "rkhs ridge")


def lipschitz_estimate(gram, m=None, *, max_iter=1000, rtol=1e-9) -> float:
    """Upper estimate of the gradient Lipschitz constant ``(2/m) sigma_max(G)^2``.

    Power iteration on ``G^T G`` followed by a 1.01 safety factor.
    """
    gram = np.asarray(gram, dtype=float)
    n = gram.shape[0]
    m = n if m is None else int(m)
    # deterministic start with a component along any direction
    v = 1.0 + 0.01 * np.sin(np.arange(1, n + 1))
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = gram.T @ (gram @ v)
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 1e-12
        v = w / nrm
        if abs(new - est) <= rtol * new:
            est = new
            break
        est = new
    return 1.01 * 2.0 * est / m


def _penalty_grad_term(a, q, lam):
    return lam * q * np.sign(a) * np.abs(a) ** (q - 1.0)


def _kkt_from_grad(a, g, spec):
    q, lam = spec.q, spec.lam
    if q == 1.0:
        nz = a != 0
        r = np.where(nz, np.abs(g + lam * np.sign(a)), np.maximum(np.abs(g) - lam, 0.0))
    else:
        r = np.abs(g + _penalty_grad_term(a, q, lam))
    return float(np.max(r)) if r.size else 0.0


def kkt_residual(a, gram, y, spec: PenaltySpec) -> float:
    """Largest distance from 0 to the subdifferential of the objective (q >= 1)."""
    if spec.q < 1.0:
        raise ConfigError("kkt_residual is only defined for convex exponents q >= 1")
    gram, y = _check_system(gram, y)
    a = np.asarray(a, dtype=float).reshape(-1)
    m = y.shape[0]
    g = (2.0 / m) * (gram.T @ (gram @ a - y))
    return _kkt_from_grad(a, g, spec)


def _pow_diff(u, v, q):
    """``u**q - v**q`` for nonnegative arrays, accurate when ``u`` is close to ``v``."""
    out = u**q - v**q
    both = (u > 0) & (v > 0)
    if both.any():
        ub, vb = u[both], v[both]
        out[both] = vb**q * np.expm1(q * np.log1p((ub - vb) / vb))
    return out


class GramFactors:
    """Lazily computed ``G^T G`` and step-size constant, reusable across fits.

    Several penalties fitted to the same sample can share one instance.
    """

    def __init__(self, gram):
        self.gram = np.asarray(gram, dtype=float)
        self._H = None
        self._L = None

    @property
    def H(self):
        if self._H is None:
            self._H = self.gram.T @ self.gram
        return self._H

    @property
    def lipschitz(self):
        if self._L is None:
            self._L = lipschitz_estimate(self.gram)
        return self._L


class _Quadratic:
    """``(1/m)||G a - y||^2`` evaluated through ``H = G^T G`` and ``c = G^T y``."""

    def __init__(self, gram, y, factors=None):
        self.m = y.shape[0]
        self.H = factors.H if factors is not None else gram.T @ gram
        self.c = gram.T @ y
        self.yy = float(y @ y)

    def value(self, a, Ha):
        v = (float(a @ Ha) - 2.0 * float(a @ self.c) + self.yy) / self.m
        return max(v, 0.0)

    def grad(self, Ha):
        return (2.0 / self.m) * (Ha - self.c)


def _initial_point(gram, y, spec, cfg):
    m = y.shape[0]
    if cfg.init == "zeros":
        return np.zeros(m)
    return solve_rkhs_rls(gram, y, 1.0 / m)


def _check_deadline(deadline):
    if deadline is not None and time.monotonic() > deadline:
        raise BudgetExceeded("wall-clock budget exceeded")


def solve_proximal_gradient(
    gram, y, spec: PenaltySpec, cfg: SolverConfig | None = None, *, deadline=None,
    factors: GramFactors | None = None,
) -> FitResult:
    """Monotone proximal gradient for the l^q objective.

    Parameters
    ----------
    gram, y : array_like
        Gram matrix ``(m, m)`` and outputs ``(m,)``.
    spec : PenaltySpec
        Exponent and weight.
    cfg : SolverConfig, optional
        Iteration limit, tolerance, step rule and initialisation.
    deadline : float, optional
        ``time.monotonic()`` value after which :class:`BudgetExceeded` is raised.
    factors : GramFactors, optional
        Precomputed ``G^T G`` and Lipschitz estimate for this ``gram``.

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iters`` was hit first; the last
        accepted iterate is returned either way.
    """
    cfg = cfg or SolverConfig()
    gram, y = _check_system(gram, y)
    m = y.shape[0]
    q, lam = spec.q, spec.lam
    if factors is not None and factors.gram.shape != gram.shape:
        raise InputError("factors were computed for a different Gram matrix")
    quad = _Quadratic(gram, y, factors)
    H = quad.H
    y_scale = 1.0 + (float(np.max(np.abs(y))) if m else 0.0)
    accelerate = cfg.accelerate and q >= 1.0

    x = _initial_point(gram, y, spec, cfg)
    Hx = H @ x
    F = quad.value(x, Hx) + lam * penalty_value(x, q)
    if not np.isfinite(F):
        raise NumericalError("initial objective is not finite")
    trace = [F]

    def delta(z, Hz, x, Hx):
        # F(z) - F(x) without cancelling two large quadratic forms
        dq = float((z - x) @ (Hz + Hx - 2.0 * quad.c)) / m
        dp = float(np.sum(_pow_diff(np.abs(z), np.abs(x), q)))
        return dq + lam * dp

    if cfg.step_rule == "fixed-lipschitz":
        L = factors.lipschitz if factors is not None else lipschitz_estimate(gram, m)
    else:
        L = 1.0
    # momentum state (FISTA)
    w, Hw, t_mom = x.copy(), Hx.copy(), 1.0

    small = 0
    converged = False
    it = 0
    resid = np.inf
    for it in range(1, int(cfg.max_iters) + 1):
        if it % 50 == 0:
            _check_deadline(deadline)
        base, Hbase = (w, Hw) if accelerate else (x, Hx)
        gbase = quad.grad(Hbase)
        while True:
            step = 1.0 / L
            z = prox(base - step * gbase, lam * step, q)
            Hz = H @ z
            if cfg.step_rule == "backtracking":
                dz = z - base
                # smooth-part sufficient decrease, differenced like delta()
                dsmooth = float(dz @ (Hz + Hbase - 2.0 * quad.c)) / m
                if dsmooth > float(gbase @ dz) + 0.5 * L * float(dz @ dz):
                    L *= 2.0
                    continue
            dF = delta(z, Hz, x, Hx)
            if not np.isfinite(dF):
                raise NumericalError(f"objective became non-finite at iteration {it}")
            if accelerate or dF <= 0.0:
                break
            # monotone safeguard for the plain iteration: halve the step
            L *= 2.0
            if L > 1e300:
                raise NumericalError("step size underflow in monotone safeguard")

        accept = dF <= 0.0
        if accelerate:
            if accept:
                x_new, Hx_new = z, Hz
            else:
                x_new, Hx_new = x, Hx
            if not accept:
                # adaptive restart
                t_mom = 1.0
                w, Hw = x_new.copy(), Hx_new.copy()
            else:
                t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom * t_mom))
                c1 = t_mom / t_next
                c2 = (t_mom - 1.0) / t_next
                w = x_new + c1 * (z - x_new) + c2 * (x_new - x)
                Hw = Hx_new + c1 * (Hz - Hx_new) + c2 * (Hx_new - Hx)
                t_mom = t_next
            grad_map = None
        else:
            x_new, Hx_new = z, Hz
            grad_map = float(np.max(np.abs(x - z))) * L if m else 0.0

        dec = -dF if accept else 0.0
        rel = dec / max(abs(F), np.finfo(float).tiny)
        if accept:
            F = F + dF
        x, Hx = x_new, Hx_new
        trace.append(F)
        small = small + 1 if rel < cfg.tol else 0

        if q >= 1.0:
            resid = _kkt_from_grad(x, quad.grad(Hx), spec)
        else:
            resid = grad_map
        if small >= _PATIENCE and resid < cfg.tol * y_scale:
            converged = True
            break

    r = gram @ x - y
    final = float(r @ r) / m + lam * penalty_value(x, q)
    return FitResult(
        coeffs=x,
        objective_trace=trace,
        iterations=it,
        converged=converged,
        kkt_residual=resid if q >= 1.0 else None,
        status="optimal" if q >= 1.0 else "stationary",
        method="prox-grad",
        meta={
            "lipschitz": L,
            "accelerated": accelerate,
            "stationarity_residual": resid,
            "final_objective": final,
        },
    )


def solve_irls(
    gram, y, spec: PenaltySpec, cfg: SolverConfig | None = None, *, deadline=None,
    factors: GramFactors | None = None,
) -> FitResult:
    """IRLS on ``(1/m)||Ga - y||^2 + lam * sum (a_i^2 + eps)^(q/2)`` for q <= 1.

    Each outer step minimizes the quadratic majorizer with weights
    ``(q/2)(a_i^2 + eps)^(q/2 - 1)``; ``eps`` is halved each step down to
    ``cfg.irls_epsilon_floor``. The recorded trace is the smoothed objective,
    which cannot increase. The returned coefficients are whichever of the
    IRLS point and a zeros-initialised prox-grad point has the smaller true
    objective.
    """
    cfg = cfg or SolverConfig(method="irls")
    if spec.q > 1.0:
        raise ConfigError("irls is restricted to 0 < q <= 1; use prox-grad for q > 1")
    gram, y = _check_system(gram, y)
    m = y.shape[0]
    q, lam = spec.q, spec.lam
    H = (factors.H if factors is not None else gram.T @ gram) / m
    c = gram.T @ y / m

    def smoothed(a, eps):
        r = gram @ a - y
        return float(r @ r) / m + lam * float(np.sum((a * a + eps) ** (q / 2.0)))

    a = np.zeros(m)
    eps = max(1.0, float(np.max(y * y)) if m else 1.0)
    J = smoothed(a, eps)
    trace = [J]
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iters) + 1):
        _check_deadline(deadline)
        wts = (q / 2.0) * (a * a + eps) ** (q / 2.0 - 1.0)
        A = H.copy()
        A[np.diag_indices_from(A)] += lam * wts
        a_new = _spd_solve(A, c, "irls inner solve")
        eps_new = max(0.5 * eps, cfg.irls_epsilon_floor)
        J_new = smoothed(a_new, eps_new)
        # guard against round-off in the inner solve breaking monotonicity
        if J_new > J:
            J_new = J if J_new - J <= 1e-12 * max(abs(J), 1.0) else J_new
            if J_new > J:
                raise SolverError("irls surrogate increased; inner solve inaccurate")
        change = float(np.max(np.abs(a_new - a))) if m else 0.0
        a, eps, J = a_new, eps_new, J_new
        trace.append(J)
        if eps <= cfg.irls_epsilon_floor and change <= cfg.tol * max(1.0, float(np.max(np.abs(a)))):
            converged = True
            break

    def true_obj(v):
        r = gram @ v - y
        return float(r @ r) / m + lam * penalty_value(v, q)

    pg = solve_proximal_gradient(
        gram, y, spec,
        SolverConfig(method="prox-grad", max_iters=cfg.max_iters, tol=cfg.tol,
                     step_rule=cfg.step_rule, init="zeros"),
        deadline=deadline,
        factors=factors,
    )
    f_irls, f_pg = true_obj(a), true_obj(pg.coeffs)
    chosen = "irls" if f_irls <= f_pg else "prox-grad"
    coeffs = a if chosen == "irls" else pg.coeffs
    kkt = _kkt_from_grad(coeffs, (2.0 / m) * (gram.T @ (gram @ coeffs - y)), spec) if q == 1.0 else None
    return FitResult(
        coeffs=coeffs,
        objective_trace=trace,
        iterations=it,
        converged=converged,
        kkt_residual=kkt,
        status="optimal" if q >= 1.0 else "stationary",
        method="irls",
        meta={
            "chosen": chosen,
            "objective_irls": f_irls,
            "objective_prox_grad": f_pg,
            "final_objective": min(f_irls, f_pg),
            "epsilon": eps,
        },
    )


def fit(
    gram, y, spec: PenaltySpec, cfg: SolverConfig | None = None, *, deadline=None,
    factors: GramFactors | None = None,
) -> FitResult:
    """Dispatch to the solver named by ``cfg.method``."""
    cfg = cfg or SolverConfig()
    if cfg.method == "prox-grad":
        return solve_proximal_gradient(gram, y, spec, cfg, deadline=deadline, factors=factors)
    if cfg.method == "irls":
        return solve_irls(gram, y, spec, cfg, deadline=deadline, factors=factors)
    if spec.q != 2.0:
        raise ConfigError("closed-form-q2 requires q = 2")
    gram, y = _check_system(gram, y)
    a = solve_closed_form_q2(gram, y, spec.lam)
    r = gram @ a - y
    obj = float(r @ r) / y.shape[0] + spec.lam * float(a @ a)
    return FitResult(
        coeffs=a,
        objective_trace=[float(y @ y) / y.shape[0], obj] if y.size else [obj],
        iterations=1,
        converged=True,
        kkt_residual=kkt_residual(a, gram, y, spec),
        status="optimal",
        method="closed-form-q2",
    )
