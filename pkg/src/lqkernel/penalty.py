"""l^q penalties, the regularized objective and exact scalar proximal maps.

``prox`` solves ``argmin_a 0.5 * (a - v)**2 + tau * |a|**q`` globally for every
``q > 0``. The cases q = 1 (soft thresholding), q = 2 (linear shrinkage) and
q = 1/2 (half thresholding) are closed form. Other exponents are handled by a
bracketed Newton iteration on the stationarity equation of the positive
branch, ``a + q * tau * a**(q - 1) = |v|``:

* q > 1: the left side is increasing, so there is exactly one root in
  ``(0, |v|)``.
* q < 1: the left side is convex with its minimum at
  ``(q * (1 - q) * tau) ** (1 / (2 - q))``. When that minimum is negative the
  larger root is the only local minimizer on ``a > 0``, and it is compared
  against ``a = 0``; exact ties go to 0.

Everything is evaluated on ``|v|`` and the sign is restored afterwards, which
makes the map exactly odd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lqkernel.errors import ConfigError, InputError

__all__ = [
    "MIN_Q",
    "PenaltySpec",
    "objective",
    "penalty_value",
    "prox",
    "prox_objective",
    "prox_scalar",
]

#: Exponents below this are rejected: the penalty degenerates towards a count.
MIN_Q = 0.05

_RESID_TOL = 1e-12
_WIDTH_TOL = 1e-14
_MAX_NEWTON = 200


def _check_q(q):
    q = float(q)
    if not np.isfinite(q) or q < MIN_Q:
        raise ConfigError(f"exponent q must be finite and >= {MIN_Q}, got {q}")
    return q


@dataclass(frozen=True)
class PenaltySpec:
    """Exponent ``q`` and weight ``lam`` of the penalty ``lam * sum |a_i|^q``."""

    q: float
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "q", _check_q(self.q))
        lam = float(self.lam)
        if not lam > 0 or not np.isfinite(lam):
            raise ConfigError(f"regularization weight must be positive, got {lam}")
        object.__setattr__(self, "lam", lam)

    @property
    def convex(self) -> bool:
        return self.q >= 1.0


def penalty_value(a, q) -> float:
    """``sum |a_i|^q``."""
    if not q > 0:
        raise ConfigError(f"exponent q must be positive, got {q}")
    a = np.abs(np.asarray(a, dtype=float))
    return float(np.sum(a**q))


def objective(a, gram, y, spec: PenaltySpec) -> float:
    """``(1/m) ||G a - y||^2 + lam * sum |a_i|^q``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    gram = np.asarray(gram, dtype=float)
    m = y.shape[0]
    if gram.shape != (m, m) or a.shape[0] != m:
        raise InputError(
            f"dimension mismatch: gram {gram.shape}, coeffs {a.shape}, y {y.shape}"
        )
    resid = gram @ a - y
    return float(resid @ resid / m + spec.lam * penalty_value(a, spec.q))


def prox_objective(a, v, tau, q):
    """The scalar prox objective ``0.5 * (a - v)**2 + tau * |a|**q``."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a - v) ** 2 + tau * np.abs(a) ** q


def _newton_root(w, tau, q, lo, hi):
    """Root of ``a + q*tau*a**(q-1) - w`` bracketed in ``[lo, hi]``.

    The function is negative at ``lo`` and positive at ``hi`` for every entry.
    """
    a = hi.copy()
    active = np.ones(w.shape, dtype=bool)
    for _ in range(_MAX_NEWTON):
        if not active.any():
            break
        aa, ww, tt = a[active], w[active], tau[active]
        lo_a, hi_a = lo[active], hi[active]
        apow = aa ** (q - 2.0)
        phi = aa + q * tt * apow * aa - ww
        dphi = 1.0 + q * (q - 1.0) * tt * apow
        neg = phi < 0
        lo_a = np.where(neg, aa, lo_a)
        hi_a = np.where(neg, hi_a, aa)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = aa - phi / dphi
        bad = ~np.isfinite(step) | (step <= lo_a) | (step >= hi_a)
        step = np.where(bad, 0.5 * (lo_a + hi_a), step)
        scale = np.maximum(1.0, ww)
        done = (np.abs(phi) <= _RESID_TOL * scale) | (hi_a - lo_a <= _WIDTH_TOL * scale)
        a_new = np.where(done, aa, step)
        a[active] = a_new
        lo[active], hi[active] = lo_a, hi_a
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return a


def _prox_abs(w, tau, q):
    """Prox on nonnegative inputs ``w``; returns values in ``[0, w]``."""
    if q == 1.0:
        return np.maximum(w - tau, 0.0)
    if q == 2.0:
        return w / (1.0 + 2.0 * tau)

    out = np.zeros_like(w)
    pos = w > 0
    if not pos.any():
        return out
    wp, tp = w[pos], tau[pos]

    if q == 0.5:
        # Real stationary points exist only for arg >= -1.
        with np.errstate(divide="ignore"):
            arg = -(3.0**1.5 / 4.0) * tp * wp**-1.5
        ok = arg >= -1.0
        cand = np.zeros_like(wp)
        cand[ok] = (2.0 / 3.0) * wp[ok] * (
            1.0 + np.cos((2.0 / 3.0) * np.arccos(arg[ok]))
        )
    elif q > 1.0:
        cand = _newton_root(wp, tp, q, np.zeros_like(wp), wp.copy())
    else:
        a_min = (q * (1.0 - q) * tp) ** (1.0 / (2.0 - q))
        cand = np.zeros_like(wp)
        inside = a_min < wp
        if inside.any():
            am = a_min[inside]
            phi_min = am + q * tp[inside] * am ** (q - 1.0) - wp[inside]
            has_root = phi_min < 0
            if has_root.any():
                sel = np.flatnonzero(inside)[has_root]
                cand[sel] = _newton_root(
                    wp[sel], tp[sel], q, am[has_root].copy(), wp[sel].copy()
                )

    if q < 1.0:
        # Global comparison against the origin; ties prefer 0.
        h_cand = 0.5 * (cand - wp) ** 2 + tp * cand**q
        cand = np.where(h_cand < 0.5 * wp**2, cand, 0.0)
    out[pos] = cand
    return out


def prox(v, tau, q):
    """Elementwise global minimizer of ``0.5*(a - v)**2 + tau*|a|**q``.

    Parameters
    ----------
    v : array_like
        Points at which the proximal map is evaluated.
    tau : float or array_like
        Positive step-scaled weights, broadcast against ``v``.
    q : float
        Penalty exponent, ``q >= MIN_Q``.

    Returns
    -------
    numpy.ndarray
        Array of the broadcast shape of ``v`` and ``tau``.
    """
    q = _check_q(q)
    v = np.asarray(v, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0) or not np.all(np.isfinite(tau)):
        raise ConfigError("prox weight tau must be positive and finite")
    v, tau = np.broadcast_arrays(v, tau)
    shape = v.shape
    w = np.abs(v).reshape(-1)
    a = _prox_abs(w, tau.reshape(-1).astype(float), q)
    return (np.sign(v).reshape(-1) * a).reshape(shape)


def prox_scalar(v, tau, q) -> float:
    """Scalar version of :func:`prox`."""
    return float(prox(np.array([float(v)]), float(tau), q)[0])
