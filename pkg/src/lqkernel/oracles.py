"""Brute-force checks of the scalar proximal map.

The oracle never calls the closed forms or the Newton iteration in
:mod:`lqkernel.penalty`; it evaluates ``0.5 (a - v)^2 + tau |a|^q`` on a
dense grid over ``[-|v|, |v|]`` and polishes the best grid point with a
bounded scalar minimizer.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from lqkernel.penalty import prox_scalar

__all__ = ["ORACLE_QS", "ProxCase", "ProxCheckReport", "grid_prox_min", "run_prox_oracle"]

ORACLE_QS = (0.3, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0)


def _h(a, v, tau, q):
    a = np.asarray(a, dtype=float)
    return 0.5 * (a - v) ** 2 + tau * np.abs(a) ** q


def grid_prox_min(v, tau, q, step=1e-4):
    """Smallest value of the prox objective found by grid search plus refinement.

    Returns ``(argmin, min_value)``.
    """
    w = abs(float(v))
    n = max(int(np.ceil(2 * w / step)), 1)
    grid = np.linspace(-w, w, n + 1)
    grid = np.union1d(grid, [0.0])
    vals = _h(grid, v, tau, q)
    k = int(np.argmin(vals))
    best_a, best = float(grid[k]), float(vals[k])
    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[min(k + 1, grid.size - 1)])
    if hi > lo:
        res = minimize_scalar(
            lambda a: float(_h(a, v, tau, q)), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-12},
        )
        if res.fun < best:
            best_a, best = float(res.x), float(res.fun)
    return best_a, best


@dataclass
class ProxCase:
    v: float
    tau: float
    q: float
    prox: float
    h_prox: float
    h_grid: float
    optimal: bool
    odd: bool
    shrinks: bool

    @property
    def ok(self):
        return self.optimal and self.odd and self.shrinks


@dataclass
class ProxCheckReport:
    cases: list = field(default_factory=list)
    tolerance: float = 1e-6
    elapsed_s: float = 0.0

    @property
    def n_failed(self):
        return sum(not c.ok for c in self.cases)

    @property
    def passed(self):
        return self.n_failed == 0

    def to_dict(self):
        return {
            "n_cases": len(self.cases),
            "n_failed": self.n_failed,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "failures": [asdict(c) for c in self.cases if not c.ok],
            "worst_gap": max((c.h_prox - c.h_grid for c in self.cases), default=0.0),
        }


def run_prox_oracle(cases=200, seed=1, qs=ORACLE_QS, step=1e-4, tol=1e-6) -> ProxCheckReport:
    """Random ``(v, tau, q)`` with ``v ~ U[-5, 5]``, ``tau ~ U(0, 2]``, ``q`` from ``qs``.

    Each case checks grid optimality within ``tol``, exact oddness
    ``prox(-v) == -prox(v)``, and shrinkage ``|prox(v)| <= |v|`` with the
    sign of ``v`` (or zero).
    """
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    report = ProxCheckReport(tolerance=tol)
    for _ in range(int(cases)):
        v = float(rng.uniform(-5.0, 5.0))
        tau = float(2.0 - rng.uniform(0.0, 2.0))  # (0, 2]
        q = float(qs[rng.integers(len(qs))])
        p = prox_scalar(v, tau, q)
        h_p = float(_h(p, v, tau, q))
        _, h_g = grid_prox_min(v, tau, q, step)
        shrinks = abs(p) <= abs(v) and (p == 0.0 or np.sign(p) == np.sign(v))
        report.cases.append(
            ProxCase(
                v=v, tau=tau, q=q, prox=p, h_prox=h_p, h_grid=h_g,
                optimal=h_p <= h_g + tol,
                odd=prox_scalar(-v, tau, q) == -p,
                shrinks=bool(shrinks),
            )
        )
    report.elapsed_s = time.perf_counter() - t0
    return report
