"""Learning-rate sweeps over (q, m, trial) grids.

For every sample size ``m`` and trial the sweep draws a dataset, sets the
kernel width and regularization weight from the schedule, fits each exponent
``q``, and measures the clipped L2 error on fresh test points. Per-q slopes
of ``log error`` against ``log m`` are then compared with ``-2r/(2r+d)``.

Every random stream is seeded from ``(master_seed, m, trial, stream)``
(plus ``q`` when ``common_data`` is off), so results do not depend on the
order or parallelism with which jobs run. BLAS is pinned to one thread
inside jobs for the same reason.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from lqkernel.errors import ConfigError, InputError, LqKernelError
from lqkernel.kernel import CoefficientModel, gram_matrix
from lqkernel.penalty import MIN_Q, PenaltySpec
from lqkernel.solvers import BudgetExceeded, GramFactors, SolverConfig, fit, solve_rkhs_rls
from lqkernel.synth import (
    TEST_STREAM,
    TRAIN_STREAM,
    TargetSpec,
    derive_seed,
    l2_rho_error,
    make_target,
    sample_dataset,
)
from lqkernel.theory import decompose_check, reference_exponent, schedule

__all__ = [
    "SCHEMA_VERSION",
    "SweepConfig",
    "SweepReport",
    "emit_report",
    "fit_rate",
    "load_report",
    "run_sweep",
]

SCHEMA_VERSION = 1

NOTES = [
    "Grid ranges, trial counts, noise level, target and solver settings are "
    "artifact choices; no reference experiment fixes them.",
    "Errors are Monte Carlo estimates of the clipped squared L2 distance to "
    "the target under uniform inputs.",
    "Iterative solvers stop at max_iters when the tolerance is not reached; "
    "the fitted model is then the last accepted iterate.",
]


@dataclass(frozen=True)
class SweepConfig:
    target: TargetSpec
    q_list: tuple
    m_list: tuple
    trials: int = 10
    r: float = 2.0
    d: int = 1
    M: float = 1.0
    schedule_variant: str = "proof-section"
    solver: SolverConfig = field(default_factory=SolverConfig)
    n_test: int = 4096
    master_seed: int = 0
    parallelism: int = 1
    # the exact solver for q = 2 instead of ``solver``
    exact_q2: bool = True
    # one dataset per (m, trial) shared by all q
    common_data: bool = True
    fit_all_points: bool = False
    # wall-clock budget of a single (q, m, trial) fit, seconds
    cell_timeout: float = 60.0
    decompose: bool = True

    def __post_init__(self):
        object.__setattr__(self, "q_list", tuple(float(q) for q in self.q_list))
        object.__setattr__(self, "m_list", tuple(int(m) for m in self.m_list))
        if not self.q_list:
            raise ConfigError("q_list must not be empty")
        if any(q < MIN_Q for q in self.q_list):
            raise ConfigError(f"every q must be >= {MIN_Q}")
        if len(set(self.q_list)) != len(self.q_list):
            raise ConfigError("q_list contains duplicates")
        if len(self.m_list) < 2 or any(b <= a for a, b in zip(self.m_list, self.m_list[1:])):
            raise ConfigError("m_list must be strictly increasing with at least 2 values")
        if self.m_list[0] < 1:
            raise ConfigError("sample sizes must be positive")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if int(self.parallelism) < 1:
            raise ConfigError("parallelism must be >= 1")
        if not self.cell_timeout > 0:
            raise ConfigError("cell_timeout must be positive")
        if int(self.n_test) < 2:
            raise ConfigError("n_test must be >= 2")
        if int(self.target.d) != int(self.d) or float(self.target.M) != float(self.M):
            raise ConfigError("target d and M must match the sweep's d and M")
        schedule(2, self.r, self.d, 1.0, self.M, self.schedule_variant)

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            val = getattr(self, name)
            if name in ("target", "solver"):
                val = val.to_dict()
            elif isinstance(val, tuple):
                val = list(val)
            out[name] = val
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown sweep config fields: {sorted(unknown)}")
        M = float(d.get("M", 1.0))
        dim = int(d.get("d", 1))
        target = dict(d.get("target", {}))
        target.setdefault("M", M)
        target.setdefault("d", dim)
        try:
            d["target"] = TargetSpec.from_dict(target)
            d["solver"] = SolverConfig.from_dict(d.get("solver", {}))
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SweepReport:
    schema_version: int
    config: dict
    reference_slope: float
    cells: list
    slopes: list
    complete: bool
    notes: list
    meta: dict = field(default_factory=dict)

    def body(self):
        """Everything except the run metadata (timestamps, wall time)."""
        d = asdict(self)
        d.pop("meta")
        return d

    def to_dict(self):
        return asdict(self)

    def slope_for(self, q):
        for s in self.slopes:
            if s["q"] == float(q):
                return s
        raise KeyError(q)

    def cell(self, q, m):
        for c in self.cells:
            if c["q"] == float(q) and c["m"] == int(m):
                return c
        raise KeyError((q, m))


def fit_rate(points):
    """Least-squares fit of ``log error = intercept + slope * log m``.

    Parameters
    ----------
    points : iterable of (m, error)
        Non-positive errors are dropped with a warning.

    Returns
    -------
    (slope, intercept, slope_se)
        ``slope_se`` is None with exactly two points (no residual freedom).
    """
    pts = []
    for m, e in points:
        if e is None or not np.isfinite(e) or e <= 0:
            warnings.warn(f"dropping non-positive error {e!r} at m={m}", stacklevel=2)
            continue
        pts.append((float(m), float(e)))
    if len(pts) < 2:
        raise InputError("fit_rate needs at least two points with positive error")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    if np.ptp(x) == 0:
        raise InputError("fit_rate needs at least two distinct m values")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    n = len(pts)
    if n > 2:
        resid = y - (intercept + slope * x)
        slope_se = float(math.sqrt(float(resid @ resid) / (n - 2) / sxx))
    else:
        slope_se = None
    return slope, intercept, slope_se


def _jobs(cfg: SweepConfig):
    groups = [cfg.q_list] if cfg.common_data else [(q,) for q in cfg.q_list]
    return [(m, t, qs) for m in cfg.m_list for t in range(int(cfg.trials)) for qs in groups]


def _run_job(cfg: SweepConfig, m, trial, qs):
    """Fit every q in ``qs`` on the (m, trial) sample; one record per q."""
    with threadpool_limits(limits=1):
        target = make_target(cfg.target)
        data_q = None if cfg.common_data else qs[0]
        seed = derive_seed(cfg.master_seed, m, trial, TRAIN_STREAM, q=data_q)
        test_seed = derive_seed(cfg.master_seed, m, trial, TEST_STREAM, q=data_q)
        data = sample_dataset(target, m, cfg.target.noise, cfg.M, seed)
        sigma = schedule(m, cfg.r, cfg.d, 1.0, cfg.M, cfg.schedule_variant).sigma
        G = gram_matrix(data.X, sigma)
        factors = GramFactors(G)
        rls = solve_rkhs_rls(G, data.y, 1.0 / m) if cfg.decompose else None

        out = []
        for q in qs:
            rec = {"q": q, "m": m, "trial": trial, "status": "ok"}
            sched = schedule(m, cfg.r, cfg.d, q, cfg.M, cfg.schedule_variant)
            spec = PenaltySpec(q, sched.lam)
            solver = cfg.solver
            if q == 2.0 and cfg.exact_q2:
                solver = SolverConfig(method="closed-form-q2")
            elif solver.method == "irls" and q > 1.0:
                solver = SolverConfig(**{**solver.to_dict(), "method": "prox-grad"})
            deadline = time.monotonic() + cfg.cell_timeout
            try:
                res = fit(G, data.y, spec, solver, deadline=deadline, factors=factors)
                model = CoefficientModel(sigma, data.X, res.coeffs)
                err, se = l2_rho_error(model, target, cfg.M, cfg.n_test, test_seed)
                rec.update(
                    error=err,
                    error_se=se,
                    iterations=int(res.iterations),
                    converged=bool(res.converged),
                    lam=sched.lam,
                    sigma=sigma,
                )
                if cfg.decompose:
                    rep = decompose_check(data, res.coeffs, spec, sigma, gram=G, rls_coeffs=rls)
                    rec["chain_holds"] = bool(rep.chain_holds)
            except BudgetExceeded:
                rec["status"] = "timeout"
            except (LqKernelError, FloatingPointError, np.linalg.LinAlgError) as exc:
                rec["status"] = "failed"
                rec["message"] = str(exc)
            out.append(rec)
        return out


def _run_job_star(args):
    return _run_job(*args)


def _aggregate(cfg: SweepConfig, records):
    by_cell = {}
    for rec in records:
        by_cell.setdefault((rec["q"], rec["m"]), []).append(rec)
    cells = []
    for q in cfg.q_list:
        for m in cfg.m_list:
            recs = sorted(by_cell.get((q, m), []), key=lambda r: r["trial"])
            ok = [r for r in recs if r["status"] == "ok"]
            errs = [r["error"] for r in ok]
            n = len(errs)
            cell = {
                "q": q,
                "m": m,
                "n_trials": n,
                "n_failed": sum(r["status"] == "failed" for r in recs),
                "n_timeout": sum(r["status"] == "timeout" for r in recs),
                "mean_error": float(np.mean(errs)) if n else None,
                "se": float(np.std(errs, ddof=1) / math.sqrt(n)) if n > 1 else None,
                "mean_iterations": float(np.mean([r["iterations"] for r in ok])) if n else None,
                "converged_rate": float(np.mean([r["converged"] for r in ok])) if n else None,
                "chain_holds_rate": (
                    float(np.mean([r["chain_holds"] for r in ok]))
                    if n and cfg.decompose else None
                ),
                "lam": ok[0]["lam"] if n else None,
                "sigma": ok[0]["sigma"] if n else None,
                "errors": errs,
                "status": "complete" if n == int(cfg.trials) else "incomplete",
            }
            messages = sorted({r["message"] for r in recs if "message" in r})
            if messages:
                cell["messages"] = messages
            cells.append(cell)
    return cells


def _slopes(cfg: SweepConfig, cells):
    upper = list(cfg.m_list[len(cfg.m_list) // 2:])
    use = list(cfg.m_list) if cfg.fit_all_points or len(upper) < 2 else upper
    out = []
    for q in cfg.q_list:
        pts = [
            (c["m"], c["mean_error"])
            for c in cells
            if c["q"] == q and c["m"] in use and c["n_trials"] > 0
        ]
        entry = {"q": q, "m_used": [p[0] for p in pts], "n_points": len(pts)}
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                slope, intercept, se = fit_rate(pts)
            entry.update(slope=slope, intercept=intercept, slope_se=se)
        except InputError:
            entry.update(slope=None, intercept=None, slope_se=None)
        out.append(entry)
    return out


def run_sweep(cfg: SweepConfig, parallelism=None, progress=None) -> SweepReport:
    """Run the full grid and assemble a :class:`SweepReport`.

    ``parallelism`` overrides ``cfg.parallelism``; results are identical for
    any value. ``progress`` is an optional callable receiving each finished
    job's records.
    """
    workers = int(parallelism or cfg.parallelism)
    jobs = _jobs(cfg)
    started = time.monotonic()
    records = []
    if workers == 1:
        for m, t, qs in jobs:
            recs = _run_job(cfg, m, t, qs)
            records.extend(recs)
            if progress:
                progress(recs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(_run_job_star, [(cfg, m, t, qs) for m, t, qs in jobs]):
                records.extend(recs)
                if progress:
                    progress(recs)
    cells = _aggregate(cfg, records)
    slopes = _slopes(cfg, cells)
    echo = cfg.to_dict()
    # scheduling only; recorded in meta so bodies match across worker counts
    echo.pop("parallelism")
    return SweepReport(
        schema_version=SCHEMA_VERSION,
        config=echo,
        reference_slope=reference_exponent(cfg.r, cfg.d),
        cells=cells,
        slopes=slopes,
        complete=all(c["status"] == "complete" for c in cells),
        notes=list(NOTES),
        meta={
            "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "elapsed_s": round(time.monotonic() - started, 3),
            "parallelism": workers,
        },
    )


def report_json(report: SweepReport, body_only=False) -> str:
    doc = report.body() if body_only else report.to_dict()
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(report: SweepReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row", "q", "m", "mean_error", "se", "n_trials", "slope", "intercept", "slope_se"])

    def fmt(v):
        return "" if v is None else repr(v)

    for c in report.cells:
        w.writerow(["cell", fmt(c["q"]), fmt(c["m"]), fmt(c["mean_error"]), fmt(c["se"]),
                    fmt(c["n_trials"]), "", "", ""])
    for s in report.slopes:
        w.writerow(["summary", fmt(s["q"]), "", "", "", "", fmt(s["slope"]),
                    fmt(s["intercept"]), fmt(s["slope_se"])])
    return buf.getvalue()


def _plot_text(report: SweepReport) -> str:
    lines = [f"# reference slope {report.reference_slope!r}"]
    qs = []
    for c in report.cells:
        if c["q"] not in qs:
            qs.append(c["q"])
    for q in qs:
        lines.append(f"# q = {q!r}")
        lines.append("# log10(m) log10(mean_error)")
        for c in report.cells:
            if c["q"] == q and c["mean_error"] and c["mean_error"] > 0:
                lines.append(f"{math.log10(c['m'])!r} {math.log10(c['mean_error'])!r}")
        lines.append("")
        lines.append("")
    return "\n".join(lines)


def emit_report(report: SweepReport, path, fmt="json"):
    """Write ``report`` as ``json``, ``csv`` or ``plotdata``."""
    if fmt == "json":
        text = report_json(report)
    elif fmt == "csv":
        text = _csv_text(report)
    elif fmt == "plotdata":
        text = _plot_text(report)
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    Path(path).write_text(text)


def load_report(path) -> SweepReport:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"unsupported report schema version {doc.get('schema_version')!r}")
    return SweepReport(**doc)
