"""Command-line interface: ``lqkernel <subcommand> ...``.

Exit codes: 0 success, 1 usage or input error, 2 numerical or solver
failure, 3 a requested check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from itertools import combinations
from pathlib import Path

import numpy as np

from lqkernel import __version__
from lqkernel.errors import ConfigError, InputError, NumericalError
from lqkernel.io import load_model, read_dataset, read_points, save_model, write_dataset
from lqkernel.kernel import CoefficientModel, gram_matrix, predict
from lqkernel.oracles import run_prox_oracle
from lqkernel.penalty import PenaltySpec
from lqkernel.ratelab import SweepConfig, emit_report, run_sweep
from lqkernel.solvers import METHODS, SolverConfig, fit
from lqkernel.synth import FAMILIES, TargetSpec, make_target, sample_dataset
from lqkernel.theory import approx_decay, decompose_check, schedule

log = logging.getLogger("lqkernel")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit_json(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _solver_cfg(args):
    return SolverConfig(
        method=args.solver, max_iters=args.max_iters, tol=args.tol, init=args.init
    )


def _add_solver_flags(p, default="prox-grad"):
    p.add_argument("--solver", choices=METHODS, default=default)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--init", choices=("zeros", "rls-warm-start"), default="zeros")


def cmd_fit(args):
    data = read_dataset(args.data, M=args.M)
    spec = PenaltySpec(args.q, args.lam)
    G = gram_matrix(data.X, args.sigma)
    res = fit(G, data.y, spec, _solver_cfg(args))
    model = CoefficientModel(args.sigma, data.X, res.coeffs)
    info = {
        "q": spec.q,
        "lambda": spec.lam,
        "M": data.M,
        "solver": {
            "method": res.method,
            "iterations": res.iterations,
            "converged": res.converged,
            "status": res.status,
            "objective": res.objective,
            "kkt_residual": res.kkt_residual,
            "config": _solver_cfg(args).to_dict(),
        },
    }
    if args.out:
        save_model(args.out, model, **info)
    else:
        _emit_json({"sigma": model.sigma, "coeffs": model.coeffs.tolist(), **info}, None)
    if not res.converged:
        log.warning("solver stopped at max_iters=%d before reaching tol", res.iterations)
    return EXIT_OK


def cmd_predict(args):
    model, doc = load_model(args.model)
    X = read_points(args.data)
    if X.shape[1] != model.centers.shape[1]:
        raise InputError(f"data has d={X.shape[1]} but the model was fitted with d={model.centers.shape[1]}")
    pred = predict(model, X)
    if args.clip:
        if "M" not in doc:
            raise InputError("--clip needs an 'M' field in the model file")
        pred = np.clip(pred, -doc["M"], doc["M"])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{k}" for k in range(1, X.shape[1] + 1)] + ["y_pred"])
        for xi, pi in zip(X, pred):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(pi))])
    return EXIT_OK


def cmd_gen(args):
    spec = TargetSpec(
        family=args.family, d=args.d, M=args.M, amplitude=args.amplitude,
        frequency=args.frequency, noise=args.noise,
    )
    data = sample_dataset(make_target(spec), args.m, args.noise, args.M, args.seed)
    write_dataset(args.out, data, extra_meta={"target": spec.to_dict(), "seed": args.seed})
    return EXIT_OK


def cmd_prox_check(args):
    rep = run_prox_oracle(cases=args.cases, seed=args.seed)
    doc = rep.to_dict()
    doc["elapsed_s"] = round(rep.elapsed_s, 3)
    _emit_json(doc, args.out)
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_approx_check(args):
    spec = TargetSpec(family=args.family, amplitude=1.0, frequency=args.frequency)
    target = make_target(spec)
    rep = approx_decay(target, args.r, args.sigma_list, grid_points=args.grid)
    doc = rep.to_dict()
    lo, hi = (1 - args.tolerance) * rep.expected_ratio, (1 + args.tolerance) * rep.expected_ratio
    doc["tolerance"] = args.tolerance
    doc["within_tolerance"] = [bool(lo <= x <= hi) for x in rep.ratios]
    _emit_json(doc, args.out)
    if args.strict and not all(doc["within_tolerance"]):
        return EXIT_CHECK
    return EXIT_OK


def cmd_decompose(args):
    data = read_dataset(args.data, M=args.M)
    sched = schedule(data.m, args.r, data.d, args.q, data.M, args.schedule)
    sigma = args.sigma if args.sigma is not None else sched.sigma
    lam = args.lam if args.lam is not None else sched.lam
    spec = PenaltySpec(args.q, lam)
    G = gram_matrix(data.X, sigma)
    res = fit(G, data.y, spec, _solver_cfg(args))
    rep = decompose_check(data, res.coeffs, spec, sigma, gram=G)
    doc = rep.to_dict()
    doc["schedule"] = sched.variant
    doc["solver"] = {"method": res.method, "converged": res.converged, "iterations": res.iterations}
    _emit_json(doc, args.out)
    return EXIT_OK


def _sweep_checks(report):
    """Rate checks: negative slopes, pairwise spread <= 0.15, within 0.2 of the reference."""
    slopes = {s["q"]: s["slope"] for s in report.slopes}
    if any(v is None for v in slopes.values()):
        return {"all_negative": False, "max_pairwise_diff": None, "max_reference_gap": None, "passed": False}
    vals = list(slopes.values())
    spread = max((abs(a - b) for a, b in combinations(vals, 2)), default=0.0)
    gap = max(abs(v - report.reference_slope) for v in vals)
    ok = all(v < 0 for v in vals) and spread <= 0.15 and gap <= 0.2
    return {"all_negative": all(v < 0 for v in vals), "max_pairwise_diff": spread,
            "max_reference_gap": gap, "passed": bool(ok)}


def cmd_rate_sweep(args):
    cfg = SweepConfig.from_json(args.config)

    def progress(recs):
        r = recs[0]
        log.info("m=%d trial=%d done (%d fits)", r["m"], r["trial"], len(recs))

    report = run_sweep(cfg, parallelism=args.parallelism, progress=progress)
    emit_report(report, args.out, args.format)
    for s in report.slopes:
        slope = "n/a" if s["slope"] is None else f"{s['slope']:.3f}"
        print(f"q={s['q']:g} slope={slope} reference={report.reference_slope:.3f}")
    if args.check:
        checks = _sweep_checks(report)
        print(json.dumps(checks, sort_keys=True))
        if not checks["passed"]:
            return EXIT_CHECK
    if not report.complete:
        log.warning("some cells are incomplete (failed or timed out)")
    return EXIT_OK


def build_parser():
    p = _Parser(prog="lqkernel", description="l^q coefficient-regularized Gaussian kernel regression")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("fit", help="fit one model")
    s.add_argument("--data", required=True)
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--sigma", type=float, required=True)
    s.add_argument("--M", type=float, default=None, help="output bound (default: sidecar metadata)")
    s.add_argument("--out")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="evaluate a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--clip", action="store_true", help="clip predictions to [-M, M]")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("gen", help="generate a synthetic dataset")
    s.add_argument("--family", choices=FAMILIES, default="cosine")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--d", type=int, default=1)
    s.add_argument("--M", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--amplitude", type=float, default=None)
    s.add_argument("--frequency", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("prox-check", help="prox map against a brute-force oracle")
    s.add_argument("--cases", type=int, default=200)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_prox_check)

    s = sub.add_parser("approx-check", help="approximation error decay of f0")
    s.add_argument("--r", type=int, default=2)
    s.add_argument("--sigma-list", type=_float_list, default=[0.2, 0.1, 0.05])
    s.add_argument("--family", choices=FAMILIES, default="cosine")
    s.add_argument("--frequency", type=int, default=1)
    s.add_argument("--grid", type=int, default=512)
    s.add_argument("--tolerance", type=float, default=0.25)
    s.add_argument("--strict", action="store_true", help="exit 3 if a ratio is out of tolerance")
    s.add_argument("--out")
    s.set_defaults(func=cmd_approx_check)

    s = sub.add_parser("decompose", help="hypothesis-error chain for one fit")
    s.add_argument("--data", required=True)
    s.add_argument("--q", type=float, required=True)
    s.add_argument("--r", type=float, default=2.0)
    s.add_argument("--schedule", choices=("theorem", "proof"), default="proof")
    s.add_argument("--M", type=float, default=None)
    s.add_argument("--sigma", type=float, default=None, help="override the scheduled width")
    s.add_argument("--lambda", dest="lam", type=float, default=None, help="override the scheduled weight")
    s.add_argument("--out")
    _add_solver_flags(s)
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("rate-sweep", help="run a (q, m, trial) learning-rate sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("json", "csv", "plotdata"), default="json")
    s.add_argument("--parallelism", type=int, default=None)
    s.add_argument("--check", action="store_true", help="exit 3 unless the slope checks pass")
    s.set_defaults(func=cmd_rate_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "amplitude", "unset") is None:
        args.amplitude = args.M - args.noise
    try:
        return args.func(args)
    except (InputError, ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"lqkernel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"lqkernel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"lqkernel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
