"""Command-line entry point: ``hjsys <command> PROBLEM [options]``.

PROBLEM is a path to a JSON problem document or ``builtin:NAME``; builtin
parameters are passed with ``-p key=value`` (values parsed as JSON when
possible).  Every command writes one JSON report (stdout or ``--report``) and
optionally a comma-separated table (``--out``).

Modes are numbered from 1 on the command line and in reports; grid points
and control indices from 0.

Exit codes: 0 success, 1 usage or file error, 2 validation failure,
3 numerical failure, 4 oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .ergodic import ErgodicError, default_schedule, lambda_sweep, solve_ergodic
from .measures import (
    MeasureError,
    adjoint_residual,
    brute_force_oracle,
    green_poisson,
    normalization,
    policy_occupancies,
    test_vectors,
    to_probability,
)
from .monotone import MonotonicityError, normal_form
from .problem import ProblemError, builtin_problem, load_problem, validate_problem
from .solver import ConvergenceError, diagnostics, solve_discounted

SCHEMA_VERSION = "1"
THREADS_ENV = "HJSYS_NUM_THREADS"
ORACLE_TOL = 1e-9

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC, EXIT_ORACLE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load(args):
    params = {}
    for item in args.param or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"parameter {item!r} is not key=value")
        params[key] = _parse_value(value)
    if args.problem.startswith("builtin:"):
        return builtin_problem(args.problem.split(":", 1)[1], params)
    if params:
        raise UsageError("-p parameters only apply to builtin problems")
    if not os.path.exists(args.problem):
        raise FileNotFoundError(args.problem)
    return load_problem(args.problem)


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"cannot parse number list {text!r}") from None


def _anchors(text, p):
    if text is None:
        return [(0, i) for i in range(p.m)]
    out = []
    for item in text.split(","):
        z, sep, k = item.partition(":")
        if not sep:
            raise UsageError(f"anchor {item!r} is not z:k")
        out.append((int(z), int(k) - 1))
    return out


def _mode(k, p):
    if not 1 <= k <= p.m:
        raise UsageError(f"--k must lie in 1..{p.m}")
    return k - 1


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(c)) if isinstance(c, (float, np.floating)) else c for c in row])


def _value_rows(values):
    X, m = values.shape
    return [(x, i + 1, values[x, i]) for i in range(m) for x in range(X)]


# --------------------------------------------------------------------------
# commands


def cmd_validate(p, args):
    rep = validate_problem(p, args.directions)
    code = EXIT_OK if rep.monotone else EXIT_INVALID
    return {"validation": rep.to_dict(), "coercivity_warning": not rep.coercive}, {}, code


def _require_monotone(p):
    rep = validate_problem(p)
    if not rep.monotone:
        raise MonotonicityError(f"coupling is not monotone: {rep.witness}")


def cmd_solve(p, args):
    _require_monotone(p)
    lam = args.lam
    sol = solve_discounted(p, lam, tol=args.tol, method=args.method,
                           accelerate=not args.no_accelerate)
    diag = diagnostics(sol)
    if args.out:
        _write_table(args.out, ["x", "mode", "value"], _value_rows(sol.values))
    results = {
        "lam": lam,
        "values": sol.values,
        "policy": sol.policy,
        "sup_bound": diag.sup_bound,
        "lipschitz": diag.lipschitz,
        "duality": None,
    }
    diagnostics_ = {"residual": sol.residual, "tolerance": args.tol, "tolerance_scale": "max(1, |v|)",
                    "iterations": sol.iterations, "method": sol.method, "kappa": sol.kappa}
    return results, diagnostics_, EXIT_OK


def _measure_summary(p, nu, seed, n_random):
    psis = test_vectors(p, n_random=n_random, seed=seed)
    mu = to_probability(p, nu)
    return {
        "anchor": {"z": nu.anchor[0], "k": nu.anchor[1] + 1},
        "value": nu.value,
        "pairing": nu.meta["pairing"],
        "gap": nu.gap,
        "gap_tolerance": 1e-8,
        "masses": nu.masses,
        "normalization": normalization(p, nu),
        "normalization_error": nu.meta["normalization_error"],
        "normalization_tolerance": 1e-10,
        "adjoint_residual": adjoint_residual(p, nu, psis),
        "adjoint_tolerance": 1e-8,
        "adjoint_test_vectors": len(psis),
        "probability_mass": mu.mass,
        "min_weight": float(nu.weights.min()),
    }


def cmd_measure(p, args):
    _require_monotone(p)
    k = _mode(args.k, p)
    sol = solve_discounted(p, args.lam)
    nu = green_poisson(p, args.lam, args.z, k, solution=sol)
    if args.out:
        _write_table(args.out, ["x", "control", "mode", "weight"],
                     [(x, xi, i + 1, w) for x, xi, i, w in nu.rows()])
    res = _measure_summary(p, nu, args.seed, args.n_random)
    res["lam"] = args.lam
    return res, {"solver_residual": sol.residual, "seed": args.seed}, EXIT_OK


def cmd_sweep(p, args):
    _require_monotone(p)
    schedule = default_schedule() if args.schedule is None else _floats(args.schedule)
    rec = lambda_sweep(p, schedule, _anchors(args.anchors, p))
    if args.out:
        ok = [e for e in rec.entries if e.values is not None]
        dist = rec.distances + [None]
        rows = [(e.lam, e.sup_bound, float(e.lipschitz.max()), "" if d is None else d,
                 max(e.gaps) if e.gaps else "") for e, d in zip(ok, dist)]
        _write_table(args.out, ["lam", "sup_bound", "lipschitz", "distance_to_next", "max_gap"], rows)
    results = rec.to_dict()
    results["anchors"] = [{"z": z, "k": k + 1} for z, k in rec.anchors]
    results["limit_tolerance"] = "1e-6 * (1 + |v|)"
    results["limit_sup"] = float(np.abs(rec.limit.values).max()) if rec.limit is not None else None
    code = EXIT_OK if rec.limit is not None else EXIT_NUMERIC
    return results, {"schedule": schedule}, code


def cmd_ergodic(p, args):
    _require_monotone(p)
    schedule = default_schedule() if args.schedule is None else _floats(args.schedule)
    sol = solve_ergodic(p, schedule, tol=args.tol)
    if args.out:
        _write_table(args.out, ["x", "mode", "value"], _value_rows(sol.values))
    results = sol.to_dict()
    for entry in results["provenance"]:
        entry["modes"] = [q + 1 for q in entry["modes"]]
    results["values"] = sol.values
    return results, {"schedule": schedule}, EXIT_OK


def cmd_normal_form(p, args):
    if not p.is_constant_coupling():
        raise ProblemError("normal form needs a constant coupling matrix")
    nf = normal_form(p.B[0])
    results = nf.to_dict()
    results["original_modes"] = [[q + 1 for q in blk] for blk in results["original_modes"]]
    results["pi"] = [q + 1 for q in results["pi"]]
    return results, {}, EXIT_OK


def cmd_oracle(p, args):
    _require_monotone(p)
    k = _mode(args.k, p)
    threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    orc = brute_force_oracle(p, args.lam, args.z, k, threads=threads)
    sol = solve_discounted(p, args.lam)
    nu = green_poisson(p, args.lam, args.z, k, solution=sol)
    value_err = float(np.abs(sol.values - orc.v_exact).max())
    measure_err = float(np.abs(nu.weights - orc.nu_exact.weights).max())
    anchor_values = orc.values_by_policy[:, args.z + p.grid.size * k]
    minimality = float(anchor_values.min() - orc.v_exact[args.z, k])
    agree = value_err <= ORACLE_TOL and measure_err <= ORACLE_TOL and minimality >= -ORACLE_TOL
    results = {
        "lam": args.lam,
        "anchor": {"z": args.z, "k": args.k},
        "n_policies": orc.n_policies,
        "value_error": value_err,
        "measure_error": measure_err,
        "minimality_margin": minimality,
        "oracle_fixed_point_error": orc.fixed_point_error,
        "tolerance": ORACLE_TOL,
        "agree": agree,
    }
    return results, {"threads": threads}, EXIT_OK if agree else EXIT_ORACLE


COMMANDS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "measure": cmd_measure,
    "sweep": cmd_sweep,
    "ergodic": cmd_ergodic,
    "normal-form": cmd_normal_form,
    "oracle": cmd_oracle,
}


def build_parser():
    parser = _Parser(prog="hjsys", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        sp = subs.add_parser(name, help=help_)
        sp.add_argument("problem", help="problem JSON path or builtin:NAME")
        sp.add_argument("-p", "--param", action="append", metavar="KEY=VALUE",
                        help="builtin parameter (repeatable)")
        sp.add_argument("--report", help="write the JSON report here instead of stdout")
        return sp

    sp = add("validate", "check monotone coupling and coercivity")
    sp.add_argument("--directions", type=int, default=None, help="sampled directions in 2D")

    sp = add("solve", "solve the discounted system")
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--method", choices=["gauss_seidel", "jacobi"], default="gauss_seidel")
    sp.add_argument("--no-accelerate", action="store_true", help="plain value iteration")
    sp.add_argument("--out", help="CSV dump of values")

    for name, help_ in (("measure", "Green-Poisson measure at an anchor"),
                        ("oracle", "compare with exhaustive policy enumeration")):
        sp = add(name, help_)
        sp.add_argument("--lambda", dest="lam", type=float, required=True)
        sp.add_argument("--z", type=int, default=0, help="grid point index (from 0)")
        sp.add_argument("--k", type=int, default=1, help="mode (from 1)")
        if name == "measure":
            sp.add_argument("--seed", type=int, default=42)
            sp.add_argument("--n-random", type=int, default=100)
            sp.add_argument("--out", help="CSV dump of measure weights")

    sp = add("sweep", "vanishing-discount sweep")
    sp.add_argument("--schedule", help="comma-separated decreasing discounts")
    sp.add_argument("--anchors", help="comma-separated z:k pairs")
    sp.add_argument("--out", help="CSV Cauchy table")

    sp = add("ergodic", "ergodic constants by normal-form block induction")
    sp.add_argument("--schedule", help="comma-separated decreasing discounts")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--out", help="CSV dump of the ergodic solution")

    add("normal-form", "block triangular normal form of a constant B")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    report = {"schema_version": SCHEMA_VERSION, "command": args.command}
    try:
        p = _load(args)
        report["problem"] = {"name": p.name, "fingerprint": p.fingerprint(),
                             "dim": p.grid.dim, "N": p.grid.n, "K": p.K, "m": p.m}
        report["parameters"] = {k: v for k, v in sorted(vars(args).items())
                                if k not in ("command", "report")}
        results, diag, code = COMMANDS[args.command](p, args)
        report["results"] = results
        report["diagnostics"] = diag
    except (UsageError, FileNotFoundError, IsADirectoryError) as exc:
        code = EXIT_USAGE
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    except (ProblemError, MonotonicityError) as exc:
        code = EXIT_INVALID
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    except (ConvergenceError, MeasureError, ErgodicError, np.linalg.LinAlgError, ValueError) as exc:
        code = EXIT_NUMERIC
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
    report["exit_code"] = code
    report["wall_time_s"] = round(time.perf_counter() - start, 6)
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    if "error" in report:
        print(f"hjsys: {report['error']['type']}: {report['error']['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
