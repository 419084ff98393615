"""Command line driver: ``hmmdwr <subcommand> [options]``.

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import os
import sys

from .adaptivity import AdaptConfig, adapt_loop, write_trace
from .discretization import MacroMesh
from .exceptions import ConfigurationError, HMMError
from .experiments import GRID_K, GRID_k, run_compare_effort, run_convergence
from .estimator import write_breakdown_csv, write_summary_csv
from .macro import SolverTolerances, solve_macro, write_trajectory_csv
from .adjoint import solve_macro_adjoint
from .estimator import estimate
from .reference import DEFAULT_STEPS, reference_value, write_reference_csv
from .systems import GoalFunctional, make_benchmark

__all__ = ["PUBLISHED_J_REF", "main", "build_parser", "read_config"]

log = logging.getLogger("hmmdwr")

PUBLISHED_J_REF = {"osc1": 1.08704164, "osc2": 0.59223654}
SUBCOMMANDS = ("reference", "multiscale", "estimate", "convergence", "adapt", "compare-effort")


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Keys use option names."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as err:
        raise ConfigurationError(f"cannot read config file {path}: {err}") from err
    for no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{no}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_").lower()] = value
    return out


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError as err:
            raise argparse.ArgumentTypeError(str(err)) from err
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value file; flags given on the command line win")
    common.add_argument("--problem", choices=("osc1", "osc2"), default="osc1")
    common.add_argument("--damping", choices=("half", "threefifths", "three_fifths"), default=None,
                        help="damping on u' for osc1 (default: the variant matching the reference)")
    common.add_argument("--params", choices=("resolved", "stated"), default="resolved",
                        help="benchmark parameter set (default: resolved)")
    common.add_argument("--epsilon", type=_positive(float), default=None)
    common.add_argument("--tolp", type=_positive(float), default=1e-9)
    common.add_argument("--jref", default=None,
                        help="reference value: a number, 'published' or 'compute'")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("--jobs", type=_positive(int), default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    uniform = _Parser(add_help=False)
    uniform.add_argument("--K", type=_positive(float), default=100000.0, dest="K")
    uniform.add_argument("--k", type=_positive(float), default=0.1, dest="k")

    adaptive = _Parser(add_help=False)
    adaptive.add_argument("--beta", type=float, default=1.2)
    adaptive.add_argument("--iters", type=_positive(int), default=10)
    adaptive.add_argument("--target-error", type=_positive(float), default=None)

    parser = _Parser(prog="hmmdwr", description="Temporal multiscale solver with DWR error estimation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("reference", parents=[common], help="resolved trapezoidal reference")
    p.add_argument("--steps", type=_positive(float), nargs=3, default=list(DEFAULT_STEPS))
    sub.add_parser("multiscale", parents=[common, uniform], help="uniform multiscale solve")
    sub.add_parser("estimate", parents=[common, uniform], help="uniform solve plus estimator")
    p = sub.add_parser("convergence", parents=[common], help="the 6x6 (K, k) grid")
    p.add_argument("--grid-K", type=_positive(float), nargs="+", default=list(GRID_K), dest="grid_K")
    p.add_argument("--grid-k", type=_positive(float), nargs="+", default=list(GRID_k), dest="grid_k")
    p = sub.add_parser("adapt", parents=[common, adaptive], help="adaptive refinement loop")
    p.add_argument("--K", type=_positive(float), default=50000.0, dest="K")
    p.add_argument("--k", type=_positive(float), default=0.05, dest="k")
    p = sub.add_parser("compare-effort", parents=[common, adaptive], help="resolved vs uniform vs adaptive")
    p.add_argument("--target", type=_positive(float), default=5e-5)
    p.add_argument("--resolved-k", type=_positive(float), default=1.0 / 200.0)
    p.add_argument("--skip-resolved", action="store_true")
    return parser


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults so explicit flags override them."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    conf = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = set(conf) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    defaults = {}
    for action in sub._actions:
        if action.dest in conf:
            raw = conf[action.dest]
            if action.nargs in ("+", 3):
                value = [action.type(x) if action.type else x for x in raw.replace(",", " ").split()]
            elif action.const is True:  # store_true
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                value = action.type(raw) if action.type else raw
            if action.choices is not None and value not in action.choices:
                raise ConfigurationError(f"config value {raw!r} not allowed for {action.dest}")
            defaults[action.dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _system(args):
    damping = args.damping
    if damping == "threefifths":
        damping = "three_fifths"
    return make_benchmark(args.problem, damping, args.epsilon, args.params)


def _jref(args, system):
    value = args.jref
    if value is None:
        default_damping = args.damping is None and args.epsilon is None
        value = "published" if args.params == "resolved" and default_damping else "compute"
    if value == "published":
        return PUBLISHED_J_REF[args.problem]
    if value == "compute":
        log.info("computing the reference value (resolved runs)")
        _, ex = reference_value(system)
        return ex.limit
    try:
        return float(value)
    except ValueError as err:
        raise ConfigurationError(f"--jref must be a number, 'published' or 'compute', got {value!r}") from err


def _tols(args):
    return SolverTolerances(tol_p=args.tolp)


def _fmt(value):
    return "nan" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.6e}"


def cmd_reference(args):
    system = _system(args)
    runs, ex = reference_value(system, tuple(args.steps))
    for r in runs:
        print(f"k={r.k:g}  J={r.J:.10f}  steps={r.steps}  {r.wall_clock:.1f}s")
    flag = "" if ex.reliable else "  (unreliable)"
    if ex.reliable and not ex.stable:
        flag = f"  (unstable: Richardson spread {ex.spread:.1e})"
    print(f"order p={ex.order:.4f}  extrapolated J={ex.limit:.10f}{flag}")
    if args.out:
        write_reference_csv(runs, ex, args.out)
    return 0


def cmd_multiscale(args):
    system = _system(args)
    sol = solve_macro(system, MacroMesh.uniform(system.T, args.K, args.k), _tols(args))
    J = GoalFunctional(0)(sol.Y.values)
    print(f"J={J:.10f}  N={sol.mesh.N}  effort={sol.effort:g}  cycles={sol.cycles_total}")
    if args.out:
        write_trajectory_csv(sol, args.out)
    return 0


def cmd_estimate(args):
    system = _system(args)
    J_ref = _jref(args, system)
    goal = GoalFunctional(0)
    sol = solve_macro(system, MacroMesh.uniform(system.T, args.K, args.k), _tols(args))
    adj = solve_macro_adjoint(system, sol, goal)
    br = estimate(system, sol, adj)
    err = J_ref - br.J
    eff = 100.0 * br.eta_total / err if err != 0 else math.nan
    print(f"J={br.J:.10f} err={_fmt(err)} eta={_fmt(br.eta_total)} eta_EG={_fmt(br.sum_EG)} "
          f"eta_EF={_fmt(br.sum_EF)} eta_EFp={_fmt(br.eta_EFprime)} eff={eff:.1f}%")
    if args.out:
        write_breakdown_csv(br, args.out)
    return 0


def cmd_convergence(args):
    system = _system(args)
    J_ref = _jref(args, system)
    rows = run_convergence(system, J_ref, args.grid_K, args.grid_k, jobs=args.jobs, tols=_tols(args))
    failed = 0
    for row in rows:
        if row["status"] != "ok":
            failed += 1
            print(f"k={row['k']:g} K={row['K']:g}  {row['status']}")
            continue
        print(f"k={row['k']:<9g} K={row['K']:<8g} err={_fmt(row['err'])} eta={_fmt(row['eta'])} "
              f"eta_EG={_fmt(row['eta_EG'])} eta_EF={_fmt(row['eta_EF'])} eta_EFp={_fmt(row['eta_EFp'])} "
              f"eff={row['eff']:.1f}%")
    if args.out:
        write_summary_csv(rows, args.out)
    return 1 if failed else 0


def cmd_adapt(args):
    system = _system(args)
    J_ref = _jref(args, system)
    config = AdaptConfig(beta=args.beta, max_iterations=args.iters, target_error=args.target_error)

    def report(it):
        br = it.breakdown
        print(f"l={it.l:<2d} N={it.mesh.N:<4d} J={it.J:.8f} err={_fmt(J_ref - it.J)} eta={_fmt(br.eta_total)} "
              f"EF/EG={br.balance_ratio:.3g} effort={it.effort:g} cumulative={it.cumulative_effort:g}")

    trace = adapt_loop(system, MacroMesh.uniform(system.T, args.K, args.k), config, GoalFunctional(0),
                       _tols(args), callback=report)
    print(f"stopped: {trace.stop_reason}")
    if args.out:
        write_trace(trace, args.out, J_ref)
    return 1 if trace.error is not None else 0


def cmd_compare_effort(args):
    system = _system(args)
    J_ref = _jref(args, system)
    config = AdaptConfig(beta=args.beta, max_iterations=args.iters)
    rows, _, trace = run_compare_effort(system, J_ref, target=args.target, resolved_k=args.resolved_k,
                                        config=config, tols=_tols(args), resolved=not args.skip_resolved)
    for r in rows:
        K = "--" if r.K is None else f"{r.K:g}"
        cyc = "" if r.cycles_recorded is None else f" cycles={r.cycles_recorded}"
        print(f"{r.approach:<22s} error={_fmt(r.error)} k={r.k:g} K={K} micro-steps={r.micro_steps:g}{cyc}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f.name for f in dataclasses.fields(rows[0])])
            for r in rows:
                w.writerow([r.approach, repr(r.error), repr(r.k), "" if r.K is None else repr(r.K),
                            repr(r.micro_steps), "" if r.cycles_recorded is None else r.cycles_recorded])
    return 1 if trace.error is not None else 0


_COMMANDS = {
    "reference": cmd_reference,
    "multiscale": cmd_multiscale,
    "estimate": cmd_estimate,
    "convergence": cmd_convergence,
    "adapt": cmd_adapt,
    "compare-effort": cmd_compare_effort,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.out and args.command == "adapt":
            os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except HMMError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
