"""Command-line entry point: ``blockapg {generate,solve,bench,compare}``.

Exit codes: 0 success, 2 configuration error, 3 failed dominance assertion.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import bench
from .numkit import InvalidPartitionError
from .problems import load_instance, save_instance
from .regularizers import ConfigurationError, UnsupportedRuleError
from .solvers import ALGORITHMS, DivergenceError, SolverConfig, solve, write_trace

log = logging.getLogger("blockapg")

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 2, 3


def _instance_from_args(args):
    if args.instance:
        return load_instance(args.instance)
    cfg = bench.preset(args.preset, args.scale, seed=args.seed)
    return bench.build_instance(cfg.problem, cfg.regularizer)


def cmd_generate(args) -> int:
    P = _instance_from_args(args)
    path = save_instance(P, args.out, args.name)
    print(f"wrote {path} (m={P.m}, n={P.n}, s={P.s}, {P.reg.kind})")
    return EXIT_OK


def cmd_solve(args) -> int:
    P = _instance_from_args(args)
    cfg = SolverConfig(algorithm=args.algorithm, rule=args.rule, beta=args.beta, t=args.t,
                       step=args.step, max_passes=args.budget, tol=args.tol, seed=args.seed,
                       timing=args.timing)
    try:
        trace = solve(P, cfg)
        status = EXIT_OK
    except DivergenceError as exc:
        log.error("%s", exc)
        trace, status = exc.trace, 1
    if args.out:
        write_trace(args.out, trace)
    last = trace.records[-1]
    print(f"{cfg.name}: passes={last.pass_} F={last.objective!r} residual={last.residual}")
    return status


def cmd_bench(args) -> int:
    if args.config:
        cfg = bench.load_config(args.config)
        if args.budget is not None:
            cfg.budget = args.budget
    else:
        cfg = bench.preset(args.preset, args.scale, seed=args.seed,
                           budget=100 if args.budget is None else args.budget)
    out = args.out or cfg.out or f"runs/{cfg.name}"
    res = bench.run(cfg, out=out, timing=args.timing)
    print(f"F* = {res.fstar!r}   ({cfg.name}, m={res.problem.m}, n={res.problem.n}, s={res.problem.s})")
    for row in res.summary:
        hits = " ".join(f"{t:g}:{row.passes_to[t]}" for t in bench.THRESHOLDS)
        print(f"  {row.name:24s} final F-F*={row.final_gap:.3e}  passes-to [{hits}]"
              f"{'  DIVERGED' if row.diverged else ''}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    checkpoints = [int(c) for c in args.checkpoints.split(",")] if args.checkpoints else None
    try:
        rep = bench.compare(args.traces, fstar=args.fstar, checkpoints=checkpoints)
    except bench.ComparisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.at is not None and args.at not in rep.checkpoints:
        rep = bench.compare(args.traces, fstar=args.fstar,
                            checkpoints=sorted(set(rep.checkpoints) | {args.at}))
    print(rep.format())
    if args.assert_winner:
        target = args.assert_winner
        if target not in rep.names:
            print(f"error: no trace named {target!r} (have {rep.names})", file=sys.stderr)
            return EXIT_CONFIG
        points = [args.at] if args.at is not None else rep.checkpoints
        failed = [p for p in points
                  if rep.gaps[target][rep.checkpoints.index(p)]
                  > min(rep.gaps[n][rep.checkpoints.index(p)] for n in rep.names)]
        if failed:
            print(f"assertion failed: {target} is beaten at passes {failed}", file=sys.stderr)
            return EXIT_ASSERT
        print(f"assertion holds: {target} is no worse than any other trace at passes {points}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockapg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def problem_args(p):
        p.add_argument("--preset", choices=bench.PRESETS, default="lasso")
        p.add_argument("--scale", type=float, default=1.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--instance", help="instance metadata JSON written by `generate`")

    p = sub.add_parser("generate", help="write a preset instance to MatrixMarket + sidecar files")
    problem_args(p)
    p.add_argument("--out", default=".")
    p.add_argument("--name", default="instance")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run one solver and write its trace")
    problem_args(p)
    p.add_argument("--algorithm", choices=ALGORITHMS, default="bcoapgnc+")
    p.add_argument("--rule", default="gs-r")
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--t", type=float, default=0.9)
    p.add_argument("--step", default="paper-block")
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--timing", action="store_true", help="fill the elapsed_s column")
    p.add_argument("--out", help="trace CSV path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a preset or a TOML config")
    p.add_argument("--preset", choices=bench.PRESETS, default="lasso")
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int)
    p.add_argument("--timing", action="store_true", help="fill the elapsed_s column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="tabulate F - F* of traces at checkpoint passes")
    p.add_argument("traces", nargs="+")
    p.add_argument("--fstar", type=float)
    p.add_argument("--checkpoints", help="comma-separated pass indices")
    p.add_argument("--assert-winner", help="trace name (file stem) that must be no worse than the others")
    p.add_argument("--at", type=int, help="check the assertion at this pass only")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, UnsupportedRuleError, InvalidPartitionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
