"""Command-line entry point: gen, solve, check, score, trace-plot.

Exit codes: 0 success, 1 infeasible solution or hard violations, 2 usage
or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .adam import read_trace, write_trace
from .case import CaseError, load_case, save_case
from .checker import check_feasibility, score_solution
from .generator import generate_synthetic_case
from .state import SolutionError, read_solution, write_solution

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive(kind):
    def parse(text):
        v = kind(text)
        if v <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _nonnegative_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="adamuc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log pipeline warnings and progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic case")
    g.add_argument("--buses", type=_positive(int), required=True)
    g.add_argument("--periods", type=_positive(int), required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="run the full pipeline on a case")
    s.add_argument("--case", required=True)
    s.add_argument("--budget", type=_nonnegative_float, default=60.0, help="seconds")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=_positive(int), default=1)
    s.add_argument("--clock", choices=("virtual", "wall"), default="virtual",
                   help="virtual: schedules advance per iteration (reproducible)")
    s.add_argument("--out", required=True, help="solution JSON")
    s.add_argument("--trace", help="Adam trace CSV (default: next to --out)")
    s.add_argument("--timings", help="stage timing JSON (default: next to --out)")

    for name, text in (("check", "list hard violations"), ("score", "print the score report as JSON")):
        c = sub.add_parser(name, help=text)
        c.add_argument("--case", required=True)
        c.add_argument("--solution", required=True)
        if name == "score":
            c.add_argument("--z-ed", type=float, help="dispatch bound (computed when omitted)")

    t = sub.add_parser("trace-plot", help="plot a trace CSV as SVG")
    t.add_argument("--trace", required=True)
    t.add_argument("--out", help="SVG path (default: the trace path with .svg)")
    t.add_argument("--z-ed", type=float, help="draw the dispatch bound")
    return p


def _sibling(path: str, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


def cmd_gen(args) -> int:
    save_case(generate_synthetic_case(args.buses, args.periods, args.seed), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    from .pipeline import PipelineConfig, solve_case

    case = load_case(args.case)
    config = PipelineConfig(budget=args.budget, seed=args.seed, workers=args.workers, clock=args.clock)
    res = solve_case(case, config)
    write_solution(res.state, args.out)
    trace_path = args.trace or _sibling(args.out, ".trace.csv")
    timing_path = args.timings or _sibling(args.out, ".timings.json")
    write_trace(res.trace, trace_path)
    Path(timing_path).write_text(json.dumps(
        {"timings_s": res.timings, "source": res.source, "fixed_counts": res.fixed_counts}, indent=1))
    r = res.report
    gap = f"{r.gap:.2f}%" if r.gap is not None else "n/a"
    print(f"z_ms={r.z_ms:.6g} z_ed={res.z_ed:.6g} gap={gap} source={res.source} "
          f"violations={len(r.violations)}")
    return EXIT_OK if r.feasible else EXIT_INFEASIBLE


def _load_pair(args):
    case = load_case(args.case)
    return case, read_solution(args.solution)


def cmd_check(args) -> int:
    case, sol = _load_pair(args)
    try:
        viol = check_feasibility(case, sol)
    except SolutionError as exc:
        print(f"invalid solution: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    for v in viol:
        print(f"{v['constraint']}\t{v['element']}\tt={v['t']}\t{v['magnitude']:.3e}")
    print(f"{len(viol)} hard violations", file=sys.stderr)
    return EXIT_OK if not viol else EXIT_INFEASIBLE


def cmd_score(args) -> int:
    from .projections import economic_dispatch

    case, sol = _load_pair(args)
    z_ed = args.z_ed if args.z_ed is not None else economic_dispatch(case).z_ed
    try:
        report = score_solution(case, sol, z_ed)
    except SolutionError as exc:
        print(f"invalid solution: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(report.to_json())
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_trace_plot(args) -> int:
    from .plotting import plot_trace

    out = args.out or Path(args.trace).with_suffix(".svg")
    plot_trace(read_trace(args.trace), out, args.z_ed)
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "check": cmd_check, "score": cmd_score,
            "trace-plot": cmd_trace_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SolutionError as exc:
        print(f"invalid solution: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (CaseError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
