"""``darpbench`` command line.

Exit codes: 0 success, 1 usage or input error, 2 validation failure,
3 solver error or timeout without a result.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import bench
from .core import read_solution, validate_solution, write_solution
from .errors import FleetSizingError, FormatError, InfeasibleAssignment, InsertionError, SolverTimeout
from .instance import build_instance, load_demand, load_zones, parse_timestamp, read_instance, write_instance
from .roadnet import build_travel_model, load_graph, load_speeds, write_matrix
from .vga import BACKENDS, DEFAULT_GROUP_CAP

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("darpbench")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _global_flags(parser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    parser.add_argument("--jobs", type=int, default=d(1), help="parallel grid cells / solver threads")
    parser.add_argument("--time-limit", type=float, default=d(None), help="solver time limit in seconds")
    parser.add_argument("--reproducible", action="store_true", default=d(False),
                        help="write zero wall times so repeated runs are byte-identical")
    parser.add_argument("-v", "--verbose", action="store_true", default=d(False))


def _area_flags(p):
    p.add_argument("--graph", required=True, help="road graph file")
    p.add_argument("--speeds", help="speed table file (default: speeds stored on edges)")
    p.add_argument("--zones", required=True, help="zone definition file")
    p.add_argument("--demand", required=True, help="demand record file")
    p.add_argument("--start", required=True, help="window start, unix seconds or ISO 8601")
    p.add_argument("--lookback", type=float, required=True, help="vehicle start look-back in minutes")
    p.add_argument("--capacity", type=int, default=4)
    p.add_argument("--area", default="area", help="area name recorded in outputs")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    parser = _Parser(prog="darpbench", description="Generate, solve and benchmark ridesharing DARP instances.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", parents=[common], help="build an instance and its travel time matrix")
    _area_flags(p)
    p.add_argument("--duration", type=float, required=True, help="instance length in minutes")
    p.add_argument("--max-delay", type=float, required=True, help="max delay in minutes")
    p.add_argument("--fleet-size", type=int, help="skip fleet sizing and use this many vehicles")
    p.add_argument("--vehicle-start", choices=("origin", "destination"), default="origin",
                   help="which end of a prior trip seeds a vehicle start")
    p.add_argument("--matrix", help="matrix output path (default: next to the instance, .dttm)")
    p.add_argument("--out", required=True, help="instance output path")

    p = sub.add_parser("solve", parents=[common], help="solve an instance")
    p.add_argument("--method", choices=bench.METHODS, required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True, help="solution output path")
    p.add_argument("--group-cap", type=int, default=DEFAULT_GROUP_CAP, help="largest VGA group")
    p.add_argument("--backend", choices=sorted(BACKENDS), default="bnb", help="exact set-partitioning backend")
    p.add_argument("--threads", type=int, help="solver threads (default: --jobs)")
    p.add_argument("--no-ih-seed", action="store_true", help="do not seed VGA with the heuristic solution")

    p = sub.add_parser("validate", parents=[common], help="re-check a solution against its instance")
    p.add_argument("solution")
    p.add_argument("--instance", help="instance path (default: the one recorded in the solution)")

    p = sub.add_parser("bench", parents=[common], help="run both methods over an experiment grid")
    _area_flags(p)
    p.add_argument("--durations", type=_floats, default=list(bench.DEFAULT_DURATIONS), help="minutes, comma list")
    p.add_argument("--max-delays", type=_floats, default=list(bench.DEFAULT_MAX_DELAYS), help="minutes, comma list")
    p.add_argument("--methods", default=",".join(bench.METHODS))
    p.add_argument("--group-cap", type=int, default=DEFAULT_GROUP_CAP)
    p.add_argument("--backend", choices=sorted(BACKENDS), default="bnb")
    p.add_argument("--results", required=True, help="results file; records are appended")
    p.add_argument("--workdir", help="keep generated instances and solutions here")

    p = sub.add_parser("report", parents=[common], help="derive plot-ready tables from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--solutions", nargs="*", default=[], help="solution files for the occupancy table")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic city in the input formats")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, default=24, help="intersections per side")
    p.add_argument("--trips-per-hour", type=int, default=400)
    p.add_argument("--hours", type=float, default=2.0, help="demand span, centred on the start time")
    return parser


def _load_area(args):
    graph = load_graph(args.graph)
    speeds = load_speeds(args.speeds) if args.speeds else None
    _, matrix = build_travel_model(graph, speeds)
    return bench.Area(args.area, matrix, load_zones(args.zones), load_demand(args.demand),
                      parse_timestamp(args.start))


def cmd_generate(args) -> int:
    area = _load_area(args)
    out = Path(args.out)
    matrix_path = Path(args.matrix) if args.matrix else out.with_suffix(".dttm")
    try:
        rel = os.path.relpath(matrix_path, out.parent)
    except ValueError:
        rel = str(matrix_path.resolve())
    inst = build_instance(area.matrix, area.zones, area.records, area.start, round(args.duration * 60),
                          round(args.max_delay * 60), round(args.lookback * 60), args.seed,
                          capacity=args.capacity, area=args.area, matrix_file=rel,
                          fleet_size=args.fleet_size, start_at=args.vehicle_start)
    out.parent.mkdir(parents=True, exist_ok=True)
    matrix_path.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(area.matrix, matrix_path)
    write_instance(inst, out)
    print(f"{out}: {len(inst.requests)} requests, {len(inst.vehicles)} vehicles, matrix {matrix_path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = read_instance(args.instance)
    started = time.perf_counter()
    try:
        sol = bench.solve(inst, args.method, time_limit=args.time_limit, group_cap=args.group_cap,
                          backend=args.backend, threads=max(1, args.threads or args.jobs),
                          seed_ih=not args.no_ih_seed)
    except SolverTimeout as exc:
        print(f"timeout: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (InsertionError, InfeasibleAssignment) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    sol.wall_time_ms = 0 if args.reproducible else int((time.perf_counter() - started) * 1000)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        ipath = os.path.relpath(Path(args.instance), out.parent)
    except ValueError:
        ipath = str(Path(args.instance).resolve())
    write_solution(sol, out, ipath)
    print(f"{out}: method {sol.method}, status {sol.status}, cost {sol.cost} s, {sol.wall_time_ms} ms")
    return EXIT_OK


def cmd_validate(args) -> int:
    inst = read_instance(args.instance) if args.instance else None
    sol = read_solution(args.solution, inst)
    problems = validate_solution(sol)
    for p in problems:
        print(p)
    if problems:
        print(f"INVALID: {len(problems)} violation(s)")
        return EXIT_INVALID
    print(f"VALID: cost {sol.cost} s, {len(sol.instance.requests)} requests served")
    return EXIT_OK


def cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    unknown = [m for m in methods if m not in bench.METHODS]
    if unknown or not methods:
        raise UsageError(f"unknown method(s): {', '.join(unknown) or '(none)'}")
    area = _load_area(args)
    grid = bench.ExperimentGrid([area], args.durations, args.max_delays, capacity=args.capacity, seed=args.seed,
                                time_limit=args.time_limit, lookback_min=args.lookback, group_cap=args.group_cap,
                                backend=args.backend)
    records = bench.run_grid(grid, methods, args.results, args.workdir, jobs=max(1, args.jobs),
                             reproducible=args.reproducible)
    for rec in records:
        print(f"{rec.area} {bench.fmt(rec.duration_min)}min delay {bench.fmt(rec.max_delay_min)}min {rec.method}: "
              f"{rec.status} cost {bench.fmt(rec.total_cost_s)}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = bench.read_results(args.results)
    for name, path in bench.write_reports(records, args.out_dir, args.solutions).items():
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import synthetic_area, write_area, START
    from .instance import iso_timestamp

    area = synthetic_area(args.size, args.trips_per_hour, args.hours / 2, args.hours / 2, seed=args.seed)
    for name, path in write_area(area, args.out_dir).items():
        print(f"{name}: {path}")
    print(f"start: {iso_timestamp(START)}")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "validate": cmd_validate,
            "bench": cmd_bench, "report": cmd_report, "synth": cmd_synth}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"darpbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"darpbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FleetSizingError as exc:
        print(f"darpbench: fleet sizing failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
