"""Experiment grid, standardized results file and report tables."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .core import Solution, occupancy_histogram, read_solution, validate_solution, write_solution
from .errors import InfeasibleAssignment, InsertionError, SolverTimeout
from .ih import solve_ih
from .instance import Instance, Zone, build_instance, load_demand, read_instance, load_zones, parse_timestamp, write_instance
from .roadnet import TravelTimeMatrix, build_travel_model, load_graph, load_speeds, write_matrix
from .vga import BACKENDS, DEFAULT_GROUP_CAP, solve_vga

log = logging.getLogger(__name__)

STATUSES = ("optimal", "feasible", "timeout", "error")
METHODS = ("ih", "vga")
MISSING = "NA"

# grid defaults follow the published instance set
DEFAULT_DURATIONS = (0.5, 1, 2, 5, 15, 30, 120, 960)
DEFAULT_MAX_DELAYS = (3, 5, 10)
DEFAULT_CAPACITY = 4


@dataclass
class RunRecord:
    area: str
    duration_min: float
    max_delay_min: float
    method: str
    n: int
    m: int
    total_cost_s: Optional[int]
    cost_per_request_s: Optional[float]
    wall_time_ms: Optional[int]
    status: str

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.total_cost_s is not None and self.cost_per_request_s is None and self.n:
            self.cost_per_request_s = self.total_cost_s / self.n


COLUMNS = [f.name for f in fields(RunRecord)]


def fmt(x) -> str:
    if x is None:
        return MISSING
    if isinstance(x, float):
        return f"{x:.3f}".rstrip("0").rstrip(".") if x != int(x) else str(int(x))
    return str(x)


def _record_row(rec: RunRecord) -> list[str]:
    return [fmt(v) for v in asdict(rec).values()]


def _parse(value: str, kind):
    if value in (MISSING, ""):
        return None
    return kind(value)


def read_results(path) -> list[RunRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(RunRecord(row["area"], float(row["duration_min"]), float(row["max_delay_min"]), row["method"],
                                 int(row["n"]), int(row["m"]), _parse(row["total_cost_s"], int),
                                 _parse(row["cost_per_request_s"], float), _parse(row["wall_time_ms"], int),
                                 row["status"]))
        return out


class ResultsWriter:
    """Appends records to a delimited results file, writing the header once."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists() or self.path.stat().st_size == 0:
            with open(self.path, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh, lineterminator="\n").writerow(COLUMNS)

    def write(self, rec: RunRecord) -> None:
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerow(_record_row(rec))


# --- grid -------------------------------------------------------------------

@dataclass
class Area:
    """Processed inputs for one city: travel model, zones and demand records."""

    name: str
    matrix: TravelTimeMatrix
    zones: dict[str, Zone]
    records: list
    start: int


def load_area(name, graph, speeds, zones, demand, start) -> Area:
    g = load_graph(graph)
    table = load_speeds(speeds) if speeds else None
    _, matrix = build_travel_model(g, table)
    return Area(name, matrix, load_zones(zones), load_demand(demand), parse_timestamp(str(start)))


@dataclass
class ExperimentGrid:
    areas: list[Area] = field(default_factory=list)
    durations: list[float] = field(default_factory=lambda: list(DEFAULT_DURATIONS))
    max_delays: list[float] = field(default_factory=lambda: list(DEFAULT_MAX_DELAYS))
    capacity: int = DEFAULT_CAPACITY
    seed: int = 0
    time_limit: Optional[float] = None
    lookback_min: float = 30
    group_cap: int = DEFAULT_GROUP_CAP
    backend: str = "bnb"
    threads: int = 1
    # pre-generated instance files, run in addition to the area cells
    instances: list = field(default_factory=list)

    def __post_init__(self):
        if not (self.areas or self.instances):
            raise ValueError("experiment grid needs at least one area or instance")
        if self.areas and (not self.durations or not self.max_delays):
            raise ValueError("experiment grid dimensions must be non-empty")


def solve(instance: Instance, method: str, *, time_limit=None, group_cap=DEFAULT_GROUP_CAP,
          backend: str = "bnb", threads: int = 1, seed_ih: bool = True) -> Solution:
    if method == "ih":
        return solve_ih(instance)
    if method == "vga":
        return solve_vga(instance, time_limit, group_cap=group_cap, backend=BACKENDS[backend](),
                         seed_ih=seed_ih, threads=threads)
    raise ValueError(f"unknown method {method!r}")


def _run_cell(area, duration_min, delay_min, methods, grid: ExperimentGrid, workdir, reproducible):
    if isinstance(area, Area):
        duration, delay = round(duration_min * 60), round(delay_min * 60)
        stem = f"{area.name}_{fmt(float(duration_min))}min_delay{fmt(float(delay_min))}min"
        name = area.name
        try:
            inst = build_instance(area.matrix, area.zones, area.records, area.start, duration, delay,
                                  round(grid.lookback_min * 60), grid.seed, capacity=grid.capacity, area=area.name,
                                  matrix_file=f"{area.name}.dttm")
        except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the grid
            log.warning("%s: instance generation failed: %s", stem, exc)
            return [RunRecord(name, duration_min, delay_min, m, 0, 0, None, None, None, "error") for m in methods]
        if workdir is not None:
            write_instance(inst, Path(workdir) / f"{stem}.instance")
    else:
        path = Path(area)
        stem = path.stem
        try:
            inst = read_instance(path)
        except Exception as exc:  # noqa: BLE001
            log.warning("%s: unreadable instance: %s", path, exc)
            return [RunRecord(stem, 0.0, 0.0, m, 0, 0, None, None, None, "error") for m in methods]
        name = inst.area or stem
        duration_min, delay_min = inst.duration / 60, inst.max_delay / 60
    return _solve_all(inst, name, stem, duration_min, delay_min, methods, grid, workdir, reproducible)


def _solve_all(inst, name, stem, duration_min, delay_min, methods, grid, workdir, reproducible):
    records = []
    n, m = len(inst.requests), len(inst.vehicles)
    for method in methods:
        started = time.perf_counter()
        try:
            sol = solve(inst, method, time_limit=grid.time_limit, group_cap=grid.group_cap, backend=grid.backend,
                        threads=grid.threads)
        except SolverTimeout:
            records.append(RunRecord(name, duration_min, delay_min, method, n, m, None, None,
                                     0 if reproducible else int((time.perf_counter() - started) * 1000), "timeout"))
            continue
        except (InsertionError, InfeasibleAssignment) as exc:
            log.warning("%s/%s: %s", stem, method, exc)
            records.append(RunRecord(name, duration_min, delay_min, method, n, m, None, None, None, "error"))
            continue
        except Exception:  # noqa: BLE001
            log.exception("%s/%s: solver crashed", stem, method)
            records.append(RunRecord(name, duration_min, delay_min, method, n, m, None, None, None, "error"))
            continue
        wall = 0 if reproducible else int((time.perf_counter() - started) * 1000)
        sol.wall_time_ms = wall
        problems = validate_solution(sol)
        if problems:
            log.error("%s/%s: invalid solution: %s", stem, method, problems[:3])
            records.append(RunRecord(name, duration_min, delay_min, method, n, m, None, None, wall, "error"))
            continue
        if workdir is not None:
            write_solution(sol, Path(workdir) / f"{stem}.{method}.solution", f"{stem}.instance")
        records.append(RunRecord(name, duration_min, delay_min, method, n, m, sol.cost, sol.cost / n if n else None,
                                 wall, sol.status))
    return records


def _run_cell_job(args):
    return _run_cell(*args)


def run_grid(grid: ExperimentGrid, methods=METHODS, results_path=None, workdir=None, jobs: int = 1,
             reproducible: bool = False) -> list[RunRecord]:
    """Generate and solve every grid cell; one record per (instance, method).

    Records are appended to ``results_path`` in grid order as cells finish.
    """
    writer = ResultsWriter(results_path) if results_path is not None else None
    if workdir is not None:
        Path(workdir).mkdir(parents=True, exist_ok=True)
        for area in grid.areas:
            write_matrix(area.matrix, Path(workdir) / f"{area.name}.dttm")
    cells = [(area, d, delay, list(methods), grid, workdir, reproducible)
             for area in grid.areas for d in grid.durations for delay in grid.max_delays]
    cells += [(str(p), None, None, list(methods), grid, workdir, reproducible) for p in grid.instances]
    out: list[RunRecord] = []

    def emit(recs):
        for rec in recs:
            out.append(rec)
            if writer is not None:
                writer.write(rec)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_run_cell_job, cells):
                emit(recs)
    else:
        for cell in cells:
            emit(_run_cell(*cell))
    return out


# --- reports ----------------------------------------------------------------

def _key(rec: RunRecord):
    return rec.area, rec.duration_min, rec.max_delay_min


def cost_ratio_table(records) -> list[dict]:
    """Relative cost increase of IH over VGA, in percent, per (area, duration, delay).

    A cell without an optimal VGA result gets the missing marker.
    """
    ih, vga = {}, {}
    for rec in records:
        if rec.method == "ih" and rec.total_cost_s is not None:
            ih[_key(rec)] = rec.total_cost_s
        elif rec.method == "vga" and rec.status == "optimal":
            vga[_key(rec)] = rec.total_cost_s
    keys = sorted({_key(r) for r in records if r.method in METHODS})
    rows = []
    for key in keys:
        a, b = ih.get(key), vga.get(key)
        pct = None if a is None or b is None or b == 0 else 100.0 * (a - b) / b
        rows.append({"area": key[0], "duration_min": key[1], "max_delay_min": key[2],
                     "ih_cost_s": a, "vga_cost_s": b, "cost_increase_pct": pct})
    return rows


def cost_per_request_table(records) -> list[dict]:
    rows = []
    for rec in sorted(records, key=lambda r: (_key(r), r.method)):
        value = rec.total_cost_s / rec.n if rec.total_cost_s is not None and rec.n else None
        rows.append({"area": rec.area, "duration_min": rec.duration_min, "max_delay_min": rec.max_delay_min,
                     "method": rec.method, "n": rec.n, "cost_per_request_s": value})
    return rows


def occupancy_rows(name: str, solution: Solution) -> list[dict]:
    hist = occupancy_histogram(solution)
    total = sum(hist.values())
    return [{"solution": name, "method": solution.method, "occupancy": level, "seconds": sec,
             "share_pct": None if total == 0 else 100.0 * sec / total}
            for level, sec in sorted(hist.items())]


def occupancy_report(solution_paths) -> list[dict]:
    """Per-solution seconds and share of driving time at each occupancy level."""
    rows = []
    for path in solution_paths:
        sol = read_solution(path)
        problems = validate_solution(sol)
        if problems:
            raise ValueError(f"{path}: invalid solution: {problems[0]}")
        rows += occupancy_rows(Path(path).name, sol)
    return rows


def format_table(rows, columns=None, pct_digits: int = 2) -> str:
    """Delimited text for report rows; numbers get fixed formatting so reruns are byte-identical."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        cells = []
        for col in columns:
            v = row[col]
            if isinstance(v, float) and col.endswith("pct"):
                cells.append(f"{v:.{pct_digits}f}")
            elif isinstance(v, float) and col.endswith("_s"):
                cells.append(f"{v:.3f}")
            else:
                cells.append(fmt(v))
        w.writerow(cells)
    return buf.getvalue()


RATIO_COLUMNS = ["area", "duration_min", "max_delay_min", "ih_cost_s", "vga_cost_s", "cost_increase_pct"]
CPR_COLUMNS = ["area", "duration_min", "max_delay_min", "method", "n", "cost_per_request_s"]
OCC_COLUMNS = ["solution", "method", "occupancy", "seconds", "share_pct"]


def write_reports(records, out_dir, solution_paths=()) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"cost_per_request": out / "cost_per_request.csv", "cost_ratio": out / "cost_ratio.csv"}
    paths["cost_per_request"].write_text(format_table(cost_per_request_table(records), CPR_COLUMNS), encoding="utf-8")
    paths["cost_ratio"].write_text(format_table(cost_ratio_table(records), RATIO_COLUMNS), encoding="utf-8")
    if solution_paths:
        paths["occupancy"] = out / "occupancy.csv"
        paths["occupancy"].write_text(format_table(occupancy_report(solution_paths), OCC_COLUMNS, pct_digits=1),
                                      encoding="utf-8")
    return paths
