import csv

import pytest

from darpbench import bench
from darpbench.bench import (COLUMNS, CPR_COLUMNS, MISSING, RATIO_COLUMNS, ExperimentGrid, ResultsWriter, RunRecord,
                             cost_per_request_table, cost_ratio_table, format_table, occupancy_report,
                             read_results, run_grid, write_reports)
from darpbench.core import Route, Solution, read_solution, stops_for, validate_solution, write_solution
from darpbench.errors import SolverTimeout
from darpbench.instance import Instance, Request, Vehicle, build_instance, write_instance
from darpbench.roadnet import RoadGraph, compute_travel_time_matrix, write_matrix
from darpbench.vga import solve_vga


def rec(method, cost, status=None, n=10, duration=1.0, delay=3.0, area="a"):
    status = status or ("optimal" if method == "vga" else "feasible")
    return RunRecord(area, duration, delay, method, n, 5, cost, None, 7, status)


def test_record_fills_cost_per_request_and_checks_status():
    assert rec("ih", 1200).cost_per_request_s == 120
    assert rec("vga", None, "timeout").cost_per_request_s is None
    with pytest.raises(ValueError):
        rec("ih", 5, "done")


def test_grid_needs_dimensions(tiny_area):
    with pytest.raises(ValueError):
        ExperimentGrid()
    with pytest.raises(ValueError):
        ExperimentGrid([tiny_area], durations=[])


def test_grid_cardinality_and_results_file(tiny_area, tmp_path):
    grid = ExperimentGrid([tiny_area], [1, 2], [3, 10], group_cap=4)
    results = tmp_path / "results.csv"
    records = run_grid(grid, results_path=results, workdir=tmp_path / "work", reproducible=True)
    assert len(records) == 8
    assert [(r.duration_min, r.max_delay_min, r.method) for r in records] == \
        [(d, x, m) for d in (1, 2) for x in (3, 10) for m in ("ih", "vga")]
    assert all(r.status in ("feasible", "optimal") for r in records)
    lines = results.read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(COLUMNS) and len(lines) == 9
    back = read_results(results)
    assert [(r.n, r.m, r.total_cost_s, r.status) for r in back] == [(r.n, r.m, r.total_cost_s, r.status) for r in records]
    assert [r.cost_per_request_s for r in back] == [pytest.approx(r.cost_per_request_s, abs=1e-3) for r in records]
    # every record with a cost points at a solution that re-validates
    for path in sorted((tmp_path / "work").glob("*.solution")):
        assert validate_solution(read_solution(path)) == []
    assert len(list((tmp_path / "work").glob("*.solution"))) == 8


def test_rerun_gives_identical_costs(tiny_area):
    grid = ExperimentGrid([tiny_area], [1], [5], group_cap=4)
    a, b = run_grid(grid), run_grid(grid)
    assert [(r.n, r.m, r.total_cost_s, r.status) for r in a] == [(r.n, r.m, r.total_cost_s, r.status) for r in b]


def test_timeout_becomes_a_record_with_empty_cost(tiny_area, tmp_path):
    grid = ExperimentGrid([tiny_area], [15], [10], time_limit=1e-6, group_cap=8)
    records = run_grid(grid, results_path=tmp_path / "r.csv")
    ih, vga = records
    assert ih.status == "feasible" and ih.total_cost_s > 0
    assert vga.status == "timeout" and vga.total_cost_s is None and vga.cost_per_request_s is None
    row = list(csv.DictReader((tmp_path / "r.csv").open(encoding="utf-8")))[1]
    assert row["status"] == "timeout" and row["total_cost_s"] == MISSING


def test_failures_do_not_abort_the_grid(tiny_area, tmp_path):
    bad = tmp_path / "broken.instance"
    bad.write_text("not an instance\n")
    grid = ExperimentGrid([tiny_area], [1], [5], instances=[bad])
    records = run_grid(grid)
    assert [r.status for r in records[2:]] == ["error", "error"]
    assert records[0].status == "feasible"


def test_results_file_is_append_only(tmp_path):
    path = tmp_path / "r.csv"
    ResultsWriter(path).write(rec("ih", 100))
    ResultsWriter(path).write(rec("vga", 90))
    text = path.read_text(encoding="utf-8")
    assert text.count("area,") == 1
    assert [r.total_cost_s for r in read_results(path)] == [100, 90]


def test_cost_ratio_examples():
    rows = cost_ratio_table([rec("ih", 100), rec("vga", 100)])
    assert rows[0]["cost_increase_pct"] == 0
    rows = cost_ratio_table([rec("ih", 120), rec("vga", 100)])
    assert rows[0]["cost_increase_pct"] == pytest.approx(20.0)
    rows = cost_ratio_table([rec("ih", 120), rec("vga", None, "timeout")])
    assert rows[0]["cost_increase_pct"] is None
    assert format_table(rows, RATIO_COLUMNS).splitlines()[1].endswith(f",{MISSING},{MISSING}")


def test_cost_ratio_skips_unproven_vga():
    rows = cost_ratio_table([rec("ih", 120), rec("vga", 100, "feasible")])
    assert rows[0]["cost_increase_pct"] is None


def test_cost_per_request_examples():
    rows = cost_per_request_table([RunRecord("a", 1.0, 3.0, "vga", 10, 2, 1200, None, 1, "optimal")])
    assert rows[0]["cost_per_request_s"] == 120
    assert cost_per_request_table([]) == []
    assert format_table([], CPR_COLUMNS) == ",".join(CPR_COLUMNS) + "\n"


def test_cost_per_request_shrinks_with_delay(tiny_area):
    inst = build_instance(tiny_area.matrix, tiny_area.zones, tiny_area.records, tiny_area.start, 120, 180, 1800, 0)
    records = []
    for delay in (3, 10):
        sol = solve_vga(inst.with_changes(max_delay=delay * 60), group_cap=4)
        records.append(RunRecord("tiny", 2.0, float(delay), "vga", len(inst.requests), len(inst.vehicles),
                                 sol.cost, None, 0, sol.status))
    tight, loose = (r["cost_per_request_s"] for r in cost_per_request_table(records))
    assert loose <= tight


def _line_solution(tmp_path):
    edges = []
    for i in range(4):
        edges += [(i, i + 1, 60, 1), (i + 1, i, 60, 1)]
    m = compute_travel_time_matrix(RoadGraph.from_edges(range(5), edges))
    write_matrix(m, tmp_path / "m.dttm")
    inst = Instance([Request(0, 1, 2, 0, 60)], [Vehicle(0, 0, 4)], m, 180, 1, matrix_file="m.dttm")
    write_instance(inst, tmp_path / "one.instance")
    sol = Solution(inst, {0: Route(0, stops_for(inst, ["p:0", "d:0"]))}, method="ih", status="feasible")
    write_solution(sol, tmp_path / "one.solution", "one.instance")
    empty = Solution(inst.with_changes(requests=[]), {}, method="vga", status="optimal")
    write_instance(empty.instance, tmp_path / "empty.instance")
    write_solution(empty, tmp_path / "empty.solution", "empty.instance")
    return tmp_path / "one.solution", tmp_path / "empty.solution"


def test_occupancy_report(tmp_path):
    one, empty = _line_solution(tmp_path)
    rows = occupancy_report([one])
    share = {r["occupancy"]: r["share_pct"] for r in rows}
    assert share == {0: 50.0, 1: 50.0, 2: 0.0, 3: 0.0, 4: 0.0}
    assert sum(share.values()) == pytest.approx(100, abs=0.1)
    rows = occupancy_report([empty])
    assert all(r["seconds"] == 0 and r["share_pct"] is None for r in rows)


def test_occupancy_report_rejects_invalid_solutions(tmp_path):
    one, _ = _line_solution(tmp_path)
    one.write_text(one.read_text().replace("total_cost_s = 120", "total_cost_s = 99"))
    with pytest.raises(ValueError):
        occupancy_report([one])


def test_occupancy_shares_sum_to_hundred(tiny_area, tmp_path):
    grid = ExperimentGrid([tiny_area], [2, 5], [5], group_cap=4)
    run_grid(grid, workdir=tmp_path, reproducible=True)
    rows = occupancy_report(sorted(tmp_path.glob("*.solution")))
    out = format_table(rows, bench.OCC_COLUMNS, pct_digits=1)
    totals = {}
    for row in csv.DictReader(out.splitlines()):
        totals[row["solution"]] = totals.get(row["solution"], 0) + float(row["share_pct"])
    assert len(totals) == 4
    # each of the five printed shares carries at most 0.05 pp of rounding
    assert all(abs(t - 100) <= 0.25 for t in totals.values())
    assert all(abs(sum(r["share_pct"] for r in rows if r["solution"] == s) - 100) < 1e-9 for s in totals)


def test_tables_are_byte_identical_on_rederivation(tiny_area, tmp_path):
    grid = ExperimentGrid([tiny_area], [1, 2], [3, 5], group_cap=4)
    results = tmp_path / "r.csv"
    run_grid(grid, results_path=results, workdir=tmp_path / "w", reproducible=True)
    sols = sorted((tmp_path / "w").glob("*.solution"))
    first = {k: p.read_bytes() for k, p in write_reports(read_results(results), tmp_path / "a", sols).items()}
    second = {k: p.read_bytes() for k, p in write_reports(read_results(results), tmp_path / "b", sols).items()}
    assert first == second and set(first) == {"cost_per_request", "cost_ratio", "occupancy"}


def test_parallel_grid_matches_serial(tiny_area, tmp_path):
    grid = ExperimentGrid([tiny_area], [1, 2], [5], group_cap=4)
    serial = run_grid(grid, results_path=tmp_path / "s.csv", reproducible=True)
    parallel = run_grid(grid, results_path=tmp_path / "p.csv", jobs=2, reproducible=True)
    assert serial == parallel
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


def test_unknown_method_rejected(tiny_area):
    inst = build_instance(tiny_area.matrix, tiny_area.zones, tiny_area.records, tiny_area.start, 60, 300, 1800, 0)
    with pytest.raises(ValueError):
        bench.solve(inst, "greedy")
    with pytest.raises(SolverTimeout):
        bench.solve(inst.with_changes(max_delay=600), "vga", time_limit=0)
