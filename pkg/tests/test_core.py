import pytest
from hypothesis import given, settings, strategies as st

from darpbench.core import (Route, Solution, Stop, compute_schedule, format_solution, occupancy_histogram,
                            read_solution, route_cost, stops_for, validate_solution, write_solution)
from darpbench.errors import FormatError
from darpbench.instance import Instance, Request, Vehicle, write_instance
from darpbench.roadnet import RoadGraph, compute_travel_time_matrix, write_matrix

from oracles import plain_schedule, random_instance


def line(n=5, hop=60):
    edges = []
    for i in range(n - 1):
        edges += [(i, i + 1, hop, 1), (i + 1, i, hop, 1)]
    return compute_travel_time_matrix(RoadGraph.from_edges(range(n), edges))


def one_request(max_delay=180, t=0, capacity=4):
    m = line()
    return Instance([Request(0, 1, 2, t, 60)], [Vehicle(0, 0, capacity)], m, max_delay, t + 1)


def test_line_graph_schedule():
    inst = one_request()
    s = compute_schedule(inst.vehicle(0), stops_for(inst, ["p:0", "d:0"]), inst)
    assert s.feasible and s.times == (60, 120)


def test_tight_delay_is_infeasible():
    inst = one_request(max_delay=30)
    s = compute_schedule(inst.vehicle(0), stops_for(inst, ["p:0", "d:0"]), inst)
    assert not s.feasible and "deadline" in s.violation
    assert s.times == (60, 120)


def test_empty_schedule():
    inst = one_request()
    s = compute_schedule(inst.vehicle(0), [], inst)
    assert s.feasible and s.times == ()


def test_schedule_errors():
    inst = one_request()
    with pytest.raises(KeyError):
        compute_schedule(inst.vehicle(0), [Stop("p", 5, 1)], inst)
    with pytest.raises(ValueError):
        compute_schedule(inst.vehicle(0), stops_for(inst, ["p:0", "p:0", "d:0"]), inst)


def test_precedence_and_unfinished_violations():
    inst = one_request()
    v = inst.vehicle(0)
    assert "before pickup" in compute_schedule(v, stops_for(inst, ["d:0", "p:0"]), inst).violation
    assert "never dropped off" in compute_schedule(v, stops_for(inst, ["p:0"]), inst).violation


def test_capacity_violation():
    m = line()
    inst = Instance([Request(0, 1, 3, 0, 120), Request(1, 1, 3, 0, 120)], [Vehicle(0, 0, 1)], m, 500, 1)
    s = compute_schedule(inst.vehicle(0), stops_for(inst, ["p:0", "p:1", "d:0", "d:1"]), inst)
    assert "capacity" in s.violation
    s = compute_schedule(inst.vehicle(0), stops_for(inst, ["p:0", "d:0", "p:1", "d:1"]), inst)
    assert s.feasible


def test_route_costs():
    inst = one_request()
    assert route_cost(Route(0), inst) == 0
    assert route_cost(Route(0, stops_for(inst, ["p:0", "d:0"])), inst) == 120


def test_waiting_is_free():
    inst = one_request(t=110)
    stops = stops_for(inst, ["p:0", "d:0"])
    assert compute_schedule(inst.vehicle(0), stops, inst).times == (110, 170)
    assert route_cost(Route(0, stops), inst) == 120


def test_histogram_of_single_request():
    inst = one_request()
    sol = Solution(inst, {0: Route(0, stops_for(inst, ["p:0", "d:0"]))})
    assert sol.cost == 120
    assert occupancy_histogram(sol) == {0: 60, 1: 60, 2: 0, 3: 0, 4: 0}


def test_histogram_of_empty_solution():
    m = line()
    inst = Instance([], [Vehicle(0, 0, 4), Vehicle(1, 3, 4)], m, 60, 10)
    sol = Solution(inst, {})
    assert set(sol.routes) == {0, 1}
    assert occupancy_histogram(sol) == {k: 0 for k in range(5)}
    assert validate_solution(sol) == []


def test_validator_accepts_correct_solution():
    inst = one_request()
    assert validate_solution(Solution(inst, {0: Route(0, stops_for(inst, ["p:0", "d:0"]))})) == []


def test_validator_reports_unserved():
    inst = one_request()
    assert validate_solution(Solution(inst, {})) == ["request 0 unserved"]


def test_validator_reports_everything():
    m = line()
    inst = Instance([Request(0, 1, 2, 0, 60), Request(1, 3, 4, 0, 60), Request(2, 4, 0, 0, 240)],
                    [Vehicle(0, 0, 1), Vehicle(1, 4, 1)], m, 30, 1)
    sol = Solution(inst, {0: Route(0, stops_for(inst, ["d:0", "p:0", "p:1", "d:1"])),
                          1: Route(1, stops_for(inst, ["p:1", "d:1"]))})
    problems = validate_solution(sol)
    text = "\n".join(problems)
    assert "request 0: dropoff precedes pickup" in text
    assert "exceeds capacity" in text
    assert "served by vehicles 0 and 1" in text
    assert "request 2 unserved" in text
    assert "after deadline" in text
    assert len(problems) >= 5


def test_validator_catches_cost_mismatch():
    inst = one_request()
    sol = Solution(inst, {0: Route(0, stops_for(inst, ["p:0", "d:0"]))}, cost=100)
    assert any("differs" in p for p in validate_solution(sol))


def test_solution_file_round_trip(tmp_path):
    inst = one_request()
    write_matrix(inst.matrix, tmp_path / "m.dttm")
    inst = inst.with_changes(matrix_file="m.dttm")
    write_instance(inst, tmp_path / "a.instance")
    sol = Solution(inst, {0: Route(0, stops_for(inst, ["p:0", "d:0"]))}, method="ih", status="feasible",
                   wall_time_ms=5, info={"note": "x"})
    write_solution(sol, tmp_path / "a.solution", "a.instance")
    back = read_solution(tmp_path / "a.solution")
    assert back.routes == sol.routes and back.cost == 120 and back.method == "ih" and back.info == {"note": "x"}
    assert format_solution(back, "a.instance") == (tmp_path / "a.solution").read_text()


@pytest.mark.parametrize("body", ["route 0 x:0", "[solution]\nroute 0 p:9", "[solution]\nnonsense",
                                  "[solution]\nroute 0 p:0 d:0\nroute 0 p:0 d:0"])
def test_bad_solution_files(tmp_path, body):
    inst = one_request()
    (tmp_path / "s").write_text(body + "\n")
    with pytest.raises((FormatError, KeyError)):
        read_solution(tmp_path / "s", inst)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10 ** 6), st.randoms(use_true_random=False))
def test_schedule_agrees_with_plain_simulation(seed, rnd):
    inst = random_instance(seed, n_requests=4, n_vehicles=1, capacity=rnd.choice([1, 2, 4]))
    v = inst.vehicles[0]
    stops = [("p", r.id) for r in inst.requests] + [("d", r.id) for r in inst.requests]
    rnd.shuffle(stops)
    # keep each pickup ahead of its dropoff
    order, seen = [], set()
    for kind, rid in stops:
        if kind == "d" and rid not in seen:
            continue
        order.append((kind, rid))
        seen.add(rid)
    order += [("d", rid) for rid in sorted(seen) if ("d", rid) not in order]
    sched = compute_schedule(v, stops_for(inst, order), inst)
    plain = plain_schedule(inst, v, order)
    assert sched.feasible == (plain is not None)
    if sched.feasible:
        assert route_cost(Route(v.id, stops_for(inst, order)), inst) == plain
        # pickup never later than t + max delay in a feasible schedule
        for (kind, rid), t in zip(order, sched.times):
            if kind == "p":
                assert t <= inst.request(rid).time + inst.max_delay


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_histogram_sums_to_cost(seed):
    from darpbench.ih import insert_all
    inst = random_instance(seed, n_requests=6, n_vehicles=3, max_delay=600)
    routes, unserved = insert_all(inst)
    sol = Solution(inst, routes)
    hist = occupancy_histogram(sol)
    assert sum(hist.values()) == sol.cost
    assert max(hist) == 4
