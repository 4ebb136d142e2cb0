"""Insertion heuristic.

Requests are taken in pickup-time order.  Each one goes to the
(vehicle, pickup position, dropoff position) with the smallest increase in
vehicle travel time; ties go to the lowest vehicle id, then the earliest
pickup position, then the earliest dropoff position.  Committed stops are
never reordered.
"""

from __future__ import annotations

import time

from .core import Route, Solution, Stop, compute_schedule
from .errors import InsertionError
from .instance import Instance


class _VehicleState:
    __slots__ = ("vehicle", "start", "stops", "locs", "times", "loads", "earliest", "deadlines")

    def __init__(self, vehicle, start_idx):
        self.vehicle = vehicle
        self.start = start_idx
        self.stops: list[Stop] = []
        self.locs: list[int] = []
        self.times: list[int] = []
        self.loads: list[int] = []
        self.earliest: list[int] = []
        # None marks a pickup (no hard deadline)
        self.deadlines: list = []


def _refresh(state: _VehicleState, rows):
    loc, now, load = state.start, 0, 0
    state.times.clear()
    state.loads.clear()
    for i, dest in enumerate(state.locs):
        now = max(now + rows[loc][dest], state.earliest[i])
        load += 1 if state.deadlines[i] is None else -1
        state.times.append(now)
        state.loads.append(load)
        loc = dest


def _feasible(state: _VehicleState, rows, i, j, o, d, t, deadline) -> bool:
    """Can pickup ``o`` go before old stop ``i`` and dropoff ``d`` before old stop ``j``?"""
    locs, times, earliest, deadlines = state.locs, state.times, state.earliest, state.deadlines
    n = len(locs)
    if i == 0:
        loc, now = state.start, 0
    else:
        loc, now = locs[i - 1], times[i - 1]
    now = max(now + rows[loc][o], t)
    loc = o
    k = i
    while k < j:
        now = max(now + rows[loc][locs[k]], earliest[k])
        dl = deadlines[k]
        if dl is not None and now > dl:
            return False
        loc = locs[k]
        if now == times[k]:
            # schedule rejoins the old one; nothing changes until the dropoff
            loc, now = locs[j - 1], times[j - 1]
            break
        k += 1
    now += rows[loc][d]
    if now > deadline:
        return False
    loc = d
    for k in range(j, n):
        now = max(now + rows[loc][locs[k]], earliest[k])
        if now == times[k]:
            return True
        dl = deadlines[k]
        if dl is not None and now > dl:
            return False
        loc = locs[k]
    return True


def _best_insertion(states, rows, o, d, t, direct, max_delay):
    """Cheapest feasible insertion as ``(delta, state, i, j)`` or ``None``."""
    deadline = t + direct + max_delay
    latest_pickup = t + max_delay
    best = None
    best_delta = None
    for st in states:
        cap = st.vehicle.capacity
        locs, times, loads = st.locs, st.times, st.loads
        n = len(locs)
        for i in range(n + 1):
            if i == 0:
                prev, prev_time, prev_load = st.start, 0, 0
            else:
                prev, prev_time, prev_load = locs[i - 1], times[i - 1], loads[i - 1]
            if prev_time > latest_pickup:
                break
            to_o = rows[prev][o]
            if prev_time + to_o > latest_pickup or prev_load >= cap:
                continue
            if i < n:
                nxt = locs[i]
                pick_delta = to_o + rows[o][nxt] - rows[prev][nxt]
                adjacent = to_o + direct + rows[d][nxt] - rows[prev][nxt]
            else:
                pick_delta = to_o
                adjacent = to_o + direct
            if best_delta is not None and pick_delta >= best_delta:
                continue
            if (best_delta is None or adjacent < best_delta) and _feasible(st, rows, i, i, o, d, t, deadline):
                best, best_delta = (st, i, i), adjacent
            for j in range(i + 1, n + 1):
                if loads[j - 1] >= cap:
                    break
                a = locs[j - 1]
                if j < n:
                    b = locs[j]
                    delta = pick_delta + rows[a][d] + rows[d][b] - rows[a][b]
                else:
                    delta = pick_delta + rows[a][d]
                if (best_delta is None or delta < best_delta) and _feasible(st, rows, i, j, o, d, t, deadline):
                    best, best_delta = (st, i, j), delta
    if best is None:
        return None
    return (best_delta,) + best


def insert_all(instance: Instance, stop_early: bool = False):
    """Run the heuristic; returns ``(routes, unserved_request_ids)``.

    Unserved requests are skipped.  With ``stop_early`` the run ends at the
    first one.
    """
    rows = instance.rows
    idx = instance.matrix.index
    states = [_VehicleState(v, idx[v.start]) for v in sorted(instance.vehicles, key=lambda v: v.id)]
    unserved = []
    for r in instance.requests:
        o, d = idx[r.origin], idx[r.destination]
        found = _best_insertion(states, rows, o, d, r.time, r.direct, instance.max_delay)
        if found is None:
            unserved.append(r.id)
            if stop_early:
                break
            continue
        _, st, i, j = found
        st.stops[j:j] = [Stop.dropoff(r)]
        st.locs[j:j] = [d]
        st.earliest[j:j] = [0]
        st.deadlines[j:j] = [r.time + r.direct + instance.max_delay]
        st.stops[i:i] = [Stop.pickup(r)]
        st.locs[i:i] = [o]
        st.earliest[i:i] = [r.time]
        st.deadlines[i:i] = [None]
        _refresh(st, rows)
    routes = {st.vehicle.id: Route(st.vehicle.id, tuple(st.stops)) for st in states}
    return routes, unserved


def _failure_reasons(instance: Instance, routes, rid) -> dict[int, str]:
    r = instance.request(rid)
    reasons = {}
    for v in instance.vehicles:
        stops = list(routes[v.id].stops) + [Stop.pickup(r), Stop.dropoff(r)]
        sched = compute_schedule(v, stops, instance)
        reasons[v.id] = sched.violation or "no feasible position"
    return reasons


def solve_ih(instance: Instance) -> Solution:
    """Solve ``instance`` with the insertion heuristic.

    Raises ``InsertionError`` naming the first request that fits nowhere.
    """
    started = time.perf_counter()
    routes, unserved = insert_all(instance, stop_early=True)
    if unserved:
        raise InsertionError(unserved[0], _failure_reasons(instance, routes, unserved[0]))
    elapsed = int((time.perf_counter() - started) * 1000)
    for vid, route in routes.items():
        sched = compute_schedule(instance.vehicle(vid), route.stops, instance)
        if not sched.feasible:
            raise AssertionError(f"insertion produced an infeasible route for vehicle {vid}: {sched.violation}")
    return Solution(instance, routes, method="ih", status="feasible", wall_time_ms=elapsed)
