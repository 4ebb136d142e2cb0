"""Optimal vehicle-group assignment.

For every vehicle, enumerate the request groups it can serve (growing groups
one request at a time, keeping only those whose every smaller subset is
feasible), route each group optimally, then pick one group per vehicle so
that every request is covered exactly once at minimum total travel time.

The set-partitioning program is solved by a pluggable exact backend.  The
default is an in-house branch-and-bound over LP relaxations; ``MilpBackend``
delegates to ``scipy.optimize.milp``.
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import csr_matrix

from .core import Route, Solution, Stop, compute_schedule, route_cost
from .errors import InfeasibleAssignment, InsertionError, SolverTimeout
from .instance import Instance, Vehicle

log = logging.getLogger(__name__)

DEFAULT_GROUP_CAP = 8
_INT_TOL = 1e-6


@dataclass(frozen=True)
class VehicleGroup:
    vehicle: int
    requests: tuple[int, ...]
    stops: tuple[Stop, ...]
    cost: int
    # True for columns copied from a heuristic solution rather than routed exactly
    seeded: bool = False


@dataclass
class AssignmentProblem:
    instance: Instance
    groups: list[VehicleGroup]
    requests: list[int]
    vehicles: list[int]
    group_cap: int = DEFAULT_GROUP_CAP
    cap_binding: bool = False

    def __post_init__(self):
        covered = {r for g in self.groups for r in g.requests}
        missing = [r for r in self.requests if r not in covered]
        if missing:
            raise InfeasibleAssignment(f"requests {missing} are in no feasible group", missing)


# --- exact routing of one group ---------------------------------------------

def _search(rows, start, capacity, reqs, max_delay, bound=math.inf):
    """Depth-first search for the cheapest feasible stop order.

    ``reqs`` holds ``(rid, origin, destination, t, direct, deadline)`` with
    matrix indices.  Prunes assume the matrix obeys the triangle inequality,
    which shortest-path matrices do.  Returns ``(cost, [(kind, k), ...])``
    or ``None``.
    """
    n = len(reqs)
    state = [0] * n  # 0 waiting, 1 onboard, 2 delivered
    path: list[tuple[str, int]] = []
    best_cost = bound
    best_path = None
    # (state, location) -> (clock, cost) labels already expanded
    seen: dict[tuple, list[tuple[int, int]]] = {}

    def rec(loc, now, cost, load, left):
        nonlocal best_cost, best_path
        if left == 0:
            if cost < best_cost:
                best_cost, best_path = cost, list(path)
            return
        if n > 2:
            # an earlier, cheaper arrival in the same state reaches every completion this one can
            key = (tuple(state), loc)
            labels = seen.get(key)
            if labels is None:
                seen[key] = [(now, cost)]
            else:
                for t0, c0 in labels:
                    if t0 <= now and c0 <= cost:
                        return
                labels.append((now, cost))
        row = rows[loc]
        lb = 0
        for k in range(n):
            st = state[k]
            if st == 2:
                continue
            _, o, d, t, direct, dl = reqs[k]
            if st == 0:
                arr = now + row[o]
                if arr > t + max_delay:
                    return
                need = row[o] + direct
            else:
                need = row[d]
                if now + need > dl:
                    return
            if need > lb:
                lb = need
        if cost + lb >= best_cost:
            return
        for k in range(n):
            st = state[k]
            if st == 2:
                continue
            _, o, d, t, direct, dl = reqs[k]
            if st == 0:
                if load >= capacity:
                    continue
                leg = row[o]
                state[k] = 1
                path.append(("p", k))
                rec(o, max(now + leg, t), cost + leg, load + 1, left - 1)
            else:
                leg = row[d]
                state[k] = 2
                path.append(("d", k))
                rec(d, now + leg, cost + leg, load - 1, left - 1)
                state[k] = 1
                path.pop()
                continue
            state[k] = 0
            path.pop()

    rec(start, 0, 0, 0, 2 * n)
    if best_path is None:
        return None
    return best_cost, best_path


def _request_tuples(instance: Instance, rids):
    idx = instance.matrix.index
    out = []
    for rid in rids:
        r = instance.request(rid)
        out.append((r.id, idx[r.origin], idx[r.destination], r.time, r.direct, instance.deadline(r)))
    return out


def _to_stops(instance, reqs, path):
    out = []
    for kind, k in path:
        r = instance.request(reqs[k][0])
        out.append(Stop.pickup(r) if kind == "p" else Stop.dropoff(r))
    return tuple(out)


def best_route_for_group(vehicle: Vehicle, group, instance: Instance,
                         cap: int = DEFAULT_GROUP_CAP) -> Optional[tuple[tuple[Stop, ...], int]]:
    """Cheapest feasible stop sequence serving exactly ``group`` with ``vehicle``.

    Returns ``(stops, cost)``, or ``None`` if no order is feasible.
    """
    rids = sorted(group)
    if len(rids) > cap:
        raise ValueError(f"group of {len(rids)} requests exceeds the cap of {cap}")
    reqs = _request_tuples(instance, rids)
    found = _search(instance.rows, instance.matrix.index[vehicle.start], vehicle.capacity, reqs, instance.max_delay)
    if found is None:
        return None
    cost, path = found
    return _to_stops(instance, reqs, path), cost


# --- group enumeration ------------------------------------------------------

def shareable_pairs(instance: Instance) -> set[tuple[int, int]]:
    """Request pairs ``(a, b)``, ``a < b``, that some vehicle could serve together.

    Uses an idealised vehicle standing at either origin at time 0, which is
    at least as good as any real vehicle.
    """
    rows = instance.rows
    cap = max((v.capacity for v in instance.vehicles), default=1)
    tuples = {rid: tup for rid, tup in zip([r.id for r in instance.requests],
                                           _request_tuples(instance, [r.id for r in instance.requests]))}
    rids = sorted(tuples)
    pairs = set()
    for i, a in enumerate(rids):
        ta = tuples[a]
        for b in rids[i + 1:]:
            tb = tuples[b]
            for start in (ta[1], tb[1]):
                if _search(rows, start, cap, [ta, tb], instance.max_delay) is not None:
                    pairs.add((a, b))
                    break
    return pairs


def _vehicle_groups(instance, vehicle, pairs, cap, deadline):
    rows = instance.rows
    idx = instance.matrix.index
    start = idx[vehicle.start]
    found: list[VehicleGroup] = [VehicleGroup(vehicle.id, (), (), 0)]
    level: dict[tuple[int, ...], VehicleGroup] = {}
    for r in instance.requests:
        # a lone request is feasible iff the vehicle reaches its origin by t + max delay
        if rows[start][idx[r.origin]] <= r.time + instance.max_delay:
            leg = rows[start][idx[r.origin]]
            g = VehicleGroup(vehicle.id, (r.id,), (Stop.pickup(r), Stop.dropoff(r)), leg + r.direct)
            level[(r.id,)] = g
    found += [level[k] for k in sorted(level)]
    size = 1
    tuples = dict(zip([r.id for r in instance.requests], _request_tuples(instance, [r.id for r in instance.requests])))
    while level and size < cap:
        if deadline is not None and time.monotonic() > deadline:
            raise SolverTimeout("time limit reached while enumerating groups")
        buckets: dict[tuple[int, ...], list[int]] = {}
        for key in sorted(level):
            buckets.setdefault(key[:-1], []).append(key[-1])
        nxt: dict[tuple[int, ...], VehicleGroup] = {}
        checks = 0
        for prefix, tails in buckets.items():
            for i, a in enumerate(tails):
                for b in tails[i + 1:]:
                    if (a, b) not in pairs:
                        continue
                    cand = prefix + (a, b)
                    if any(cand[:k] + cand[k + 1:] not in level for k in range(len(prefix))):
                        continue
                    checks += 1
                    if deadline is not None and checks % 64 == 0 and time.monotonic() > deadline:
                        raise SolverTimeout("time limit reached while enumerating groups")
                    reqs = [tuples[x] for x in cand]
                    res = _search(rows, start, vehicle.capacity, reqs, instance.max_delay)
                    if res is not None:
                        cost, path = res
                        nxt[cand] = VehicleGroup(vehicle.id, cand, _to_stops(instance, reqs, path), cost)
        level = nxt
        size += 1
        found += [level[k] for k in sorted(level)]
    return found, bool(level) and size == cap


def _vehicle_groups_job(args):
    return _vehicle_groups(*args)


def generate_groups(instance: Instance, group_cap: int = DEFAULT_GROUP_CAP, *,
                    time_limit: Optional[float] = None, threads: int = 1) -> AssignmentProblem:
    """Enumerate every feasible (vehicle, group) pair up to ``group_cap`` requests."""
    deadline = None if time_limit is None else time.monotonic() + time_limit
    pairs = shareable_pairs(instance) if group_cap > 1 else set()
    if deadline is not None and time.monotonic() > deadline:
        raise SolverTimeout("time limit reached while computing shareable pairs")
    vehicles = sorted(instance.vehicles, key=lambda v: v.id)
    jobs = [(instance, v, pairs, group_cap, deadline) for v in vehicles]
    if threads > 1 and len(vehicles) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_vehicle_groups_job, jobs))
    else:
        results = [_vehicle_groups(*job) for job in jobs]
    groups = [g for found, _ in results for g in found]
    binding = any(b for _, b in results)
    if binding:
        log.info("group cap %d binds; optimality is relative to the cap", group_cap)
    return AssignmentProblem(instance, groups, [r.id for r in instance.requests],
                             [v.id for v in vehicles], group_cap, binding)


# --- set partitioning -------------------------------------------------------

@dataclass
class BackendResult:
    selected: Optional[list[int]]
    objective: Optional[float]
    optimal: bool
    nodes: int = 0


class ExactBackend(Protocol):
    """Solves ``min c x  s.t.  A x = 1, x binary``."""

    def solve(self, costs: np.ndarray, a_eq: csr_matrix, time_limit: Optional[float],
              incumbent: Optional[list[int]] = None) -> BackendResult: ...


def _lp(costs, a_csc, upper):
    """LP relaxation restricted to columns whose upper bound is 1.

    Returns ``(bound, x, reduced_costs)`` over all columns, or ``None`` when
    infeasible.  Reduced costs of excluded columns are reported as ``inf``.
    """
    cols = np.flatnonzero(upper > 0)
    n_rows = a_csc.shape[0]
    if cols.size == 0:
        return None
    sub = a_csc[:, cols]
    if np.bincount(sub.indices, minlength=n_rows).min() == 0:
        return None
    res = linprog(costs[cols], A_eq=sub, b_eq=np.ones(n_rows), bounds=(0, 1), method="highs")
    if res.status != 0:
        return None
    x = np.zeros(len(costs))
    x[cols] = res.x
    reduced = np.full(len(costs), np.inf)
    reduced[cols] = costs[cols] - sub.T @ res.eqlin.marginals
    return res.fun, x, reduced


@dataclass
class BranchAndBound:
    """Best-bound branch and bound over LP relaxations.

    ``branching="pair"`` (default) branches on the pair of rows whose joint
    coverage is most fractional: one child forces the two rows into the same
    column, the other forbids it.  With a vehicle row and a request row this
    reads "request r rides with vehicle v" or not.  ``branching="variable"``
    branches on the most fractional column instead.

    An LP-guided dive supplies an early incumbent, and reduced-cost fixing
    drops columns that cannot appear in an improving solution.  Costs are
    assumed integral, so a node is pruned once its rounded-up bound cannot
    beat the incumbent.
    """

    max_nodes: Optional[int] = None
    branching: str = "pair"
    dive: bool = True
    nodes: int = field(default=0, init=False)

    def solve(self, costs, a_eq, time_limit=None, incumbent=None):
        if self.branching not in ("pair", "variable"):
            raise ValueError(f"unknown branching rule {self.branching!r}")
        started = time.monotonic()
        a_csr = csr_matrix(a_eq)
        a_csc = a_csr.tocsc()
        costs = np.asarray(costs, dtype=float)
        n = len(costs)
        self.nodes = 0
        best_sel = sorted(incumbent) if incumbent is not None else None
        best_obj = float(sum(costs[i] for i in best_sel)) if best_sel is not None else math.inf

        def out_of_time():
            return ((time_limit is not None and time.monotonic() - started > time_limit)
                    or (self.max_nodes is not None and self.nodes >= self.max_nodes))

        def result(optimal):
            return BackendResult(best_sel, None if best_sel is None else best_obj, optimal, self.nodes)

        def rows_of(j):
            return a_csc.indices[a_csc.indptr[j]:a_csc.indptr[j + 1]]

        def cols_of(r):
            return a_csr.indices[a_csr.indptr[r]:a_csr.indptr[r + 1]]

        def fix_one(upper, j):
            upper = upper.copy()
            for r in rows_of(j):
                upper[cols_of(r)] = 0.0
            upper[j] = 1.0
            return upper

        def zeroed(upper, cols):
            upper = upper.copy()
            upper[cols] = 0.0
            return upper

        def hopeless(bound):
            return math.ceil(bound - _INT_TOL) >= best_obj

        def fractional(x):
            return np.flatnonzero((x > _INT_TOL) & (x < 1 - _INT_TOL))

        def take(x):
            nonlocal best_sel, best_obj
            sel = [int(i) for i in np.flatnonzero(x > 0.5)]
            obj = float(sum(costs[i] for i in sel))
            if obj < best_obj:
                best_sel, best_obj = sel, obj

        def reduce(upper, bound, reduced):
            # columns whose reduced cost alone closes the gap stay at zero in this subtree
            if best_obj < math.inf:
                upper = upper.copy()
                upper[bound + reduced > best_obj - 1 + _INT_TOL] = 0.0
            return upper

        def children(upper, x, frac):
            if self.branching == "pair":
                together: dict[tuple[int, int], float] = {}
                for j in frac:
                    rows = sorted(int(r) for r in rows_of(j))
                    for i, r in enumerate(rows):
                        for s in rows[i + 1:]:
                            together[(r, s)] = together.get((r, s), 0.0) + x[j]
                cand = [(abs(v - 0.5), key) for key, v in together.items() if _INT_TOL < v < 1 - _INT_TOL]
                if cand:
                    _, (r, s) = min(cand)
                    cr, cs = set(cols_of(r).tolist()), set(cols_of(s).tolist())
                    both = sorted(cr & cs)
                    one = sorted(cr ^ cs)
                    return [zeroed(upper, one), zeroed(upper, both)]
            var = int(frac[np.argmin(np.abs(x[frac] - 0.5))])
            return [fix_one(upper, var), zeroed(upper, [var])]

        root_upper = np.ones(n)
        self.nodes += 1
        root = _lp(costs, a_csc, root_upper)
        if root is None:
            return result(best_sel is None)
        bound, x, reduced = root
        if fractional(x).size == 0:
            take(x)
            return result(True)

        if self.dive:
            upper, dx = root_upper, x
            while not out_of_time():
                frac = fractional(dx)
                upper = fix_one(upper, int(frac[np.argmax(dx[frac])]))
                self.nodes += 1
                sol = _lp(costs, a_csc, upper)
                if sol is None or hopeless(sol[0]):
                    break
                dx = sol[1]
                if fractional(dx).size == 0:
                    take(dx)
                    break

        counter = 0
        heap = [(bound, counter, reduce(root_upper, bound, reduced), x)]
        while heap:
            if out_of_time():
                return result(False)
            bound, _, upper, x = heapq.heappop(heap)
            if hopeless(bound):
                continue
            for child in children(upper, x, fractional(x)):
                self.nodes += 1
                sol = _lp(costs, a_csc, child)
                if sol is None or hopeless(sol[0]):
                    continue
                cb, cx, cred = sol
                if fractional(cx).size == 0:
                    take(cx)
                    continue
                counter += 1
                heapq.heappush(heap, (cb, counter, reduce(child, cb, cred), cx))
        return result(True)


@dataclass
class MilpBackend:
    """HiGHS MILP through ``scipy.optimize.milp``."""

    nodes: int = field(default=0, init=False)

    def solve(self, costs, a_eq, time_limit=None, incumbent=None):
        from scipy.optimize import Bounds, LinearConstraint, milp

        options = {} if time_limit is None else {"time_limit": float(time_limit)}
        res = milp(costs, constraints=LinearConstraint(a_eq, 1, 1), integrality=np.ones(len(costs)),
                   bounds=Bounds(0, 1), options=options)
        if res.x is None:
            if incumbent is not None:
                return BackendResult(sorted(incumbent), float(sum(costs[i] for i in incumbent)), False)
            return BackendResult(None, None, res.status == 0)
        sel = [int(i) for i in np.flatnonzero(res.x > 0.5)]
        obj = float(sum(costs[i] for i in sel))
        if incumbent is not None and sum(costs[i] for i in incumbent) < obj:
            return BackendResult(sorted(incumbent), float(sum(costs[i] for i in incumbent)), False)
        return BackendResult(sel, obj, res.status == 0)


BACKENDS = {"bnb": BranchAndBound, "milp": MilpBackend}


def partition_matrix(problem: AssignmentProblem) -> csr_matrix:
    """Rows are requests then vehicles; one column per group."""
    row_of = {rid: i for i, rid in enumerate(problem.requests)}
    off = len(problem.requests)
    row_of_vehicle = {vid: off + i for i, vid in enumerate(problem.vehicles)}
    rows, cols = [], []
    for j, g in enumerate(problem.groups):
        for rid in g.requests:
            rows.append(row_of[rid])
            cols.append(j)
        rows.append(row_of_vehicle[g.vehicle])
        cols.append(j)
    shape = (off + len(problem.vehicles), len(problem.groups))
    return csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)


def solve_assignment(problem: AssignmentProblem, time_limit: Optional[float] = None,
                     backend: Optional[ExactBackend] = None,
                     incumbent: Optional[list[int]] = None) -> Solution:
    """Select one group per vehicle covering each request once, at minimum cost.

    Returns an ``optimal`` solution, or a ``feasible`` one when the time
    limit stops the search with an incumbent.  Raises ``SolverTimeout`` when
    there is no incumbent and ``InfeasibleAssignment`` when no partition
    exists.
    """
    backend = backend or BranchAndBound()
    costs = np.array([g.cost for g in problem.groups], dtype=float)
    started = time.perf_counter()
    res = backend.solve(costs, partition_matrix(problem), time_limit, incumbent)
    elapsed = int((time.perf_counter() - started) * 1000)
    if res.selected is None:
        if res.optimal:
            raise InfeasibleAssignment("no set of groups covers every request exactly once")
        raise SolverTimeout("time limit reached before any assignment was found")
    routes = {}
    for j in res.selected:
        g = problem.groups[j]
        routes[g.vehicle] = Route(g.vehicle, g.stops)
    info = {"cap_binding": str(problem.cap_binding).lower(), "group_cap": str(problem.group_cap),
            "groups": str(len(problem.groups)), "bb_nodes": str(getattr(backend, "nodes", res.nodes))}
    return Solution(problem.instance, routes, method="vga", status="optimal" if res.optimal else "feasible",
                    wall_time_ms=elapsed, info=info)


def _seed_from_ih(problem: AssignmentProblem) -> Optional[list[int]]:
    """Add the insertion-heuristic routes as columns and return them as an incumbent."""
    from .ih import solve_ih

    try:
        ih = solve_ih(problem.instance)
    except InsertionError:
        return None
    where = {(g.vehicle, g.requests): j for j, g in enumerate(problem.groups)}
    chosen = []
    for vid, route in ih.routes.items():
        key = (vid, tuple(sorted(route.requests())))
        if key not in where:
            cost = route_cost(route, problem.instance)
            problem.groups.append(VehicleGroup(vid, key[1], route.stops, cost, seeded=True))
            where[key] = len(problem.groups) - 1
        chosen.append(where[key])
    return chosen


def solve_vga(instance: Instance, time_limit: Optional[float] = None, *, group_cap: int = DEFAULT_GROUP_CAP,
              backend: Optional[ExactBackend] = None, seed_ih: bool = True, threads: int = 1) -> Solution:
    """Generate groups and solve the assignment within ``time_limit`` seconds overall."""
    started = time.monotonic()
    problem = generate_groups(instance, group_cap, time_limit=time_limit, threads=threads)
    incumbent = _seed_from_ih(problem) if seed_ih else None
    remaining = None if time_limit is None else max(0.0, time_limit - (time.monotonic() - started))
    sol = solve_assignment(problem, remaining, backend, incumbent)
    sol.wall_time_ms = int((time.monotonic() - started) * 1000)
    for vid, route in sol.routes.items():
        sched = compute_schedule(instance.vehicle(vid), route.stops, instance)
        if not sched.feasible:
            raise AssertionError(f"group route for vehicle {vid} is infeasible: {sched.violation}")
    return sol
