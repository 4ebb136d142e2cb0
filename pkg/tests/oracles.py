"""Slow, independent reference implementations used to check the solvers.

Nothing here imports solver internals; only plain data goes in and out.
"""

from __future__ import annotations

import itertools
import math
import random

from darpbench.core import Route, Stop, compute_schedule, route_cost
from darpbench.instance import Instance, Request, Vehicle
from darpbench.roadnet import RoadGraph, compute_travel_time_matrix

INF = math.inf


# --- shortest paths -----------------------------------------------------------

def bellman_ford(nodes, arcs, source):
    """Single-source shortest times over ``arcs`` given as ``(u, v, time)``."""
    dist = {n: INF for n in nodes}
    dist[source] = 0
    for _ in range(len(nodes) - 1):
        changed = False
        for u, v, t in arcs:
            if dist[u] + t < dist[v]:
                dist[v] = dist[u] + t
                changed = True
        if not changed:
            break
    return dist


def all_pairs(nodes, arcs):
    return {s: bellman_ford(nodes, arcs, s) for s in nodes}


def graph_arcs(graph: RoadGraph):
    return [(e.source, e.target, e.travel_time) for e in graph.edges]


def random_strong_graph(rnd: random.Random, n_core: int, extra: int = 0, chains: int = 0, chain_len: int = 3,
                        two_way_chains: int = 0, specials: bool = True):
    """Strongly connected digraph with integer lengths (speed 1 so time == length).

    The core is a random Hamiltonian cycle plus ``extra`` arcs.  Pass-through
    chains of fresh nodes are spliced in to give contraction work to do.
    Returns ``(nodes, arcs)`` with arcs as ``(u, v, time)``.
    """
    core = list(range(n_core))
    rnd.shuffle(core)
    arcs = [(core[i], core[(i + 1) % n_core], rnd.randint(1, 60)) for i in range(n_core)]
    for _ in range(extra):
        u, v = rnd.sample(range(n_core), 2)
        arcs.append((u, v, rnd.randint(1, 60)))
    next_id = n_core
    for _ in range(chains):
        k = rnd.randrange(len(arcs))
        u, v, _t = arcs.pop(k)
        ids = list(range(next_id, next_id + chain_len))
        next_id += chain_len
        seq = [u] + ids + [v]
        arcs += [(a, b, rnd.randint(1, 30)) for a, b in zip(seq, seq[1:])]
    for _ in range(two_way_chains):
        u, v = rnd.sample(range(n_core), 2)
        ids = list(range(next_id, next_id + chain_len))
        next_id += chain_len
        seq = [u] + ids + [v]
        for a, b in zip(seq, seq[1:]):
            arcs.append((a, b, rnd.randint(1, 30)))
            arcs.append((b, a, rnd.randint(1, 30)))
    if specials and next_id > n_core:
        # a parallel arc and a self-loop on chain nodes exercise the ambiguity rules
        u, v, t = rnd.choice([a for a in arcs if a[0] >= n_core or a[1] >= n_core])
        arcs.append((u, v, t + rnd.randint(0, 5)))
        w = rnd.randrange(n_core, next_id)
        arcs.append((w, w, 3))
    return list(range(next_id)), arcs


def to_graph(nodes, arcs) -> RoadGraph:
    return RoadGraph.from_edges({n: None for n in nodes}, [(u, v, float(t), 1.0) for u, v, t in arcs])


# --- small random instances --------------------------------------------------

def random_instance(seed: int, n_nodes: int = 12, n_requests: int = 5, n_vehicles: int = 2, capacity: int = 4,
                    max_delay: int | None = None, horizon: int = 300) -> Instance:
    rnd = random.Random(seed)
    n_nodes = max(n_nodes, 3)
    nodes, arcs = random_strong_graph(rnd, n_nodes, extra=n_nodes, specials=False)
    for u, v, t in list(arcs):
        if rnd.random() < 0.7:
            arcs.append((v, u, t))
    matrix = compute_travel_time_matrix(to_graph(nodes, arcs))
    ids = matrix.node_ids
    if max_delay is None:
        max_delay = rnd.choice([30, 60, 120, 240])
    reqs = []
    for _ in range(n_requests):
        o, d = rnd.sample(ids, 2)
        reqs.append((rnd.randrange(horizon), o, d))
    reqs.sort()
    requests = [Request(i, o, d, t, int(matrix.times[matrix.index[o], matrix.index[d]]))
                for i, (t, o, d) in enumerate(reqs)]
    vehicles = [Vehicle(i, rnd.choice(ids), capacity) for i in range(n_vehicles)]
    return Instance(requests, vehicles, matrix, max_delay, horizon + 1)


# --- exhaustive DARP ------------------------------------------------------------

def _sequences(reqs):
    """Every stop order over ``reqs`` with each pickup before its dropoff."""
    if not reqs:
        yield ()
        return
    stops = [("p", r) for r in reqs] + [("d", r) for r in reqs]

    def rec(prefix, remaining):
        if not remaining:
            yield tuple(prefix)
            return
        for i, s in enumerate(remaining):
            if s[0] == "d" and ("p", s[1]) not in prefix:
                continue
            yield from rec(prefix + [s], remaining[:i] + remaining[i + 1:])

    yield from rec([], stops)


def plain_schedule(inst: Instance, vehicle: Vehicle, seq):
    """Return the cost of ``seq`` or None when infeasible; independent of the package."""
    tt = inst.tt
    loc, now, cost, load = vehicle.start, 0, 0, 0
    req = {r.id: r for r in inst.requests}
    for kind, rid in seq:
        r = req[rid]
        dest = r.origin if kind == "p" else r.destination
        leg = tt(loc, dest)
        cost += leg
        now += leg
        loc = dest
        if kind == "p":
            now = max(now, r.time)
            load += 1
            if load > vehicle.capacity:
                return None
        else:
            load -= 1
            if now > r.time + r.direct + inst.max_delay:
                return None
    return cost


def best_sequence_unpruned(inst: Instance, vehicle: Vehicle, rids):
    """Cheapest feasible order by enumerating all interleavings with no pruning at all."""
    best = None
    for seq in _sequences(list(rids)):
        c = plain_schedule(inst, vehicle, seq)
        if c is not None and (best is None or c < best[0]):
            best = (c, seq)
    return best


def _best_sequence_dfs(inst, vehicle, rids):
    """Cheapest feasible cost over every order; a prefix is extended only while feasible.

    Identical search states (location, clock, waiting and onboard sets) are
    solved once, which keeps the enumeration exhaustive but affordable.
    """
    req = {r.id: r for r in inst.requests}
    tt = inst.tt
    memo = {}

    def rest(loc, now, waiting, onboard):
        if not waiting and not onboard:
            return 0
        key = (loc, now, waiting, onboard)
        if key in memo:
            return memo[key]
        best = None
        if len(onboard) < vehicle.capacity:
            for rid in waiting:
                r = req[rid]
                leg = tt(loc, r.origin)
                sub = rest(r.origin, max(now + leg, r.time), waiting - {rid}, onboard | {rid})
                if sub is not None and (best is None or leg + sub < best):
                    best = leg + sub
        for rid in onboard:
            r = req[rid]
            leg = tt(loc, r.destination)
            if now + leg > r.time + r.direct + inst.max_delay:
                continue
            sub = rest(r.destination, now + leg, waiting, onboard - {rid})
            if sub is not None and (best is None or leg + sub < best):
                best = leg + sub
        memo[key] = best
        return best

    return rest(vehicle.start, 0, frozenset(rids), frozenset())


def brute_force_darp(inst: Instance):
    """Optimal total cost over all request-to-vehicle assignments and all orders.

    A vehicle's best order for a request subset is memoised; infeasible
    prefixes are abandoned (a violated prefix cannot become feasible).  No
    cost bounds are used.
    Returns None when no full assignment exists.
    """
    rids = [r.id for r in inst.requests]
    vehicles = list(inst.vehicles)
    memo = {}

    def cost_of(vi, subset):
        key = (vi, subset)
        if key not in memo:
            memo[key] = 0 if not subset else _best_sequence_dfs(inst, vehicles[vi], subset)
        return memo[key]

    best = None
    for assign in itertools.product(range(len(vehicles)), repeat=len(rids)):
        total = 0
        for vi in range(len(vehicles)):
            subset = frozenset(r for r, a in zip(rids, assign) if a == vi)
            c = cost_of(vi, subset)
            if c is None:
                total = None
                break
            total += c
            if best is not None and total >= best:
                break
        if total is not None and (best is None or total < best):
            best = total
    return best


# --- reference insertion heuristic ----------------------------------------------

def reference_ih(inst: Instance):
    """Insertion heuristic by full re-evaluation of every candidate through compute_schedule."""
    routes = {v.id: [] for v in inst.vehicles}
    vehicles = sorted(inst.vehicles, key=lambda v: v.id)
    for r in inst.requests:
        best = None
        for v in vehicles:
            cur = routes[v.id]
            base = route_cost(Route(v.id, cur), inst)
            for i in range(len(cur) + 1):
                for j in range(i, len(cur) + 1):
                    cand = cur[:i] + [Stop.pickup(r)] + cur[i:j] + [Stop.dropoff(r)] + cur[j:]
                    if not compute_schedule(v, cand, inst).feasible:
                        continue
                    delta = route_cost(Route(v.id, cand), inst) - base
                    if best is None or delta < best[0]:
                        best = (delta, v.id, cand)
        if best is None:
            return None, r.id
        routes[best[1]] = best[2]
    return routes, None
