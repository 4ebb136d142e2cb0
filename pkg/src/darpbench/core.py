"""Routes, schedules, feasibility, costs and solution files shared by all solvers.

Scheduling rules: a vehicle leaves its start node at time 0, service at a
stop takes no time, a vehicle may wait at a pickup until the desired pickup
time, and waiting is free.  A dropoff must happen no later than
``t + direct + max_delay``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import FormatError
from .instance import Instance, Request, Vehicle, read_instance

PICKUP = "p"
DROPOFF = "d"


@dataclass(frozen=True)
class Stop:
    kind: str
    request: int
    location: int

    @classmethod
    def pickup(cls, r: Request) -> "Stop":
        return cls(PICKUP, r.id, r.origin)

    @classmethod
    def dropoff(cls, r: Request) -> "Stop":
        return cls(DROPOFF, r.id, r.destination)

    def __str__(self):
        return f"{self.kind}:{self.request}"


def stops_for(instance: Instance, tokens) -> list[Stop]:
    """Build stops from ``("p", rid)`` pairs or ``"p:rid"`` strings."""
    out = []
    for tok in tokens:
        kind, rid = tok.split(":") if isinstance(tok, str) else tok
        r = instance.request(int(rid))
        out.append(Stop.pickup(r) if kind == PICKUP else Stop.dropoff(r))
    return out


@dataclass(frozen=True)
class Schedule:
    times: tuple[int, ...]
    violation: Optional[str] = None

    @property
    def feasible(self) -> bool:
        return self.violation is None


def compute_schedule(vehicle: Vehicle, stops, instance: Instance) -> Schedule:
    """Earliest schedule for ``stops`` driven by ``vehicle``.

    The returned schedule carries the first violated constraint, if any.
    Raises ``KeyError`` for unknown requests and ``ValueError`` for repeated
    stops.
    """
    seen = set()
    for s in stops:
        if not instance.has_request(s.request):
            raise KeyError(f"stop {s} references unknown request {s.request}")
        if (s.kind, s.request) in seen:
            raise ValueError(f"duplicate stop {s}")
        seen.add((s.kind, s.request))

    times = []
    violation = None
    loc, now, load = vehicle.start, 0, 0
    onboard = set()
    done = set()
    for s in stops:
        r = instance.request(s.request)
        now += instance.tt(loc, s.location)
        loc = s.location
        if s.kind == PICKUP:
            now = max(now, r.time)
            load += 1
            onboard.add(r.id)
            if violation is None and load > vehicle.capacity:
                violation = f"capacity {vehicle.capacity} exceeded at pickup of request {r.id}"
        else:
            if r.id not in onboard:
                if violation is None:
                    violation = f"request {r.id} dropped off before pickup"
            else:
                onboard.discard(r.id)
                load -= 1
            done.add(r.id)
            if violation is None and now > instance.deadline(r):
                violation = f"request {r.id} dropped off at {now} after deadline {instance.deadline(r)}"
        times.append(now)
    if violation is None and onboard:
        violation = f"request {min(onboard)} picked up but never dropped off"
    return Schedule(tuple(times), violation)


@dataclass
class Route:
    vehicle: int
    stops: tuple[Stop, ...] = ()

    def __post_init__(self):
        self.stops = tuple(self.stops)

    def requests(self) -> list[int]:
        return [s.request for s in self.stops if s.kind == PICKUP]


def route_cost(route: Route, instance: Instance) -> int:
    """Vehicle travel time of ``route`` in seconds (waiting is free)."""
    loc = instance.vehicle(route.vehicle).start
    cost = 0
    for s in route.stops:
        cost += instance.tt(loc, s.location)
        loc = s.location
    return cost


@dataclass
class Solution:
    instance: Instance
    routes: dict[int, Route]
    method: str = ""
    status: str = "feasible"
    wall_time_ms: int = 0
    cost: Optional[int] = None
    info: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for v in self.instance.vehicles:
            self.routes.setdefault(v.id, Route(v.id))
        self.routes = dict(sorted(self.routes.items()))
        if self.cost is None:
            self.cost = sum(route_cost(r, self.instance) for r in self.routes.values())


def validate_solution(solution: Solution) -> list[str]:
    """All violations found in ``solution``; an empty list means it is valid.

    This recomputes schedules on its own rather than trusting
    ``compute_schedule`` so it can serve as an independent check.
    """
    inst = solution.instance
    problems = []
    vehicles = {v.id: v for v in inst.vehicles}
    served: dict[int, int] = {}
    total = 0
    for vid, route in solution.routes.items():
        if vid != route.vehicle:
            problems.append(f"route keyed {vid} belongs to vehicle {route.vehicle}")
        if vid not in vehicles:
            problems.append(f"route for unknown vehicle {vid}")
            continue
        veh = vehicles[vid]
        loc, now, load = veh.start, 0, 0
        picked: dict[int, int] = {}
        dropped: set[int] = set()
        for pos, s in enumerate(route.stops):
            if not inst.has_request(s.request):
                problems.append(f"vehicle {vid}: stop {pos} references unknown request {s.request}")
                continue
            r = inst.request(s.request)
            expected = r.origin if s.kind == PICKUP else r.destination
            if s.location != expected:
                problems.append(f"vehicle {vid}: stop {s} at node {s.location}, expected {expected}")
            leg = inst.tt(loc, s.location)
            total += leg
            now += leg
            loc = s.location
            if s.kind == PICKUP:
                if r.id in picked:
                    problems.append(f"request {r.id} picked up twice by vehicle {vid}")
                now = max(now, r.time)
                picked[r.id] = now
                if now < r.time:
                    problems.append(f"request {r.id} picked up before its desired time")
                if now > r.time + inst.max_delay:
                    problems.append(f"request {r.id} picked up at {now}, later than t + max delay = {r.time + inst.max_delay}")
                load += 1
                if load > veh.capacity:
                    problems.append(f"vehicle {vid}: load {load} exceeds capacity {veh.capacity} at stop {pos}")
                if r.id in served and served[r.id] != vid:
                    problems.append(f"request {r.id} served by vehicles {served[r.id]} and {vid}")
                served.setdefault(r.id, vid)
            else:
                if r.id in dropped:
                    problems.append(f"request {r.id} dropped off twice by vehicle {vid}")
                if r.id not in picked:
                    problems.append(f"request {r.id}: dropoff precedes pickup on vehicle {vid}")
                else:
                    load -= 1
                dropped.add(r.id)
                limit = r.time + r.direct + inst.max_delay
                if now > limit:
                    problems.append(f"request {r.id} dropped off at {now}, after deadline {limit}")
        for rid in sorted(set(picked) - dropped):
            problems.append(f"request {rid} picked up by vehicle {vid} but never dropped off")
    for r in inst.requests:
        if r.id not in served:
            problems.append(f"request {r.id} unserved")
    if solution.cost != total:
        problems.append(f"recorded cost {solution.cost} differs from route costs {total}")
    return problems


def occupancy_histogram(solution: Solution) -> dict[int, int]:
    """Seconds driven at each onboard-passenger count, from 0 up to the largest capacity."""
    inst = solution.instance
    top = max((v.capacity for v in inst.vehicles), default=0)
    hist = {level: 0 for level in range(top + 1)}
    for route in solution.routes.values():
        loc = inst.vehicle(route.vehicle).start
        load = 0
        for s in route.stops:
            hist[load] = hist.get(load, 0) + inst.tt(loc, s.location)
            loc = s.location
            load += 1 if s.kind == PICKUP else -1
    return hist


# --- solution files ---------------------------------------------------------

def format_solution(solution: Solution, instance_path: str = "") -> str:
    out = ["[solution]",
           f"instance = {instance_path}",
           f"method = {solution.method}",
           f"status = {solution.status}",
           f"total_cost_s = {solution.cost}",
           f"wall_time_ms = {solution.wall_time_ms}"]
    out += [f"{k} = {v}" for k, v in sorted(solution.info.items())]
    for vid, route in solution.routes.items():
        out.append(" ".join([f"route {vid}"] + [str(s) for s in route.stops]))
    return "\n".join(out) + "\n"


def write_solution(solution: Solution, path, instance_path: str = "") -> None:
    Path(path).write_text(format_solution(solution, instance_path), encoding="utf-8")


def read_solution(path, instance: Instance | None = None) -> Solution:
    """Load a solution; the instance is read from the recorded path unless given."""
    path = Path(path)
    header: dict[str, str] = {}
    route_lines = []
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != "[solution]":
        raise FormatError(f"{path}: missing [solution] header")
    for ln in lines[1:]:
        if ln.startswith("route "):
            route_lines.append(ln.split()[1:])
        else:
            key, sep, val = ln.partition("=")
            if not sep:
                raise FormatError(f"{path}: malformed line {ln!r}")
            header[key.strip()] = val.strip()
    if instance is None:
        ipath = Path(header.get("instance", ""))
        if not ipath.is_absolute():
            ipath = path.parent / ipath
        instance = read_instance(ipath)
    routes = {}
    try:
        for tokens in route_lines:
            vid = int(tokens[0])
            stops = []
            for tok in tokens[1:]:
                kind, _, rid = tok.partition(":")
                if kind not in (PICKUP, DROPOFF):
                    raise FormatError(f"{path}: bad stop {tok!r}")
                r = instance.request(int(rid))
                stops.append(Stop.pickup(r) if kind == PICKUP else Stop.dropoff(r))
            if vid in routes:
                raise FormatError(f"{path}: vehicle {vid} has two routes")
            routes[vid] = Route(vid, tuple(stops))
        cost = int(header["total_cost_s"]) if header.get("total_cost_s", "") not in ("", "None") else None
        wall = int(header.get("wall_time_ms", 0))
    except (KeyError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from None
    known = {"instance", "method", "status", "total_cost_s", "wall_time_ms"}
    info = {k: v for k, v in header.items() if k not in known}
    return Solution(instance, routes, header.get("method", ""), header.get("status", "feasible"), wall, cost, info)
