"""DARP instances: data model, demand/vehicle sampling, fleet sizing and file I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np

from .errors import FleetSizingError, FormatError
from .roadnet import TravelTimeMatrix, read_matrix

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_RESAMPLES = 100


@dataclass(frozen=True)
class Zone:
    zone_id: str
    nodes: tuple[int, ...]

    def __post_init__(self):
        if not self.nodes:
            raise ValueError(f"zone {self.zone_id} has no nodes")


@dataclass(frozen=True)
class NodeRef:
    node: int


@dataclass(frozen=True)
class ZoneRef:
    zone: str


Place = Union[NodeRef, ZoneRef]


@dataclass(frozen=True)
class DemandRecord:
    """One (possibly obfuscated) trip from a demand dataset.

    ``time`` is either an exact timestamp in seconds or a half-open
    ``(start, end)`` interval.
    """

    origin: Place
    destination: Place
    time: Union[int, tuple[int, int]]

    def __post_init__(self):
        if isinstance(self.time, tuple) and not self.time[0] < self.time[1]:
            raise ValueError(f"empty pickup interval {self.time}")


@dataclass(frozen=True)
class Request:
    id: int
    origin: int
    destination: int
    time: int
    direct: int


@dataclass(frozen=True)
class Vehicle:
    id: int
    start: int
    capacity: int

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"vehicle {self.id}: capacity must be >= 1")


@dataclass
class Instance:
    requests: list[Request]
    vehicles: list[Vehicle]
    matrix: TravelTimeMatrix
    max_delay: int
    duration: int
    area: str = "synthetic"
    epoch: str = "1970-01-01T00:00:00+00:00"
    seed: int = 0
    matrix_file: str = ""
    _by_id: dict[int, Request] = field(init=False, repr=False, compare=False)
    _vehicles: dict[int, Vehicle] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.max_delay <= 0:
            raise ValueError("max delay must be positive")
        times = [r.time for r in self.requests]
        if times != sorted(times):
            raise ValueError("requests must be sorted by desired pickup time")
        self._by_id = {r.id: r for r in self.requests}
        if len(self._by_id) != len(self.requests):
            raise ValueError("duplicate request ids")
        self._vehicles = {v.id: v for v in self.vehicles}
        if len(self._vehicles) != len(self.vehicles):
            raise ValueError("duplicate vehicle ids")
        for r in self.requests:
            for node in (r.origin, r.destination):
                if node not in self.matrix:
                    raise ValueError(f"request {r.id}: node {node} not in the travel-time matrix")
            if r.origin == r.destination:
                raise ValueError(f"request {r.id}: origin equals destination")
            if r.direct != self.tt(r.origin, r.destination):
                raise ValueError(f"request {r.id}: direct travel time does not match the matrix")
        for v in self.vehicles:
            if v.start not in self.matrix:
                raise ValueError(f"vehicle {v.id}: start node {v.start} not in the travel-time matrix")

    def request(self, rid: int) -> Request:
        return self._by_id[rid]

    def has_request(self, rid: int) -> bool:
        return rid in self._by_id

    def vehicle(self, vid: int) -> Vehicle:
        try:
            return self._vehicles[vid]
        except KeyError:
            raise KeyError(f"unknown vehicle {vid}") from None

    @cached_property
    def rows(self) -> list[list[int]]:
        return self.matrix.rows()

    def tt(self, a: int, b: int) -> int:
        idx = self.matrix.index
        return self.rows[idx[a]][idx[b]]

    def deadline(self, r: Request) -> int:
        """Latest dropoff time for ``r``."""
        return r.time + r.direct + self.max_delay

    def with_changes(self, **changes) -> "Instance":
        """Copy with some fields replaced; shares the matrix."""
        kw = {k: getattr(self, k) for k in
              ("requests", "vehicles", "matrix", "max_delay", "duration", "area", "epoch", "seed", "matrix_file")}
        kw.update(changes)
        if "max_delay" in changes and "requests" not in changes:
            kw["requests"] = list(self.requests)
        inst = Instance(**kw)
        if "rows" in self.__dict__ and kw["matrix"] is self.matrix:
            inst.__dict__["rows"] = self.rows
        return inst


# --- sampling ---------------------------------------------------------------

def sample_location(zone: Zone, rng: np.random.Generator) -> int:
    if not zone.nodes:
        raise ValueError(f"zone {zone.zone_id} is empty")
    return zone.nodes[int(rng.integers(len(zone.nodes)))]


def sample_time(interval: tuple[int, int], rng: np.random.Generator) -> int:
    start, end = interval
    if not start < end:
        raise ValueError(f"empty interval [{start}, {end})")
    return int(rng.integers(start, end))


def _record_time(rec: DemandRecord, rng) -> int:
    if isinstance(rec.time, tuple):
        return sample_time(rec.time, rng)
    return int(rec.time)


def _resolve(place: Place, zones: dict[str, Zone], rng) -> int:
    if isinstance(place, NodeRef):
        return place.node
    try:
        zone = zones[place.zone]
    except KeyError:
        raise KeyError(f"unknown zone {place.zone!r}") from None
    return sample_location(zone, rng)


def _overlaps(time, start, end) -> bool:
    if isinstance(time, tuple):
        return time[0] < end and start < time[1]
    return start <= time < end


def generate_demand(records, zones: dict[str, Zone], matrix: TravelTimeMatrix,
                    window: tuple[int, int], rng: np.random.Generator) -> list[Request]:
    """Turn demand records into requests for the half-open time ``window``.

    Pickup times are rebased so that ``window[0]`` becomes 0.
    """
    start, end = window
    trips = []
    for k, rec in enumerate(records):
        for place in (rec.origin, rec.destination):
            if isinstance(place, ZoneRef) and place.zone not in zones:
                raise KeyError(f"record {k}: unknown zone {place.zone!r}")
        if not _overlaps(rec.time, start, end):
            continue
        t = _record_time(rec, rng)
        if not start <= t < end:
            continue
        o, d = _resolve(rec.origin, zones, rng), _resolve(rec.destination, zones, rng)
        tries = 0
        while o == d and tries < MAX_RESAMPLES and (isinstance(rec.origin, ZoneRef) or isinstance(rec.destination, ZoneRef)):
            o, d = _resolve(rec.origin, zones, rng), _resolve(rec.destination, zones, rng)
            tries += 1
        if o == d:
            log.warning("dropping record %d: origin and destination coincide (node %d)", k, o)
            continue
        if o not in matrix or d not in matrix:
            log.warning("dropping record %d: node outside the processed road network", k)
            continue
        trips.append((t - start, k, o, d))
    trips.sort()
    return [Request(i, o, d, t, int(matrix.times[matrix.index[o], matrix.index[d]]))
            for i, (t, _, o, d) in enumerate(trips)]


def generate_vehicles(prior_records, zones: dict[str, Zone], epoch: int, lookback: int, count: int,
                      capacity: int, rng: np.random.Generator, *, matrix: TravelTimeMatrix | None = None,
                      start_at: str = "origin") -> list[Vehicle]:
    """Place ``count`` vehicles where trips started during ``[epoch - lookback, epoch)``.

    Records are drawn without replacement when there are enough of them.
    ``start_at="destination"`` uses trip ends instead of trip starts.
    """
    if count < 1:
        raise ValueError("vehicle count must be >= 1")
    if start_at not in ("origin", "destination"):
        raise ValueError(f"start_at must be 'origin' or 'destination', not {start_at!r}")
    lo, hi = epoch - lookback, epoch
    prior = []
    for rec in prior_records:
        if not _overlaps(rec.time, lo, hi):
            continue
        if not lo <= _record_time(rec, rng) < hi:
            continue
        place = rec.origin if start_at == "origin" else rec.destination
        if matrix is not None and isinstance(place, NodeRef) and place.node not in matrix:
            continue
        prior.append(rec)
    if not prior:
        raise ValueError("no demand records in the lookback window")
    picks = rng.choice(len(prior), size=count, replace=len(prior) < count)
    vehicles = []
    for vid, k in enumerate(picks):
        rec = prior[int(k)]
        node = _resolve(rec.origin if start_at == "origin" else rec.destination, zones, rng)
        vehicles.append(Vehicle(vid, node, capacity))
    return vehicles


# --- fleet sizing -----------------------------------------------------------

def buffered_fleet(k: int) -> int:
    """``ceil(1.05 k)`` in exact integer arithmetic."""
    return (105 * k + 99) // 100


def _probe(demand, starts, matrix, max_delay, capacity, stop_early=True) -> list[int]:
    from .ih import insert_all

    inst = Instance(list(demand), [Vehicle(i, s, capacity) for i, s in enumerate(starts)],
                    matrix, max_delay, duration=max(r.time for r in demand) + 1)
    _, unserved = insert_all(inst, stop_early=stop_early)
    return unserved


def minimal_fleet(demand, ordered_starts, matrix, max_delay, capacity) -> int:
    """Smallest ``k`` for which the insertion heuristic serves all of ``demand``
    with vehicles at ``ordered_starts[:k]`` (binary search)."""
    if not demand:
        raise ValueError("demand is empty")
    if not ordered_starts:
        raise ValueError("candidate pool is empty")
    unserved = _probe(demand, ordered_starts, matrix, max_delay, capacity, stop_early=False)
    if unserved:
        raise FleetSizingError(unserved)
    lo, hi = 0, len(ordered_starts)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _probe(demand, ordered_starts[:mid], matrix, max_delay, capacity):
            lo = mid
        else:
            hi = mid
    return hi


def size_fleet(demand, candidate_starts, matrix, max_delay, capacity, rng=None) -> int:
    """Fleet size: minimal IH-feasible fleet plus a 5% buffer, rounded up.

    With an ``rng`` the candidates are shuffled once before the search;
    without one they are used in the given order.
    """
    starts = list(candidate_starts)
    if rng is not None:
        starts = [starts[int(i)] for i in rng.permutation(len(starts))]
    return buffered_fleet(minimal_fleet(demand, starts, matrix, max_delay, capacity))


# --- text formats -----------------------------------------------------------

def _parse_place(tok: str) -> Place:
    kind, _, val = tok.partition(":")
    if kind == "n":
        return NodeRef(int(val))
    if kind == "z":
        return ZoneRef(val)
    raise FormatError(f"malformed place {tok!r}")


def _parse_time(tok: str):
    kind, _, val = tok.partition(":")
    if kind == "t":
        return int(val)
    if kind == "i":
        a, _, b = val.partition("-")
        return (int(a), int(b))
    raise FormatError(f"malformed time {tok!r}")


def _fmt_place(p: Place) -> str:
    return f"n:{p.node}" if isinstance(p, NodeRef) else f"z:{p.zone}"


def _fmt_time(t) -> str:
    return f"i:{t[0]}-{t[1]}" if isinstance(t, tuple) else f"t:{t}"


def _content_lines(path):
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        tokens = line.split()
        if tokens and not tokens[0].startswith("#"):
            yield i, tokens


def load_zones(path) -> dict[str, Zone]:
    zones = {}
    for i, tokens in _content_lines(path):
        if tokens[0] != "zone" or len(tokens) < 3:
            raise FormatError(f"{path}:{i}: expected 'zone <zone_id> <node_id> ...'")
        try:
            zones[tokens[1]] = Zone(tokens[1], tuple(sorted({int(t) for t in tokens[2:]})))
        except ValueError:
            raise FormatError(f"{path}:{i}: bad node id") from None
    return zones


def write_zones(zones: dict[str, Zone], path) -> None:
    lines = [f"zone {z.zone_id} " + " ".join(map(str, z.nodes)) for z in zones.values()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def restrict_zones(zones: dict[str, Zone], matrix: TravelTimeMatrix) -> dict[str, Zone]:
    """Drop zone nodes that did not survive road-network processing."""
    out = {}
    for zid, z in zones.items():
        nodes = tuple(n for n in z.nodes if n in matrix)
        if nodes:
            out[zid] = Zone(zid, nodes)
        else:
            log.warning("zone %s has no nodes left in the processed road network", zid)
    return out


def load_demand(path) -> list[DemandRecord]:
    records = []
    for i, tokens in _content_lines(path):
        if tokens[0] != "record" or len(tokens) != 4:
            raise FormatError(f"{path}:{i}: expected 'record <origin> <destination> <time>'")
        try:
            records.append(DemandRecord(_parse_place(tokens[1]), _parse_place(tokens[2]), _parse_time(tokens[3])))
        except ValueError as exc:
            raise FormatError(f"{path}:{i}: {exc}") from None
    return records


def write_demand(records, path) -> None:
    lines = [f"record {_fmt_place(r.origin)} {_fmt_place(r.destination)} {_fmt_time(r.time)}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_timestamp(value: str) -> int:
    """Seconds since the Unix epoch from an integer or an ISO-8601 string (UTC if naive)."""
    try:
        return int(value)
    except ValueError:
        pass
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def iso_timestamp(seconds: int) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).isoformat()


def format_instance(inst: Instance) -> str:
    out = ["[config]",
           f"format_version = {FORMAT_VERSION}",
           f"area = {inst.area}",
           f"epoch = {inst.epoch}",
           f"duration_s = {inst.duration}",
           f"max_delay_s = {inst.max_delay}",
           f"seed = {inst.seed}",
           f"matrix_file = {inst.matrix_file}",
           "",
           "[vehicles]"]
    out += [f"vehicle {v.id} {v.start} {v.capacity}" for v in inst.vehicles]
    out += ["", "[requests]"]
    out += [f"request {r.id} {r.origin} {r.destination} {r.time}" for r in inst.requests]
    return "\n".join(out) + "\n"


def write_instance(inst: Instance, path) -> None:
    Path(path).write_text(format_instance(inst), encoding="utf-8")


def read_instance(path, matrix: TravelTimeMatrix | None = None) -> Instance:
    """Load an instance; the matrix is read from ``matrix_file`` (relative to
    the instance file) unless given."""
    path = Path(path)
    config: dict[str, str] = {}
    vehicles: list[Vehicle] = []
    raw_requests: list[tuple[int, int, int, int]] = []
    section = None
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            if section not in ("config", "vehicles", "requests"):
                raise FormatError(f"{path}:{i}: unknown section [{section}]")
            continue
        try:
            if section == "config":
                key, sep, val = line.partition("=")
                if not sep:
                    raise FormatError(f"{path}:{i}: expected 'key = value'")
                config[key.strip()] = val.strip()
            elif section == "vehicles":
                tag, vid, start, cap = line.split()
                if tag != "vehicle":
                    raise ValueError
                vehicles.append(Vehicle(int(vid), int(start), int(cap)))
            elif section == "requests":
                tag, rid, o, d, t = line.split()
                if tag != "request":
                    raise ValueError
                raw_requests.append((int(rid), int(o), int(d), int(t)))
            else:
                raise FormatError(f"{path}:{i}: content outside a section")
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"{path}:{i}: malformed line {line!r}") from None
    version = config.get("format_version")
    if version != str(FORMAT_VERSION):
        raise FormatError(f"{path}: unsupported format version {version!r}")
    for key in ("duration_s", "max_delay_s", "matrix_file"):
        if key not in config:
            raise FormatError(f"{path}: missing config key {key}")
    if matrix is None:
        matrix = read_matrix(path.parent / config["matrix_file"])
    times = [t for _, _, _, t in raw_requests]
    if times != sorted(times):
        raise FormatError(f"{path}: requests are not sorted by pickup time")
    requests = []
    for rid, o, d, t in raw_requests:
        if o not in matrix or d not in matrix:
            raise FormatError(f"{path}: request {rid} references a node absent from the matrix")
        requests.append(Request(rid, o, d, t, int(matrix.times[matrix.index[o], matrix.index[d]])))
    for v in vehicles:
        if v.start not in matrix:
            raise FormatError(f"{path}: vehicle {v.id} starts at a node absent from the matrix")
    duration = int(config["duration_s"])
    if any(not 0 <= t < duration for t in times):
        raise FormatError(f"{path}: request time outside [0, duration)")
    try:
        return Instance(requests, vehicles, matrix, int(config["max_delay_s"]), duration,
                        area=config.get("area", ""), epoch=config.get("epoch", ""),
                        seed=int(config.get("seed", 0)), matrix_file=config["matrix_file"])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _uses_zone(rec: DemandRecord, zone_ids) -> bool:
    return any(isinstance(p, ZoneRef) and p.zone in zone_ids for p in (rec.origin, rec.destination))


def build_instance(matrix: TravelTimeMatrix, zones: dict[str, Zone], records, start: int, duration: int,
                   max_delay: int, lookback: int, seed: int, *, capacity: int = 4, area: str = "synthetic",
                   matrix_file: str = "", fleet_size: int | None = None, start_at: str = "origin") -> Instance:
    """Sample demand and vehicles for ``[start, start + duration)`` and size the fleet.

    All randomness comes from ``seed``.  Vehicles are the first entries of a
    shuffled candidate pool, so the sized fleet contains the fleet the
    insertion heuristic was checked with.
    """
    rng = np.random.default_rng(seed)
    usable = restrict_zones(zones, matrix)
    emptied = set(zones) - set(usable)
    if emptied:
        kept = [r for r in records if not _uses_zone(r, emptied)]
        log.warning("dropping %d demand records that reference zones with no network nodes",
                    len(records) - len(kept))
        records = kept
    zones = usable
    requests = generate_demand(records, zones, matrix, (start, start + duration), rng)
    if not requests:
        raise ValueError("no demand falls inside the instance window")
    pool_size = 2 * len(requests) + 1 if fleet_size is None else fleet_size
    pool = generate_vehicles(records, zones, start, lookback, pool_size, capacity, rng,
                             matrix=matrix, start_at=start_at)
    starts = [pool[int(i)].start for i in rng.permutation(len(pool))]
    if fleet_size is None:
        fleet_size = size_fleet(requests, starts, matrix, max_delay, capacity)
    while len(starts) < fleet_size:
        starts.append(starts[int(rng.integers(len(starts)))])
    vehicles = [Vehicle(i, s, capacity) for i, s in enumerate(starts[:fleet_size])]
    return Instance(requests, vehicles, matrix, max_delay, duration, area=area, epoch=iso_timestamp(start),
                    seed=seed, matrix_file=matrix_file)
