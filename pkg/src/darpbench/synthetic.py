"""Synthetic city data in the on-disk formats the generator consumes.

Produces a street grid (with mid-block nodes, a few one-way streets and a
detached island), a speed table, square demand zones and zone/interval
obfuscated demand records.  Used for tests, benchmarks and demos.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .instance import DemandRecord, NodeRef, Zone, ZoneRef, write_demand, write_zones
from .roadnet import RoadGraph, SpeedTable, write_graph, write_speeds

START = 1649181600  # 2022-04-05T18:00:00Z


@dataclass
class SyntheticArea:
    graph: RoadGraph
    speeds: SpeedTable
    zones: dict[str, Zone]
    records: list[DemandRecord]
    start: int


def grid_city(size: int = 12, block_m: float = 400.0, rng=None, one_way_share: float = 0.1,
              lat0: float = 38.9, lon0: float = -77.03) -> tuple[RoadGraph, SpeedTable]:
    """A ``size`` x ``size`` grid of intersections with a mid-block node on every street."""
    rng = np.random.default_rng(rng)
    nodes = {}
    deg = block_m / 111_000.0

    def inter(r, c):
        return r * size + c

    for r in range(size):
        for c in range(size):
            nodes[inter(r, c)] = (lat0 + r * deg, lon0 + c * deg)
    next_id = size * size
    edges = []
    speeds = {}
    for r in range(size):
        for c in range(size):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= size or c2 >= size:
                    continue
                a, b = inter(r, c), inter(r2, c2)
                mid = next_id
                next_id += 1
                nodes[mid] = ((nodes[a][0] + nodes[b][0]) / 2, (nodes[a][1] + nodes[b][1]) / 2)
                half = block_m / 2 * float(rng.uniform(0.8, 1.2))
                other = block_m - half
                speed = float(rng.choice([6.0, 8.0, 11.0, 14.0]))
                one_way = rng.random() < one_way_share
                forward = [(a, mid, half), (mid, b, other)]
                backward = [(b, mid, other), (mid, a, half)]
                directions = [forward] if not one_way else [forward if rng.random() < 0.5 else backward]
                if not one_way:
                    directions.append(backward)
                for chain in directions:
                    for u, v, length in chain:
                        edges.append((u, v, length, 10.0))
                        speeds[(u, v)] = speed
    # a small island that the component filter must discard
    island = [next_id, next_id + 1]
    nodes[island[0]] = (lat0 - 0.05, lon0 - 0.05)
    nodes[island[1]] = (lat0 - 0.05, lon0 - 0.049)
    edges.append((island[0], island[1], 100.0, 10.0))
    edges.append((island[1], island[0], 100.0, 10.0))
    return RoadGraph.from_edges(nodes, edges), SpeedTable(9.0, speeds)


def square_zones(size: int, zone_blocks: int = 3) -> dict[str, Zone]:
    zones = {}
    for zr in range(0, size, zone_blocks):
        for zc in range(0, size, zone_blocks):
            members = tuple(sorted(r * size + c
                                   for r in range(zr, min(zr + zone_blocks, size))
                                   for c in range(zc, min(zc + zone_blocks, size))))
            zid = f"{zr // zone_blocks}-{zc // zone_blocks}"
            zones[zid] = Zone(zid, members)
    return zones


def demand_records(zones: dict[str, Zone], n: int, start: int, end: int, rng=None,
                   interval: int = 900, exact_share: float = 0.2) -> list[DemandRecord]:
    """``n`` trips between zones; most carry a pickup interval, some an exact time and node."""
    rng = np.random.default_rng(rng)
    ids = sorted(zones)
    weights = rng.gamma(1.5, 1.0, size=len(ids))
    weights /= weights.sum()
    records = []
    for _ in range(n):
        o, d = rng.choice(len(ids), size=2, p=weights)
        t = int(rng.integers(start, end))
        if rng.random() < exact_share:
            zo, zd = zones[ids[o]], zones[ids[d]]
            on = zo.nodes[int(rng.integers(len(zo.nodes)))]
            dn = zd.nodes[int(rng.integers(len(zd.nodes)))]
            records.append(DemandRecord(NodeRef(on), NodeRef(dn), t))
        else:
            lo = t - t % interval
            records.append(DemandRecord(ZoneRef(ids[o]), ZoneRef(ids[d]), (lo, lo + interval)))
    return records


def synthetic_area(size: int = 12, trips_per_hour: int = 400, hours_before: float = 1.0,
                   hours_after: float = 1.0, seed: int = 0, zone_blocks: int = 3) -> SyntheticArea:
    rng = np.random.default_rng(seed)
    graph, speeds = grid_city(size, rng=rng)
    zones = square_zones(size, zone_blocks)
    lo = START - int(hours_before * 3600)
    hi = START + int(hours_after * 3600)
    n = int(trips_per_hour * (hours_before + hours_after))
    records = demand_records(zones, n, lo, hi, rng=rng)
    return SyntheticArea(graph, speeds, zones, records, START)


def write_area(area: SyntheticArea, directory) -> dict[str, Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"graph": d / "graph.txt", "speeds": d / "speeds.txt",
             "zones": d / "zones.txt", "demand": d / "demand.txt"}
    write_graph(area.graph, paths["graph"])
    write_speeds(area.speeds, paths["speeds"])
    write_zones(area.zones, paths["zones"])
    write_demand(area.records, paths["demand"])
    return paths
