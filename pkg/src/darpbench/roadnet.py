"""Road network processing and the travel-time matrix.

The pipeline is ``load_graph -> assign_speeds -> contract_degree2 ->
filter_largest_scc -> compute_travel_time_matrix``.  Travel times are whole
seconds everywhere.
"""

from __future__ import annotations

import logging
import math
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import FormatError

log = logging.getLogger(__name__)

MATRIX_MAGIC = b"DTTM"

Coord = Optional[tuple[float, float]]


def edge_travel_time(length: float, speed: float) -> int:
    """Seconds needed to drive ``length`` meters at ``speed`` m/s, rounded up."""
    return max(1, math.ceil(length / speed))


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    length: float
    speed: float
    travel_time: int


@dataclass
class RoadGraph:
    """Directed road graph.

    ``nodes`` maps node id to optional ``(lat, lon)``.  Parallel edges and
    self-loops are allowed in the input.
    """

    nodes: dict[int, Coord]
    edges: list[Edge] = field(default_factory=list)

    def __post_init__(self):
        for e in self.edges:
            if e.source not in self.nodes or e.target not in self.nodes:
                raise FormatError(f"edge {e.source}->{e.target} references an unknown node")
            if not e.length > 0 or not e.speed > 0:
                raise ValueError(f"edge {e.source}->{e.target}: length and speed must be positive")
            if e.travel_time < 1:
                raise ValueError(f"edge {e.source}->{e.target}: travel time must be >= 1 s")

    @classmethod
    def from_edges(cls, nodes, edges) -> "RoadGraph":
        """Build a graph from node ids and ``(u, v, length_m, speed_mps)`` tuples."""
        if not isinstance(nodes, dict):
            nodes = {int(n): None for n in nodes}
        return cls(
            dict(sorted(nodes.items())),
            [Edge(u, v, float(l), float(s), edge_travel_time(l, s)) for u, v, l, s in edges],
        )

    def node_ids(self) -> list[int]:
        return sorted(self.nodes)

    def induced(self, keep) -> "RoadGraph":
        keep = set(keep)
        return RoadGraph(
            {n: c for n, c in self.nodes.items() if n in keep},
            [e for e in self.edges if e.source in keep and e.target in keep],
        )


@dataclass
class SpeedTable:
    default: float
    speeds: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.default > 0:
            raise ValueError("default speed must be positive")
        for key, s in self.speeds.items():
            if not s > 0:
                raise ValueError(f"speed for edge {key} must be positive")


@dataclass
class TravelTimeMatrix:
    """Dense all-pairs travel times in seconds, indexed by ``node_ids``."""

    node_ids: list[int]
    times: np.ndarray
    index: dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.node_ids = [int(n) for n in self.node_ids]
        self.times = np.asarray(self.times, dtype=np.uint32)
        n = len(self.node_ids)
        if self.times.shape != (n, n):
            raise ValueError(f"matrix shape {self.times.shape} does not match {n} nodes")
        self.index = {nid: i for i, nid in enumerate(self.node_ids)}
        if len(self.index) != n:
            raise ValueError("duplicate node ids in matrix index")

    def __contains__(self, node: int) -> bool:
        return node in self.index

    def __len__(self) -> int:
        return len(self.node_ids)

    def __eq__(self, other):
        if not isinstance(other, TravelTimeMatrix):
            return NotImplemented
        return self.node_ids == other.node_ids and np.array_equal(self.times, other.times)

    def rows(self) -> list[list[int]]:
        """Plain nested lists; far faster than numpy for scalar lookups in hot loops."""
        return self.times.astype(np.int64).tolist()


def travel_time(matrix: TravelTimeMatrix, source: int, target: int) -> int:
    try:
        return int(matrix.times[matrix.index[source], matrix.index[target]])
    except KeyError as exc:
        raise KeyError(f"node {exc.args[0]} is not in the travel-time matrix") from None


# --- file formats -----------------------------------------------------------

def _expect_header(tokens, name, lineno):
    if len(tokens) != 2 or tokens[0] != name:
        raise FormatError(f"line {lineno}: expected '{name} <count>'")
    try:
        count = int(tokens[1])
    except ValueError:
        raise FormatError(f"line {lineno}: bad count {tokens[1]!r}") from None
    if count < 0:
        raise FormatError(f"line {lineno}: negative count")
    return count


def parse_graph(text: str) -> RoadGraph:
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, t) for i, t in lines if t and not t[0].startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise FormatError("unexpected end of graph file")
        pos += 1
        return lines[pos - 1]

    lineno, tokens = take()
    nodes: dict[int, Coord] = {}
    for _ in range(_expect_header(tokens, "nodes", lineno)):
        lineno, tokens = take()
        if tokens[0] != "node" or len(tokens) not in (2, 4):
            raise FormatError(f"line {lineno}: expected 'node <id> [<lat> <lon>]'")
        try:
            nid = int(tokens[1])
            coord = (float(tokens[2]), float(tokens[3])) if len(tokens) == 4 else None
        except ValueError:
            raise FormatError(f"line {lineno}: malformed node line") from None
        if nid < 0 or nid in nodes:
            raise FormatError(f"line {lineno}: invalid or duplicate node id {nid}")
        nodes[nid] = coord
    lineno, tokens = take()
    raw = []
    for _ in range(_expect_header(tokens, "edges", lineno)):
        lineno, tokens = take()
        if tokens[0] != "edge" or len(tokens) != 5:
            raise FormatError(f"line {lineno}: expected 'edge <from> <to> <length_m> <speed_mps>'")
        try:
            u, v = int(tokens[1]), int(tokens[2])
            length, speed = float(tokens[3]), float(tokens[4])
        except ValueError:
            raise FormatError(f"line {lineno}: malformed edge line") from None
        if u not in nodes or v not in nodes:
            raise FormatError(f"line {lineno}: edge references undefined node")
        if not length > 0 or not speed > 0:
            raise ValueError(f"line {lineno}: length and speed must be positive")
        raw.append((u, v, length, speed))
    if pos != len(lines):
        raise FormatError(f"line {lines[pos][0]}: trailing content")
    return RoadGraph.from_edges(nodes, raw)


def load_graph(path) -> RoadGraph:
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def _num(x: float) -> str:
    return repr(float(x)) if not float(x).is_integer() else str(int(x))


def write_graph(graph: RoadGraph, path) -> None:
    out = [f"nodes {len(graph.nodes)}"]
    for nid, coord in graph.nodes.items():
        out.append(f"node {nid}" if coord is None else f"node {nid} {coord[0]!r} {coord[1]!r}")
    out.append(f"edges {len(graph.edges)}")
    out += [f"edge {e.source} {e.target} {_num(e.length)} {_num(e.speed)}" for e in graph.edges]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def load_speeds(path) -> SpeedTable:
    lines = [ln.split() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [t for t in lines if t and not t[0].startswith("#")]
    if not lines or lines[0][0] != "default" or len(lines[0]) != 2:
        raise FormatError("speed table must start with 'default <speed_mps>'")
    try:
        default = float(lines[0][1])
        speeds = {(int(u), int(v)): float(s) for u, v, s in lines[1:]}
    except ValueError:
        raise FormatError("malformed speed table line") from None
    return SpeedTable(default, speeds)


def write_speeds(table: SpeedTable, path) -> None:
    out = [f"default {_num(table.default)}"]
    out += [f"{u} {v} {_num(s)}" for (u, v), s in sorted(table.speeds.items())]
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def write_matrix(matrix: TravelTimeMatrix, path) -> None:
    n = len(matrix)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<Q", n))
        fh.write(np.asarray(matrix.node_ids, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(matrix.times, dtype="<u4").tobytes())


def read_matrix(path) -> TravelTimeMatrix:
    data = Path(path).read_bytes()
    if data[:4] != MATRIX_MAGIC:
        raise FormatError(f"{path}: not a travel-time matrix file")
    (n,) = struct.unpack_from("<Q", data, 4)
    expected = 12 + 8 * n + 4 * n * n
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    ids = np.frombuffer(data, dtype="<u8", count=n, offset=12)
    times = np.frombuffer(data, dtype="<u4", count=n * n, offset=12 + 8 * n).reshape(n, n)
    return TravelTimeMatrix([int(i) for i in ids], times.astype(np.uint32))


# --- processing steps -------------------------------------------------------

def assign_speeds(graph: RoadGraph, speeds: SpeedTable) -> RoadGraph:
    edges = []
    for e in graph.edges:
        s = speeds.speeds.get((e.source, e.target), speeds.default)
        edges.append(Edge(e.source, e.target, e.length, s, edge_travel_time(e.length, s)))
    return RoadGraph(dict(graph.nodes), edges)


def contract_degree2(graph: RoadGraph) -> RoadGraph:
    """Remove pass-through nodes, replacing each chain by a single edge.

    A node is pass-through when it has exactly one in-edge ``u->v`` and one
    out-edge ``v->w`` with ``u != w``, or exactly the four edges
    ``u<->v<->w`` with ``u != w``.  Replacement edges sum travel time and
    length.  Nodes touching self-loops or parallel edges stay, and so does a
    node whose replacement edge would run parallel to an existing one (a
    triangle is left alone).
    """
    edges: dict[int, Edge] = dict(enumerate(graph.edges))
    out_adj: dict[int, set[int]] = defaultdict(set)
    in_adj: dict[int, set[int]] = defaultdict(set)
    for eid, e in edges.items():
        out_adj[e.source].add(eid)
        in_adj[e.target].add(eid)
    next_id = len(edges)

    def pass_through(v):
        ins = [edges[i] for i in in_adj[v]]
        outs = [edges[i] for i in out_adj[v]]
        preds = [e.source for e in ins]
        succs = [e.target for e in outs]
        if v in preds or len(set(preds)) != len(preds) or len(set(succs)) != len(succs):
            return None
        if len(ins) == 1 and len(outs) == 1 and preds[0] != succs[0]:
            chains = [(ins[0], outs[0])]
        elif len(ins) == 2 and len(outs) == 2 and set(preds) == set(succs):
            a, b = sorted(preds)
            by_src = {e.source: e for e in ins}
            by_dst = {e.target: e for e in outs}
            chains = [(by_src[a], by_dst[b]), (by_src[b], by_dst[a])]
        else:
            return None
        for first, second in chains:
            if any(edges[i].target == second.target for i in out_adj[first.source]):
                return None
        return chains

    def remove(eid):
        e = edges.pop(eid)
        out_adj[e.source].discard(eid)
        in_adj[e.target].discard(eid)

    def add(e):
        nonlocal next_id
        existing = [i for i in out_adj[e.source] if edges[i].target == e.target]
        if existing and min(edges[i].travel_time for i in existing) <= e.travel_time:
            return
        for i in existing:
            remove(i)
        edges[next_id] = e
        out_adj[e.source].add(next_id)
        in_adj[e.target].add(next_id)
        next_id += 1

    nodes = dict(graph.nodes)
    queue = deque(sorted(nodes))
    queued = set(queue)
    while queue:
        v = queue.popleft()
        queued.discard(v)
        if v not in nodes:
            continue
        chains = pass_through(v)
        if chains is None:
            continue
        for eid in list(in_adj[v]) + list(out_adj[v]):
            remove(eid)
        del nodes[v]
        for first, second in chains:
            add(Edge(first.source, second.target, first.length + second.length,
                     (first.length + second.length) / (first.travel_time + second.travel_time),
                     first.travel_time + second.travel_time))
        # neighbours may have become pass-through
        for n in sorted({first.source for first, _ in chains} | {s.target for _, s in chains}):
            if n not in queued:
                queue.append(n)
                queued.add(n)
    kept = [edges[i] for i in sorted(edges)]
    return RoadGraph(nodes, kept)


def _csr(graph: RoadGraph, order: list[int]) -> csr_matrix:
    idx = {n: i for i, n in enumerate(order)}
    best: dict[tuple[int, int], int] = {}
    for e in graph.edges:
        if e.source == e.target:
            continue
        key = (idx[e.source], idx[e.target])
        if key not in best or e.travel_time < best[key]:
            best[key] = e.travel_time
    n = len(order)
    if not best:
        return csr_matrix((n, n), dtype=np.float64)
    rows, cols = zip(*best)
    return csr_matrix((np.fromiter(best.values(), dtype=np.float64), (rows, cols)), shape=(n, n))


def filter_largest_scc(graph: RoadGraph) -> RoadGraph:
    if not graph.nodes:
        raise ValueError("cannot select a component of an empty graph")
    order = graph.node_ids()
    _, labels = connected_components(_csr(graph, order), directed=True, connection="strong")
    members: dict[int, list[int]] = defaultdict(list)
    for nid, lab in zip(order, labels):
        members[lab].append(nid)
    # order is sorted, so members[lab][0] is the smallest id of the component
    best = min(members.values(), key=lambda ms: (-len(ms), ms[0]))
    if len(best) < len(order):
        log.info("largest SCC keeps %d of %d nodes", len(best), len(order))
    return graph.induced(best)


def compute_travel_time_matrix(graph: RoadGraph) -> TravelTimeMatrix:
    order = graph.node_ids()
    if not order:
        raise ValueError("empty graph")
    dist = dijkstra(_csr(graph, order), directed=True)
    if not np.all(np.isfinite(dist)):
        raise ValueError("graph is not strongly connected; run filter_largest_scc first")
    return TravelTimeMatrix(order, np.rint(dist).astype(np.uint32))


def build_travel_model(graph: RoadGraph, speeds: SpeedTable | None = None) -> tuple[RoadGraph, TravelTimeMatrix]:
    """Run the full processing pipeline; returns the final graph and its matrix."""
    if speeds is not None:
        graph = assign_speeds(graph, speeds)
    graph = contract_degree2(graph)
    graph = filter_largest_scc(graph)
    return graph, compute_travel_time_matrix(graph)
