"""Metric graphs built from planar polylines, and coordinate conversion.

A location on the graph is stored as ``(edge, t)`` with ``t`` the normalized
distance along the edge in ``[0, 1]``. Planar ``(x, y)`` coordinates are in
whatever unit the input geometry uses (km throughout the examples).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateEdge, DisconnectedGraph, PointOffGraph

VERTEX_TOL = 1e-12


class GraphLocation(NamedTuple):
    edge: int
    t: float


@dataclass(frozen=True, eq=False)
class Edge:
    id: int
    v_start: int
    v_end: int
    geometry: np.ndarray
    cumlen: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return float(self.cumlen[-1])

    def point_at(self, t: float) -> np.ndarray:
        s = t * self.cumlen[-1]
        j = int(np.searchsorted(self.cumlen, s, side="right")) - 1
        j = min(max(j, 0), len(self.geometry) - 2)
        seg = self.cumlen[j + 1] - self.cumlen[j]
        u = 0.0 if seg == 0 else (s - self.cumlen[j]) / seg
        u = min(max(u, 0.0), 1.0)
        return self.geometry[j] + u * (self.geometry[j + 1] - self.geometry[j])


class MetricGraph:
    """Connected, undirected metric graph.

    Parameters
    ----------
    vertices : (m, 2) array
        Vertex coordinates.
    edges : list of Edge
        Edge ``i`` must have ``id == i``.

    Notes
    -----
    Instances are treated as immutable once built; use :func:`build_graph`
    to construct one from raw polylines.
    """

    def __init__(self, vertices: np.ndarray, edges: list[Edge]):
        self.vertices = np.asarray(vertices, dtype=float)
        self.edges = list(edges)
        self.adjacency: list[list[tuple[int, int]]] = [[] for _ in range(len(self.vertices))]
        for e in self.edges:
            self.adjacency[e.v_start].append((e.id, 0))
            self.adjacency[e.v_end].append((e.id, 1))
        self.lengths = np.array([e.length for e in self.edges])
        self._segments = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def neighbors(self, v: int) -> set[int]:
        out = set()
        for eid, end in self.adjacency[v]:
            e = self.edges[eid]
            out.add(e.v_end if end == 0 else e.v_start)
        return out

    def endpoint(self, edge: int, end: int) -> int:
        """Vertex id at ``t == end`` (0 or 1) of ``edge``."""
        e = self.edges[edge]
        return e.v_start if end == 0 else e.v_end

    def vertex_of(self, loc: GraphLocation) -> int | None:
        """Vertex id if ``loc`` sits on a vertex, else None."""
        if loc.t <= VERTEX_TOL:
            return self.edges[loc.edge].v_start
        if loc.t >= 1.0 - VERTEX_TOL:
            return self.edges[loc.edge].v_end
        return None

    def vertex_location(self, v: int) -> GraphLocation:
        eid, end = min(self.adjacency[v])
        return GraphLocation(eid, float(end))

    def check_location(self, loc: GraphLocation) -> None:
        if not 0 <= loc.edge < self.n_edges:
            raise ValueError(f"edge index {loc.edge} out of range")
        if not -VERTEX_TOL <= loc.t <= 1 + VERTEX_TOL:
            raise ValueError(f"normalized distance {loc.t} outside [0, 1]")

    def segments(self):
        """Flattened polyline segments used for projection queries."""
        if self._segments is None:
            a, b, eid, s0, le = [], [], [], [], []
            for e in self.edges:
                n = len(e.geometry) - 1
                a.append(e.geometry[:-1])
                b.append(e.geometry[1:])
                eid.append(np.full(n, e.id))
                s0.append(e.cumlen[:-1])
                le.append(np.full(n, e.length))
            self._segments = (
                np.vstack(a), np.vstack(b), np.concatenate(eid),
                np.concatenate(s0), np.concatenate(le),
            )
        return self._segments

    def to_segments(self) -> list[np.ndarray]:
        return [e.geometry.copy() for e in self.edges]

    def __repr__(self) -> str:
        return f"MetricGraph(m={self.n_vertices}, M={self.n_edges}, length={self.total_length:.6g})"


def _polyline_cumlen(geom: np.ndarray) -> np.ndarray:
    d = np.hypot(*np.diff(geom, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(d)])


def build_graph(segments: Sequence, merge_tol: float = 1e-9) -> MetricGraph:
    """Build a metric graph from polylines.

    Endpoints closer than ``merge_tol`` are fused into one vertex (the first
    seen position wins). Intersections must occur at polyline endpoints only.
    """
    if len(segments) == 0:
        raise ValueError("need at least one segment")
    geoms = []
    for i, s in enumerate(segments):
        g = np.array(s, dtype=float)
        if g.ndim != 2 or g.shape[1] != 2 or len(g) < 2:
            raise ValueError(f"segment {i} must be a polyline of >= 2 points")
        if not np.all(np.isfinite(g)):
            raise ValueError(f"segment {i} has non-finite coordinates")
        geoms.append(g)

    ends = np.array([[g[0], g[-1]] for g in geoms]).reshape(-1, 2)
    # union-find over endpoints within merge_tol
    parent = list(range(len(ends)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in sorted(cKDTree(ends).query_pairs(merge_tol)):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    vid = {}
    vertices = []
    end_vertex = np.empty(len(ends), dtype=int)
    for i in range(len(ends)):
        r = find(i)
        if r not in vid:
            vid[r] = len(vertices)
            vertices.append(ends[r])
        end_vertex[i] = vid[r]
    vertices = np.array(vertices)

    edges = []
    for i, g in enumerate(geoms):
        vs, ve = int(end_vertex[2 * i]), int(end_vertex[2 * i + 1])
        g = g.copy()
        g[0], g[-1] = vertices[vs], vertices[ve]
        cum = _polyline_cumlen(g)
        if cum[-1] <= merge_tol:
            raise DegenerateEdge(f"segment {i} has length {cum[-1]:g} <= merge_tol")
        edges.append(Edge(i, vs, ve, g, cum))

    graph = MetricGraph(vertices, edges)
    _check_connected(graph)
    return graph


def _check_connected(graph: MetricGraph) -> None:
    seen = {0}
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w in graph.neighbors(v):
            if w not in seen:
                seen.add(w)
                queue.append(w)
    if len(seen) != graph.n_vertices:
        raise DisconnectedGraph(
            f"graph has {graph.n_vertices - len(seen)} vertices unreachable from vertex 0"
        )


def pte_to_xy(graph: MetricGraph, loc: GraphLocation) -> np.ndarray:
    graph.check_location(loc)
    return graph.edges[loc.edge].point_at(min(max(loc.t, 0.0), 1.0))


def xy_to_pte(graph: MetricGraph, p, snap_tol: float = 1e-6) -> GraphLocation:
    """Closest graph location to planar point ``p``.

    Ties are broken by lowest edge id, then lowest ``t``.
    """
    p = np.asarray(p, dtype=float)
    a, b, eid, s0, le = graph.segments()
    ab = b - a
    ll = np.einsum("ij,ij->i", ab, ab)
    u = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.where(ll > 0, ll, 1.0), 0.0, 1.0)
    proj = a + u[:, None] * ab
    d = np.hypot(*(proj - p).T)
    dmin = d.min()
    if dmin > snap_tol:
        raise PointOffGraph(f"point {p.tolist()} is {dmin:g} from the graph (snap_tol={snap_tol:g})")
    t = (s0 + u * np.sqrt(ll)) / le
    cand = np.flatnonzero(d <= dmin + 1e-12 * max(1.0, dmin))
    best = min(cand, key=lambda k: (eid[k], t[k]))
    return GraphLocation(int(eid[best]), float(min(max(t[best], 0.0), 1.0)))


def canonicalize(graph: MetricGraph, loc: GraphLocation) -> GraphLocation:
    """Unique representation: vertices use their lowest incident edge id."""
    v = graph.vertex_of(loc)
    if v is None:
        return GraphLocation(int(loc.edge), float(loc.t))
    return graph.vertex_location(v)


def graph_from_parts(vertices, edge_ends, geometries, merge_tol: float = 1e-9) -> MetricGraph:
    """Graph with explicit vertex ids; geometry ends must sit on their vertices."""
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 2 or len(V) == 0:
        raise ValueError("vertices must be a non-empty (m, 2) array")
    if len(V) > 1:
        close = cKDTree(V).query_pairs(merge_tol)
        if close:
            raise ValueError(f"vertices {sorted(close)[0]} coincide within merge_tol")
    edges = []
    for i, ((vs, ve), g) in enumerate(zip(edge_ends, geometries)):
        vs, ve = int(vs), int(ve)
        if not (0 <= vs < len(V) and 0 <= ve < len(V)):
            raise ValueError(f"edge {i} references a missing vertex")
        g = np.array(g, dtype=float)
        if g.ndim != 2 or g.shape[1] != 2 or len(g) < 2:
            raise ValueError(f"edge {i} geometry must have >= 2 points")
        if np.hypot(*(g[0] - V[vs])) > merge_tol or np.hypot(*(g[-1] - V[ve])) > merge_tol:
            raise ValueError(f"edge {i} geometry does not start and end at its vertices")
        g[0], g[-1] = V[vs], V[ve]
        cum = _polyline_cumlen(g)
        if cum[-1] <= merge_tol:
            raise DegenerateEdge(f"edge {i} has length {cum[-1]:g} <= merge_tol")
        edges.append(Edge(i, vs, ve, g, cum))
    if len(edges) != len(edge_ends):
        raise ValueError("edge and geometry counts differ")
    graph = MetricGraph(V, edges)
    if any(not adj for adj in graph.adjacency):
        raise DisconnectedGraph("graph has an isolated vertex")
    _check_connected(graph)
    return graph
