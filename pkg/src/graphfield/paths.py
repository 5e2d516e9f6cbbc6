"""Paths on a metric graph and Simpson integration schemes along them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import AmbiguousChain, BrokenChain
from .graph import VERTEX_TOL, GraphLocation, MetricGraph, canonicalize, pte_to_xy, xy_to_pte
from .mesh import SNAP, Mesh


class InterEdgeInterval(NamedTuple):
    """Piece of one edge from ``t_start`` to ``t_end``; order gives direction."""

    edge: int
    t_start: float
    t_end: float

    @property
    def start(self) -> GraphLocation:
        return GraphLocation(self.edge, self.t_start)

    @property
    def end(self) -> GraphLocation:
        return GraphLocation(self.edge, self.t_end)


@dataclass(frozen=True)
class GraphPath:
    intervals: tuple[InterEdgeInterval, ...]
    length: float

    def __len__(self):
        return len(self.intervals)

    @property
    def start(self) -> GraphLocation:
        return self.intervals[0].start

    @property
    def end(self) -> GraphLocation:
        return self.intervals[-1].end

    def reversed(self) -> "GraphPath":
        return GraphPath(
            tuple(InterEdgeInterval(iv.edge, iv.t_end, iv.t_start) for iv in reversed(self.intervals)),
            self.length,
        )


def make_path(graph: MetricGraph, intervals: Sequence) -> GraphPath:
    """Validate a chain of intervals and compute its length.

    Raises
    ------
    BrokenChain
        If the end of one interval is not the start of the next.
    """
    ivs = []
    for iv in intervals:
        iv = InterEdgeInterval(int(iv[0]), float(iv[1]), float(iv[2]))
        graph.check_location(iv.start)
        graph.check_location(iv.end)
        if abs(iv.t_end - iv.t_start) > VERTEX_TOL:
            ivs.append(iv)
    if not ivs:
        raise ValueError("path has zero length")
    for a, b in zip(ivs[:-1], ivs[1:]):
        if canonicalize(graph, a.end) != canonicalize(graph, b.start) and not (
            a.edge == b.edge and abs(a.t_end - b.t_start) <= VERTEX_TOL
        ):
            raise BrokenChain(f"interval {tuple(a)} does not connect to {tuple(b)}")
    length = sum(abs(iv.t_end - iv.t_start) * graph.lengths[iv.edge] for iv in ivs)
    return GraphPath(tuple(ivs), float(length))


def _ends(graph: MetricGraph, e: int) -> tuple[int, int]:
    edge = graph.edges[e]
    return edge.v_start, edge.v_end


def _t_at(graph: MetricGraph, e: int, v: int) -> float:
    return 0.0 if graph.edges[e].v_start == v else 1.0


def path_from_waypoints(graph: MetricGraph, start: GraphLocation, via: Sequence[int],
                        end: GraphLocation) -> GraphPath:
    """Path from ``start`` through full traversals of ``via`` edges to ``end``."""
    start = GraphLocation(int(start[0]), float(start[1]))
    end = GraphLocation(int(end[0]), float(end[1]))
    graph.check_location(start)
    graph.check_location(end)
    chain = [start.edge, *[int(e) for e in via], end.edge]
    if len(chain) == 2 and start.edge == end.edge:
        return make_path(graph, [(start.edge, start.t, end.t)])

    first, second = chain[0], chain[1]
    shared = set(_ends(graph, first)) & set(_ends(graph, second))
    if not shared:
        raise BrokenChain(f"edges {first} and {second} share no vertex")
    if len(shared) > 1:
        raise AmbiguousChain(f"edges {first} and {second} share both endpoints")
    (v,) = shared
    intervals = [(first, start.t, _t_at(graph, first, v))]
    for k, e in enumerate(chain[1:-1], start=1):
        vs, ve = _ends(graph, e)
        if vs == ve:
            raise AmbiguousChain(f"edge {e} is a loop; traversal direction is ambiguous")
        if v not in (vs, ve):
            raise BrokenChain(f"edge {e} does not touch vertex {v}")
        t_in = _t_at(graph, e, v)
        intervals.append((e, t_in, 1.0 - t_in))
        v = ve if v == vs else vs
        nxt = chain[k + 1]
        if v not in _ends(graph, nxt):
            raise BrokenChain(f"edges {e} and {nxt} share no vertex on the traversal")
    intervals.append((end.edge, _t_at(graph, end.edge, v), end.t))
    return make_path(graph, intervals)


def _candidates(graph: MetricGraph, loc: GraphLocation) -> dict[int, float]:
    """All (edge -> t) representations of a location."""
    v = graph.vertex_of(loc)
    if v is None:
        return {loc.edge: loc.t}
    out = {}
    for eid, end in graph.adjacency[v]:
        out.setdefault(eid, float(end))
    return out


def _connect(graph: MetricGraph, a: GraphLocation, b: GraphLocation, pa, pb) -> list[tuple]:
    ca, cb = _candidates(graph, a), _candidates(graph, b)
    va, vb = graph.vertex_of(a), graph.vertex_of(b)
    if va is not None and va == vb:
        return []
    common = sorted(set(ca) & set(cb))
    if common:
        if len(common) > 1:
            # parallel edges between two vertices: pick the one nearest the input segment
            mid = 0.5 * (np.asarray(pa) + np.asarray(pb))

            def gap(e):
                return float(np.hypot(*(pte_to_xy(graph, GraphLocation(e, 0.5 * (ca[e] + cb[e]))) - mid)))

            common.sort(key=lambda e: (gap(e), e))
        e = common[0]
        return [(e, ca[e], cb[e])]
    if va is None and vb is None:
        shared = set(_ends(graph, a.edge)) & set(_ends(graph, b.edge))
        if len(shared) == 1:
            (v,) = shared
            return [(a.edge, a.t, _t_at(graph, a.edge, v)), (b.edge, _t_at(graph, b.edge, v), b.t)]
    raise BrokenChain(
        f"locations {tuple(a)} and {tuple(b)} are not connected along one edge or through one vertex"
    )


def _merge(intervals: list[tuple]) -> list[tuple]:
    out = []
    for e, t0, t1 in intervals:
        if abs(t1 - t0) <= VERTEX_TOL:
            continue
        if out:
            pe, p0, p1 = out[-1]
            if pe == e and abs(p1 - t0) <= VERTEX_TOL and (p1 - p0) * (t1 - t0) > 0:
                out[-1] = (e, p0, t1)
                continue
        out.append((e, t0, t1))
    return out


def _is_single_polyline(obj) -> bool:
    first = obj[0]
    return np.ndim(first) == 1 and len(first) == 2 and np.isscalar(first[0])


def path_from_polyline(graph: MetricGraph, polyline, snap_tol: float | None = None) -> list[GraphPath]:
    """Snap a polyline (or a list of polylines) to graph paths, one per polyline.

    ``snap_tol`` defaults to twice the largest gap between consecutive
    polyline points.
    """
    polylines = [polyline] if _is_single_polyline(polyline) else list(polyline)
    out = []
    for line in polylines:
        pts = np.asarray(line, dtype=float)
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        tol = snap_tol if snap_tol is not None else 2.0 * float(np.hypot(*np.diff(pts, axis=0).T).max())
        locs = [xy_to_pte(graph, p, tol) for p in pts]
        pieces = []
        for k in range(len(locs) - 1):
            pieces.extend(_connect(graph, locs[k], locs[k + 1], pts[k], pts[k + 1]))
        out.append(make_path(graph, _merge(pieces)))
    return out


def midpoint(graph: MetricGraph, path: GraphPath) -> GraphLocation:
    """Location at half the path length, measured along the path."""
    remaining = 0.5 * path.length
    for iv in path.intervals:
        le = graph.lengths[iv.edge]
        seg = abs(iv.t_end - iv.t_start) * le
        if remaining <= seg * (1 + 1e-12) or iv is path.intervals[-1]:
            step = min(remaining, seg) / le
            t = iv.t_start + np.sign(iv.t_end - iv.t_start) * step
            return canonicalize(graph, GraphLocation(iv.edge, float(min(max(t, 0.0), 1.0))))
        remaining -= seg
    raise AssertionError("unreachable")


class IntegrationScheme(NamedTuple):
    """Quadrature points ``(edges[q], ts[q])`` with length weights, tagged by block."""

    edges: np.ndarray
    ts: np.ndarray
    weights: np.ndarray
    block: np.ndarray

    @property
    def points(self) -> list[GraphLocation]:
        return [GraphLocation(int(e), float(t)) for e, t in zip(self.edges, self.ts)]


def _interval_rule(n: int, length: float, a: float, b: float):
    """Composite Simpson on ``[a, b]`` with mesh nodes ``k/n`` as cell breaks."""
    k0 = int(np.ceil(a * n - SNAP))
    k1 = int(np.floor(b * n + SNAP))
    inner = np.arange(k0, k1 + 1) / n
    inner = inner[(inner > a + SNAP / n) & (inner < b - SNAP / n)]
    brk = np.concatenate([[a], inner, [b]])
    h = np.diff(brk) * length
    ts = np.empty(2 * len(h) + 1)
    ts[0::2] = brk
    ts[1::2] = 0.5 * (brk[:-1] + brk[1:])
    w = np.zeros_like(ts)
    w[0:-1:2] += h / 6.0
    w[2::2] += h / 6.0
    w[1::2] = 4.0 * h / 6.0
    return ts, w


def simpson_scheme(mesh: Mesh, path: GraphPath, block: int = 0) -> IntegrationScheme:
    """Simpson points and weights along ``path``, aligned to mesh vertices.

    Every mesh interval (or partial interval at a piece end) covered by the
    path becomes one 3-point Simpson cell, so piecewise-linear integrands are
    integrated exactly and cubics on each edge as well.
    """
    edges, ts, ws = [], [], []
    for iv in path.intervals:
        a, b = sorted((iv.t_start, iv.t_end))
        if b - a <= VERTEX_TOL:
            continue
        t, w = _interval_rule(int(mesh.n_per_edge[iv.edge]), mesh.graph.lengths[iv.edge], a, b)
        if iv.t_start > iv.t_end:
            t, w = t[::-1], w[::-1]
        edges.append(np.full(len(t), iv.edge))
        ts.append(t)
        ws.append(w)
    e = np.concatenate(edges)
    return IntegrationScheme(e, np.concatenate(ts), np.concatenate(ws), np.full(len(e), block))


def integration_scheme(mesh: Mesh, paths: Sequence[GraphPath]) -> IntegrationScheme:
    """Concatenated schemes for several paths; ``block`` is the path index."""
    if len(paths) == 0:
        z = np.zeros(0)
        return IntegrationScheme(z.astype(int), z, z, z.astype(int))
    parts = [simpson_scheme(mesh, p, i) for i, p in enumerate(paths)]
    return IntegrationScheme(*(np.concatenate([getattr(s, f) for s in parts]) for f in IntegrationScheme._fields))


def path_slice(graph: MetricGraph, path: GraphPath, s0: float, s1: float) -> GraphPath:
    """Sub-path between arc lengths ``s0 < s1`` measured from the path start."""
    if not 0.0 <= s0 < s1 <= path.length * (1 + 1e-12):
        raise ValueError("need 0 <= s0 < s1 <= path length")
    out = []
    pos = 0.0
    for iv in path.intervals:
        le = graph.lengths[iv.edge]
        seg = abs(iv.t_end - iv.t_start) * le
        a, b = max(s0, pos), min(s1, pos + seg)
        if b > a:
            d = np.sign(iv.t_end - iv.t_start)
            ta = iv.t_start + d * (a - pos) / le
            tb = iv.t_start + d * (b - pos) / le
            out.append((iv.edge, float(np.clip(ta, 0, 1)), float(np.clip(tb, 0, 1))))
        pos += seg
    return make_path(graph, out)
