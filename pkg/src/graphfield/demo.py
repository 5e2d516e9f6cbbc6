"""Small synthetic graphs and observation designs used in examples and tests."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import GraphLocation, MetricGraph, build_graph
from .paths import GraphPath, make_path, path_slice


def square_graph() -> MetricGraph:
    """Unit square with a quarter arc, a spur and a doubled edge (6 vertices, 8 edges)."""
    theta = np.linspace(np.pi, 1.5 * np.pi, 20)
    arc = np.column_stack([np.sin(theta), 1.0 + np.cos(theta)])
    arc[0] = (0.0, 0.0)
    arc[-1] = (-1.0, 1.0)
    segs = [
        [(0, 0), (1, 0)],
        [(0, 0), (0, 1)],
        [(0, 1), (-1, 1)],
        arc,
        [(0, 0), (1, 0)],
        [(1, 0), (1, 1)],
        [(1, 1), (2, 1)],
        [(0, 1), (1, 1)],
    ]
    return build_graph(segs)


# 13 vertices / 16 edges; edges 0, 3, 6, 14, 12 form a simple chain
_GRID13_XY = [
    (0, 0), (1, 0), (2, 0), (3, 0),
    (0, 1), (1, 1), (2, 1), (3, 1),
    (0, 2), (1, 2), (4, -1), (4, 0.5), (4, 2),
]
_GRID13_EDGES = [
    (0, 1), (0, 4), (1, 5), (1, 2), (2, 6), (4, 5), (2, 3), (3, 7),
    (5, 6), (6, 7), (4, 8), (5, 9), (10, 11), (8, 9), (3, 10), (11, 12),
]


def grid13_graph() -> MetricGraph:
    xy = np.asarray(_GRID13_XY, dtype=float)
    return build_graph([[xy[a], xy[b]] for a, b in _GRID13_EDGES])


def star_graph(arms: int = 3, arm_length: float = 1.3) -> MetricGraph:
    ang = 2 * np.pi * np.arange(arms) / arms
    return build_graph([[(0.0, 0.0), (arm_length * np.cos(a), arm_length * np.sin(a))] for a in ang])


def line_graph(length: float) -> MetricGraph:
    return build_graph([[(0.0, 0.0), (length, 0.0)]])


@dataclass
class StudyDesign:
    """A graph with fixed point locations and line-observation paths."""

    graph: MetricGraph
    points: list[GraphLocation]
    paths: list[GraphPath]
    routes: list[GraphPath]


def _route(graph: MetricGraph, vids: list[int], index: dict) -> GraphPath:
    ivs = []
    for a, b in zip(vids[:-1], vids[1:]):
        e, forward = index[(a, b)]
        ivs.append((e, 0.0, 1.0) if forward else (e, 1.0, 0.0))
    return make_path(graph, ivs)


def desk_design(seed: int = 2024, nx: int = 8, ny: int = 5, spacing: float = 0.36,
                n_drop: int = 12, n_points: int = 6, stop_gap: float = 0.35,
                spans: tuple = (2, 3)) -> StudyDesign:
    """Jittered grid network with four bus routes.

    About 40 vertices, 55 edges and 20 length units in total. Stops are
    placed along each route roughly every ``stop_gap``; a line observation
    covers two or three consecutive stop gaps, so lines are 0.5 to 1.5 long.
    """
    rng = np.random.default_rng(seed)
    vid = lambda i, j: j * nx + i  # noqa: E731
    xy = np.array([(i * spacing, j * spacing) for j in range(ny) for i in range(nx)], dtype=float)
    xy += rng.uniform(-0.2, 0.2, size=xy.shape) * spacing
    pairs = [(vid(i, j), vid(i + 1, j)) for j in range(ny) for i in range(nx - 1)]
    pairs += [(vid(i, j), vid(i, j + 1)) for j in range(ny - 1) for i in range(nx)]

    routes_v = [
        [vid(i, 1) for i in range(nx)],
        [vid(i, 3) for i in reversed(range(nx))],
        [vid(2, j) for j in range(ny)] + [vid(i, ny - 1) for i in range(3, 6)]
        + [vid(5, j) for j in reversed(range(ny - 1))],
        [vid(6, j) for j in reversed(range(ny))] + [vid(i, 0) for i in reversed(range(6))],
    ]
    protected = {frozenset(p) for r in routes_v for p in zip(r[:-1], r[1:])}
    candidates = [p for p in pairs if frozenset(p) not in protected]
    keep = set(map(frozenset, pairs))
    dropped = 0
    for k in rng.permutation(len(candidates)):
        if dropped == n_drop:
            break
        p = frozenset(candidates[k])
        trial = keep - {p}
        deg = np.zeros(len(xy), dtype=int)
        for q in trial:
            for v in q:
                deg[v] += 1
        if deg.min() >= 1 and _connected(len(xy), trial):
            keep = trial
            dropped += 1
    kept = [p for p in pairs if frozenset(p) in keep]
    graph = build_graph([[xy[a], xy[b]] for a, b in kept])
    # build_graph numbers vertices by first appearance; map grid ids through coordinates
    gid = {tuple(np.round(graph.vertices[v], 12)): v for v in range(graph.n_vertices)}
    to_g = {i: gid[tuple(np.round(xy[i], 12))] for i in range(len(xy))}
    index = {}
    for e, edge in enumerate(graph.edges):
        index[(edge.v_start, edge.v_end)] = (e, True)
        index[(edge.v_end, edge.v_start)] = (e, False)
    routes = [_route(graph, [to_g[v] for v in r], index) for r in routes_v]

    paths = []
    for route in routes:
        n_gap = max(2, int(round(route.length / stop_gap)))
        stops = np.linspace(0.0, route.length, n_gap + 1)
        stops[1:-1] += rng.uniform(-0.25, 0.25, n_gap - 1) * (route.length / n_gap)
        for k in spans:
            for i in range(len(stops) - k):
                a, b = stops[i], stops[i + k]
                if 0.5 <= b - a <= 1.5:
                    paths.append(path_slice(graph, route, a, b))
    e = rng.integers(0, graph.n_edges, n_points)
    t = rng.uniform(0.05, 0.95, n_points)
    points = [GraphLocation(int(a), float(b)) for a, b in zip(e, t)]
    return StudyDesign(graph, points, paths, routes)


def _connected(n: int, pairs) -> bool:
    adj = [[] for _ in range(n)]
    for p in pairs:
        a, b = tuple(p)
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        for u in adj[stack.pop()]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == n
