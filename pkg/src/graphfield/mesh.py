"""Regular per-edge refinement of a metric graph and its hat-function basis."""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import GraphLocation, MetricGraph, pte_to_xy

SNAP = 1e-12


class BasisEvaluation(NamedTuple):
    indices: list[int]
    weights: list[float]


def as_location_arrays(locs) -> tuple[np.ndarray, np.ndarray]:
    """Accept a sequence of ``GraphLocation`` or an ``(edges, ts)`` pair."""
    if isinstance(locs, tuple) and len(locs) == 2 and isinstance(locs[0], np.ndarray):
        return np.asarray(locs[0], dtype=int), np.asarray(locs[1], dtype=float)
    if len(locs) == 0:
        return np.zeros(0, dtype=int), np.zeros(0)
    arr = np.asarray([(l[0], l[1]) for l in locs], dtype=float)
    return arr[:, 0].astype(int), arr[:, 1]


class Mesh:
    """Flat FEM mesh on a metric graph.

    Mesh vertices ``0..m-1`` are the graph vertices; interior points follow
    edge by edge, ordered by increasing ``t``. Edge ``e`` is split into
    ``n_e = max(1, ceil(l_e / h_target))`` equal intervals.

    Attributes
    ----------
    n_per_edge : (M,) int array
    edge_nodes : list of int arrays
        Global indices of the ``n_e + 1`` mesh vertices along each edge.
    interval_edge, interval_left, interval_right, interval_width : arrays
        One entry per mesh interval, edge by edge, left to right.
    interval_offset : (M + 1,) int array
        Interval ids of edge ``e`` are ``interval_offset[e]:interval_offset[e+1]``.
    """

    def __init__(self, graph: MetricGraph, h_target: float):
        if not h_target > 0:
            raise ValueError("h_target must be positive")
        self.graph = graph
        self.h_target = float(h_target)
        m = graph.n_vertices
        n_e = np.array(
            [max(1, math.ceil(e.length / h_target - 1e-12)) for e in graph.edges], dtype=int
        )
        self.n_per_edge = n_e
        self.K = int(m + np.sum(n_e - 1))

        loc_edge = np.empty(self.K, dtype=int)
        loc_t = np.empty(self.K)
        for v in range(m):
            loc_edge[v], loc_t[v] = graph.vertex_location(v)

        edge_nodes = []
        iv_edge, iv_left, iv_right, iv_w = [], [], [], []
        nxt = m
        for e in graph.edges:
            n = int(n_e[e.id])
            interior = np.arange(nxt, nxt + n - 1)
            loc_edge[interior] = e.id
            loc_t[interior] = np.arange(1, n) / n
            nxt += n - 1
            nodes = np.concatenate([[e.v_start], interior, [e.v_end]]).astype(int)
            edge_nodes.append(nodes)
            iv_edge.append(np.full(n, e.id))
            iv_left.append(nodes[:-1])
            iv_right.append(nodes[1:])
            iv_w.append(np.full(n, e.length / n))
        self.edge_nodes = edge_nodes
        self.vertex_edge = loc_edge
        self.vertex_t = loc_t
        self.interval_edge = np.concatenate(iv_edge)
        self.interval_left = np.concatenate(iv_left)
        self.interval_right = np.concatenate(iv_right)
        self.interval_width = np.concatenate(iv_w)
        self.interval_offset = np.concatenate([[0], np.cumsum(n_e)])

    @property
    def n_intervals(self) -> int:
        return len(self.interval_width)

    @property
    def vertices(self) -> list[GraphLocation]:
        return [GraphLocation(int(e), float(t)) for e, t in zip(self.vertex_edge, self.vertex_t)]

    def vertex_xy(self) -> np.ndarray:
        return np.array([pte_to_xy(self.graph, l) for l in self.vertices])

    def spacing(self, edge: int) -> float:
        return self.graph.edges[edge].length / self.n_per_edge[edge]

    def locate_many(self, edges, ts) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`locate`; returns (interval ids, local coords)."""
        edges = np.asarray(edges, dtype=int)
        ts = np.clip(np.asarray(ts, dtype=float), 0.0, 1.0)
        n = self.n_per_edge[edges]
        s = ts * n
        j = np.clip(np.ceil(s - SNAP).astype(int) - 1, 0, n - 1)
        local = np.clip(s - j, 0.0, 1.0)
        local[np.abs(local) < SNAP] = 0.0
        local[np.abs(local - 1.0) < SNAP] = 1.0
        return self.interval_offset[edges] + j, local

    def locate(self, loc: GraphLocation) -> tuple[int, float]:
        self.graph.check_location(loc)
        i, u = self.locate_many([loc.edge], [loc.t])
        return int(i[0]), float(u[0])

    def basis_matrix(self, locs) -> sp.csr_matrix:
        """Sparse ``(n, K)`` matrix whose row ``j`` holds basis values at ``locs[j]``."""
        edges, ts = as_location_arrays(locs)
        n = len(edges)
        if n == 0:
            return sp.csr_matrix((0, self.K))
        iv, u = self.locate_many(edges, ts)
        rows = np.repeat(np.arange(n), 2)
        cols = np.column_stack([self.interval_left[iv], self.interval_right[iv]]).ravel()
        vals = np.column_stack([1.0 - u, u]).ravel()
        keep = vals != 0.0
        A = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, self.K))
        A.sum_duplicates()
        return A

    def evaluate_basis(self, loc: GraphLocation) -> BasisEvaluation:
        row = self.basis_matrix([loc])
        return BasisEvaluation([int(i) for i in row.indices], [float(w) for w in row.data])

    def evaluate_field(self, locs, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape[0] != self.K:
            raise ValueError(f"field has {w.shape[0]} values, mesh has K={self.K}")
        return self.basis_matrix(locs) @ w

    def summary(self) -> dict:
        return {
            "K": self.K,
            "n_intervals": self.n_intervals,
            "h_min": float(self.interval_width.min()),
            "h_max": float(self.interval_width.max()),
            "n_vertices": self.graph.n_vertices,
            "n_edges": self.graph.n_edges,
        }


def build_mesh(graph: MetricGraph, h_target: float) -> Mesh:
    return Mesh(graph, h_target)


def locate(mesh: Mesh, loc: GraphLocation) -> tuple[int, float]:
    return mesh.locate(loc)


def evaluate_basis(mesh: Mesh, loc: GraphLocation) -> BasisEvaluation:
    return mesh.evaluate_basis(loc)


def evaluate_field(mesh: Mesh, locs: Sequence[GraphLocation], w) -> np.ndarray:
    return mesh.evaluate_field(locs, w)
