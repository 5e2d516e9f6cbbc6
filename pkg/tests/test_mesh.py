import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfield.demo import desk_design, grid13_graph, line_graph, square_graph, star_graph
from graphfield.graph import GraphLocation
from graphfield.mesh import build_mesh, evaluate_basis, evaluate_field, locate


def test_single_edge_counts():
    m = build_mesh(line_graph(1.0), 0.25)
    assert m.n_per_edge.tolist() == [4]
    assert m.K == 5


def test_short_edge_keeps_one_interval():
    m = build_mesh(line_graph(0.01), 0.07)
    assert m.n_per_edge.tolist() == [1]
    assert m.K == 2


def test_exact_multiple_not_rounded_up():
    # 0.3 / 0.1 is 2.9999999999999996 in floating point
    m = build_mesh(line_graph(0.3), 0.1)
    assert m.n_per_edge.tolist() == [3]


def test_indexing_graph_vertices_first():
    g = star_graph(3, 1.0)
    m = build_mesh(g, 0.25)
    for v in range(g.n_vertices):
        e, t = m.vertex_edge[v], m.vertex_t[v]
        assert g.vertex_of(GraphLocation(int(e), float(t))) == v
    # interior nodes edge by edge, increasing t
    assert m.edge_nodes[0][1:-1].tolist() == [4, 5, 6]
    assert m.edge_nodes[1][1:-1].tolist() == [7, 8, 9]


def test_locate_examples():
    m = build_mesh(line_graph(1.0), 0.25)
    i, u = locate(m, GraphLocation(0, 0.6))
    assert i == 2 and u == pytest.approx(0.4, abs=1e-12)
    assert locate(m, GraphLocation(0, 0.5)) == (1, 1.0)
    assert locate(m, GraphLocation(0, 0.0)) == (0, 0.0)


def test_evaluate_basis_examples():
    g = star_graph(3, 1.0)
    m = build_mesh(g, 0.25)
    b = evaluate_basis(m, GraphLocation(1, 0.125))
    assert sorted(b.weights) == pytest.approx([0.5, 0.5])
    b = evaluate_basis(m, GraphLocation(1, 0.5))
    assert b.weights == [1.0] and b.indices == [m.edge_nodes[1][2]]
    centre = g.vertex_of(GraphLocation(0, 0.0))
    for e in range(3):
        b = evaluate_basis(m, GraphLocation(e, 0.0))
        assert b.indices == [centre] and b.weights == [1.0]


def test_evaluate_field_examples():
    m = build_mesh(grid13_graph(), 0.3)
    locs = [GraphLocation(e, t) for e, t in [(0, 0.1), (5, 0.77), (15, 1.0)]]
    np.testing.assert_allclose(evaluate_field(m, locs, np.ones(m.K)), 1.0, atol=1e-12)
    for k in (0, 20, m.K - 1):
        loc = GraphLocation(int(m.vertex_edge[k]), float(m.vertex_t[k]))
        assert evaluate_field(m, [loc], np.eye(m.K)[k])[0] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        evaluate_field(m, locs, np.ones(m.K + 1))


def test_k_formula_and_tiling():
    for g, h in [(square_graph(), 0.13), (grid13_graph(), 0.07), (desk_design().graph, 0.06)]:
        m = build_mesh(g, h)
        assert m.K == g.n_vertices + int(np.sum(m.n_per_edge - 1))
        assert np.all(m.interval_width > 0)
        assert np.all(m.interval_width <= h * (1 + 1e-12))
        for e in range(g.n_edges):
            w = m.interval_width[m.interval_offset[e]:m.interval_offset[e + 1]].sum()
            assert abs(w - g.lengths[e]) <= 1e-12 * g.lengths[e]
        assert len(np.unique(np.concatenate(m.edge_nodes))) == m.K


def test_desk_mesh_size():
    m = build_mesh(desk_design().graph, 0.06)
    assert 300 <= m.K <= 600


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 7), st.floats(0.0, 1.0)), min_size=1, max_size=50))
def test_partition_of_unity(locs):
    m = build_mesh(square_graph(), 0.17)
    A = m.basis_matrix(locs)
    np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 1.0, atol=1e-12)
    assert np.all(np.diff(A.indptr) <= 2)
    assert np.all(A.data >= 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 7), st.floats(-3, 3), st.floats(-3, 3),
       st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_linear_reproduction(edge, a, b, ts):
    m = build_mesh(square_graph(), 0.11)
    w = np.zeros(m.K)
    nodes = m.edge_nodes[edge]
    w[nodes] = a + b * np.linspace(0, 1, len(nodes))
    got = m.evaluate_field([(edge, t) for t in ts], w)
    np.testing.assert_allclose(got, a + b * np.asarray(ts), atol=1e-12)
