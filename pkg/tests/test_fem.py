import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from graphfield.cholesky import Symbolic, factorize, minimum_degree
from graphfield.demo import grid13_graph, line_graph, square_graph, star_graph
from graphfield.errors import NotPositiveDefinite
from graphfield.fem import (
    HyperParams,
    assemble_mass,
    assemble_stiffness,
    marginal_variances,
    precision,
    sample_field,
)
from graphfield.graph import GraphLocation
from graphfield.mesh import build_mesh

from oracles import dense_fem


def test_two_interval_matrices():
    m = build_mesh(line_graph(1.0), 0.5)
    # mesh order: vertices 0, 1 then the interior node 2
    order = [0, 2, 1]
    C = assemble_mass(m).toarray()[np.ix_(order, order)]
    G = assemble_stiffness(m).toarray()[np.ix_(order, order)]
    np.testing.assert_allclose(C, [[1 / 6, 1 / 12, 0], [1 / 12, 1 / 3, 1 / 12], [0, 1 / 12, 1 / 6]], atol=1e-15)
    np.testing.assert_allclose(G, [[2, -2, 0], [-2, 4, -2], [0, -2, 2]], atol=1e-14)


def test_degree_three_vertex_diagonals():
    g = star_graph(3, 1.0)
    m = build_mesh(g, 0.25)
    c = g.vertex_of(GraphLocation(0, 0.0))
    assert assemble_mass(m)[c, c] == pytest.approx(3 * 0.25 / 3, abs=1e-15)
    assert assemble_stiffness(m)[c, c] == pytest.approx(3 / 0.25, abs=1e-12)


@pytest.mark.parametrize("graph,h", [(square_graph(), 0.3), (grid13_graph(), 0.45), (star_graph(4, 0.9), 0.2)])
def test_matches_quadrature(graph, h):
    m = build_mesh(graph, h)
    assert m.K <= 60
    Cq, Gq = dense_fem(m)
    np.testing.assert_allclose(assemble_mass(m).toarray(), Cq, atol=1e-12)
    np.testing.assert_allclose(assemble_stiffness(m).toarray(), Gq, atol=1e-12 * np.abs(Gq).max())


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 1.0))
def test_mass_and_kernel(h):
    g = grid13_graph()
    m = build_mesh(g, h)
    C, G = assemble_mass(m), assemble_stiffness(m)
    one = np.ones(m.K)
    assert abs(one @ C @ one - g.total_length) <= 1e-10 * g.total_length
    assert np.max(np.abs(G @ one)) <= 1e-12 * max(1.0, np.abs(G.data).max())
    assert abs(C - C.T).max() == 0 and abs(G - G.T).max() == 0


def test_precision_parametrization():
    m = build_mesh(square_graph(), 0.2)
    C, G = assemble_mass(m), assemble_stiffness(m)
    t = HyperParams(2.0, 1.0)
    assert t.kappa == 1.0 and t.tau2 == 0.5
    np.testing.assert_allclose(precision(m, t).toarray(), 0.5 * (C + G).toarray(), rtol=1e-14)
    Q1 = precision(m, HyperParams(0.7, 1.0)).toarray()
    Q4 = precision(m, HyperParams(0.7, 4.0)).toarray()
    np.testing.assert_allclose(Q4, Q1 / 4, rtol=1e-14)
    with pytest.raises(ValueError):
        HyperParams(-1.0, 1.0)


def test_long_edge_variance_and_correlation():
    rho = 1.0
    m = build_mesh(line_graph(50 * rho), rho / 20)
    Q = precision(m, HyperParams(rho, 1.3)).toarray()
    S = np.linalg.inv(Q)
    nodes = m.edge_nodes[0]
    mid = nodes[len(nodes) // 2]
    assert S[mid, mid] == pytest.approx(1.3, rel=0.05)
    end = nodes[0]
    assert S[end, end] > 1.5 * 1.3
    v = marginal_variances(factorize(precision(m, HyperParams(rho, 1.3))))
    np.testing.assert_allclose(v, np.diag(S), rtol=1e-8)


def test_kirchhoff_effect():
    g = star_graph(3, 10.0)
    rho = 1.0
    m = build_mesh(g, rho / 20)
    S = np.linalg.inv(precision(m, HyperParams(rho, 1.0)).toarray())
    # points 0.25 from the centre on two different arms vs 0.5 apart on one long edge interior
    a = m.edge_nodes[0][5]
    b = m.edge_nodes[1][5]
    c1, c2 = m.edge_nodes[2][100], m.edge_nodes[2][110]
    corr = lambda i, j: S[i, j] / math.sqrt(S[i, i] * S[j, j])  # noqa: E731
    assert 0 < corr(a, b) < corr(c1, c2)


# ---------------------------------------------------------------------------
# sparse Cholesky, run on every kernel backend


def random_spd(n, density, seed):
    rng = np.random.default_rng(seed)
    B = sp.random(n, n, density=density, random_state=rng)
    return sp.csc_matrix(B @ B.T + n * sp.eye(n))


def test_identity_and_2x2(backend):
    f = factorize(sp.eye(6))
    np.testing.assert_allclose(f.L.toarray(), np.eye(6))
    assert f.logdet() == 0.0
    assert factorize(sp.csc_matrix([[2.0, 1.0], [1.0, 2.0]])).logdet() == pytest.approx(math.log(3), rel=1e-14)


def test_random_spd_solve_logdet(backend):
    Q = random_spd(50, 0.08, 1)
    f = factorize(Q)
    b = np.random.default_rng(2).standard_normal(50)
    x = f.solve(b)
    assert np.max(np.abs(Q @ x - b)) < 1e-10 * np.max(np.abs(b))
    assert f.logdet() == pytest.approx(np.linalg.slogdet(Q.toarray())[1], rel=1e-8)
    Qd = Q.toarray()[np.ix_(f.perm, f.perm)]
    L = f.L.toarray()
    assert np.max(np.abs(Qd - L @ L.T)) < 1e-10 * np.abs(Qd).max()
    np.testing.assert_allclose(f.marginal_variances(), np.diag(np.linalg.inv(Q.toarray())), rtol=1e-8)
    np.testing.assert_allclose(factorize(3.0 * sp.eye(7)).marginal_variances(), 1 / 3)


def test_selected_inverse_entries(backend):
    m = build_mesh(grid13_graph(), 0.4)
    Q = precision(m, HyperParams(1.1, 0.8))
    f = factorize(Q)
    S = f.selected_inverse()
    Sd = np.linalg.inv(Q.toarray())
    r, c = S.nonzero()
    np.testing.assert_allclose(S.toarray()[r, c], Sd[r, c], rtol=1e-8)
    # the pattern covers Q
    Qc = Q.tocoo()
    assert np.all(np.asarray(S[Qc.row, Qc.col]).ravel() != 0)


def test_multiple_rhs_and_reuse(backend):
    Q = random_spd(30, 0.1, 5)
    sym = Symbolic(Q)
    f = sym.factor(sp.csc_matrix(Q).data)
    B = np.random.default_rng(0).standard_normal((30, 4))
    np.testing.assert_allclose(Q @ f.solve(B), B, atol=1e-10)
    Q2 = sp.csc_matrix(Q * 2.0)
    f2 = factorize(Q2, symbolic=sym)
    assert f2.symbolic is sym
    assert f2.logdet() == pytest.approx(f.logdet() + 30 * math.log(2), rel=1e-12)


def test_not_positive_definite(backend):
    with pytest.raises(NotPositiveDefinite):
        factorize(sp.csc_matrix([[1.0, 2.0], [2.0, 1.0]]))


def test_backends_agree():
    from graphfield import _kernels_py
    from conftest import _compiled

    if _compiled is None:
        pytest.skip("extension not built")
    Q = random_spd(80, 0.05, 9)
    sym = Symbolic(Q)
    args = (sym.n, sym.Cp, sym.Ci, np.ascontiguousarray(sp.csc_matrix(Q).data[sym.src]), sym.parent, sym.Lp)
    Li1, Lx1, s1 = _kernels_py.chol_numeric(*args)
    Li2, Lx2, s2 = _compiled.chol_numeric(*args)
    assert s1 == s2
    np.testing.assert_array_equal(Li1, Li2)
    np.testing.assert_allclose(Lx1, Lx2, rtol=1e-13)


def test_minimum_degree_is_permutation():
    Q = random_spd(40, 0.1, 3)
    p = minimum_degree(Q)
    assert sorted(p.tolist()) == list(range(40))


def test_sampling_moments():
    m = build_mesh(star_graph(3, 1.3), 0.1)
    assert m.K == 40
    Q = precision(m, HyperParams(1.0, 1.0))
    S = np.linalg.inv(Q.toarray())
    n = 20000
    W = sample_field(factorize(Q), n, seed=7)
    assert W.shape == (40, n)
    sd = np.sqrt(np.diag(S))
    assert np.all(np.abs(W.mean(axis=1)) < 4 * sd / math.sqrt(n))
    emp = np.cov(W)
    se = np.sqrt((S ** 2 + np.outer(np.diag(S), np.diag(S))) / n)
    assert np.max(np.abs(emp - S) / se) < 4
    np.testing.assert_array_equal(sample_field(factorize(Q), 3, 1), sample_field(factorize(Q), 3, 1))
    assert not np.array_equal(sample_field(factorize(Q), 3, 1), sample_field(factorize(Q), 3, 2))


def test_backend_env_switch():
    import os
    import subprocess
    import sys

    env = dict(os.environ, GRAPHFIELD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import graphfield; print(graphfield.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
