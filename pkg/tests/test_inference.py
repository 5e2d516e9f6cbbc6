import math

import numpy as np
import pytest

from graphfield.demo import line_graph, star_graph
from graphfield.graph import GraphLocation
from graphfield.inference import (
    Dataset,
    LinearGaussianModel,
    ModelSpec,
    average_speed_estimand,
    fit_linear,
    fit_nonlinear,
    log_marginal,
    posterior_sample,
    predict,
    replicate_operators,
)
from graphfield.inference import _linear_designs
from graphfield.mesh import build_mesh
from graphfield.observe import LineObs, PointObs, line_scale_factor
from graphfield.paths import make_path, midpoint

from oracles import (
    dense_line_row,
    dense_log_marginal,
    dense_point_rows,
    dense_posterior,
    dense_Q,
    eta_moments,
    hat_values,
    log_prior,
)

HYPERS = [
    np.array([0.0, math.log(0.7), math.log(50.0), math.log(8.0)]),
    np.array([0.4, math.log(1.3), math.log(4.0), math.log(0.5)]),
]


@pytest.fixture(scope="module")
def small():
    g = star_graph(3, 1.0)
    mesh = build_mesh(g, 0.34)
    assert mesh.K == 10
    x = np.linspace(-1.0, 1.0, mesh.K) ** 2
    p_cross = make_path(g, [(0, 0.8, 0.0), (1, 0.0, 0.55)])
    p_arm = make_path(g, [(2, 0.15, 0.9)])
    pts = [
        PointObs(GraphLocation(0, 0.3), 1.2, 0),
        PointObs(GraphLocation(2, 0.5), 0.4, 0),
        PointObs(GraphLocation(1, 0.7), -0.3, 1),
    ]
    lns = [
        LineObs(p_cross, 2.1, 0),
        LineObs(p_arm, 0.6, 1),
        LineObs(p_cross, 1.7, 1),
    ]
    return mesh, x, Dataset(pts, lns, 2)


def dense_designs(mesh, x, data, hyper, support="IM", averaged=False, line_scale="inverse_sq"):
    tauP, tauL = math.exp(hyper[2]), math.exp(hyper[3])
    Z = np.column_stack([np.ones(mesh.K), x])
    out = []
    for r in range(data.R):
        pts = [o for o in data.points if o.replicate == r]
        lns = [o for o in data.lines if o.replicate == r]
        AP = dense_point_rows(mesh, [o.location for o in pts])
        rows, xrows = [], []
        for o in lns:
            L = o.path.length
            raw = dense_line_row(mesh, o.path)
            if support == "IM":
                a = raw / L if averaged else raw
                rows.append(a)
                xrows.append(a @ Z)
            else:
                mp = midpoint(mesh.graph, o.path)
                scale = 1.0 if averaged else L
                rows.append(scale * hat_values(mesh, mp.edge, [mp.t])[0])
                xrows.append(scale * np.array([1.0, raw @ x / L]))
        A = np.vstack([AP] + rows) if rows else AP
        X = np.vstack([AP @ Z] + xrows) if xrows else AP @ Z
        y = np.array([o.value for o in pts] + [o.value for o in lns])
        h = line_scale_factor([o.path.length for o in lns], line_scale)
        var = np.concatenate([np.full(len(pts), 1 / tauP), h / tauL])
        out.append((A, X, y, var))
    return out


@pytest.mark.parametrize("support", ["IM", "SM"])
@pytest.mark.parametrize("hi", [0, 1])
def test_log_marginal_matches_dense(small, support, hi):
    mesh, x, data = small
    hyper = HYPERS[hi]
    spec = ModelSpec(mesh, x, support=support, line_average=False)
    got = log_marginal(spec, data, hyper)
    Q = dense_Q(mesh, math.exp(hyper[1]), math.exp(hyper[0]))
    ref = dense_log_marginal(Q, dense_designs(mesh, x, data, hyper, support)) + log_prior(hyper)
    assert got == pytest.approx(ref, rel=1e-8)


def test_log_marginal_single_replicate_unit_scale(small):
    mesh, x, data = small
    one = Dataset([o for o in data.points if o.replicate == 0], [o for o in data.lines if o.replicate == 0], 1)
    hyper = HYPERS[0]
    spec = ModelSpec(mesh, x, line_scale="unit", line_average=True)
    Q = dense_Q(mesh, math.exp(hyper[1]), math.exp(hyper[0]))
    ref = dense_log_marginal(Q, dense_designs(mesh, x, one, hyper, averaged=True, line_scale="unit"))
    assert log_marginal(spec, one, hyper) == pytest.approx(ref + log_prior(hyper), rel=1e-8)


def test_no_observations_gives_log_prior(small):
    mesh, x, _ = small
    hyper = HYPERS[1]
    assert log_marginal(ModelSpec(mesh, x), Dataset([], [], 1), hyper) == pytest.approx(log_prior(hyper), rel=1e-12)


def test_duplicated_observations_match_dense(small):
    mesh, x, data = small
    dup = Dataset(data.points + data.points, data.lines + data.lines, 2)
    hyper = HYPERS[0]
    Q = dense_Q(mesh, math.exp(hyper[1]), math.exp(hyper[0]))
    ref = dense_log_marginal(Q, dense_designs(mesh, x, dup, hyper)) + log_prior(hyper)
    got = log_marginal(ModelSpec(mesh, x, line_average=False), dup, hyper)
    assert got == pytest.approx(ref, rel=1e-8)
    assert got != pytest.approx(log_marginal(ModelSpec(mesh, x, line_average=False), data, hyper), rel=1e-6)


@pytest.mark.parametrize("support", ["IM", "SM"])
def test_posterior_matches_dense(small, support):
    mesh, x, data = small
    hyper = HYPERS[1]
    fit = fit_linear(ModelSpec(mesh, x, support=support, line_average=False), data, hyper=hyper)
    Q = dense_Q(mesh, math.exp(hyper[1]), math.exp(hyper[0]))
    mean, Sigma, _ = dense_posterior(Q, dense_designs(mesh, x, data, hyper, support))
    Z = np.column_stack([np.ones(mesh.K), x])
    m, s = eta_moments(mean, Sigma, mesh.K, 2, Z)
    np.testing.assert_allclose(fit.eta_mean, m, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fit.eta_sd, s, rtol=1e-8)
    np.testing.assert_allclose(fit.beta_mean, mean[-2:], rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(fit.beta_cov, Sigma[-2:, -2:], rtol=1e-8)


def test_predict_at_locations_matches_dense(small):
    mesh, x, data = small
    hyper = HYPERS[0]
    fit = fit_linear(ModelSpec(mesh, x, line_average=False), data, hyper=hyper)
    locs = [(0, 0.05), (1, 0.5), (2, 0.99), (2, 1.0)]
    mean, sd = predict(fit, locs)
    Q = dense_Q(mesh, math.exp(hyper[1]), math.exp(hyper[0]))
    mu, Sigma, _ = dense_posterior(Q, dense_designs(mesh, x, data, hyper))
    B = dense_point_rows(mesh, locs)
    Zl = np.column_stack([np.ones(len(locs)), B @ x])
    for r in range(2):
        L = np.zeros((len(locs), len(mu)))
        L[:, r * mesh.K:(r + 1) * mesh.K] = B
        L[:, -2:] = Zl
        np.testing.assert_allclose(mean[:, r], L @ mu, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(sd[:, r], np.sqrt(np.einsum("ij,jk,ik->i", L, Sigma, L)), rtol=1e-8)


def test_latent_precision_identity(small):
    mesh, x, data = small
    hyper = HYPERS[1]
    spec = ModelSpec(mesh, x, line_average=False)
    designs, keys = _linear_designs(spec, replicate_operators(spec, data))
    model = LinearGaussianModel(mesh, designs, spec.priors, keys)
    Q = dense_Q(mesh, math.exp(hyper[1]), math.exp(hyper[0]))
    dd = dense_designs(mesh, x, data, hyper)
    for gi, g in enumerate(model.groups):
        A, _, _, var = dd[g.reps[0]]
        ref = Q + A.T @ (A / var[:, None])
        np.testing.assert_allclose(model.latent_precision(hyper, gi).toarray(), ref, atol=1e-12 * np.abs(ref).max())


def test_noiseless_interpolation():
    g = line_graph(2.0)
    mesh = build_mesh(g, 0.25)
    rng = np.random.default_rng(3)
    w = rng.standard_normal(mesh.K)
    locs = [GraphLocation(0, t) for t in (0.1, 0.37, 0.5, 0.81)]
    y = mesh.evaluate_field(locs, w) + 1.0
    data = Dataset([PointObs(l, float(v)) for l, v in zip(locs, y)], [], 1)
    hyper = np.array([0.0, 0.0, math.log(1e12), math.log(1e12)])
    fit = fit_linear(ModelSpec(mesh), data, hyper=hyper)
    mean, _ = predict(fit, locs)
    assert np.max(np.abs(mean[:, 0] - y)) < 1e-6


def test_sd_smaller_at_observed_point():
    g = line_graph(5.0)
    mesh = build_mesh(g, 0.1)
    data = Dataset([PointObs(GraphLocation(0, 0.1), 0.3)], [], 1)
    hyper = np.array([0.0, 0.0, math.log(100.0), 0.0])
    fit = fit_linear(ModelSpec(mesh), data, hyper=hyper)
    _, sd = predict(fit, [(0, 0.1), (0, 0.9)])
    assert sd[0, 0] < sd[1, 0]


def test_replicate_exchangeability(small):
    mesh, x, data = small
    perm = {0: 1, 1: 0}
    swapped = Dataset([o._replace(replicate=perm[o.replicate]) for o in data.points],
                      [o._replace(replicate=perm[o.replicate]) for o in data.lines], 2)
    spec = ModelSpec(mesh, x, line_average=False, multistart=False)
    a = fit_linear(spec, data)
    b = fit_linear(spec, swapped)
    assert np.array_equal(a.hyper, b.hyper)
    np.testing.assert_array_equal(a.eta_mean[:, [1, 0]], b.eta_mean)


def test_im_sm_coincide_for_tiny_paths():
    g = line_graph(1.0)
    mesh = build_mesh(g, 0.25)
    # paths inside one mesh interval: a piecewise-linear integrand is linear there
    paths = [make_path(g, [(0, 0.30, 0.32)]), make_path(g, [(0, 0.6, 0.61)])]
    data = Dataset([PointObs(GraphLocation(0, 0.9), 0.5)],
                   [LineObs(p, v) for p, v in zip(paths, (0.02, 0.011))], 1)
    x = np.linspace(0, 1, mesh.K)
    hyper = HYPERS[0]
    im = log_marginal(ModelSpec(mesh, x, support="IM", line_average=False), data, hyper)
    sm = log_marginal(ModelSpec(mesh, x, support="SM", line_average=False), data, hyper)
    assert im == pytest.approx(sm, rel=1e-12)


# ---------------------------------------------------------------------------
# log link


def dense_taylor(mesh, x, data, hyper, n_iter):
    """Reference iterated linearization with fixed hyperparameters, averaged lines."""
    from graphfield.paths import simpson_scheme

    K, R = mesh.K, data.R
    Z = np.column_stack([np.ones(K), x])
    Q = dense_Q(mesh, math.exp(hyper[1]), math.exp(hyper[0]))
    tauP, tauL = math.exp(hyper[2]), math.exp(hyper[3])
    nodes = []
    ys = np.array([o.value for o in data.points] + [o.value for o in data.lines])
    w_t = np.zeros((K, R))
    b_t = np.array([math.log(np.median(ys[ys > 0])), 0.0])
    for r in range(R):
        obs = []
        for o in data.points:
            if o.replicate == r:
                obs.append((hat_values(mesh, o.location.edge, [o.location.t]), np.ones(1), o.value, 1 / tauP))
        for o in data.lines:
            if o.replicate == r:
                sch = simpson_scheme(mesh, o.path)
                H = np.vstack([hat_values(mesh, e, [t]) for e, t in zip(sch.edges, sch.ts)])
                obs.append((H, sch.weights / o.path.length, o.value, 1 / (tauL * o.path.length ** 2)))
        nodes.append(obs)
    history = []
    for _ in range(n_iter):
        designs = []
        for r in range(R):
            A, X, y, var = [], [], [], []
            for H, c, v, s2 in nodes[r]:
                eta_n = H @ w_t[:, r] + H @ Z @ b_t
                ce = c * np.exp(eta_n)
                A.append(ce @ H)
                X.append(ce @ H @ Z)
                y.append(v - ce @ (1.0 - eta_n))
                var.append(s2)
            designs.append((np.array(A), np.array(X), np.array(y), np.array(var)))
        mean, Sigma, _ = dense_posterior(Q, designs)
        m, _ = eta_moments(mean, Sigma, K, R, Z)
        history.append(m)
        w_t = mean[:K * R].reshape(R, K).T
        b_t = mean[K * R:]
    return history


def test_taylor_iterations_match_dense():
    g = star_graph(3, 1.0)
    mesh = build_mesh(g, 0.34)
    x = np.linspace(-0.5, 0.5, mesh.K)
    path = make_path(g, [(0, 0.7, 0.0), (2, 0.0, 0.4)])
    data = Dataset([PointObs(GraphLocation(1, 0.4), 1.3), PointObs(GraphLocation(0, 0.9), 0.9)],
                   [LineObs(path, 1.1)], 1)
    hyper = np.array([math.log(0.3), math.log(0.8), math.log(100.0), math.log(50.0)])
    spec = ModelSpec(mesh, x, link="log", lin_tol=1e-12, lin_max_iter=6)
    fit = fit_nonlinear(spec, data, hyper=hyper)
    ref = dense_taylor(mesh, x, data, hyper, len(fit.lin_history))
    assert len(fit.lin_history) >= 3
    for h, m in zip(fit.lin_history, ref):
        np.testing.assert_allclose(h["eta_mean"], m, rtol=1e-8, atol=1e-10)


def test_constant_truth_recovered():
    g = line_graph(3.0)
    mesh = build_mesh(g, 0.1)
    c = 0.7
    locs = [GraphLocation(0, t) for t in np.linspace(0.05, 0.95, 8)]
    paths = [make_path(g, [(0, a, a + 0.2)]) for a in (0.0, 0.3, 0.55, 0.8)]
    data = Dataset([PointObs(l, math.exp(c)) for l in locs], [LineObs(p, math.exp(c)) for p in paths], 1)
    fit = fit_nonlinear(ModelSpec(mesh, link="log"), data)
    assert np.all(np.abs(fit.eta_mean - c) <= 3 * fit.eta_sd + 1e-6)
    # constant data push sigma^2 to zero, so only the linearization is checked
    assert fit.lin_history[-1]["change"] < 1e-4


# ---------------------------------------------------------------------------
# sampling and the averaged-speed estimand


def test_posterior_sample_consistency(small):
    mesh, x, data = small
    fit = fit_linear(ModelSpec(mesh, x, line_average=False), data, hyper=HYPERS[0])
    S = posterior_sample(fit, 10000, seed=11)
    assert S.shape == (10000, 2, mesh.K)
    mean, sd = fit.eta_mean.T, fit.eta_sd.T
    assert np.all(np.abs(S.mean(axis=0) - mean) < 4 * sd / 100)
    np.testing.assert_allclose(S.std(axis=0), sd, rtol=0.05)
    np.testing.assert_array_equal(posterior_sample(fit, 7, seed=3), posterior_sample(fit, 7, seed=3))
    assert posterior_sample(fit, 0, seed=1).shape == (0, 2, mesh.K)


def test_estimand_constant_zero():
    med, lo, hi = average_speed_estimand(np.zeros((20, 3, 5)))
    np.testing.assert_allclose(med, 1.0)
    np.testing.assert_allclose(hi - lo, 0.0)


def test_estimand_lognormal_median():
    rng = np.random.default_rng(0)
    m, s = 0.4, 0.3
    med, _, _ = average_speed_estimand(rng.normal(m, s, size=(20000, 1, 3)))
    np.testing.assert_allclose(med, math.exp(-m), rtol=0.01)


def test_estimand_shift_equivariance():
    rng = np.random.default_rng(1)
    S = rng.normal(0.2, 0.5, size=(50, 4, 6))
    a = average_speed_estimand(S)
    b = average_speed_estimand(S + 0.8)
    for u, v in zip(a, b):
        np.testing.assert_allclose(v, u * math.exp(-0.8), rtol=1e-12)
