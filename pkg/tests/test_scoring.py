import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from graphfield.scoring import coverage, crps_gaussian, mean_crps, rmse, score_all


def crps_numeric(mu, sd, y):
    """CRPS as the integral of (F(x) - 1{x >= y})^2, split at y."""
    F = lambda x: norm.cdf(x, mu, sd)  # noqa: E731
    lo, hi = mu - 40 * sd, mu + 40 * sd
    a = integrate.quad(lambda x: F(x) ** 2, min(lo, y), y, epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    b = integrate.quad(lambda x: (1 - F(x)) ** 2, y, max(hi, y), epsabs=1e-14, epsrel=1e-13, limit=400)[0]
    return a + b


def test_rmse_examples():
    assert rmse([1, 2], [1, 2]) == 0.0
    assert rmse([1, 2, 3], [1.5, 2.5, 3.5]) == pytest.approx(0.5)
    assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))
    with pytest.raises(ValueError):
        rmse([], [])


def test_crps_at_mean():
    for sd in (0.3, 1.0, 2.7):
        closed = crps_gaussian(0.4, sd, 0.4)
        assert closed == pytest.approx(sd * (math.sqrt(2) - 1) / math.sqrt(math.pi), abs=1e-14)
        assert abs(closed - crps_numeric(0.4, sd, 0.4)) < 1e-10


@pytest.mark.parametrize("z", [-3.0, -0.7, 0.2, 1.96, 4.0])
def test_crps_matches_integral(z):
    assert crps_gaussian(1.0, 0.8, 1.0 + 0.8 * z) == pytest.approx(crps_numeric(1.0, 0.8, 1.0 + 0.8 * z), abs=1e-9)


def test_crps_far_tail():
    # asymptote |y - mu| - sd / sqrt(pi); the ratio itself is 1 - 0.0056 at z = 100
    for z in (100.0, -100.0):
        assert crps_gaussian(0.0, 1.0, z) == pytest.approx(abs(z) - 1 / math.sqrt(math.pi), abs=1e-10)
    assert crps_gaussian(0.0, 1.0, 100.0) / 100.0 == pytest.approx(1.0, abs=1e-2)
    assert crps_gaussian(0.0, 1.0, 1e4) / 1e4 == pytest.approx(1.0, abs=1e-4)
    with pytest.raises(ValueError):
        crps_gaussian(0.0, 0.0, 1.0)


def test_coverage_examples():
    m = np.array([0.0, 1.0, -2.0])
    s = np.array([1.0, 0.5, 2.0])
    assert coverage(m, s, m) == 1.0
    assert coverage(m, s, m + 1.96 * s) == 1.0
    assert coverage(m, s, m - 1.96 * s) == 1.0
    assert coverage(m, s, m + 1.9601 * s) == 0.0
    with pytest.raises(ValueError):
        coverage([], [], [])


def test_coverage_calibration():
    rng = np.random.default_rng(0)
    n = 100_000
    m = rng.normal(size=n)
    s = rng.uniform(0.1, 3.0, n)
    y = rng.normal(m, s)
    assert abs(coverage(m, s, y) - 0.95) < 0.005


def test_score_all_keys():
    d = score_all([0.0, 1.0], [1.0, 1.0], [0.5, 0.5])
    assert set(d) == {"rmse", "crps", "coverage"}


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 10), st.floats(-10, 10), st.floats(0.1, 10))
def test_crps_properties(mu, sd, y, c):
    v = crps_gaussian(mu, sd, y)
    assert v >= 0
    assert v >= crps_gaussian(mu, sd, mu) - 1e-12
    assert crps_gaussian(c * mu, c * sd, c * y) == pytest.approx(c * v, rel=1e-9, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.1, 3), st.floats(-5, 5)), min_size=4, max_size=40))
def test_aggregation_and_monotone_coverage(rows):
    rows = rows[: len(rows) // 2 * 2]
    m, s, y = map(np.array, zip(*rows))
    half = len(m) // 2
    whole = mean_crps(m, s, y)
    parts = 0.5 * (mean_crps(m[:half], s[:half], y[:half]) + mean_crps(m[half:], s[half:], y[half:]))
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-15)
    levels = [0.5, 0.8, 0.9, 0.95, 0.99]
    covs = [coverage(m, s, y, lv) for lv in levels]
    assert covs == sorted(covs)
    assert 0.0 <= covs[0] <= 1.0
