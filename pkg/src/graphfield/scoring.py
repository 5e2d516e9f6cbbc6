"""Scores for Gaussian predictive distributions: RMSE, CRPS and interval coverage."""
from __future__ import annotations

import numpy as np
from scipy.stats import norm

_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)
# conventional rounded quantile, shared with the credible intervals elsewhere
Z95 = 1.96


def _flat(*arrays):
    out = [np.asarray(a, dtype=float).ravel() for a in arrays]
    n = out[0].size
    if n == 0:
        raise ValueError("scores need at least one value")
    if any(a.size != n for a in out):
        raise ValueError("inputs must have equal lengths")
    return out


def rmse(means, truths) -> float:
    m, t = _flat(means, truths)
    return float(np.sqrt(np.mean((m - t) ** 2)))


def crps_gaussian(mean, sd, truth):
    """CRPS of ``N(mean, sd^2)`` at ``truth``, elementwise.

    Uses the closed form ``sd * (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))``
    with ``z = (truth - mean) / sd``.
    """
    mean, sd, truth = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mean, sd, truth)))
    if np.any(sd <= 0):
        raise ValueError("sd must be positive")
    z = (truth - mean) / sd
    out = sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return out if out.ndim else float(out)


def mean_crps(means, sds, truths) -> float:
    m, s, t = _flat(means, sds, truths)
    return float(np.mean(crps_gaussian(m, s, t)))


def coverage(means, sds, truths, level: float = 0.95) -> float:
    """Fraction of ``truths`` inside the closed central ``level`` interval."""
    m, s, t = _flat(means, sds, truths)
    if np.any(s <= 0):
        raise ValueError("sd must be positive")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = Z95 if level == 0.95 else norm.ppf(0.5 * (1.0 + level))
    # slack of a few ulps so boundary truths built as m + z*s stay inside
    slack = 8 * np.finfo(float).eps * (np.abs(m) + np.abs(t) + z * s)
    return float(np.mean(np.abs(t - m) <= z * s + slack))


def score_all(means, sds, truths, level: float = 0.95) -> dict[str, float]:
    return {
        "rmse": rmse(means, truths),
        "crps": mean_crps(means, sds, truths),
        "coverage": coverage(means, sds, truths, level),
    }
