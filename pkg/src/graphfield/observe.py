"""Point and line observation operators, noise models and forward simulation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from .graph import GraphLocation
from .mesh import Mesh, as_location_arrays
from .paths import GraphPath, integration_scheme

LINKS = ("identity", "log")
LINE_SCALES = ("unit", "inverse_sq")


class PointObs(NamedTuple):
    location: GraphLocation
    value: float
    replicate: int = 0


class LineObs(NamedTuple):
    path: GraphPath
    value: float
    replicate: int = 0


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian noise: ``sigma2_P`` on points, ``h(|L|) * sigma2_L`` on lines.

    ``line_scale`` is ``"unit"`` for ``h = 1`` or ``"inverse_sq"`` for
    ``h(|L|) = 1/|L|^2``.
    """

    sigma2_P: float
    sigma2_L: float
    line_scale: str = "inverse_sq"

    def __post_init__(self):
        if self.line_scale not in LINE_SCALES:
            raise ValueError(f"line_scale must be one of {LINE_SCALES}")
        if self.sigma2_P < 0 or self.sigma2_L < 0:
            raise ValueError("noise variances must be non-negative")

    def line_variances(self, lengths) -> np.ndarray:
        return line_scale_factor(lengths, self.line_scale) * self.sigma2_L


def line_scale_factor(lengths, kind: str) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=float)
    if kind == "unit":
        return np.ones_like(lengths)
    if kind == "inverse_sq":
        return 1.0 / lengths ** 2
    raise ValueError(f"unknown line scale {kind!r}")


@dataclass
class SparseDesign:
    """Observation operator; ``block[i]`` is the observation id of row ``i``."""

    A: sp.csr_matrix
    block: np.ndarray

    @property
    def shape(self):
        return self.A.shape


def point_matrix(mesh: Mesh, locs) -> SparseDesign:
    A = mesh.basis_matrix(locs)
    return SparseDesign(A, np.arange(A.shape[0]))


def path_lengths(paths: Sequence[GraphPath]) -> np.ndarray:
    return np.array([p.length for p in paths], dtype=float)


def line_matrix(mesh: Mesh, paths: Sequence[GraphPath], averaged: bool = False) -> SparseDesign:
    """Rows are Simpson-weighted sums of basis rows along each path.

    With ``averaged`` every row is divided by its path length, so rows sum to
    one instead of to ``|L_i|``.
    """
    n = len(paths)
    if n == 0:
        return SparseDesign(sp.csr_matrix((0, mesh.K)), np.zeros(0, dtype=int))
    sch = integration_scheme(mesh, paths)
    Bq = mesh.basis_matrix((sch.edges, sch.ts))
    W = sp.csr_matrix((sch.weights, (sch.block, np.arange(len(sch.weights)))), shape=(n, len(sch.weights)))
    A = (W @ Bq).tocsr()
    if averaged:
        A = sp.diags(1.0 / path_lengths(paths)) @ A
    A = sp.csr_matrix(A)
    A.sort_indices()
    return SparseDesign(A, np.arange(n))


def average_covariate(mesh: Mesh, x, path: GraphPath) -> float:
    """Length-average of the piecewise-linear covariate ``x`` along ``path``."""
    x = np.asarray(x, dtype=float)
    row = line_matrix(mesh, [path], averaged=True).A
    return float((row @ x)[0])


def simulate_observations(mesh: Mesh, w_r, beta0: float, beta1: float, x, link: str,
                          noise: NoiseModel, point_locs, paths: Sequence[GraphPath], seed,
                          averaged: bool | None = None) -> tuple[list[PointObs], list[LineObs]]:
    """Simulate point and line data for each replicate column of ``w_r``.

    ``eta_r = beta0 + beta1 * x + w_r`` at mesh vertices. The link is applied
    at evaluation points (point locations and Simpson nodes) after linear
    interpolation of ``eta_r``. Line values are raw integrals unless
    ``averaged``; by default lines are averaged for the log link only.
    """
    if link not in LINKS:
        raise ValueError(f"link must be one of {LINKS}")
    W = np.asarray(w_r, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if W.shape[0] != mesh.K:
        raise ValueError("latent weights must have K rows")
    x = np.zeros(mesh.K) if x is None else np.asarray(x, dtype=float)
    averaged = (link == "log") if averaged is None else averaged
    g = np.exp if link == "log" else (lambda v: v)
    rng = np.random.default_rng(seed)
    eta = beta0 + beta1 * x[:, None] + W

    pe, pt = as_location_arrays(point_locs)
    AP = mesh.basis_matrix((pe, pt))
    lengths = path_lengths(paths)
    if len(paths):
        sch = integration_scheme(mesh, paths)
        Bq = mesh.basis_matrix((sch.edges, sch.ts))
        Wq = sp.csr_matrix((sch.weights, (sch.block, np.arange(len(sch.weights)))),
                           shape=(len(paths), len(sch.weights)))
    sd_p = np.sqrt(noise.sigma2_P)
    sd_l = np.sqrt(noise.line_variances(lengths)) if len(paths) else np.zeros(0)

    points, lines = [], []
    for r in range(W.shape[1]):
        yp = g(AP @ eta[:, r]) + sd_p * rng.standard_normal(AP.shape[0])
        points.extend(PointObs(GraphLocation(int(e), float(t)), float(v), r) for e, t, v in zip(pe, pt, yp))
        if len(paths):
            yl = Wq @ g(Bq @ eta[:, r])
            if averaged:
                yl = yl / lengths
            yl = yl + sd_l * rng.standard_normal(len(paths))
            lines.extend(LineObs(p, float(v), r) for p, v in zip(paths, yl))
    return points, lines
