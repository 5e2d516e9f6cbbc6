"""Mass/stiffness assembly and the alpha = 1 Whittle-Matern precision on a mesh."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cholesky import CholeskyFactor, Symbolic, factorize, marginal_variances, sample_field
from .mesh import Mesh

__all__ = [
    "HyperParams",
    "assemble_mass",
    "assemble_stiffness",
    "precision",
    "factorize",
    "sample_field",
    "marginal_variances",
    "CholeskyFactor",
    "Symbolic",
]


@dataclass(frozen=True)
class HyperParams:
    """Practical range ``rho`` and marginal variance ``sigma2`` of the field."""

    rho: float
    sigma2: float

    def __post_init__(self):
        if not (self.rho > 0 and self.sigma2 > 0):
            raise ValueError(f"rho and sigma2 must be positive, got {self.rho}, {self.sigma2}")

    @property
    def kappa(self) -> float:
        return 2.0 / self.rho

    @property
    def tau2(self) -> float:
        return 1.0 / (2.0 * self.kappa * self.sigma2)


def _assemble(mesh: Mesh, diag: np.ndarray, off: np.ndarray) -> sp.csc_matrix:
    i, j = mesh.interval_left, mesh.interval_right
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([diag, diag, off, off])
    M = sp.csc_matrix((vals, (rows, cols)), shape=(mesh.K, mesh.K))
    M.sum_duplicates()
    M.sort_indices()
    return M


def assemble_mass(mesh: Mesh) -> sp.csc_matrix:
    """Consistent mass matrix: ``h/3`` per endpoint diagonal, ``h/6`` off-diagonal."""
    h = mesh.interval_width
    return _assemble(mesh, h / 3.0, h / 6.0)


def assemble_stiffness(mesh: Mesh) -> sp.csc_matrix:
    h = mesh.interval_width
    return _assemble(mesh, 1.0 / h, -1.0 / h)


def precision(mesh: Mesh, theta: HyperParams, C=None, G=None) -> sp.csc_matrix:
    """Precision ``Q = tau^2 (kappa^2 C + G)`` of the FEM weights.

    ``kappa = 2/rho`` and ``tau^2 = 1/(2 kappa sigma2)``, which makes the
    marginal variance far from vertices equal to ``sigma2`` and the
    correlation at distance ``d`` close to ``exp(-2 d / rho)``. Precomputed
    ``C`` and ``G`` may be passed to skip reassembly.
    """
    C = assemble_mass(mesh) if C is None else C
    G = assemble_stiffness(mesh) if G is None else G
    k2 = theta.kappa ** 2
    # C and G share one pattern, so combine data arrays directly
    if np.array_equal(C.indptr, G.indptr) and np.array_equal(C.indices, G.indices):
        Q = C.copy()
        Q.data = (k2 * C.data + G.data) * theta.tau2
        return Q
    return ((k2 * C + G) * theta.tau2).tocsc()

