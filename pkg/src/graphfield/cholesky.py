"""Sparse Cholesky factorization of symmetric positive definite matrices.

Factorizes ``P Q P^T = L L^T`` with a minimum-degree permutation ``P``. The
symbolic analysis (ordering, elimination tree, column pointers) depends only
on the sparsity pattern and can be reused across numeric refactorizations,
which is what the hyperparameter optimizer does on every evaluation.
"""
from __future__ import annotations

import heapq

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import NotPositiveDefinite


def minimum_degree(A: sp.spmatrix) -> np.ndarray:
    """Minimum-degree ordering on the elimination graph of ``A + A^T``.

    Ties are broken by lowest index, so the ordering is deterministic.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    S = (abs(A) + abs(A.T)).tocsr()
    adj = [set(S.indices[S.indptr[i]:S.indptr[i + 1]].tolist()) - {i} for i in range(n)]
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    eliminated = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, v = heapq.heappop(heap)
        if eliminated[v] or deg != len(adj[v]):
            continue
        eliminated[v] = True
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.array(order, dtype=np.int64)


class Symbolic:
    """Pattern-dependent part of the factorization of an ``n x n`` matrix."""

    def __init__(self, Q: sp.spmatrix, perm: np.ndarray | None = None):
        Q = sp.csc_matrix(Q)
        Q.sort_indices()
        n = Q.shape[0]
        self.n = n
        self.indptr = Q.indptr.copy()
        self.indices = Q.indices.copy()
        self.perm = minimum_degree(Q) if perm is None else np.asarray(perm, dtype=np.int64)
        self.pinv = np.empty(n, dtype=np.int64)
        self.pinv[self.perm] = np.arange(n)

        # upper triangle of P Q P^T, remembering where each entry came from
        cols = np.repeat(np.arange(n), np.diff(Q.indptr))
        pi, pj = self.pinv[Q.indices], self.pinv[cols]
        keep = np.flatnonzero(pi <= pj)
        order = np.lexsort((pi[keep], pj[keep]))
        self.src = keep[order]
        self.Ci = pi[self.src].astype(np.int64)
        self.Cp = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.Cp, pj[self.src] + 1, 1)
        self.Cp = np.cumsum(self.Cp)

        self.parent = kernels.etree(n, self.Cp, self.Ci)
        counts = kernels.colcounts(n, self.Cp, self.Ci, self.parent)
        self.Lp = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    def factor(self, data: np.ndarray) -> "CholeskyFactor":
        """Numeric factorization for values ``data`` laid out in this pattern."""
        Cx = np.ascontiguousarray(np.asarray(data, dtype=float)[self.src])
        Li, Lx, status = kernels.chol_numeric(self.n, self.Cp, self.Ci, Cx, self.parent, self.Lp)
        if status >= 0:
            raise NotPositiveDefinite(f"non-positive pivot at permuted column {status}")
        return CholeskyFactor(self, Li, Lx)

    def matches(self, Q: sp.csc_matrix) -> bool:
        return (
            Q.shape[0] == self.n
            and np.array_equal(Q.indptr, self.indptr)
            and np.array_equal(Q.indices, self.indices)
        )


class CholeskyFactor:
    """Result of :func:`factorize`.

    Attributes
    ----------
    perm : (n,) int array
        Fill-reducing permutation; row ``i`` of ``P Q P^T`` is row
        ``perm[i]`` of ``Q``.
    L : scipy.sparse.csc_matrix
        Lower-triangular factor with ``P Q P^T = L L^T``.
    """

    def __init__(self, symbolic: Symbolic, Li: np.ndarray, Lx: np.ndarray):
        self.symbolic = symbolic
        self.n = symbolic.n
        self.perm = symbolic.perm
        self._Lp = symbolic.Lp
        self._Li = Li
        self._Lx = Lx
        self._selinv = None

    @property
    def L(self) -> sp.csc_matrix:
        return sp.csc_matrix((self._Lx, self._Li, self._Lp), shape=(self.n, self.n))

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self._Lx[self._Lp[:-1]])))

    def _apply(self, b, fn):
        b = np.asarray(b, dtype=float)
        out = np.array(b, dtype=float, order="F", copy=True)
        if out.ndim == 1:
            fn(self.n, self._Lp, self._Li, self._Lx, out)
        else:
            for j in range(out.shape[1]):
                col = np.ascontiguousarray(out[:, j])
                fn(self.n, self._Lp, self._Li, self._Lx, col)
                out[:, j] = col
        return out

    def solve_L(self, b):
        """``L^{-1} b`` in the permuted ordering."""
        return self._apply(b, kernels.lsolve)

    def solve_Lt(self, b):
        """``L^{-T} b`` in the permuted ordering."""
        return self._apply(b, kernels.ltsolve)

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        y = self.solve_Lt(self.solve_L(b[self.perm]))
        out = np.empty_like(y)
        out[self.perm] = y
        return out

    def sample(self, z) -> np.ndarray:
        """Map standard normal draws ``z`` (n or n x k) to ``N(0, Q^{-1})``."""
        y = self.solve_Lt(z)
        out = np.empty_like(y)
        out[self.perm] = y
        return out

    def selected_inverse(self) -> sp.csc_matrix:
        """Entries of ``Q^{-1}`` on the symmetrized pattern of the factor."""
        if self._selinv is None:
            S = kernels.takahashi(self.n, self._Lp, self._Li, self._Lx)
            cols = np.repeat(np.arange(self.n), np.diff(self._Lp))
            r, c = self.perm[self._Li], self.perm[cols]
            off = r != c
            M = sp.csc_matrix(
                (np.concatenate([S, S[off]]), (np.concatenate([r, c[off]]), np.concatenate([c, r[off]]))),
                shape=(self.n, self.n),
            )
            M.sort_indices()
            self._selinv = M
        return self._selinv

    def marginal_variances(self) -> np.ndarray:
        return self.selected_inverse().diagonal()


def factorize(Q: sp.spmatrix, symbolic: Symbolic | None = None) -> CholeskyFactor:
    """Sparse Cholesky factor of SPD ``Q``; reuses ``symbolic`` when the pattern matches."""
    Q = sp.csc_matrix(Q, dtype=float)
    Q.sort_indices()
    if Q.shape[0] != Q.shape[1]:
        raise ValueError("matrix must be square")
    if symbolic is None or not symbolic.matches(Q):
        symbolic = Symbolic(Q)
    return symbolic.factor(Q.data)


def sample_field(factor: CholeskyFactor, n_samples: int, seed) -> np.ndarray:
    """``n_samples`` columns drawn from ``N(0, Q^{-1})``; deterministic per seed."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((factor.n, n_samples))
    return factor.sample(z)


def marginal_variances(factor: CholeskyFactor) -> np.ndarray:
    return factor.marginal_variances()
