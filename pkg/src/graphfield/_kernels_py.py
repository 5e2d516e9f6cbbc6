"""Pure-Python sparse Cholesky kernels.

Same signatures and semantics as the compiled ``_kernels`` extension. All
matrices are compressed-column with sorted row indices; ``Cp, Ci, Cx`` hold
the upper triangle (row <= column) of an already permuted SPD matrix.
"""
import math

import numpy as np


def etree(n, Cp, Ci):
    """Elimination tree of an upper-triangular CSC pattern (-1 marks a root)."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


def _ereach(Cp, Ci, k, parent, stack, mark):
    """Row pattern of L[k, :k] in topological order: ``stack[top:]``."""
    n = len(parent)
    top = n
    mark[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while mark[i] != k:
            stack[length] = i
            length += 1
            mark[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            stack[top] = stack[length]
    return top


def colcounts(n, Cp, Ci, parent):
    """Number of nonzeros in each column of L (diagonal included)."""
    counts = np.ones(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, stack, mark)
        for q in range(top, n):
            counts[stack[q]] += 1
    return counts


def chol_numeric(n, Cp, Ci, Cx, parent, Lp):
    """Up-looking Cholesky. Returns ``(Li, Lx, status)``.

    ``status`` is -1 on success, otherwise the column whose pivot was not
    positive.
    """
    nnz = Lp[n]
    Li = np.empty(nnz, dtype=np.int64)
    Lx = np.empty(nnz)
    nxt = np.array(Lp[:n], dtype=np.int64)
    x = np.zeros(n)
    stack = np.empty(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, stack, mark)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for q in range(top, n):
            i = stack[q]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, nxt[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = nxt[i]
            nxt[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > 0.0:
            return Li, Lx, k
        p = nxt[k]
        nxt[k] += 1
        Li[p] = k
        Lx[p] = math.sqrt(d)
    return Li, Lx, -1


def lsolve(n, Lp, Li, Lx, x):
    """Solve ``L y = x`` in place."""
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj


def ltsolve(n, Lp, Li, Lx, x):
    """Solve ``L^T y = x`` in place."""
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s / Lx[Lp[j]]


def _lookup(Lp, Li, S, i, j):
    # S[i, j] for i >= j, stored in column j of the pattern of L
    lo, hi = Lp[j], Lp[j + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        if Li[mid] < i:
            lo = mid + 1
        else:
            hi = mid
    return S[lo]


def takahashi(n, Lp, Li, Lx):
    """Entries of ``(L L^T)^{-1}`` on the pattern of L (selected inversion)."""
    S = np.zeros(Lp[n])
    for j in range(n - 1, -1, -1):
        p0, p1 = Lp[j], Lp[j + 1]
        djj = Lx[p0]
        # off-diagonal entries of column j, bottom-up
        for a in range(p1 - 1, p0, -1):
            i = Li[a]
            s = 0.0
            for b in range(p0 + 1, p1):
                k = Li[b]
                if k >= i:
                    s += Lx[b] * _lookup(Lp, Li, S, k, i)
                else:
                    s += Lx[b] * _lookup(Lp, Li, S, i, k)
            S[a] = -s / djj
        s = 0.0
        for b in range(p0 + 1, p1):
            s += Lx[b] * S[b]
        S[p0] = 1.0 / (djj * djj) - s / djj
    return S
