# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sparse Cholesky kernels. See ``_kernels_py`` for the reference."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef cnp.int64_t idx_t


def etree(Py_ssize_t n, const idx_t[::1] Cp, const idx_t[::1] Ci):
    cdef idx_t[::1] parent = np.full(n, -1, dtype=np.int64)
    cdef idx_t[::1] ancestor = np.full(n, -1, dtype=np.int64)
    cdef Py_ssize_t k, p
    cdef idx_t i, inext
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return np.asarray(parent)


cdef inline Py_ssize_t _ereach(const idx_t[::1] Cp, const idx_t[::1] Ci, idx_t k,
                               const idx_t[::1] parent, idx_t[::1] stack,
                               idx_t[::1] mark, Py_ssize_t n) nogil:
    cdef Py_ssize_t top = n, length, p
    cdef idx_t i
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


def colcounts(Py_ssize_t n, const idx_t[::1] Cp, const idx_t[::1] Ci, const idx_t[::1] parent):
    cdef idx_t[::1] counts = np.ones(n, dtype=np.int64)
    cdef idx_t[::1] stack = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] mark = np.full(n, -1, dtype=np.int64)
    cdef Py_ssize_t k, q, top
    with nogil:
        for k in range(n):
            top = _ereach(Cp, Ci, k, parent, stack, mark, n)
            for q in range(top, n):
                counts[stack[q]] += 1
    return np.asarray(counts)


def chol_numeric(Py_ssize_t n, const idx_t[::1] Cp, const idx_t[::1] Ci,
                 const double[::1] Cx, const idx_t[::1] parent, const idx_t[::1] Lp):
    cdef Py_ssize_t nnz = Lp[n]
    Li_arr = np.empty(nnz, dtype=np.int64)
    Lx_arr = np.empty(nnz, dtype=np.float64)
    cdef idx_t[::1] Li = Li_arr
    cdef double[::1] Lx = Lx_arr
    cdef idx_t[::1] nxt = np.array(Lp[:n], dtype=np.int64)
    cdef double[::1] x = np.zeros(n)
    cdef idx_t[::1] stack = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] mark = np.full(n, -1, dtype=np.int64)
    cdef Py_ssize_t k, p, q, top
    cdef idx_t i
    cdef double d, lki
    cdef Py_ssize_t status = -1
    with nogil:
        for k in range(n):
            top = _ereach(Cp, Ci, k, parent, stack, mark, n)
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
                status = k
                break
            p = nxt[k]
            nxt[k] += 1
            Li[p] = k
            Lx[p] = sqrt(d)
    return Li_arr, Lx_arr, status


def lsolve(Py_ssize_t n, const idx_t[::1] Lp, const idx_t[::1] Li,
           const double[::1] Lx, double[::1] x):
    cdef Py_ssize_t j, p
    cdef double xj
    with nogil:
        for j in range(n):
            x[j] /= Lx[Lp[j]]
            xj = x[j]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                x[Li[p]] -= Lx[p] * xj


def ltsolve(Py_ssize_t n, const idx_t[::1] Lp, const idx_t[::1] Li,
            const double[::1] Lx, double[::1] x):
    cdef Py_ssize_t j, p
    cdef double s
    with nogil:
        for j in range(n - 1, -1, -1):
            s = x[j]
            for p in range(Lp[j] + 1, Lp[j + 1]):
                s -= Lx[p] * x[Li[p]]
            x[j] = s / Lx[Lp[j]]


cdef inline double _lookup(const idx_t[::1] Lp, const idx_t[::1] Li, double[::1] S,
                           idx_t i, idx_t j) nogil:
    cdef Py_ssize_t lo = Lp[j], hi = Lp[j + 1], mid
    while lo < hi:
        mid = (lo + hi) // 2
        if Li[mid] < i:
            lo = mid + 1
        else:
            hi = mid
    return S[lo]


def takahashi(Py_ssize_t n, const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx):
    S_arr = np.zeros(Lp[n])
    cdef double[::1] S = S_arr
    cdef Py_ssize_t j, a, b, p0, p1
    cdef idx_t i, k
    cdef double s, djj
    with nogil:
        for j in range(n - 1, -1, -1):
            p0 = Lp[j]
            p1 = Lp[j + 1]
            djj = Lx[p0]
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
    return S_arr
