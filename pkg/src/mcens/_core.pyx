# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every function here has a twin in ``mcens._fallback`` that performs the same
floating-point operations in the same order, so both backends give identical
results for Hungarian and k-NN and agree to rounding for Sinkhorn.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def hungarian(const double[:, ::1] cost):
    """O(n^3) shortest augmenting path assignment. Returns row -> column."""
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    cdef double[::1] u = np.zeros(n + 1)
    cdef double[::1] v = np.zeros(n + 1)
    cdef double[::1] minv = np.empty(n + 1)
    cdef Py_ssize_t[::1] p = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[::1] way = np.zeros(n + 1, dtype=np.intp)
    cdef unsigned char[::1] used = np.zeros(n + 1, dtype=np.uint8)
    out = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] res = out

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    for j in range(1, n + 1):
        res[p[j] - 1] = j - 1
    return out


def sinkhorn_scaling(const double[:, ::1] kernel, const double[::1] a, const double[::1] b,
                     Py_ssize_t iterations):
    """Alternate u = a / (K v), v = b / (K^T u).

    Returns ``(u, v, bad)`` where ``bad`` is -1 on success, else the index of
    the first row (``bad >= 0``) or column (``bad = -2 - j``) whose kernel
    product vanished.
    """
    cdef Py_ssize_t n = kernel.shape[0], m = kernel.shape[1]
    cdef Py_ssize_t it, i, j
    cdef double s, ui
    u_arr = np.ones(n)
    v_arr = np.ones(m)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef double[::1] acc = np.empty(m)

    for it in range(iterations):
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += kernel[i, j] * v[j]
            if s == 0.0:
                return u_arr, v_arr, i
            u[i] = a[i] / s
        for j in range(m):
            acc[j] = 0.0
        for i in range(n):
            ui = u[i]
            for j in range(m):
                acc[j] += kernel[i, j] * ui
        for j in range(m):
            if acc[j] == 0.0:
                return u_arr, v_arr, -2 - j
            v[j] = b[j] / acc[j]
    return u_arr, v_arr, -1


def kth_neighbor_distance(const double[:, ::1] test, const double[:, ::1] train, Py_ssize_t k):
    """Euclidean distance from each test row to its k-th nearest train row."""
    cdef Py_ssize_t nt = test.shape[0], nr = train.shape[0], d = test.shape[1]
    cdef Py_ssize_t i, r, c
    cdef double s, diff
    out = np.empty(nt)
    cdef double[::1] res = out
    dist_arr = np.empty(nr)
    cdef double[::1] dist = dist_arr
    for i in range(nt):
        for r in range(nr):
            s = 0.0
            for c in range(d):
                diff = test[i, c] - train[r, c]
                s += diff * diff
            dist[r] = s
        dist_arr.partition(k - 1)
        res[i] = sqrt(dist[k - 1])
    return out
