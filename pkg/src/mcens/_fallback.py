"""Pure-Python/numpy twins of the compiled kernels in ``_core.pyx``."""
import math

import numpy as np


def hungarian(cost):
    n = cost.shape[0]
    a = cost.tolist()
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [math.inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = math.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
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
    out = np.empty(n, dtype=np.intp)
    for j in range(1, n + 1):
        out[p[j] - 1] = j - 1
    return out


def sinkhorn_scaling(kernel, a, b, iterations):
    u = np.ones(kernel.shape[0])
    v = np.ones(kernel.shape[1])
    for _ in range(iterations):
        kv = kernel @ v
        zero = np.flatnonzero(kv == 0.0)
        if zero.size:
            return u, v, int(zero[0])
        u = a / kv
        ktu = kernel.T @ u
        zero = np.flatnonzero(ktu == 0.0)
        if zero.size:
            return u, v, -2 - int(zero[0])
        v = b / ktu
    return u, v, -1


def kth_neighbor_distance(test, train, k, chunk=256):
    out = np.empty(test.shape[0])
    for start in range(0, test.shape[0], chunk):
        block = test[start:start + chunk]
        sq = np.zeros((block.shape[0], train.shape[0]))
        # sequential over coordinates, matching the compiled loop's order
        for c in range(test.shape[1]):
            diff = block[:, c, None] - train[None, :, c]
            sq += diff * diff
        sq.partition(k - 1, axis=1)
        out[start:start + chunk] = np.sqrt(sq[:, k - 1])
    return out
