"""Fused row-wise kernels for the AIR gate (logits, sigmoid and mixing in one pass)."""

import numba
import numpy as np


@numba.njit(cache=True)
def gated_mix_forward(a, b, ua, ub):
    n, k = a.shape
    out = np.empty_like(a)
    alpha = np.empty((n, 1), dtype=a.dtype)
    for i in range(n):
        z = 0.0
        for j in range(k):
            z += a[i, j] * ua[j] + b[i, j] * ub[j]
        if z >= 0:
            s = 1.0 / (1.0 + np.exp(-z))
        else:
            e = np.exp(z)
            s = e / (1.0 + e)
        alpha[i, 0] = s
        keep = 1.0 - s
        for j in range(k):
            out[i, j] = a[i, j] * keep + b[i, j] * s
    return out, alpha


@numba.njit(cache=True)
def gated_mix_backward(g, a, b, ua, ub, alpha, need_a, need_b):
    n, k = a.shape
    ga = np.empty_like(a) if need_a else np.empty((0, 0), dtype=a.dtype)
    gb = np.empty_like(b) if need_b else np.empty((0, 0), dtype=b.dtype)
    gua = np.zeros(k, dtype=np.float64)
    gub = np.zeros(k, dtype=np.float64)
    for i in range(n):
        s = alpha[i, 0]
        keep = 1.0 - s
        dalpha = 0.0
        for j in range(k):
            dalpha += g[i, j] * (b[i, j] - a[i, j])
        dz = dalpha * s * keep
        for j in range(k):
            gua[j] += dz * a[i, j]
            gub[j] += dz * b[i, j]
        if need_a:
            for j in range(k):
                ga[i, j] = g[i, j] * keep + dz * ua[j]
        if need_b:
            for j in range(k):
                gb[i, j] = g[i, j] * s + dz * ub[j]
    return ga, gb, gua, gub


@numba.njit(cache=True, fastmath=True)
def csr_dense_matmul(indptr, indices, data, h):
    n = indptr.shape[0] - 1
    k = h.shape[1]
    out = np.zeros((n, k), dtype=h.dtype)
    for i in range(n):
        row = out[i]
        for p in range(indptr[i], indptr[i + 1]):
            v = data[p]
            src = h[indices[p]]
            for j in range(k):
                row[j] += v * src[j]
    return out
