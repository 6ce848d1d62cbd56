# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Same contracts as _numpy_impl.  otsu_split mirrors the numpy arithmetic
operation-for-operation (totals via numpy's pairwise sum, cumulatives
sequential) so both backends pick the same split bit-for-bit; attention
agrees with the BLAS path to rounding error only.
"""

import numpy as np

from libc.math cimport INFINITY, exp, sqrt


cdef void _attn_rows(const double[:, ::1] q, const double[:, ::1] k,
                     const double[:, ::1] v, double[:, ::1] out,
                     double[::1] row, bint with_values) noexcept nogil:
    cdef Py_ssize_t nq = q.shape[0], nk = k.shape[0], d = q.shape[1]
    cdef Py_ssize_t dv = v.shape[1] if with_values else 0
    cdef double scale = 1.0 / sqrt(<double> d)
    cdef Py_ssize_t i, j, l
    cdef double s, hi, tot
    for i in range(nq):
        hi = -INFINITY
        for j in range(nk):
            s = 0.0
            for l in range(d):
                s += q[i, l] * k[j, l]
            s *= scale
            row[j] = s
            if s > hi:
                hi = s
        tot = 0.0
        for j in range(nk):
            row[j] = exp(row[j] - hi)
            tot += row[j]
        if with_values:
            for l in range(dv):
                out[i, l] = 0.0
            for j in range(nk):
                s = row[j] / tot
                for l in range(dv):
                    out[i, l] += s * v[j, l]
        else:
            for j in range(nk):
                out[i, j] = row[j] / tot


def _as2d(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v; [n, d] or batched [b, n, d] inputs."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if k.shape[-2] == 0:
        raise ValueError("attention needs at least one key row")
    if q.ndim == 2:
        out = np.empty((q.shape[0], v.shape[1]), dtype=np.float64)
        row = np.empty(k.shape[0], dtype=np.float64)
        _attn_rows(_as2d(q), _as2d(k), _as2d(v), out, row, True)
        return out
    out = np.empty((q.shape[0], q.shape[1], v.shape[2]), dtype=np.float64)
    row = np.empty(k.shape[1], dtype=np.float64)
    for b in range(q.shape[0]):
        _attn_rows(_as2d(q[b]), _as2d(k[b]), _as2d(v[b]), out[b], row, True)
    return out


def attention_weights(q, k):
    """Softmax weight matrix [nq, nk] (or batched)."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if k.shape[-2] == 0:
        raise ValueError("attention needs at least one key row")
    dummy = np.empty((0, 1), dtype=np.float64)
    if q.ndim == 2:
        out = np.empty((q.shape[0], k.shape[0]), dtype=np.float64)
        row = np.empty(k.shape[0], dtype=np.float64)
        _attn_rows(_as2d(q), _as2d(k), dummy, out, row, False)
        return out
    out = np.empty((q.shape[0], q.shape[1], k.shape[1]), dtype=np.float64)
    row = np.empty(k.shape[1], dtype=np.float64)
    for b in range(q.shape[0]):
        _attn_rows(_as2d(q[b]), _as2d(k[b]), dummy, out[b], row, False)
    return out


def otsu_split(weights, centers):
    """Best split index k in [1, nbins-1] by inter-class variance.

    Class 0 is bins [0, k); ties break toward the smallest k.
    """
    w = np.ascontiguousarray(weights, dtype=np.float64)
    c = np.ascontiguousarray(centers, dtype=np.float64)
    mass = w * c
    cdef double total = float(np.sum(w))
    cdef double mass_total = float(np.sum(mass))
    cdef const double[::1] wv = w
    cdef const double[::1] mv = mass
    cdef Py_ssize_t n = wv.shape[0]
    cdef Py_ssize_t kk, best_k = 0
    cdef double cw = 0.0, cm = 0.0
    cdef double w0, w1, mu0, mu1, diff, vb, best = -1.0
    for kk in range(n - 1):
        cw += wv[kk]
        cm += mv[kk]
        if cw > 0.0 and cw < total:
            w0 = cw / total
            w1 = 1.0 - w0
            mu0 = cm / cw
            mu1 = (mass_total - cm) / (total - cw)
            diff = mu0 - mu1
            vb = w0 * w1 * (diff * diff)
        else:
            vb = 0.0
        if vb > best:
            best = vb
            best_k = kk
    return int(best_k) + 1
