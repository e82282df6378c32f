# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: loop-fused variants of the numpy backend in ``_python``.

Semantics match ``_python`` exactly (same masking sentinel handling, same
zero-row cosine rule, same pairwise rotation layout); only the execution
strategy differs. Plain matmuls are not here on purpose: BLAS already owns
them, the extension earns its keep where numpy cannot fuse.
"""

from libc.math cimport INFINITY, cos, exp, sin, sqrt

import numpy as np


def softmax_rows(double[:, ::1] scores):
    return _softmax(scores, None)


def add_softmax_rows(double[:, ::1] scores, double[:, ::1] mask):
    return _softmax(scores, mask)


cdef _softmax(double[:, ::1] scores, mask_obj):
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t m = scores.shape[1]
    if n == 0:
        return np.asarray(scores).copy()
    if m == 0:
        raise ValueError("softmax over zero columns has no valid distribution")
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[:, ::1] mask
    cdef bint masked = mask_obj is not None
    if masked:
        mask = mask_obj
    cdef Py_ssize_t i, j
    cdef double hi, z, v
    for i in range(n):
        hi = -INFINITY
        for j in range(m):
            v = scores[i, j] + mask[i, j] if masked else scores[i, j]
            o[i, j] = v
            if v > hi:
                hi = v
        if hi == -INFINITY:
            raise ValueError(f"softmax row {i} is fully masked; no valid distribution")
        z = 0.0
        for j in range(m):
            v = exp(o[i, j] - hi)
            o[i, j] = v
            z += v
        for j in range(m):
            o[i, j] /= z
    return out


def cosine_similarity(double[:, ::1] h):
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t d = h.shape[1]
    unit_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] unit = unit_arr
    nonzero_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] nonzero = nonzero_arr
    cdef Py_ssize_t i, j, t
    cdef double acc, norm, s
    for i in range(n):
        acc = 0.0
        for t in range(d):
            acc += h[i, t] * h[i, t]
        norm = sqrt(acc)
        if norm > 0.0:
            nonzero[i] = 1
            for t in range(d):
                unit[i, t] = h[i, t] / norm
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        if not nonzero[i]:
            continue
        o[i, i] = 1.0
        for j in range(i + 1, n):
            if not nonzero[j]:
                continue
            s = 0.0
            for t in range(d):
                s += unit[i, t] * unit[j, t]
            if s > 1.0:
                s = 1.0
            elif s < -1.0:
                s = -1.0
            o[i, j] = s
            o[j, i] = s
    return out


def rope_rotate(double[:, ::1] x, double[::1] positions, double[::1] inv_freq):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t half = inv_freq.shape[0]
    out = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, p
    cdef double angle, c, s, a, b
    for i in range(n):
        for p in range(half):
            angle = positions[i] * inv_freq[p]
            c = cos(angle)
            s = sin(angle)
            a = x[i, 2 * p]
            b = x[i, 2 * p + 1]
            o[i, 2 * p] = a * c - b * s
            o[i, 2 * p + 1] = a * s + b * c
    return out
