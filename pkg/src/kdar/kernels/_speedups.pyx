# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the propagation and attention hot loops.

Single-pass C loops over edge arrays; outputs are preallocated by the caller
(see kdar.kernels). float32 and float64 specializations via fused types.
"""

from libc.math cimport exp, INFINITY

import numpy as np

cimport numpy as cnp


ctypedef fused real:
    cnp.float32_t
    cnp.float64_t


def scatter_add_rows(real[:, ::1] out, const cnp.int64_t[::1] ids, real[:, ::1] rows):
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t d = rows.shape[1]
    cdef Py_ssize_t k, j
    cdef cnp.int64_t r
    for k in range(n):
        r = ids[k]
        for j in range(d):
            out[r, j] += rows[k, j]


def segment_weighted_sum(real[:, ::1] out, real[:, ::1] rows, const real[::1] weights,
                         const cnp.int64_t[::1] segments):
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t d = rows.shape[1]
    cdef Py_ssize_t k, j
    cdef cnp.int64_t s
    cdef real w
    for k in range(n):
        s = segments[k]
        w = weights[k]
        for j in range(d):
            out[s, j] += w * rows[k, j]


def segment_gather_scale(real[:, ::1] out, real[:, ::1] grad_out, const real[::1] weights,
                         const cnp.int64_t[::1] segments):
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t d = out.shape[1]
    cdef Py_ssize_t k, j
    cdef cnp.int64_t s
    cdef real w
    for k in range(n):
        s = segments[k]
        w = weights[k]
        for j in range(d):
            out[k, j] = w * grad_out[s, j]


def segment_dot_rows(real[::1] out, real[:, ::1] grad_out, real[:, ::1] rows,
                     const cnp.int64_t[::1] segments):
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t d = rows.shape[1]
    cdef Py_ssize_t k, j
    cdef cnp.int64_t s
    cdef real acc
    for k in range(n):
        s = segments[k]
        acc = 0
        for j in range(d):
            acc += grad_out[s, j] * rows[k, j]
        out[k] = acc


def grouped_softmax(real[::1] out, const real[::1] logits, const cnp.int64_t[::1] segments,
                    Py_ssize_t num_segments):
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t k
    cdef cnp.int64_t s
    # per-segment max for overflow safety, then exp-normalize
    maxes_np = np.full(num_segments, -INFINITY, dtype=np.asarray(logits).dtype)
    sums_np = np.zeros(num_segments, dtype=np.asarray(logits).dtype)
    cdef real[::1] maxes = maxes_np
    cdef real[::1] sums = sums_np
    for k in range(n):
        s = segments[k]
        if logits[k] > maxes[s]:
            maxes[s] = logits[k]
    for k in range(n):
        s = segments[k]
        out[k] = <real>exp(logits[k] - maxes[s])
        sums[s] += out[k]
    for k in range(n):
        out[k] /= sums[segments[k]]


def grouped_softmax_backward(real[::1] out, const real[::1] alpha, const real[::1] grad_alpha,
                             const cnp.int64_t[::1] segments, Py_ssize_t num_segments):
    cdef Py_ssize_t n = alpha.shape[0]
    cdef Py_ssize_t k
    cdef cnp.int64_t s
    dots_np = np.zeros(num_segments, dtype=np.asarray(alpha).dtype)
    cdef real[::1] dots = dots_np
    for k in range(n):
        dots[segments[k]] += alpha[k] * grad_alpha[k]
    for k in range(n):
        s = segments[k]
        out[k] = alpha[k] * (grad_alpha[k] - dots[s])
