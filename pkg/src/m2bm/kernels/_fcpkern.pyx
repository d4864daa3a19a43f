# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the filter-solve accumulation kernels.

Same contracts as kernels._reference; selected at import when available.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def accumulate_normal_equations(cnp.complex128_t[:, :, ::1] stacked,
                                cnp.complex128_t[:, ::1] target,
                                cnp.float64_t[:, ::1] inv_w):
    """Weighted per-frequency normal equations from stacked frames.

    Returns (A, b) with A[f] = sum_t w[t,f] u[t,f] u[t,f]^H and
    b[f] = sum_t w[t,f] u[t,f] conj(target[t,f]).
    """
    cdef Py_ssize_t num_frames = stacked.shape[0]
    cdef Py_ssize_t num_bins = stacked.shape[1]
    cdef Py_ssize_t num_taps = stacked.shape[2]
    cdef Py_ssize_t t, f, k, l
    cdef double w
    cdef double complex wk, y

    a_np = np.zeros((num_bins, num_taps, num_taps), dtype=np.complex128)
    b_np = np.zeros((num_bins, num_taps), dtype=np.complex128)
    cdef cnp.complex128_t[:, :, ::1] a_mat = a_np
    cdef cnp.complex128_t[:, ::1] b_vec = b_np

    for t in range(num_frames):
        for f in range(num_bins):
            w = inv_w[t, f]
            y = target[t, f].conjugate()
            for k in range(num_taps):
                wk = w * stacked[t, f, k]
                b_vec[f, k] = b_vec[f, k] + wk * y
                for l in range(num_taps):
                    a_mat[f, k, l] = a_mat[f, k, l] + wk * stacked[t, f, l].conjugate()
    return a_np, b_np


def accumulate_stack_cotangent(cnp.complex128_t[:, :, ::1] stacked,
                               cnp.complex128_t[:, ::1] target,
                               cnp.float64_t[:, ::1] inv_w,
                               cnp.complex128_t[:, :, ::1] mat,
                               cnp.complex128_t[:, ::1] vec):
    """Backpropagate matrix/vector cotangents onto the stacked frames.

    Returns out[t,f,k] = w[t,f] * (sum_l mat[f,k,l] u[t,f,l] + vec[f,k] target[t,f]).
    """
    cdef Py_ssize_t num_frames = stacked.shape[0]
    cdef Py_ssize_t num_bins = stacked.shape[1]
    cdef Py_ssize_t num_taps = stacked.shape[2]
    cdef Py_ssize_t t, f, k, l
    cdef double w
    cdef double complex acc, y

    out_np = np.empty((num_frames, num_bins, num_taps), dtype=np.complex128)
    cdef cnp.complex128_t[:, :, ::1] out = out_np

    for t in range(num_frames):
        for f in range(num_bins):
            w = inv_w[t, f]
            y = target[t, f]
            for k in range(num_taps):
                acc = vec[f, k] * y
                for l in range(num_taps):
                    acc = acc + mat[f, k, l] * stacked[t, f, l]
                out[t, f, k] = w * acc
    return out_np
