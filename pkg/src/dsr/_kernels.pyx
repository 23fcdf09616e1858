# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics match ``_pykernels`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport int32_t, int64_t, uint8_t, uint16_t

cnp.import_array()

from ._pykernels import HALF_TO_F64 as _LUT_ARRAY

cdef const double[::1] _LUT = _LUT_ARRAY


def densify_csr(const int64_t[::1] indptr, const int64_t[::1] tdims,
                const uint16_t[::1] half_bits, const int32_t[::1] slice_of,
                const uint8_t[::1] slot_of, int m_slices):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    vals_arr = np.zeros((m_slices, n), dtype=np.uint16)
    idx_arr = np.zeros((m_slices, n), dtype=np.uint8)
    cdef uint16_t[:, ::1] vals = vals_arr
    cdef uint8_t[:, ::1] idx = idx_arr
    cdef Py_ssize_t j, p, m
    cdef int64_t t
    cdef uint16_t b, cur
    cdef uint8_t s
    with nogil:
        for j in range(n):
            for p in range(indptr[j], indptr[j + 1]):
                b = half_bits[p]
                if b == 0:
                    continue
                t = tdims[p]
                m = slice_of[t]
                s = slot_of[t]
                cur = vals[m, j]
                if b > cur or (b == cur and s < idx[m, j]):
                    vals[m, j] = b
                    idx[m, j] = s
    return vals_arr, idx_arr


def gip_scan(const double[::1] q_vals, const uint8_t[::1] q_idx,
             const int64_t[::1] active, const uint16_t[:, ::1] values,
             const uint8_t[:, ::1] indices):
    cdef Py_ssize_t n = values.shape[1]
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t a, j, m
    cdef double qv
    cdef uint8_t qi
    cdef const uint16_t[::1] vrow
    cdef const uint8_t[::1] irow
    for a in range(active.shape[0]):
        m = active[a]
        qv = q_vals[m]
        qi = q_idx[m]
        vrow = values[m]
        irow = indices[m]
        with nogil:
            for j in range(n):
                if irow[j] == qi:
                    out[j] += qv * _LUT[vrow[j]]
    return out_arr


def gip_gather(const double[::1] q_vals, const uint8_t[::1] q_idx,
               const int64_t[::1] active, const uint16_t[:, ::1] values,
               const uint8_t[:, ::1] indices, const int64_t[::1] cand):
    cdef Py_ssize_t c = cand.shape[0]
    out_arr = np.zeros(c, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t a, j, m, d
    cdef double qv
    cdef uint8_t qi
    with nogil:
        for a in range(active.shape[0]):
            m = active[a]
            qv = q_vals[m]
            qi = q_idx[m]
            for j in range(c):
                d = cand[j]
                if indices[m, d] == qi:
                    out[j] += qv * _LUT[values[m, d]]
    return out_arr
