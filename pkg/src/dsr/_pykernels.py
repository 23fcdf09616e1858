"""Numpy implementations of the hot kernels.

Every function here is bit-for-bit interchangeable with its counterpart in
``_kernels.pyx``: per-document sums run over slices in ascending order and
products of two half-precision values are exact in float64.
"""

import numpy as np

HALF_TO_F64 = np.arange(1 << 16, dtype=np.uint16).view(np.float16).astype(np.float64)
HALF_TO_F64.setflags(write=False)


def densify_csr(indptr, tdims, half_bits, slice_of, slot_of, m_slices):
    n = indptr.shape[0] - 1
    vals = np.zeros((m_slices, n), dtype=np.uint16)
    idx = np.zeros((m_slices, n), dtype=np.uint8)
    if tdims.size == 0:
        return vals, idx
    row = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    slc = slice_of[tdims].astype(np.int64)
    slot = slot_of[tdims]
    bits = half_bits.astype(np.int32)
    keep = bits > 0
    row, slc, slot, bits = row[keep], slc[keep], slot[keep], bits[keep]
    # primary key last: (row, slice) groups, largest value first, then smallest slot
    order = np.lexsort((slot, -bits, slc, row))
    row, slc, slot, bits = row[order], slc[order], slot[order], bits[order]
    first = np.ones(row.size, dtype=bool)
    first[1:] = (row[1:] != row[:-1]) | (slc[1:] != slc[:-1])
    vals[slc[first], row[first]] = bits[first]
    idx[slc[first], row[first]] = slot[first]
    return vals, idx


def gip_scan(q_vals, q_idx, active, values, indices):
    n = values.shape[1]
    out = np.zeros(n, dtype=np.float64)
    for m in active:
        contrib = HALF_TO_F64[values[m]]
        contrib *= q_vals[m]
        contrib[indices[m] != q_idx[m]] = 0.0
        out += contrib
    return out


def gip_gather(q_vals, q_idx, active, values, indices, cand):
    out = np.zeros(cand.size, dtype=np.float64)
    for m in active:
        contrib = HALF_TO_F64[values[m, cand]]
        contrib *= q_vals[m]
        contrib[indices[m, cand] != q_idx[m]] = 0.0
        out += contrib
    return out
