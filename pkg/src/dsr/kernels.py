"""Kernel backend selection.

The compiled ``_kernels`` extension is used when importable; otherwise the
numpy fallback in ``_pykernels``. Set ``DSR_FORCE_PYTHON=1`` to force the
fallback.
"""

import logging
import os

import numpy as np

from . import _pykernels

logger = logging.getLogger(__name__)

_compiled = None
if not os.environ.get("DSR_FORCE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # pragma: no cover - depends on build
        logger.debug("compiled kernels unavailable; using numpy fallback")

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_impl = _compiled if _compiled is not None else _pykernels
BACKEND = "compiled" if _compiled is not None else "python"


def use_backend(name: str) -> None:
    """Switch kernels process-wide (used by tests and the benchmark)."""
    global _impl, BACKEND
    if name not in BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}")
    _impl = BACKENDS[name]
    BACKEND = name


def _c(arr, dtype):
    return np.ascontiguousarray(arr, dtype=dtype)


def densify_csr(indptr, tdims, half_bits, slice_of, slot_of, m_slices):
    return _impl.densify_csr(
        _c(indptr, np.int64), _c(tdims, np.int64), _c(half_bits, np.uint16),
        _c(slice_of, np.int32), _c(slot_of, np.uint8), int(m_slices),
    )


def gip_scan(q_vals, q_idx, active, values_bits, indices):
    """Partial GIP of one query against every column of a slice-major index."""
    return _impl.gip_scan(
        _c(q_vals, np.float64), _c(q_idx, np.uint8), _c(active, np.int64),
        values_bits, indices,
    )


def gip_gather(q_vals, q_idx, active, values_bits, indices, cand):
    """Same as ``gip_scan`` restricted to the document columns in ``cand``."""
    return _impl.gip_gather(
        _c(q_vals, np.float64), _c(q_idx, np.uint8), _c(active, np.int64),
        values_bits, indices, _c(cand, np.int64),
    )
