"""Gated inner product, its thresholded form, dense fusion, and operation counting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DenseVector, DsrVector, ValidationError

DEFAULT_LAMBDA = 1.0


class FingerprintMismatch(ValueError):
    """Two DSRs (or a DSR and an index) come from different slicings."""


def check_compatible(q: DsrVector, d: DsrVector) -> None:
    if q.m_slices != d.m_slices:
        raise FingerprintMismatch(f"slice counts differ: {q.m_slices} vs {d.m_slices}")
    if q.fingerprint is not None and d.fingerprint is not None and q.fingerprint != d.fingerprint:
        raise FingerprintMismatch(
            f"slicing fingerprints differ: {q.fingerprint:#018x} vs {d.fingerprint:#018x}"
        )


def _gated_terms(q: DsrVector, d: DsrVector, active: np.ndarray | None = None) -> list[float]:
    gate = q.indices == d.indices
    if active is not None:
        gate &= active
    # half x half is exact in float64, so fsum yields the correctly rounded total
    return (q.values[gate].astype(np.float64) * d.values[gate].astype(np.float64)).tolist()


def gip(q: DsrVector, d: DsrVector) -> float:
    """Sum of value products over slices whose argmax slots agree."""
    check_compatible(q, d)
    return math.fsum(_gated_terms(q, d))


def gip_partial(q: DsrVector, d: DsrVector, theta: float) -> float:
    """GIP over only the slices where the query value is strictly above ``theta``."""
    if theta < 0:
        raise ValidationError("theta must be non-negative")
    check_compatible(q, d)
    return math.fsum(_gated_terms(q, d, q.values.astype(np.float64) > theta))


def active_slices(q: DsrVector, theta: float) -> np.ndarray:
    """Slice ids taking part in the first stage, ascending."""
    if theta < 0:
        raise ValidationError("theta must be non-negative")
    return np.flatnonzero(q.values.astype(np.float64) > theta)


def dense_dot(a: DenseVector, b: DenseVector) -> float:
    if a.dim != b.dim:
        raise ValidationError(f"dense dimensionality mismatch: {a.dim} vs {b.dim}")
    return math.fsum((a.components.astype(np.float64) * b.components.astype(np.float64)).tolist())


@dataclass(frozen=True)
class ScoreBreakdown:
    gip: float
    dense: float
    fused: float
    ops_counted: int


def fused_score(
    q_dsr: DsrVector,
    d_dsr: DsrVector,
    q_dense: DenseVector,
    d_dense: DenseVector,
    lam: float = DEFAULT_LAMBDA,
) -> ScoreBreakdown:
    """``lam * <q_dense, d_dense> + gip(q_dsr, d_dsr)``."""
    g = gip(q_dsr, d_dsr)
    dn = dense_dot(q_dense, d_dense)
    ops = count_ops("gip", q_dsr.m_slices) + count_ops("dense_dot", q_dense.dim)
    return ScoreBreakdown(gip=g, dense=dn, fused=lam * dn + g, ops_counted=ops)


# --- operation counting ---

_OPS_PER_DIM = {"gip": 4, "dense_dot": 2}


def count_ops(kind: str, m: int) -> int:
    """Primitive operations for one score: 4 per slice for GIP, 2 per dim for a dense dot."""
    if kind not in _OPS_PER_DIM:
        raise ValueError(f"unknown kind {kind!r}; expected one of {sorted(_OPS_PER_DIM)}")
    if m <= 0:
        raise ValueError("dimension count must be positive")
    return _OPS_PER_DIM[kind] * m


def gip_instrumented(q: DsrVector, d: DsrVector) -> tuple[float, int]:
    """Step-by-step GIP that tallies each compare, select, multiply and add.

    Slow on purpose; it exists to check the operation-count model, never to rank.
    """
    check_compatible(q, d)
    qv, dv = q.values.tolist(), d.values.tolist()
    qi, di = q.indices.tolist(), d.indices.tolist()
    acc, ops = 0.0, 0
    for m in range(len(qv)):
        same = qi[m] == di[m]
        ops += 1
        gated = dv[m] if same else 0.0
        ops += 1
        prod = qv[m] * gated
        ops += 1
        acc += prod
        ops += 1
    return acc, ops


def dense_dot_instrumented(a, b) -> tuple[float, int]:
    """Step-by-step dense dot (multiply + add per dimension) on any two equal-length arrays."""
    av = np.asarray(getattr(a, "components", a), dtype=np.float64).tolist()
    bv = np.asarray(getattr(b, "components", b), dtype=np.float64).tolist()
    if len(av) != len(bv):
        raise ValidationError("length mismatch")
    acc, ops = 0.0, 0
    for x, y in zip(av, bv):
        prod = x * y
        ops += 1
        acc += prod
        ops += 1
    return acc, ops
