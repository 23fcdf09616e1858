"""Representational slicing: vocabulary -> (slice, slot) maps and max/argmax densification."""

from __future__ import annotations

import functools
import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .core import HALF_MAX, DsrVector, SparseVector, ValidationError

_MASK64 = (1 << 64) - 1


class Strategy(str, Enum):
    CONTIGUOUS = "contiguous"
    STRIDE = "stride"
    RANDOM = "random"

    @property
    def code(self) -> int:
        return _STRATEGY_CODES[self]


_STRATEGY_CODES = {Strategy.CONTIGUOUS: 0, Strategy.STRIDE: 1, Strategy.RANDOM: 2}
STRATEGY_FROM_CODE = {v: k for k, v in _STRATEGY_CODES.items()}


@dataclass(frozen=True)
class SlicingConfig:
    """How a ``vocab_size``-dim vector is cut into ``m_slices`` slices of ``n_width`` dims.

    The first ``discard_prefix`` dims are dropped and the rest must split
    evenly; ``n_width`` is capped at 256 so slot positions fit in a uint8.
    """

    vocab_size: int = 30522
    discard_prefix: int = 570
    m_slices: int = 768
    n_width: int = 39
    strategy: Strategy = Strategy.STRIDE
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        for name in ("vocab_size", "m_slices", "n_width"):
            if int(getattr(self, name)) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.discard_prefix < 0:
            raise ValidationError("discard_prefix must be non-negative")
        if self.vocab_size - self.discard_prefix != self.m_slices * self.n_width:
            raise ValidationError(
                f"vocab_size - discard_prefix = {self.vocab_size - self.discard_prefix} "
                f"is not m_slices * n_width = {self.m_slices * self.n_width}"
            )
        if self.n_width > 256:
            raise ValidationError(f"n_width {self.n_width} exceeds 256 (slots are uint8)")
        if self.m_slices > 0xFFFF:
            raise ValidationError("m_slices must fit in 16 bits")
        if not 0 <= self.seed <= _MASK64:
            raise ValidationError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_slices(
        cls,
        m_slices: int,
        vocab_size: int = 30522,
        discard_prefix: int = 570,
        strategy: Strategy | str = Strategy.STRIDE,
        seed: int = 0,
    ) -> "SlicingConfig":
        trimmed = vocab_size - discard_prefix
        if m_slices <= 0 or trimmed % m_slices:
            raise ValidationError(f"{trimmed} trimmed dims do not split into {m_slices} slices")
        return cls(vocab_size, discard_prefix, m_slices, trimmed // m_slices, Strategy(strategy), seed)

    @property
    def trimmed_size(self) -> int:
        return self.m_slices * self.n_width

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        return d

    def pack(self) -> bytes:
        return struct.pack(
            "<IIHHBQ",
            self.vocab_size,
            self.discard_prefix,
            self.m_slices,
            self.n_width,
            self.strategy.code,
            self.seed if self.strategy is Strategy.RANDOM else 0,
        )


PRESETS = {
    768: SlicingConfig(),
    256: SlicingConfig(m_slices=256, n_width=117),
    128: SlicingConfig(m_slices=128, n_width=234),
}


def load_config(path) -> SlicingConfig:
    """Read a config from JSON or ``key = value`` / ``key: value`` text.

    Keys: vocab_size, discard_prefix, slices (or m_slices), strategy, seed.
    ``n_width`` is derived when omitted.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        raw = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            if sep not in line:
                raise ValidationError(f"config line without key/value separator: {line!r}")
            key, value = (s.strip() for s in line.split(sep, 1))
            raw[key] = value
    if not isinstance(raw, dict):
        raise ValidationError("config must be a mapping")
    return config_from_mapping(raw)


def config_from_mapping(raw: dict) -> SlicingConfig:
    known = {"vocab_size", "discard_prefix", "slices", "m_slices", "n_width", "strategy", "seed"}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    base = SlicingConfig()
    vocab = int(raw.get("vocab_size", base.vocab_size))
    discard = int(raw.get("discard_prefix", base.discard_prefix))
    m = int(raw.get("m_slices", raw.get("slices", base.m_slices)))
    strategy = Strategy(str(raw.get("strategy", base.strategy.value)).lower())
    seed = int(raw.get("seed", 0))
    if "n_width" in raw:
        return SlicingConfig(vocab, discard, m, int(raw["n_width"]), strategy, seed)
    return SlicingConfig.from_slices(m, vocab, discard, strategy, seed)


# --- seeded permutation ---


class SplitMix64:
    """SplitMix64 (Steele, Lea & Flood 2014); the permutation stream must be portable."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        threshold = ((1 << 64) - bound) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound


def seeded_permutation(n: int, seed: int) -> np.ndarray:
    """Fisher-Yates shuffle of ``range(n)`` driven by SplitMix64(seed)."""
    rng = SplitMix64(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return np.array(perm, dtype=np.int64)


# --- assignment ---


@dataclass(frozen=True, eq=False)
class SliceAssignment:
    """Per trimmed dim: the slice it belongs to and its position inside that slice."""

    config: SlicingConfig
    slice_of: np.ndarray
    slot_of: np.ndarray
    dim_at: np.ndarray  # [M, N] inverse map -> trimmed dim
    fingerprint: int

    def cell(self, dim: int) -> tuple[int, int]:
        """(slice, slot) of an untrimmed vocabulary dim."""
        t = dim - self.config.discard_prefix
        if not 0 <= t < self.config.trimmed_size:
            raise ValidationError(f"dim {dim} is outside the sliced range")
        return int(self.slice_of[t]), int(self.slot_of[t])

    def __eq__(self, other):
        if not isinstance(other, SliceAssignment):
            return NotImplemented
        return (
            self.config == other.config
            and np.array_equal(self.slice_of, other.slice_of)
            and np.array_equal(self.slot_of, other.slot_of)
        )

    __hash__ = object.__hash__


def _fingerprint(config: SlicingConfig, slice_of: np.ndarray, slot_of: np.ndarray) -> int:
    h = hashlib.blake2b(digest_size=8, person=b"dsr-slice")
    h.update(config.pack())
    h.update(slice_of.astype("<u2").tobytes())
    h.update(slot_of.astype("<u1").tobytes())
    return int.from_bytes(h.digest(), "little")


@functools.lru_cache(maxsize=32)
def build_assignment(config: SlicingConfig) -> SliceAssignment:
    M, N = config.m_slices, config.n_width
    i = np.arange(M * N, dtype=np.int64)
    if config.strategy is Strategy.CONTIGUOUS:
        slice_of, slot_of = i // N, i % N
    elif config.strategy is Strategy.STRIDE:
        slice_of, slot_of = i % M, i // M
    else:
        pi = seeded_permutation(M * N, config.seed)
        slice_of, slot_of = pi // N, pi % N
    slice_of = slice_of.astype(np.int32)
    slot_of = slot_of.astype(np.uint8)
    dim_at = np.empty((M, N), dtype=np.int64)
    dim_at[slice_of, slot_of] = i
    for arr in (slice_of, slot_of, dim_at):
        arr.setflags(write=False)
    return SliceAssignment(config, slice_of, slot_of, dim_at, _fingerprint(config, slice_of, slot_of))


def undensify_term(m: int, asg: SliceAssignment, slot: int) -> int:
    """Vocabulary dim denoted by (slice ``m``, ``slot``)."""
    cfg = asg.config
    if not (0 <= m < cfg.m_slices and 0 <= slot < cfg.n_width):
        raise ValidationError(f"(slice {m}, slot {slot}) outside {cfg.m_slices}x{cfg.n_width}")
    return int(asg.dim_at[m, slot]) + cfg.discard_prefix


# --- densification ---


def _to_csr(vectors: Sequence[SparseVector], config: SlicingConfig):
    """Concatenate vectors into CSR arrays of trimmed dims and half-rounded weights."""
    lengths = np.fromiter((v.nnz for v in vectors), dtype=np.int64, count=len(vectors))
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    if indptr[-1]:
        dims = np.concatenate([v.dims for v in vectors])
        weights = np.concatenate([v.weights for v in vectors])
    else:
        dims = np.zeros(0, dtype=np.int64)
        weights = np.zeros(0, dtype=np.float64)
    if dims.size and dims.max() >= config.vocab_size:
        raise ValidationError(f"dimension {int(dims.max())} >= vocab_size {config.vocab_size}")
    if weights.size and weights.max() > HALF_MAX:
        raise ValidationError(f"weight {weights.max()} overflows half precision")
    keep = dims >= config.discard_prefix
    if not keep.all():
        row = np.repeat(np.arange(len(vectors)), lengths)[keep]
        indptr = np.zeros_like(indptr)
        np.cumsum(np.bincount(row, minlength=len(vectors)), out=indptr[1:])
        dims, weights = dims[keep], weights[keep]
    half_bits = weights.astype(np.float16).view(np.uint16)
    return indptr, dims - config.discard_prefix, np.ascontiguousarray(half_bits)


def densify_many(
    vectors: Sequence[SparseVector], asg: SliceAssignment
) -> tuple[np.ndarray, np.ndarray]:
    """Densify a batch into slice-major arrays: values float16 [M, n], indices uint8 [M, n]."""
    cfg = asg.config
    indptr, tdims, half_bits = _to_csr(vectors, cfg)
    vals, idx = kernels.densify_csr(indptr, tdims, half_bits, asg.slice_of, asg.slot_of, cfg.m_slices)
    return vals.view(np.float16), idx


def densify(v: SparseVector, asg: SliceAssignment, config: SlicingConfig | None = None) -> DsrVector:
    """Per slice keep the largest (half-rounded) weight and its slot; ties go to the smaller slot."""
    if config is not None and config != asg.config:
        raise ValidationError("assignment was built for a different config")
    vals, idx = densify_many([v], asg)
    return DsrVector(v.doc_id, vals[:, 0], idx[:, 0], asg.fingerprint)
