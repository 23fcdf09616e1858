"""Columnar DSR / dense index: build, binary persistence, storage prediction.

File layout (all integers little-endian)::

    DSRX header, 32 bytes
        0   4s   magic b"DSRX"
        4   u8   format version
        5   u8   strategy code (0 contiguous, 1 stride, 2 random)
        6   u16  m_slices
        8   u32  vocab_size
        12  u32  discard_prefix
        16  u32  num_docs
        20  u64  seed
        28  u32  CRC-32 of bytes 0..27
    doc-id table   num_docs x (u32 byte length, UTF-8 bytes)
    values block   float16 [M, num_docs], slice-major
    indices block  uint8   [M, num_docs], slice-major

    DNSX header, 32 bytes
        0   4s   magic b"DNSX"
        4   u8   format version
        5   u8   component dtype code (1 = float16)
        6   u16  reserved
        8   u32  dim
        12  u32  num_docs
        16  12x  reserved
        28  u32  CRC-32 of bytes 0..27
    doc-id table   as above
    components     float16 [dim, num_docs]

``n_width`` is not stored; it is ``(vocab_size - discard_prefix) / m_slices``.
The slicing fingerprint is re-derived from the header on load.
"""

from __future__ import annotations

import mmap
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DenseVector, DsrVector, SparseVector, ValidationError
from .scoring import FingerprintMismatch
from .slicing import STRATEGY_FROM_CODE, SlicingConfig, build_assignment, densify_many

DSR_MAGIC = b"DSRX"
DENSE_MAGIC = b"DNSX"
FORMAT_VERSION = 1
HEADER_SIZE = 32
_DSR_HEADER = struct.Struct("<4sBBHIIIQ")
_DENSE_HEADER = struct.Struct("<4sBBHII12x")
_CRC = struct.Struct("<I")
_BUILD_CHUNK = 65536


class IndexFormatError(ValueError):
    """An index file is malformed, truncated, or of an unsupported version."""


class IndexBuildError(ValueError):
    pass


def _seal(body: bytes) -> bytes:
    return body + _CRC.pack(zlib.crc32(body))


class _DocTable:
    """Shared doc-id bookkeeping for both index kinds."""

    def _init_ids(self, doc_ids: Sequence[str]) -> None:
        self.doc_ids = tuple(doc_ids)
        self.doc_pos = {d: i for i, d in enumerate(self.doc_ids)}
        if len(self.doc_pos) != len(self.doc_ids):
            seen, dups = set(), []
            for d in self.doc_ids:
                if d in seen:
                    dups.append(d)
                seen.add(d)
            raise IndexBuildError(f"duplicate doc ids: {dups[:5]}")
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        tie_rank = np.empty(len(self.doc_ids), dtype=np.int64)
        tie_rank[order] = np.arange(len(self.doc_ids))
        tie_rank.setflags(write=False)
        # ascending doc-id order as an integer key for tie breaking
        self.tie_rank = tie_rank

    @property
    def num_docs(self) -> int:
        return len(self.doc_ids)

    def __len__(self) -> int:
        return self.num_docs

    def position(self, doc_id: str) -> int:
        try:
            return self.doc_pos[doc_id]
        except KeyError:
            raise KeyError(f"doc id {doc_id!r} not in index") from None


class DsrIndex(_DocTable):
    """Immutable slice-major store of densified documents."""

    def __init__(self, config: SlicingConfig, doc_ids: Sequence[str], values, indices):
        values = np.ascontiguousarray(values, dtype=np.float16)
        indices = np.ascontiguousarray(indices, dtype=np.uint8)
        shape = (config.m_slices, len(doc_ids))
        if values.shape != shape or indices.shape != shape:
            raise IndexBuildError(f"payload shape {values.shape}/{indices.shape} != {shape}")
        self.config = config
        self.assignment = build_assignment(config)
        self._init_ids(doc_ids)
        for arr in (values, indices):
            if arr.flags.writeable:
                arr.setflags(write=False)
        self.values = values
        self.indices = indices
        self.values_bits = values.view(np.uint16)

    @property
    def fingerprint(self) -> int:
        return self.assignment.fingerprint

    @property
    def m_slices(self) -> int:
        return self.config.m_slices

    @property
    def payload_bytes(self) -> int:
        return self.num_docs * self.m_slices * 3

    def vector(self, doc_id_or_pos) -> DsrVector:
        j = doc_id_or_pos if isinstance(doc_id_or_pos, (int, np.integer)) else self.position(doc_id_or_pos)
        return DsrVector(self.doc_ids[j], self.values[:, j], self.indices[:, j], self.fingerprint)

    def __iter__(self):
        return (self.vector(j) for j in range(self.num_docs))

    def check_fingerprint(self, fingerprint: int | None) -> None:
        if fingerprint is not None and fingerprint != self.fingerprint:
            raise FingerprintMismatch(
                f"query fingerprint {fingerprint:#018x} != index fingerprint {self.fingerprint:#018x}"
            )

    def __eq__(self, other):
        if not isinstance(other, DsrIndex):
            return NotImplemented
        return (
            self.config == other.config
            and self.doc_ids == other.doc_ids
            and np.array_equal(self.values_bits, other.values_bits)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (
            f"DsrIndex(num_docs={self.num_docs}, M={self.m_slices}, N={self.config.n_width}, "
            f"strategy={self.config.strategy.value}, fingerprint={self.fingerprint:#018x})"
        )


class DenseIndex(_DocTable):
    def __init__(self, doc_ids: Sequence[str], components):
        components = np.ascontiguousarray(components, dtype=np.float16)
        if components.ndim != 2 or components.shape[1] != len(doc_ids):
            raise IndexBuildError(f"components shape {components.shape} does not match {len(doc_ids)} docs")
        self._init_ids(doc_ids)
        if components.flags.writeable:
            components.setflags(write=False)
        self.components = components

    @property
    def dim(self) -> int:
        return int(self.components.shape[0])

    def vector(self, doc_id_or_pos) -> DenseVector:
        j = doc_id_or_pos if isinstance(doc_id_or_pos, (int, np.integer)) else self.position(doc_id_or_pos)
        return DenseVector(self.doc_ids[j], self.components[:, j])

    def __eq__(self, other):
        if not isinstance(other, DenseIndex):
            return NotImplemented
        return self.doc_ids == other.doc_ids and np.array_equal(
            self.components.view(np.uint16), other.components.view(np.uint16)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"DenseIndex(num_docs={self.num_docs}, dim={self.dim})"


# --- building ---


def build_dsr_index(collection: Iterable[SparseVector], config: SlicingConfig) -> DsrIndex:
    asg = build_assignment(config)
    doc_ids: list[str] = []
    vals_parts, idx_parts = [], []
    chunk: list[SparseVector] = []

    def flush():
        v, i = densify_many(chunk, asg)
        vals_parts.append(v)
        idx_parts.append(i)
        chunk.clear()

    for vec in collection:
        doc_ids.append(vec.doc_id)
        chunk.append(vec)
        if len(chunk) >= _BUILD_CHUNK:
            flush()
    if chunk or not vals_parts:
        flush()
    values = np.concatenate(vals_parts, axis=1) if len(vals_parts) > 1 else vals_parts[0]
    indices = np.concatenate(idx_parts, axis=1) if len(idx_parts) > 1 else idx_parts[0]
    return DsrIndex(config, doc_ids, values, indices)


def build_dense_index(collection: Iterable[DenseVector]) -> DenseIndex:
    vectors = list(collection)
    dims = {v.dim for v in vectors}
    if len(dims) > 1:
        raise IndexBuildError(f"mixed dense dimensionality {sorted(dims)}")
    dim = dims.pop() if dims else 0
    comps = np.empty((dim, len(vectors)), dtype=np.float16)
    for j, v in enumerate(vectors):
        comps[:, j] = v.components
    return DenseIndex([v.doc_id for v in vectors], comps)


# --- persistence ---


def _id_table(doc_ids: Sequence[str]) -> bytes:
    parts = []
    for d in doc_ids:
        raw = d.encode("utf-8")
        parts.append(_CRC.pack(len(raw)))
        parts.append(raw)
    return b"".join(parts)


def _read_ids(buf, offset: int, count: int, path) -> tuple[list[str], int]:
    ids = []
    size = len(buf)
    for _ in range(count):
        if offset + 4 > size:
            raise IndexFormatError(f"{path}: truncated doc-id table")
        (n,) = _CRC.unpack_from(buf, offset)
        offset += 4
        if offset + n > size:
            raise IndexFormatError(f"{path}: truncated doc-id table")
        try:
            ids.append(bytes(buf[offset : offset + n]).decode("utf-8"))
        except UnicodeDecodeError:
            raise IndexFormatError(f"{path}: doc-id table is not valid UTF-8") from None
        offset += n
    return ids, offset


def _atomic_write(path, chunks: Iterable[bytes]) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _le(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr, dtype=dtype).tobytes()


def save_index(index: DsrIndex, path) -> None:
    cfg = index.config
    header = _seal(
        _DSR_HEADER.pack(
            DSR_MAGIC, FORMAT_VERSION, cfg.strategy.code, cfg.m_slices,
            cfg.vocab_size, cfg.discard_prefix, index.num_docs, cfg.seed,
        )
    )
    _atomic_write(path, [header, _id_table(index.doc_ids), _le(index.values, "<f2"), _le(index.indices, "u1")])


def save_dense_index(index: DenseIndex, path) -> None:
    header = _seal(_DENSE_HEADER.pack(DENSE_MAGIC, FORMAT_VERSION, 1, 0, index.dim, index.num_docs))
    _atomic_write(path, [header, _id_table(index.doc_ids), _le(index.components, "<f2")])


def _open(path):
    with open(path, "rb") as fh:
        size = os.fstat(fh.fileno()).st_size
        if size == 0:
            raise IndexFormatError(f"{path}: empty file")
        return mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)


def _check_header(buf, magic: bytes, path) -> None:
    if len(buf) < HEADER_SIZE:
        raise IndexFormatError(f"{path}: truncated header")
    if bytes(buf[:4]) != magic:
        raise IndexFormatError(f"{path}: bad magic {bytes(buf[:4])!r}, expected {magic!r}")
    if buf[4] != FORMAT_VERSION:
        raise IndexFormatError(f"{path}: unsupported format version {buf[4]}")
    (crc,) = _CRC.unpack_from(buf, 28)
    if zlib.crc32(bytes(buf[:28])) != crc:
        raise IndexFormatError(f"{path}: header checksum mismatch")


def load_index(path, expected: SlicingConfig | None = None) -> DsrIndex:
    """Memory-map a DSRX file; ``expected`` additionally pins the slicing fingerprint."""
    buf = _open(path)
    _check_header(buf, DSR_MAGIC, path)
    _, _, strat, m, vocab, discard, num_docs, seed = _DSR_HEADER.unpack_from(buf, 0)
    if strat not in STRATEGY_FROM_CODE:
        raise IndexFormatError(f"{path}: unknown strategy code {strat}")
    try:
        config = SlicingConfig.from_slices(m, vocab, discard, STRATEGY_FROM_CODE[strat], seed)
    except ValidationError as exc:
        raise IndexFormatError(f"{path}: invalid config block ({exc})") from None
    doc_ids, offset = _read_ids(buf, HEADER_SIZE, num_docs, path)
    cells = m * num_docs
    if len(buf) != offset + 3 * cells:
        raise IndexFormatError(f"{path}: expected {offset + 3 * cells} bytes, file has {len(buf)}")
    values = np.frombuffer(buf, dtype="<f2", count=cells, offset=offset).reshape(m, num_docs)
    indices = np.frombuffer(buf, dtype=np.uint8, count=cells, offset=offset + 2 * cells).reshape(m, num_docs)
    index = DsrIndex(config, doc_ids, values.view(np.float16), indices)
    if expected is not None:
        want = build_assignment(expected).fingerprint
        if want != index.fingerprint:
            raise FingerprintMismatch(
                f"{path}: index fingerprint {index.fingerprint:#018x} != expected {want:#018x}"
            )
    if n_bad := int(np.count_nonzero(indices >= config.n_width)):
        raise IndexFormatError(f"{path}: {n_bad} slot indices exceed n_width {config.n_width}")
    return index


def load_dense_index(path) -> DenseIndex:
    buf = _open(path)
    _check_header(buf, DENSE_MAGIC, path)
    _, _, dtype_code, _, dim, num_docs = _DENSE_HEADER.unpack_from(buf, 0)
    if dtype_code != 1:
        raise IndexFormatError(f"{path}: unsupported component dtype code {dtype_code}")
    doc_ids, offset = _read_ids(buf, HEADER_SIZE, num_docs, path)
    cells = dim * num_docs
    if len(buf) != offset + 2 * cells:
        raise IndexFormatError(f"{path}: expected {offset + 2 * cells} bytes, file has {len(buf)}")
    comps = np.frombuffer(buf, dtype="<f2", count=cells, offset=offset).reshape(dim, num_docs)
    return DenseIndex(doc_ids, comps.view(np.float16))


# --- storage arithmetic ---


@dataclass(frozen=True)
class StorageEstimate:
    dsr_bytes: int
    dense_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.dsr_bytes + self.dense_bytes

    @staticmethod
    def gib(n: int) -> float:
        return n / 2**30


def predict_storage(num_docs: int, config: SlicingConfig | int, dense_dim: int | None = None) -> StorageEstimate:
    """Header plus payload bytes: 3 per (doc, slice) for DSRs, 2 per (doc, dim) for dense.

    The doc-id table is excluded; its size depends on the id strings.
    """
    m = config.m_slices if isinstance(config, SlicingConfig) else int(config)
    dsr = HEADER_SIZE + num_docs * m * 3
    dense = HEADER_SIZE + num_docs * dense_dim * 2 if dense_dim else 0
    return StorageEstimate(dsr, dense)
