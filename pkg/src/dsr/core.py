"""Domain types, JSON Lines interchange, and the exact sparse dot-product oracle."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

HALF_MAX = float(np.finfo(np.float16).max)


class ParseError(ValueError):
    """A collection line could not be decoded."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class ValidationError(ValueError):
    """A vector violates a domain invariant."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class SparseVector:
    """Sorted (dim, weight) pairs over a fixed vocabulary.

    Dims are strictly increasing and weights strictly positive; zero-weight
    entries are never stored.
    """

    __slots__ = ("doc_id", "dims", "weights")

    def __init__(self, doc_id: str, entries: Iterable[tuple[int, float]] = ()):
        pairs = list(entries)
        dims = np.fromiter((int(d) for d, _ in pairs), dtype=np.int64, count=len(pairs))
        weights = np.fromiter((float(w) for _, w in pairs), dtype=np.float64, count=len(pairs))
        self._init(doc_id, dims, weights)

    @classmethod
    def from_arrays(cls, doc_id: str, dims, weights) -> "SparseVector":
        obj = cls.__new__(cls)
        obj._init(doc_id, np.array(dims, dtype=np.int64), np.array(weights, dtype=np.float64))
        return obj

    @classmethod
    def from_mapping(cls, doc_id: str, mapping: Mapping[int, float]) -> "SparseVector":
        """Build from an unordered dim -> weight mapping, dropping zeros."""
        items = sorted((int(d), float(w)) for d, w in mapping.items() if float(w) != 0.0)
        return cls(doc_id, items)

    def _init(self, doc_id: str, dims: np.ndarray, weights: np.ndarray) -> None:
        if dims.shape != weights.shape or dims.ndim != 1:
            raise ValidationError(f"{doc_id}: dims and weights must be 1-d arrays of equal length")
        if dims.size:
            if dims[0] < 0:
                raise ValidationError(f"{doc_id}: negative dimension id {dims[0]}")
            if np.any(np.diff(dims) <= 0):
                raise ValidationError(f"{doc_id}: dims must be strictly increasing")
            if not np.all(np.isfinite(weights)):
                raise ValidationError(f"{doc_id}: non-finite weight")
            if np.any(weights < 0):
                raise ValidationError(f"{doc_id}: negative weight")
            if np.any(weights == 0):
                raise ValidationError(f"{doc_id}: zero-weight entries must be omitted")
        object.__setattr__(self, "doc_id", str(doc_id))
        object.__setattr__(self, "dims", _frozen(dims))
        object.__setattr__(self, "weights", _frozen(weights))

    def __setattr__(self, name, value):
        raise AttributeError("SparseVector is immutable")

    @property
    def entries(self) -> list[tuple[int, float]]:
        return list(zip(self.dims.tolist(), self.weights.tolist()))

    @property
    def nnz(self) -> int:
        return int(self.dims.size)

    def to_half(self) -> "SparseVector":
        """Copy with every weight rounded to IEEE binary16 (rounded-to-zero entries dropped)."""
        w = self.weights.astype(np.float16).astype(np.float64)
        keep = w > 0
        return SparseVector.from_arrays(self.doc_id, self.dims[keep], w[keep])

    def __len__(self) -> int:
        return self.nnz

    def __eq__(self, other):
        if not isinstance(other, SparseVector):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and np.array_equal(self.dims, other.dims)
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self):
        return hash((self.doc_id, self.dims.tobytes(), self.weights.tobytes()))

    def __repr__(self) -> str:
        head = ", ".join(f"({d}, {w:g})" for d, w in self.entries[:4])
        more = ", ..." if self.nnz > 4 else ""
        return f"SparseVector({self.doc_id!r}, [{head}{more}])"


class DsrVector:
    """Densified sparse representation: per-slice max value and its slot.

    ``fingerprint`` identifies the slicing that produced the vector; scoring
    two vectors with different fingerprints is refused.
    """

    __slots__ = ("doc_id", "values", "indices", "fingerprint")

    def __init__(self, doc_id: str, values, indices, fingerprint: int | None = None):
        values = np.array(values, dtype=np.float16)
        indices = np.array(indices, dtype=np.uint8)
        if values.ndim != 1 or values.shape != indices.shape:
            raise ValidationError(f"{doc_id}: values and indices must be 1-d of equal length")
        if not np.all(values >= 0) or not np.all(np.isfinite(values)):
            raise ValidationError(f"{doc_id}: DSR values must be finite and non-negative")
        object.__setattr__(self, "doc_id", str(doc_id))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "indices", _frozen(indices))
        object.__setattr__(self, "fingerprint", fingerprint)

    def __setattr__(self, name, value):
        raise AttributeError("DsrVector is immutable")

    @property
    def m_slices(self) -> int:
        return int(self.values.size)

    def __eq__(self, other):
        if not isinstance(other, DsrVector):
            return NotImplemented
        return (
            self.doc_id == other.doc_id
            and self.fingerprint == other.fingerprint
            and np.array_equal(self.values.view(np.uint16), other.values.view(np.uint16))
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.doc_id, self.values.tobytes(), self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"DsrVector({self.doc_id!r}, M={self.m_slices}, fingerprint={self.fingerprint})"


class DenseVector:
    __slots__ = ("doc_id", "components")

    def __init__(self, doc_id: str, components):
        raw = np.asarray(components)
        if raw.ndim != 1:
            raise ValidationError(f"{doc_id}: dense vector must be 1-d")
        if raw.dtype != np.float16 and not np.all(np.abs(raw.astype(np.float64)) <= HALF_MAX):
            raise ValidationError(f"{doc_id}: dense component outside half-precision range")
        comps = np.array(raw, dtype=np.float16)
        if not np.all(np.isfinite(comps)):
            raise ValidationError(f"{doc_id}: non-finite dense component")
        object.__setattr__(self, "doc_id", str(doc_id))
        object.__setattr__(self, "components", _frozen(comps))

    def __setattr__(self, name, value):
        raise AttributeError("DenseVector is immutable")

    @property
    def dim(self) -> int:
        return int(self.components.size)

    def __eq__(self, other):
        if not isinstance(other, DenseVector):
            return NotImplemented
        return self.doc_id == other.doc_id and np.array_equal(
            self.components.view(np.uint16), other.components.view(np.uint16)
        )

    def __hash__(self):
        return hash((self.doc_id, self.components.tobytes()))

    def __repr__(self) -> str:
        return f"DenseVector({self.doc_id!r}, dim={self.dim})"


def exact_sparse_dot(a: SparseVector, b: SparseVector) -> float:
    """Inner product over shared dims, correctly rounded (``math.fsum``).

    This is the reference every approximate score is checked against, so
    the summation is order-independent by construction.
    """
    _, ia, ib = np.intersect1d(a.dims, b.dims, assume_unique=True, return_indices=True)
    if ia.size == 0:
        return 0.0
    return math.fsum((a.weights[ia] * b.weights[ib]).tolist())


# --- JSON Lines interchange ---


def _lines(source) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def parse_sparse_collection(source, vocab_size: int | None = None) -> Iterator[SparseVector]:
    """Yield SparseVectors from JSON Lines ``{"id": ..., "vector": {dim: weight}}``.

    ``source`` is a path or any iterable of lines. Blank lines are skipped.
    Zero weights are dropped; negative weights raise ValidationError.
    """
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            doc_id = obj["id"]
            raw = obj["vector"]
            if not isinstance(raw, dict):
                raise TypeError("'vector' must be an object")
            items = [(int(k), float(v)) for k, v in raw.items()]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(lineno, f"malformed sparse record ({exc})") from None
        items.sort()
        for dim, weight in items:
            if dim < 0 or (vocab_size is not None and dim >= vocab_size):
                raise ParseError(lineno, f"dimension {dim} out of range for vocab_size {vocab_size}")
            if weight < 0:
                raise ValidationError(f"line {lineno}: negative weight {weight} at dim {dim}")
        for (d0, _), (d1, _) in zip(items, items[1:]):
            if d0 == d1:
                raise ParseError(lineno, f"duplicate dimension {d0}")
        yield SparseVector(str(doc_id), [(d, w) for d, w in items if w != 0.0])


def parse_dense_collection(source) -> Iterator[DenseVector]:
    """Yield DenseVectors from JSON Lines ``{"id": ..., "vector": [floats]}``; dims must agree."""
    dim = None
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            doc_id = obj["id"]
            comps = [float(x) for x in obj["vector"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(lineno, f"malformed dense record ({exc})") from None
        if dim is None:
            dim = len(comps)
        elif len(comps) != dim:
            raise ParseError(lineno, f"dimensionality {len(comps)} != {dim}")
        try:
            yield DenseVector(str(doc_id), comps)
        except ValidationError as exc:
            raise ParseError(lineno, str(exc)) from None


def parse_dsr_collection(source, fingerprint: int | None = None) -> Iterator[DsrVector]:
    """Yield DsrVectors from JSON Lines ``{"id", "values", "indices"}`` as written by ``dsr densify``."""
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            vec = DsrVector(obj["id"], obj["values"], obj["indices"], obj.get("fingerprint", fingerprint))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(lineno, f"malformed DSR record ({exc})") from None
        yield vec


def sparse_to_json(vec: SparseVector) -> str:
    return json.dumps({"id": vec.doc_id, "vector": {str(d): w for d, w in vec.entries}})


def dense_to_json(vec: DenseVector) -> str:
    return json.dumps({"id": vec.doc_id, "vector": vec.components.astype(np.float64).tolist()})


def dsr_to_json(vec: DsrVector) -> str:
    obj = {
        "id": vec.doc_id,
        "values": vec.values.astype(np.float64).tolist(),
        "indices": vec.indices.tolist(),
    }
    if vec.fingerprint is not None:
        obj["fingerprint"] = vec.fingerprint
    return json.dumps(obj)


def write_jsonl(records: Iterable, stream: IO[str], encoder) -> int:
    n = 0
    for rec in records:
        stream.write(encoder(rec))
        stream.write("\n")
        n += 1
    return n


def load_vocab(path) -> list[str]:
    """One token per line; the line number (from 0) is the dimension id."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def check_same_dim(vectors: Sequence[DenseVector]) -> int:
    dims = {v.dim for v in vectors}
    if len(dims) > 1:
        raise ValidationError(f"dense vectors have mixed dimensionality {sorted(dims)}")
    return dims.pop() if dims else 0
