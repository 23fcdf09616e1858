"""Top-k retrieval over a DsrIndex: exhaustive GIP, retrieve-and-rerank, fused reranking."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from . import kernels
from .core import DenseVector, DsrVector, SparseVector, ValidationError
from .eval import Qrels, mrr_at_k, ndcg_at_k, recall_at_k
from .index import DenseIndex, DsrIndex, build_dsr_index
from .scoring import FingerprintMismatch, count_ops
from .slicing import SlicingConfig, Strategy, densify

logger = logging.getLogger(__name__)

MODES = ("exhaustive", "two_stage", "two_stage_fused")


@dataclass(frozen=True)
class SearchParams:
    k: int = 1000
    theta: float = 0.1
    rerank_depth: int = 10000
    lam: float = 1.0
    mode: str = "two_stage"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.theta < 0:
            raise ValidationError("theta must be non-negative")
        if self.mode != "exhaustive" and self.k > self.rerank_depth:
            raise ValidationError(f"k={self.k} exceeds rerank_depth={self.rerank_depth}")


@dataclass
class RankedList:
    query_id: str
    hits: list[tuple[str, float]] = field(default_factory=list)

    @property
    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.hits]

    def __len__(self) -> int:
        return len(self.hits)


# --- helpers ---


def _query_arrays(q: DsrVector | SparseVector, index: DsrIndex) -> tuple[str, np.ndarray, np.ndarray]:
    if isinstance(q, SparseVector):
        q = densify(q, index.assignment)
    if q.m_slices != index.m_slices:
        raise FingerprintMismatch(f"query has {q.m_slices} slices, index has {index.m_slices}")
    index.check_fingerprint(q.fingerprint)
    return q.doc_id, q.values.astype(np.float64), q.indices


def top_k_positions(scores: np.ndarray, tie_rank: np.ndarray, k: int) -> np.ndarray:
    """Positions of the ``k`` best scores, descending, ties by ascending ``tie_rank``."""
    n = scores.size
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if k < n:
        kth = np.partition(scores, n - k)[n - k]
        pool = np.flatnonzero(scores >= kth)
    else:
        pool = np.arange(n)
    order = np.lexsort((tie_rank[pool], -scores[pool]))
    return pool[order[:k]]


def _hits(index, positions, scores) -> list[tuple[str, float]]:
    ids = index.doc_ids
    return [(ids[p], float(s)) for p, s in zip(positions.tolist(), scores.tolist())]


def _stage_one(q_vals, q_idx, index: DsrIndex, theta: float):
    active = np.flatnonzero(q_vals > theta)
    return active, kernels.gip_scan(q_vals, q_idx, active, index.values_bits, index.indices)


def _rerank(q_vals, q_idx, index: DsrIndex, cand: np.ndarray) -> np.ndarray:
    full = np.flatnonzero(q_vals > 0)
    return kernels.gip_gather(q_vals, q_idx, full, index.values_bits, index.indices, cand)


# --- search ---


def search_exhaustive(q, index: DsrIndex, k: int) -> RankedList:
    """Rank every document by full GIP."""
    qid, q_vals, q_idx = _query_arrays(q, index)
    _, scores = _stage_one(q_vals, q_idx, index, 0.0)
    pos = top_k_positions(scores, index.tie_rank, k)
    return RankedList(qid, _hits(index, pos, scores[pos]))


def _two_stage(q_vals, q_idx, index, params, stage1_k=None):
    active, s1 = _stage_one(q_vals, q_idx, index, params.theta)
    cand = top_k_positions(s1, index.tie_rank, params.rerank_depth)
    stage1_pos = top_k_positions(s1, index.tie_rank, stage1_k) if stage1_k else None
    return active, s1, cand, stage1_pos


def search_two_stage(q, index: DsrIndex, params: SearchParams) -> RankedList:
    """Stage 1 ranks all docs by GIP over slices with query value > theta;
    the top ``rerank_depth`` are re-scored with full GIP."""
    qid, q_vals, q_idx = _query_arrays(q, index)
    _, _, cand, _ = _two_stage(q_vals, q_idx, index, params)
    s2 = _rerank(q_vals, q_idx, index, cand)
    order = top_k_positions(s2, index.tie_rank[cand], params.k)
    return RankedList(qid, _hits(index, cand[order], s2[order]))


def align_dense(index: DsrIndex, dense_index: DenseIndex) -> np.ndarray:
    """For each DSR column, the matching column of ``dense_index``."""
    if set(index.doc_ids) != set(dense_index.doc_ids) or index.num_docs != dense_index.num_docs:
        raise ValidationError("DSR and dense indexes cover different doc-id sets")
    if index.doc_ids == dense_index.doc_ids:
        return np.arange(index.num_docs, dtype=np.int64)
    return np.fromiter((dense_index.doc_pos[d] for d in index.doc_ids), dtype=np.int64, count=index.num_docs)


def search_fused(
    q_dsr,
    q_dense: DenseVector,
    index: DsrIndex,
    dense_index: DenseIndex,
    params: SearchParams,
    alignment: np.ndarray | None = None,
) -> RankedList:
    """Stage 1 as in two-stage search; stage 2 scores ``lam * dense + GIP``."""
    qid, q_vals, q_idx = _query_arrays(q_dsr, index)
    if q_dense.dim != dense_index.dim:
        raise ValidationError(f"dense query dim {q_dense.dim} != index dim {dense_index.dim}")
    if alignment is None:
        alignment = align_dense(index, dense_index)
    _, _, cand, _ = _two_stage(q_vals, q_idx, index, params)
    g = _rerank(q_vals, q_idx, index, cand)
    comps = dense_index.components[:, alignment[cand]].astype(np.float64)
    dense = q_dense.components.astype(np.float64) @ comps
    fused = params.lam * dense + g
    order = top_k_positions(fused, index.tie_rank[cand], params.k)
    return RankedList(qid, _hits(index, cand[order], fused[order]))


def search(q, index: DsrIndex, params: SearchParams, q_dense=None, dense_index=None, alignment=None):
    if params.mode == "exhaustive":
        return search_exhaustive(q, index, params.k)
    if params.mode == "two_stage":
        return search_two_stage(q, index, params)
    if q_dense is None or dense_index is None:
        raise ValidationError("fused search needs dense queries and a dense index")
    return search_fused(q, q_dense, index, dense_index, params, alignment)


def search_many(
    queries: Sequence,
    index: DsrIndex,
    params: SearchParams,
    dense_queries: Sequence[DenseVector] | None = None,
    dense_index: DenseIndex | None = None,
    workers: int = 1,
) -> list[RankedList]:
    """Run every query; output order follows ``queries`` regardless of ``workers``."""
    alignment = None
    dense_by_id = {}
    if params.mode == "two_stage_fused":
        if dense_queries is None or dense_index is None:
            raise ValidationError("fused search needs dense queries and a dense index")
        alignment = align_dense(index, dense_index)
        dense_by_id = {v.doc_id: v for v in dense_queries}

    def run(q):
        qd = None
        if alignment is not None:
            try:
                qd = dense_by_id[q.doc_id]
            except KeyError:
                raise ValidationError(f"no dense vector for query {q.doc_id!r}") from None
        return search(q, index, params, qd, dense_index, alignment)

    if workers <= 1 or len(queries) < 2:
        return [run(q) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, queries))


# --- run files ---


def write_run(runs: Iterable[RankedList], stream: IO[str], tag: str = "dsr") -> int:
    """TREC run lines ``qid Q0 docid rank score tag``; returns line count."""
    n = 0
    for rl in runs:
        for rank, (doc_id, score) in enumerate(rl.hits, start=1):
            stream.write(f"{rl.query_id} Q0 {doc_id} {rank} {score:.6f} {tag}\n")
            n += 1
    return n


def read_run(source) -> dict[str, RankedList]:
    """Parse a TREC run; hits are ordered by the rank column."""
    rows: dict[str, list[tuple[int, str, float]]] = {}
    lines = open(source, encoding="utf-8") if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__") else source
    try:
        for lineno, line in enumerate(lines, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValidationError(f"run line {lineno}: expected 6 fields, got {len(parts)}")
            qid, _, doc_id, rank, score, _ = parts
            try:
                rows.setdefault(qid, []).append((int(rank), doc_id, float(score)))
            except ValueError:
                raise ValidationError(f"run line {lineno}: bad rank or score") from None
    finally:
        if lines is not source:
            lines.close()
    out = {}
    for qid, hits in rows.items():
        hits.sort(key=lambda h: h[0])
        out[qid] = RankedList(qid, [(d, s) for _, d, s in hits])
    return out


# --- theta sweep ---


@dataclass(frozen=True)
class SweepRow:
    theta: float
    stage1_mrr10: float
    stage1_recall1k: float
    reranked_mrr10: float
    reranked_recall1k: float
    active_slice_fraction: float
    counted_ops: float
    wall_ms: float

    FIELDS = (
        "theta", "stage1_mrr10", "stage1_recall1k", "reranked_mrr10",
        "reranked_recall1k", "active_slice_fraction", "counted_ops", "wall_ms",
    )


def theta_sweep(
    queries: Sequence,
    index: DsrIndex,
    thetas: Sequence[float],
    rerank_depth: int,
    k: int,
    qrels: Qrels,
) -> list[SweepRow]:
    """Effectiveness of first-stage-only and reranked runs per theta.

    ``counted_ops`` is the mean per-query count of GIP primitive operations
    (4 per scored slice, stage 1 plus rerank); ``wall_ms`` is informational.
    """
    prepared = [_query_arrays(q, index) for q in queries]
    M, n = index.m_slices, index.num_docs
    rows = []
    for theta in thetas:
        params = SearchParams(k=k, theta=theta, rerank_depth=max(rerank_depth, k), mode="two_stage")
        stage1_runs, reranked_runs = {}, {}
        active_total = 0
        t0 = time.perf_counter()
        for qid, q_vals, q_idx in prepared:
            active, s1, cand, s1_pos = _two_stage(q_vals, q_idx, index, params, stage1_k=k)
            active_total += active.size
            stage1_runs[qid] = RankedList(qid, _hits(index, s1_pos, s1[s1_pos]))
            s2 = _rerank(q_vals, q_idx, index, cand)
            order = top_k_positions(s2, index.tie_rank[cand], k)
            reranked_runs[qid] = RankedList(qid, _hits(index, cand[order], s2[order]))
        wall_ms = (time.perf_counter() - t0) * 1000 / max(len(prepared), 1)
        nq = max(len(prepared), 1)
        depth = min(params.rerank_depth, n)
        ops = (count_ops("gip", 1) * active_total * n) / nq + (count_ops("gip", M) * depth if n else 0)
        rows.append(
            SweepRow(
                theta=float(theta),
                stage1_mrr10=mrr_at_k(stage1_runs, qrels, 10),
                stage1_recall1k=recall_at_k(stage1_runs, qrels, 1000),
                reranked_mrr10=mrr_at_k(reranked_runs, qrels, 10),
                reranked_recall1k=recall_at_k(reranked_runs, qrels, 1000),
                active_slice_fraction=active_total / (nq * M),
                counted_ops=ops,
                wall_ms=wall_ms,
            )
        )
        logger.info("theta=%g active=%.4f wall=%.2fms/q", theta, rows[-1].active_slice_fraction, wall_ms)
    return rows


def scan_op_count(q: DsrVector, index: DsrIndex, kind: str = "gip") -> int:
    """Instrumented full-corpus scan; ``dense_dot`` treats the value vectors as plain dense vectors."""
    from .scoring import dense_dot_instrumented, gip_instrumented

    total = 0
    for d in index:
        if kind == "gip":
            _, ops = gip_instrumented(q, d)
        elif kind == "dense_dot":
            _, ops = dense_dot_instrumented(q.values, d.values)
        else:
            raise ValueError(f"unknown kind {kind!r}")
        total += ops
    return total


# --- exact reference retrieval and the slicing ablation ---


class ExactSparseScorer:
    """Exact sparse inner products of one query against a whole collection."""

    def __init__(self, collection: Sequence[SparseVector], vocab_size: int):
        self.doc_ids = tuple(v.doc_id for v in collection)
        lengths = np.fromiter((v.nnz for v in collection), dtype=np.int64, count=len(collection))
        self.rows = np.repeat(np.arange(len(collection)), lengths)
        self.dims = np.concatenate([v.dims for v in collection]) if lengths.sum() else np.zeros(0, np.int64)
        self.weights = (
            np.concatenate([v.weights for v in collection]) if lengths.sum() else np.zeros(0)
        )
        self.vocab_size = vocab_size
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        self.tie_rank = np.empty(len(order), dtype=np.int64)
        self.tie_rank[order] = np.arange(len(order))

    def scores(self, q: SparseVector) -> np.ndarray:
        dense_q = np.zeros(self.vocab_size)
        dense_q[q.dims] = q.weights
        return np.bincount(self.rows, weights=self.weights * dense_q[self.dims], minlength=len(self.doc_ids))

    def search(self, q: SparseVector, k: int) -> RankedList:
        s = self.scores(q)
        pos = top_k_positions(s, self.tie_rank, k)
        return RankedList(q.doc_id, [(self.doc_ids[p], float(s[p])) for p in pos.tolist()])


@dataclass(frozen=True)
class AblationRow:
    strategy: str
    m_slices: int
    mrr10: float
    recall1k: float
    ndcg10: float
    overlap10: float  # mean |top-10 DSR ∩ top-10 exact| / 10

    FIELDS = ("strategy", "m_slices", "mrr10", "recall1k", "ndcg10", "overlap10")


def slicing_ablation(
    docs: Sequence[SparseVector],
    queries: Sequence[SparseVector],
    qrels: Qrels,
    base: SlicingConfig,
    strategies: Sequence[Strategy | str] = tuple(Strategy),
    k: int = 1000,
) -> list[AblationRow]:
    """Exhaustive DSR retrieval under each slicing strategy, plus agreement with exact retrieval."""
    exact = ExactSparseScorer(docs, base.vocab_size)
    exact_top = {q.doc_id: set(exact.search(q, 10).doc_ids) for q in queries}
    rows = []
    for strat in strategies:
        cfg = SlicingConfig(base.vocab_size, base.discard_prefix, base.m_slices, base.n_width, Strategy(strat), base.seed)
        index = build_dsr_index(docs, cfg)
        runs = {q.doc_id: search_exhaustive(q, index, k) for q in queries}
        overlap = np.mean([len(exact_top[qid] & set(rl.doc_ids[:10])) / 10 for qid, rl in runs.items()]) if runs else 0.0
        rows.append(
            AblationRow(
                strategy=cfg.strategy.value,
                m_slices=cfg.m_slices,
                mrr10=mrr_at_k(runs, qrels, 10),
                recall1k=recall_at_k(runs, qrels, 1000),
                ndcg10=ndcg_at_k(runs, qrels, 10),
                overlap10=float(overlap),
            )
        )
    return rows
