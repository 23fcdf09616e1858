"""Synthetic learned-sparse corpora for tests and benchmarks.

Term popularity is Zipfian over the sliced vocabulary range, scattered over
dimension ids so that slicing strategy has no built-in advantage. Each query
is drawn from one target document (its single relevant passage) and padded
with low-weight expansion terms, which is what makes a threshold useful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SparseVector
from .eval import Qrels


@dataclass
class SyntheticCollection:
    docs: list[SparseVector]
    queries: list[SparseVector]
    qrels: Qrels
    vocab_size: int


def _sample_terms(rng, cdf, k):
    """``k`` distinct ranks drawn by popularity (sequential draws, repeats skipped)."""
    picked: dict[int, None] = {}
    while len(picked) < k:
        draws = np.searchsorted(cdf, rng.random(2 * k + 8), side="right")
        for r in draws.tolist():
            picked.setdefault(min(r, cdf.size - 1))
            if len(picked) == k:
                break
    return np.fromiter(picked, dtype=np.int64, count=k)


def make_collection(
    num_docs: int = 10_000,
    num_queries: int = 100,
    vocab_size: int = 30522,
    discard_prefix: int = 570,
    doc_nnz: int = 50,
    query_terms: int = 6,
    expansion_terms: int = 20,
    zipf_s: float = 1.0,
    seed: int = 0,
) -> SyntheticCollection:
    rng = np.random.default_rng(seed)
    usable = vocab_size - discard_prefix
    ranks = np.arange(1, usable + 1, dtype=np.float64)
    pop = ranks**-zipf_s
    cdf = np.cumsum(pop / pop.sum())
    dim_of_rank = rng.permutation(usable) + discard_prefix

    docs = []
    for j in range(num_docs):
        nnz = int(np.clip(rng.poisson(doc_nnz), 5, usable))
        terms = np.sort(dim_of_rank[_sample_terms(rng, cdf, nnz)])
        weights = np.round(rng.gamma(2.0, 0.6, size=nnz) + 0.05, 4)
        docs.append(SparseVector.from_arrays(f"d{j:06d}", terms, weights))

    queries, qrels = [], Qrels()
    targets = rng.choice(num_docs, size=num_queries, replace=num_queries > num_docs)
    for i, t in enumerate(targets):
        doc = docs[int(t)]
        take = min(query_terms, doc.nnz)
        core_terms = rng.choice(doc.dims, size=take, replace=False)
        w = {int(d): float(np.round(rng.uniform(0.3, 2.5), 4)) for d in core_terms}
        for d in dim_of_rank[_sample_terms(rng, cdf, expansion_terms)]:
            w.setdefault(int(d), float(np.round(rng.uniform(0.01, 0.12), 4)))
        qid = f"q{i:04d}"
        queries.append(SparseVector.from_mapping(qid, w))
        qrels[qid] = {doc.doc_id: 1}
    return SyntheticCollection(docs, queries, qrels, vocab_size)
