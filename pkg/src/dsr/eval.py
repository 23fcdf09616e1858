"""TREC-style effectiveness metrics over runs and qrels."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Mapping

from .core import ValidationError


class Qrels(dict):
    """``{query_id: {doc_id: grade}}``; a doc is relevant when grade >= ``rel_threshold``."""

    def relevant(self, qid: str, rel_threshold: int = 1) -> set[str]:
        return {d for d, g in self.get(qid, {}).items() if g >= rel_threshold}


def read_qrels(source) -> Qrels:
    """Parse ``qid iter docid grade`` lines."""
    qrels = Qrels()
    own = isinstance(source, (str, Path))
    lines = open(source, encoding="utf-8") if own else source
    try:
        for lineno, line in enumerate(lines, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ValidationError(f"qrels line {lineno}: expected 4 fields, got {len(parts)}")
            qid, _, doc_id, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise ValidationError(f"qrels line {lineno}: grade {grade!r} is not an integer") from None
            if g < 0:
                raise ValidationError(f"qrels line {lineno}: negative grade")
            qrels.setdefault(qid, {})[doc_id] = g
    finally:
        if own:
            lines.close()
    return qrels


def _ranked(run) -> dict[str, list[str]]:
    if isinstance(run, Mapping):
        items = run.items()
    else:
        items = ((rl.query_id, rl) for rl in run)
    out = {}
    for qid, hits in items:
        docs = hits.doc_ids if hasattr(hits, "doc_ids") else list(hits)
        out[qid] = docs
    return out


def _evaluated(run, qrels: Mapping, rel_threshold: int):
    """(qid, ranked docs, relevant set) for queries in the run with at least one relevant doc."""
    if not qrels:
        raise ValidationError("qrels are empty")
    for qid, docs in _ranked(run).items():
        judged = qrels.get(qid)
        if not judged:
            continue
        rel = {d for d, g in judged.items() if g >= rel_threshold}
        if rel:
            yield qid, docs, rel


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def mrr_at_k(run, qrels: Mapping, k: int = 10, rel_threshold: int = 1) -> float:
    """Mean reciprocal rank of the first relevant doc within the top ``k``."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    scores = []
    for _, docs, rel in _evaluated(run, qrels, rel_threshold):
        rr = 0.0
        for rank, d in enumerate(docs[:k], start=1):
            if d in rel:
                rr = 1.0 / rank
                break
        scores.append(rr)
    return _mean(scores)


def recall_at_k(run, qrels: Mapping, k: int = 1000, rel_threshold: int = 1) -> float:
    if k < 1:
        raise ValidationError("k must be >= 1")
    scores = [len(rel.intersection(docs[:k])) / len(rel) for _, docs, rel in _evaluated(run, qrels, rel_threshold)]
    return _mean(scores)


_GAINS = {
    "linear": float,
    "exponential": lambda g: 2.0**g - 1.0,
}


def ndcg_at_k(run, qrels: Mapping, k: int = 10, gain: str = "linear", rel_threshold: int = 1) -> float:
    """nDCG@k with log2(rank + 1) discount.

    ``gain="linear"`` uses the grade itself, as trec_eval's ``ndcg_cut`` does;
    ``gain="exponential"`` uses ``2**grade - 1``.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    try:
        g = _GAINS[gain]
    except KeyError:
        raise ValidationError(f"gain must be one of {sorted(_GAINS)}") from None
    scores = []
    for qid, docs, _ in _evaluated(run, qrels, rel_threshold):
        judged = qrels[qid]
        dcg = math.fsum(g(judged.get(d, 0)) / math.log2(r + 1) for r, d in enumerate(docs[:k], start=1))
        ideal = sorted((gr for gr in judged.values() if gr > 0), reverse=True)[:k]
        idcg = math.fsum(g(gr) / math.log2(r + 1) for r, gr in enumerate(ideal, start=1))
        scores.append(dcg / idcg if idcg > 0 else 0.0)
    return _mean(scores)


METRICS = {
    "mrr@10": lambda run, qrels: mrr_at_k(run, qrels, 10),
    "recall@1000": lambda run, qrels: recall_at_k(run, qrels, 1000),
    "ndcg@10": lambda run, qrels: ndcg_at_k(run, qrels, 10),
}


def parse_metric(name: str):
    """Resolve names like ``mrr@10``, ``recall@100``, ``ndcg@10``, ``ndcg_exp@10``."""
    base, _, cut = name.lower().partition("@")
    try:
        k = int(cut) if cut else {"mrr": 10, "recall": 1000}.get(base, 10)
    except ValueError:
        raise ValidationError(f"bad metric cutoff in {name!r}") from None
    if base == "mrr":
        return lambda run, qrels: mrr_at_k(run, qrels, k)
    if base in ("recall", "r"):
        return lambda run, qrels: recall_at_k(run, qrels, k)
    if base == "ndcg":
        return lambda run, qrels: ndcg_at_k(run, qrels, k)
    if base == "ndcg_exp":
        return lambda run, qrels: ndcg_at_k(run, qrels, k, gain="exponential")
    raise ValidationError(f"unknown metric {name!r}")


def evaluate(run, qrels: Mapping, metrics: Iterable[str] = tuple(METRICS)) -> dict[str, float]:
    return {m: parse_metric(m)(run, qrels) for m in metrics}
