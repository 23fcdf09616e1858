"""``dsr`` command line: densify, index, search, sweep, eval, inspect, ablate."""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import sys

import click

from . import core
from .eval import evaluate, read_qrels
from .index import (
    StorageEstimate,
    build_dense_index,
    build_dsr_index,
    load_dense_index,
    load_index,
    predict_storage,
    save_dense_index,
    save_index,
)
from .search import (
    AblationRow,
    SearchParams,
    SweepRow,
    search_many,
    slicing_ablation,
    theta_sweep,
    write_run,
)
from .slicing import SlicingConfig, Strategy, build_assignment, densify, load_config, undensify_term

logger = logging.getLogger("dsr")


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, KeyError, OSError) as exc:
            msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
            raise click.ClickException(str(msg)) from exc

    return wrapper


def _config(path) -> SlicingConfig:
    return load_config(path) if path else SlicingConfig()


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DSR_WORKERS", "1")))
    except ValueError:
        raise click.ClickException("DSR_WORKERS must be an integer")


def read_queries(path, index=None) -> list:
    """Queries as sparse JSON Lines or densified JSON Lines (``values``/``indices``)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        return out
    first = json.loads(lines[0])
    if "values" in first:
        out = list(core.parse_dsr_collection(lines))
    else:
        vocab = index.config.vocab_size if index is not None else None
        out = list(core.parse_sparse_collection(lines, vocab_size=vocab))
    return out


def _storage_summary(est: StorageEstimate) -> str:
    parts = [f"dsr payload+header: {est.dsr_bytes} bytes ({est.gib(est.dsr_bytes):.3f} GiB)"]
    if est.dense_bytes:
        parts.append(f"dense: {est.dense_bytes} bytes ({est.gib(est.dense_bytes):.3f} GiB)")
        parts.append(f"combined: {est.total_bytes} bytes ({est.gib(est.total_bytes):.3f} GiB)")
    return "; ".join(parts)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Densified sparse representation retrieval."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("densify")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--output", required=True, type=click.Path(dir_okay=False))
@_handle_errors
def cmd_densify(input_path, config_path, output):
    """Densify sparse JSON Lines into {"id", "values", "indices"} JSON Lines."""
    cfg = _config(config_path)
    asg = build_assignment(cfg)
    vectors = core.parse_sparse_collection(input_path, vocab_size=cfg.vocab_size)
    with open(output, "w", encoding="utf-8") as fh:
        n = core.write_jsonl((densify(v, asg) for v in vectors), fh, core.dsr_to_json)
    logger.info("densified %d vectors", n)


@cli.group("index")
def index_group():
    """Build DSR or dense index files."""


@index_group.command("build")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out-index", required=True, type=click.Path(dir_okay=False))
@_handle_errors
def cmd_index(input_path, config_path, out_index):
    cfg = _config(config_path)
    index = build_dsr_index(core.parse_sparse_collection(input_path, vocab_size=cfg.vocab_size), cfg)
    save_index(index, out_index)
    click.echo(f"{index.num_docs} docs, M={cfg.m_slices}; " + _storage_summary(predict_storage(index.num_docs, cfg)))


@index_group.command("dense")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out-index", required=True, type=click.Path(dir_okay=False))
@_handle_errors
def cmd_index_dense(input_path, out_index):
    index = build_dense_index(core.parse_dense_collection(input_path))
    save_dense_index(index, out_index)
    est = StorageEstimate(0, predict_storage(index.num_docs, 1, index.dim or None).dense_bytes)
    click.echo(f"{index.num_docs} docs, dim={index.dim}; dense: {est.dense_bytes} bytes ({est.gib(est.dense_bytes):.3f} GiB)")


@cli.command("search")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["exhaustive", "two_stage", "two_stage_fused"]), default="two_stage", show_default=True)
@click.option("--theta", type=float, default=0.1, show_default=True)
@click.option("--depth", type=int, default=10000, show_default=True, help="Candidates passed to reranking.")
@click.option("--k", type=int, default=1000, show_default=True)
@click.option("--lambda", "lam", type=float, default=1.0, show_default=True)
@click.option("--dense-index", type=click.Path(exists=True, dir_okay=False))
@click.option("--dense-queries", type=click.Path(exists=True, dir_okay=False))
@click.option("--run-tag", default="dsr", show_default=True)
@click.option("--output", type=click.Path(dir_okay=False), help="Run file (default: stdout).")
@_handle_errors
def cmd_search(index_path, queries, mode, theta, depth, k, lam, dense_index, dense_queries, run_tag, output):
    """Write a TREC run file."""
    index = load_index(index_path)
    qs = read_queries(queries, index)
    params = SearchParams(k=k, theta=theta, rerank_depth=depth, lam=lam, mode=mode)
    dq = di = None
    if mode == "two_stage_fused":
        if not (dense_index and dense_queries):
            raise click.UsageError("--mode two_stage_fused needs --dense-index and --dense-queries")
        di = load_dense_index(dense_index)
        dq = list(core.parse_dense_collection(dense_queries))
    runs = search_many(qs, index, params, dq, di, workers=_workers())
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            write_run(runs, fh, run_tag)
    else:
        write_run(runs, sys.stdout, run_tag)


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {text!r}")


@cli.command("sweep")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--thetas", default="0,0.05,0.1,0.2,0.5,1.0", show_default=True)
@click.option("--depth", type=int, default=10000, show_default=True)
@click.option("--k", type=int, default=1000, show_default=True)
@click.option("--output", type=click.Path(dir_okay=False), help="CSV path (default: stdout).")
@_handle_errors
def cmd_sweep(index_path, queries, qrels, thetas, depth, k, output):
    """Effectiveness and cost per theta, as CSV."""
    index = load_index(index_path)
    rows = theta_sweep(read_queries(queries, index), index, _floats(thetas), depth, k, read_qrels(qrels))
    _write_csv(rows, SweepRow.FIELDS, output)


def _write_csv(rows, fields, output):
    fh = open(output, "w", encoding="utf-8", newline="") if output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(getattr(r, f)) for f in fields])
    finally:
        if output:
            fh.close()


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.6f}"
    return x


@cli.command("eval")
@click.option("--run", "run_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metrics", default="mrr@10,recall@1000,ndcg@10", show_default=True)
@_handle_errors
def cmd_eval(run_path, qrels, metrics):
    """Print metric values to 4 decimals."""
    from .search import read_run

    results = evaluate(read_run(run_path), read_qrels(qrels), [m.strip() for m in metrics.split(",") if m.strip()])
    for name, value in results.items():
        click.echo(f"{name}\t{value:.4f}")


@cli.command("inspect")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--doc-id", required=True)
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False), help="One token per line.")
@_handle_errors
def cmd_inspect(index_path, doc_id, vocab):
    """List a stored document's non-empty slices: slice, term, weight (descending weight)."""
    index = load_index(index_path)
    vec = index.vector(doc_id)
    tokens = core.load_vocab(vocab) if vocab else None
    rows = [
        (m, undensify_term(m, index.assignment, int(vec.indices[m])), float(vec.values[m]))
        for m in range(vec.m_slices)
        if vec.values[m] > 0
    ]
    rows.sort(key=lambda r: (-r[2], r[0]))
    for m, dim, w in rows:
        term = tokens[dim] if tokens is not None and dim < len(tokens) else str(dim)
        click.echo(f"{m}\t{term}\t{w:.4f}")


@cli.command("ablate")
@click.option("--docs", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--queries", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--qrels", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--strategies", default="contiguous,stride,random", show_default=True)
@click.option("--k", type=int, default=1000, show_default=True)
@click.option("--output", type=click.Path(dir_okay=False))
@_handle_errors
def cmd_ablate(docs, queries, qrels, config_path, strategies, k, output):
    """Compare slicing strategies on the same collection, as CSV."""
    cfg = _config(config_path)
    d = list(core.parse_sparse_collection(docs, vocab_size=cfg.vocab_size))
    q = list(core.parse_sparse_collection(queries, vocab_size=cfg.vocab_size))
    strats = [Strategy(s.strip()) for s in strategies.split(",") if s.strip()]
    rows = slicing_ablation(d, q, read_qrels(qrels), cfg, strats, k)
    _write_csv(rows, AblationRow.FIELDS, output)


@cli.command("storage")
@click.option("--num-docs", type=int, required=True)
@click.option("--slices", type=int, default=768, show_default=True)
@click.option("--dense-dim", type=int, default=None)
def cmd_storage(num_docs, slices, dense_dim):
    """Predicted index sizes."""
    click.echo(_storage_summary(predict_storage(num_docs, slices, dense_dim)))


def main(argv=None):
    cli.main(args=argv, prog_name="dsr")


if __name__ == "__main__":
    main()
