"""Compiled vs numpy kernels on a synthetic corpus.

    python benchmarks/bench_kernels.py --docs 20000 --queries 50

Reports median wall time per call for the full scan, the rerank gather, and
batch densification, and checks that both backends return identical bits.
"""

import argparse
import statistics
import time

import numpy as np

from dsr import kernels
from dsr.index import build_dsr_index
from dsr.slicing import PRESETS, densify, densify_many
from dsr.synthetic import make_collection


def timed(fn, repeat):
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples), out


def bench(backend, coll, index, theta, depth, repeat):
    kernels.use_backend(backend)
    asg = index.assignment
    qs = [densify(q, asg) for q in coll.queries]
    prepared = [(q.values.astype(np.float64), q.indices) for q in qs]
    full = [np.arange(index.m_slices)] * len(qs)
    partial = [np.flatnonzero(q.values.astype(np.float64) > theta) for q in qs]
    rng = np.random.default_rng(0)
    cand = rng.choice(index.num_docs, size=min(depth, index.num_docs), replace=False).astype(np.int64)

    def scan(active):
        return [kernels.gip_scan(v, i, a, index.values_bits, index.indices) for (v, i), a in zip(prepared, active)]

    def gather():
        return [kernels.gip_gather(v, i, a, index.values_bits, index.indices, cand) for (v, i), a in zip(prepared, full)]

    t_full, out_full = timed(lambda: scan(full), repeat)
    t_part, _ = timed(lambda: scan(partial), repeat)
    t_gather, out_gather = timed(gather, repeat)
    t_dens, dens = timed(lambda: densify_many(coll.docs, asg), repeat)
    n = len(qs)
    return {
        "scan_full_ms_per_query": 1000 * t_full / n,
        "scan_theta_ms_per_query": 1000 * t_part / n,
        "gather_ms_per_query": 1000 * t_gather / n,
        "densify_us_per_doc": 1e6 * t_dens / len(coll.docs),
    }, (out_full, out_gather, dens)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--docs", type=int, default=20000)
    ap.add_argument("--queries", type=int, default=50)
    ap.add_argument("--slices", type=int, choices=sorted(PRESETS), default=768)
    ap.add_argument("--theta", type=float, default=0.1)
    ap.add_argument("--depth", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    coll = make_collection(num_docs=args.docs, num_queries=args.queries, seed=1)
    index = build_dsr_index(coll.docs, PRESETS[args.slices])
    results, outputs = {}, {}
    for name in sorted(kernels.BACKENDS):
        results[name], outputs[name] = bench(name, coll, index, args.theta, args.depth, args.repeat)

    print(f"{args.docs} docs, {args.queries} queries, M={args.slices}, theta={args.theta}, depth={args.depth}")
    names = sorted(results)
    print(f"{'metric':<26}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for key in results[names[0]]:
        row = f"{key:<26}" + "".join(f"{results[n][key]:>12.4f}" for n in names)
        if len(names) == 2:
            row += f"{results['python'][key] / results['compiled'][key]:>11.1f}x"
        print(row)
    if len(names) == 2:
        a, b = outputs["compiled"], outputs["python"]
        same = all(x.tobytes() == y.tobytes() for x, y in zip(a[0], b[0]))
        same &= all(x.tobytes() == y.tobytes() for x, y in zip(a[1], b[1]))
        same &= all(np.array_equal(x, y) for x, y in zip(a[2], b[2]))
        print(f"outputs bit-identical: {same}")
    else:
        print("compiled extension not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
