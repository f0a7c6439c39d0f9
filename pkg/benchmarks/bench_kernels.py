#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the two k-NN/tree kernel paths on matched inputs, checks they agree,
and times one full resample-and-bag pipeline under each backend.

    python3 benchmarks/bench_kernels.py [--n 500] [--m 500] [--p 10] [--reps 20]
"""

import argparse
import time

import numpy as np

import dabag
from dabag import _kernels


def timeit(fn, reps):
    fn()  # warm (and compile, on the jit path)
    start = time.perf_counter()
    for _ in range(reps):
        out = fn()
    return (time.perf_counter() - start) / reps, out


def bench_knn(n, m, p, k, reps):
    gen = np.random.default_rng(0)
    q = gen.standard_normal((m, p))
    ref = gen.standard_normal((n, p))
    tie = gen.random((m, n))
    t_nb, (idx_nb, d2_nb) = timeit(lambda: _kernels._knn_query_nb(q, ref, k, tie), reps)
    t_np, (idx_np, d2_np) = timeit(lambda: _kernels._knn_query_np(q, ref, k, tie), reps)
    assert np.array_equal(idx_nb, idx_np) and np.array_equal(d2_nb, d2_np)
    return t_nb, t_np


def bench_tree(n, p, reps):
    gen = np.random.default_rng(1)
    x = gen.standard_normal((n, p))
    y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(np.int64)
    t_nb, nodes_nb = timeit(lambda: _kernels._tree_build_nb(x, y, 2, 12, 2), reps)
    t_np, nodes_np = timeit(lambda: _kernels._tree_build_np(x, y, 2, 12, 2), reps)
    for a, b in zip(nodes_nb, nodes_np):
        assert np.array_equal(a, b)
    xq = gen.standard_normal((n, p))
    ta_nb, leaves_nb = timeit(lambda: _kernels._tree_apply_nb(*nodes_nb[:4], xq), reps)
    ta_np, leaves_np = timeit(lambda: _kernels._tree_apply_np(*nodes_np[:4], xq), reps)
    assert np.array_equal(leaves_nb, leaves_np)
    return (t_nb, t_np), (ta_nb, ta_np)


def bench_pipeline(n, m, backend_numba):
    _kernels.use_numba(backend_numba)
    rng = dabag.RngStream(2)
    gt = dabag.gen_setting1(n, m, 0.2, 0.0, rng.child(0))
    cfg = dabag.DaBaggingConfig(
        b=20, base=dabag.ClassifierSpec("knn"), resample=dabag.ResampleConfig(k=1)
    )
    start = time.perf_counter()
    model = dabag.fit_ensemble(gt.train, gt.test.without_labels(), cfg, rng.child(1))
    preds = model.predict_batch(gt.test.features)
    elapsed = time.perf_counter() - start
    return elapsed, preds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--m", type=int, default=500)
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--k", type=int, default=7)
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()

    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba unavailable; nothing to compare")

    print(f"inputs: n={args.n} m={args.m} p={args.p} k={args.k}, {args.reps} reps\n")
    print(f"{'kernel':<22} {'numba':>10} {'numpy':>10} {'speedup':>8}")

    t_nb, t_np = bench_knn(args.n, args.m, args.p, args.k, args.reps)
    print(f"{'knn_query':<22} {t_nb*1e3:>8.2f}ms {t_np*1e3:>8.2f}ms {t_np/t_nb:>7.1f}x")

    (tb_nb, tb_np), (ta_nb, ta_np) = bench_tree(args.n, args.p, args.reps)
    print(f"{'tree_build':<22} {tb_nb*1e3:>8.2f}ms {tb_np*1e3:>8.2f}ms {tb_np/tb_nb:>7.1f}x")
    print(f"{'tree_apply':<22} {ta_nb*1e3:>8.2f}ms {ta_np*1e3:>8.2f}ms {ta_np/ta_nb:>7.1f}x")

    was = _kernels.numba_enabled()
    try:
        e_nb, p_nb = bench_pipeline(args.n, args.m, True)
        e_np, p_np = bench_pipeline(args.n, args.m, False)
    finally:
        _kernels.use_numba(was)
    match = np.array_equal(p_nb, p_np)
    print(f"{'bagging pipeline':<22} {e_nb:>9.2f}s {e_np:>9.2f}s {e_np/e_nb:>7.1f}x")
    print(f"\npipeline predictions identical across backends: {match}")


if __name__ == "__main__":
    main()
