"""Time the numba kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once before timing so that numba compilation is excluded.
"""
import argparse
import timeit

import numpy as np

from sviplus.data import gen_lda_synthetic
from sviplus.kernels import numba_impl, numpy_impl


def cases(rng):
    S, D = 2000, 200
    w = 1.0 + rng.standard_normal(S) * 0.3
    stats = rng.standard_normal((S, D))
    targets = rng.integers(0, 300, S)
    corpus, topics = gen_lda_synthetic(200, 500, 10, 50, seed=0)
    eb = np.exp(np.log(topics + 1e-3))
    batch = np.arange(len(corpus), dtype=np.int64)
    gamma0 = np.full((len(batch), 10), 0.1 + 5.0)
    X = rng.standard_normal((1000, 8))
    Y = rng.standard_normal((1000, 8))
    x = rng.uniform(0.01, 50.0, 100_000)
    return {
        "weighted_sum": lambda m: m.weighted_sum(w, stats),
        "weighted_scatter": lambda m: m.weighted_scatter(w, stats, targets, 300),
        "lda_estep": lambda m: m.lda_estep(corpus.ids, corpus.counts, corpus.ptr, batch, eb, 0.1,
                                           gamma0, np.ones(len(batch)), 100, 1e-3),
        "energy_terms": lambda m: m.energy_terms(X, Y),
        "digamma": lambda m: m.digamma(x),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if numba_impl is None:
        raise SystemExit("numba is unavailable (or disabled); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call in cases(rng).items():
        call(numba_impl)
        t_np = min(timeit.repeat(lambda: call(numpy_impl), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: call(numba_impl), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<18}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>10.1f}")


if __name__ == "__main__":
    main()
