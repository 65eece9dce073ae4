"""Time the numba kernels against their numpy twins on fitter-sized inputs.

    python3 benchmarks/bench_kernels.py [--words 2000] [--samples 400] [--repeat 5]
"""

import argparse
import time

import numpy as np

from stagekde import _kernels as K


def best_of(fn, repeat):
    fn()  # warm up, includes jit compilation for numba
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--words", type=int, default=2000)
    ap.add_argument("--samples", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    W, n = args.words, args.samples
    C, h = rng.normal(size=(W, 2)), rng.uniform(0.2, 1.0, W)
    X, w = rng.normal(size=(n, 2)), np.full(n, 1.0 / n)
    g = np.linspace(-5, 5, 65)
    gx = np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T
    gw = np.full(gx.shape[0], (10 / 64) ** 2)
    base = np.log(np.exp(-(gx ** 2).sum(axis=1) / 2) / (2 * np.pi))
    L = 50
    tri = (rng.normal(size=(L, 2)), rng.uniform(0.1, 1, L), rng.dirichlet(np.ones(L)),
           rng.normal(size=2), 0.5, C, h ** 2)

    cases = [
        ("word_xi_means kl", lambda f: f(C, h, X, w, K.MODE_KL, 0.0),
         K.word_xi_means_numba, K.word_xi_means_numpy),
        ("word_xi_means beta=0.5", lambda f: f(C, h, X, w, K.MODE_BETA, 0.5),
         K.word_xi_means_numba, K.word_xi_means_numpy),
        ("grid_probe kl (65x65)", lambda f: f(base, gx, gw, C[:200], h[:200], 0.3, K.MODE_KL, 0.0),
         K.grid_probe_numba, K.grid_probe_numpy),
        ("weighted_triple_row", lambda f: f(*tri),
         K.weighted_triple_row_numba, K.weighted_triple_row_numpy),
    ]
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, call, fast, slow in cases:
        a = best_of(lambda: call(fast), args.repeat)
        b = best_of(lambda: call(slow), args.repeat)
        print(f"{name:28s} {a * 1e3:10.2f} {b * 1e3:10.2f} {b / a:8.1f}")


if __name__ == "__main__":
    main()
