"""Compare the compiled and pure-Python statistical kernels.

    python benchmarks/bench_kernels.py [--repeat 3] [--snps 2000] [--n 2000]

Prints best-of-``repeat`` wall time per kernel and backend, plus the maximum
absolute difference between the two backends' outputs.
"""
import argparse
import time

import numpy as np

from genimg.association import clump_order, standardized_columns
from genimg.kernels import load_backend


def workloads(n_snps, n, seed):
    rng = np.random.default_rng(seed)
    t = rng.standard_t(5, size=n_snps * 10)
    p_ppf = rng.uniform(1e-12, 1 - 1e-12, size=100_000)
    dosage = rng.binomial(2, 0.3, size=(n, n_snps)).astype(float)
    pvals = 10.0 ** -rng.uniform(0, 12, n_snps)
    chrom = np.sort(rng.integers(1, 23, n_snps))
    pos = rng.integers(1, 5_000_000, n_snps)
    gstd = standardized_columns(dosage)
    order = clump_order(pvals, chrom, pos)
    return {
        "t_pvalue_two_sided": lambda k: k.t_pvalue_two_sided(t, float(n - 4)),
        "norm_ppf": lambda k: k.norm_ppf(p_ppf),
        "clump_greedy": lambda k: k.clump_greedy(order, pvals, chrom, pos, gstd, 5e-8, 1e-7, 0.1, 150_000)[0],
    }


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--snps", type=int, default=2000)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = {"python": load_backend("python")}
    try:
        backends["cython"] = load_backend("cython")
    except ImportError:
        print("compiled kernels not built; timing the Python fallback only")

    print(f"{'kernel':<20} {'backend':<8} {'seconds':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, fn in workloads(args.snps, args.n, args.seed).items():
        results = {b: best_time(lambda k=k: fn(k), args.repeat) for b, k in backends.items()}
        base = results["python"][0]
        ref = results["python"][1]
        for b, (secs, out) in results.items():
            diff = float(np.nanmax(np.abs(np.asarray(out, float) - np.asarray(ref, float))))
            print(f"{name:<20} {b:<8} {secs:>10.4f} {base / secs:>7.1f}x {diff:>11.2e}")


if __name__ == "__main__":
    main()
