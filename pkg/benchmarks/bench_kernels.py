"""Time the numba and numpy kernel backends on training-sized inputs.

    python3 benchmarks/bench_kernels.py [--batch 64] [--columns 2240] [--dim 512] [--repeat 20]

The defaults match one standard-spec phase-2 step: 48 labeled plus 16
unlabeled rows against 1040 labeled and about 1200 unlabeled columns. Each
kernel is called once before timing so numba compilation is excluded.
"""

import argparse
import time

import numpy as np

from arl import kernels


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--columns", type=int, default=2240)
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--pairs", type=int, default=16, help="rows fed to the pair penalty")
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    F = rng.standard_normal((args.batch, args.dim))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    W = rng.standard_normal((args.dim, args.columns))
    W /= np.linalg.norm(W, axis=0)
    cos = F @ W
    targets = rng.integers(0, args.columns, size=args.batch)
    mask = rng.random(cos.shape) < 0.8
    mask[np.arange(args.batch), targets] = True
    x = rng.standard_normal((args.pairs, args.dim))

    cases = {
        "margin_ce": lambda impl: impl(cos, targets, mask, 64.0, 0.5),
        "uir": lambda impl: impl(cos, 64.0),
        "pair_penalty": lambda impl: impl(x, 0.3),
    }
    print(f"batch={args.batch} columns={args.columns} dim={args.dim} pairs={args.pairs} repeat={args.repeat}")
    print(f"{'kernel':14s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call in cases.items():
        t_np = best_of(lambda: call(getattr(kernels, f"{name}_numpy")), args.repeat)
        fn_nb = getattr(kernels, f"{name}_numba")
        if fn_nb is None:
            print(f"{name:14s} {1e3 * t_np:10.3f} {'n/a':>10s} {'':>8s}")
            continue
        t_nb = best_of(lambda: call(fn_nb), args.repeat)
        print(f"{name:14s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()
