"""Time the compiled kernels against the NumPy fallback.

Usage::

    python benchmarks/bench_kernels.py [--cells 2000] [--K 5] [--d 3] [--repeat 5] [--sweeps 20]

Prints one line per kernel with the best-of-``repeat`` time for each backend
and the speedup, then the wall time of full sampler sweeps on the desk preset
under each backend (run in a subprocess so the backend switch takes effect).
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hierflow import _kernels_py

try:
    from hierflow import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

SWEEP_SNIPPET = """
import time
from hierflow.engine import McmcConfig, run_chain
from hierflow.priors import noninformative
from hierflow.synthetic import desk_spec, generate_synthetic
data, _ = generate_synthetic(desk_spec(), 2024)
prior = noninformative(data, 4)
t0 = time.perf_counter()
run_chain(data, prior, McmcConfig(burn_in={sweeps}, production=1, seed=1))
print(time.perf_counter() - t0)
"""


def _inputs(n, K, d, rng):
    Y = rng.normal(size=(n, d))
    means = rng.normal(size=(K, d))
    A = rng.normal(size=(K, d, d))
    covs = A @ A.transpose(0, 2, 1) + d * np.eye(d)
    chols = np.linalg.cholesky(covs)
    logdets = 2 * np.log(np.diagonal(chols, axis1=1, axis2=2)).sum(1)
    logpi = np.log(rng.dirichlet(np.ones(K)))
    return Y, means, chols, logdets, logpi


def _cases(mod, n, K, d, rng):
    Y, means, chols, logdets, logpi = _inputs(n, K, d, rng)
    L = mod.component_logdens(Y, means, chols, logdets)
    u = rng.uniform(size=n)
    P = np.empty((n, K))
    tot = np.empty(n)
    x = rng.integers(0, K, n).astype(np.intp)
    dx = rng.normal(size=500)
    dw = np.ones(500)
    return {
        "component_logdens": lambda: mod.component_logdens(Y, means, chols, logdets),
        "sample_assignments": lambda: mod.sample_assignments(L, logpi, u),
        "mixture_weights": lambda: mod.mixture_weights(L, logpi, P, tot),
        "suff_stats": lambda: mod.suff_stats(Y, x, K),
        "dip_weighted(n=500)": lambda: mod.dip_weighted(dx, dw),
    }


def _best(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _sweep_time(sweeps, pure):
    env = dict(os.environ, HIERFLOW_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", SWEEP_SNIPPET.format(sweeps=sweeps)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cells", type=int, default=2000)
    p.add_argument("--K", type=int, default=5, help="columns including the outlier component")
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--sweeps", type=int, default=20, help="sampler sweeps per backend; 0 skips")
    args = p.parse_args(argv)

    if _kernels_c is None:
        print("compiled extension not built; only the fallback is timed")
    py = _cases(_kernels_py, args.cells, args.K, args.d, np.random.default_rng(0))
    cy = _cases(_kernels_c, args.cells, args.K, args.d, np.random.default_rng(0)) if _kernels_c else None
    print(f"{'kernel':24s} {'python (ms)':>12s} {'cython (ms)':>12s} {'speedup':>8s}")
    for name, fn in py.items():
        tp = _best(fn, args.repeat) * 1e3
        if cy is None:
            print(f"{name:24s} {tp:12.3f}")
            continue
        tc = _best(cy[name], args.repeat) * 1e3
        print(f"{name:24s} {tp:12.3f} {tc:12.3f} {tp / tc:8.1f}")

    if args.sweeps > 0:
        tp = _sweep_time(args.sweeps, pure=True)
        line = f"desk preset, {args.sweeps} sweeps: python {tp:.2f} s"
        if _kernels_c is not None:
            tc = _sweep_time(args.sweeps, pure=False)
            line += f", cython {tc:.2f} s, speedup {tp / tc:.1f}"
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
