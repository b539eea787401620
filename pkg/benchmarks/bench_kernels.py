"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5] [--end-to-end]

Kernel timings use inputs shaped like one ensemble step (4000 paths, n=2).
``--end-to-end`` also runs a small full-system ensemble in two subprocesses,
one with ``STOCHAVG_DISABLE_NUMBA=1``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from stochavg import build_model
from stochavg._kernels import numba_kernels, numpy_kernels

N_PATHS = 4000

END_TO_END = """
import time
import numpy as np
import stochavg as sa
from stochavg._kernels import backend
from stochavg.equations import build_full
from stochavg.ensemble import run_ensemble
from stochavg.sde import PathConfig
m = sa.build_model("damped_driven")
sys_ = build_full(m.H, m.P, m.B, 0.01)
x0 = np.array([1.0 + 0.5j, 0.3 - 0.2j])
run_ensemble(sys_, x0, 10, PathConfig(1e-3, 0.01, seed=0), [0.01])  # warm up / compile
t0 = time.perf_counter()
run_ensemble(sys_, x0, 2000, PathConfig(1e-3, 0.5, seed=1), [0.5])
print(backend(), time.perf_counter() - t0)
"""


def cases(rng):
    h = build_model("damped_driven").P.h
    v = rng.normal(size=(N_PATHS, 2)) + 1j * rng.normal(size=(N_PATHS, 2))
    freq = rng.uniform(1, 3, size=(N_PATHS, 2))
    state = rng.exponential(size=(N_PATHS, 2))
    drift = rng.normal(size=(N_PATHS, 2))
    a = np.sort(rng.exponential(size=N_PATHS))
    b = np.sort(rng.exponential(size=N_PATHS))
    radii = np.array([2.0, 2.0])
    absv = np.abs(v)
    return {
        "poly_value": lambda k: k.poly_value(v, h.coef, h.alpha, h.beta),
        "poly_dbar": lambda k: k.poly_dbar(v, h.coef, h.alpha, h.beta),
        "rotate": lambda k: k.rotate(v, freq, 0.1),
        "truncated_update": lambda k: k.truncated_update(state, drift, drift, 1e-3),
        "first_exit": lambda k: k.first_exit(absv, radii, np.full(N_PATHS, -1, dtype=np.int64), 1),
        "w1_sorted": lambda k: k.w1_sorted(a, b),
        "w1_exponential": lambda k: k.w1_exponential(a, 1.0),
    }


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'numpy [us]':>12s} {'numba [us]':>12s} {'speedup':>8s}")
    for name, call in cases(rng).items():
        t_np = best_of(lambda: call(numpy_kernels), args.repeat)
        if numba_kernels is None:
            print(f"{name:18s} {t_np * 1e6:12.1f} {'n/a':>12s}")
            continue
        call(numba_kernels)  # compile outside the timing
        t_nb = best_of(lambda: call(numba_kernels), args.repeat)
        print(f"{name:18s} {t_np * 1e6:12.1f} {t_nb * 1e6:12.1f} {t_np / t_nb:8.1f}x")

    if args.end_to_end:
        print("\nfull system, 2000 paths x 500 steps")
        for disable in ("0", "1"):
            env = {**os.environ, "STOCHAVG_DISABLE_NUMBA": disable}
            out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                                 capture_output=True, text=True).stdout.split()
            print(f"  {out[0]:6s} {float(out[1]):8.2f} s")


if __name__ == "__main__":
    main()
