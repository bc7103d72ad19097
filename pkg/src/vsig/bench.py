"""Wall-clock comparison of the compiled and pure-numpy Goursat sweeps."""

from __future__ import annotations

import time

import numpy as np

from ._accel import HAVE_NUMBA
from .experiments import goursat_test_kernel
from .paths import gen_paths
from .sig_kernel import run_goursat


def _best_of(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_goursat(J: int = 32, lam: int = 2, scheme: str = "pc", repeats: int = 3, seed: int = 0) -> dict:
    """Time one kernel evaluation on a (J 2^lam)^2 grid with each available backend.

    The first numba call is excluded from timing since it pays for compilation
    (or cache loading).
    """
    x, w = gen_paths(seed, 2, J)
    data = goursat_test_kernel()
    rows = {}
    kappas = {}
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    for b in backends:
        kappas[b] = run_goursat(x, w, data, scheme=scheme, lam=lam, backend=b).kappa
        rows[b] = _best_of(lambda: run_goursat(x, w, data, scheme=scheme, lam=lam, backend=b), repeats)
    n = J * 2**lam
    out = {"grid": [n, n], "scheme": scheme, "R": data.R, "q": data.q, "repeats": repeats,
           "seconds": rows, "kappa": kappas}
    if "numba" in rows:
        out["speedup"] = rows["numpy"] / rows["numba"]
        out["kappa_gap"] = abs(kappas["numpy"] - kappas["numba"])
    return out


__all__ = ["bench_goursat"]
