"""Reusable numerical experiments: convergence, cost scaling and oracle agreement.

The ``validate`` CLI subcommand and the acceptance tests both run these.
Slopes are least-squares fits of log2(error) against the dyadic level over
the last three levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import opcount
from .fft_scheme import run_fft_batch
from .fssk import FsskData, JordanBlock, JordanForm, run_fssk
from .kernel_weights import Exponential, Fractional, MatrixKernelSpec
from .oracles import brute_force_vsig, euler_state_ode, kappa_reference
from .paths import Path, gen_paths
from .quad_scheme import ExponentSet, run_scheme
from .sig_kernel import run_goursat
from .tensor_algebra import TruncatedTensor


def fit_slope(errors: Sequence[float], levels: Sequence[int] | None = None, last: int = 3) -> float:
    """Negative slope of log2(error) versus level over the last ``last`` points."""
    e = np.asarray(errors, dtype=float)
    lv = np.arange(e.size) if levels is None else np.asarray(levels, dtype=float)
    return float(-np.polyfit(lv[-last:], np.log2(e[-last:]), 1)[0])


def _terminal(paths: Sequence[Path], spec: MatrixKernelSpec, N: int, B: ExponentSet, engine: str) -> list[TruncatedTensor]:
    if engine == "fft":
        return [v[-1] for v in run_fft_batch(paths, spec, N, B)]
    return [run_scheme(p, spec, N, B).v[-1] for p in paths]


@dataclass
class ConvergenceReport:
    beta: float
    errors: dict[int, list[float]]
    slopes: dict[int, float]
    reference_gap: float
    config: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"beta": self.beta, "errors": {str(k): v for k, v in self.errors.items()},
                "slopes": {str(k): v for k, v in self.slopes.items()},
                "reference_gap": self.reference_gap, "config": self.config}


def convergence_study(beta: float, orders: Sequence[int] = (0, 1), J: int = 32, N: int = 6, M: int = 8,
                      seed: int = 0, levels: int = 5, engine: str = "fft") -> ConvergenceReport:
    """Fractional-kernel convergence of the higher-order schemes.

    The reference is the Richardson extrapolation (rate 1 + beta) of the
    order-2 scheme between dyadic levels ``levels - 1`` and ``levels``.
    Errors are factorially adjusted maxima over the M terminal signatures.
    """
    paths = gen_paths(seed, M, J)
    spec = MatrixKernelSpec.scalar(Fractional(beta), 3)
    B2 = ExponentSet.order2(beta)
    lo = _terminal([p.refine(levels - 1) for p in paths], spec, N, B2, engine)
    hi = _terminal([p.refine(levels) for p in paths], spec, N, B2, engine)
    f = 2.0 ** (1.0 + beta)
    refs = [(b * f - a) * (1.0 / (f - 1.0)) for a, b in zip(lo, hi)]
    gap = max(a.max_abs_diff(b, factorial=True) for a, b in zip(lo, hi))
    errors: dict[int, list[float]] = {}
    slopes: dict[int, float] = {}
    for order in orders:
        B = ExponentSet.for_order(order, beta)
        errs = []
        for lam in range(levels):
            out = _terminal([p.refine(lam) for p in paths], spec, N, B, engine)
            errs.append(max(o.max_abs_diff(r, factorial=True) for o, r in zip(out, refs)))
        errors[order] = errs
        slopes[order] = fit_slope(errs)
    cfg = {"J": J, "N": N, "M": M, "seed": seed, "levels": levels, "engine": engine,
           "reference": "richardson order-2", "richardson_rate": 1.0 + beta}
    return ConvergenceReport(beta, errors, slopes, gap, cfg)


# ---------------------------------------------------------------------------
# cost scaling


def _count(fn) -> int:
    with opcount.counting() as c:
        fn()
    return opcount.total(c)


def _count_cat(fn, cat: str) -> int:
    with opcount.counting() as c:
        fn()
    return int(c[cat])


def scaling_study(J: int = 64, seed: int = 0) -> dict[str, dict]:
    """Operation-count ratios under grid doubling (and R doubling for fssk)."""
    x1, x2 = gen_paths(seed, 1, J)[0], gen_paths(seed, 1, 2 * J)[0]
    spec = MatrixKernelSpec.scalar(Exponential(1.0, 0.5), 3)
    N = 3
    out: dict[str, dict] = {}
    a = _count(lambda: run_scheme(x1, spec, N))
    b = _count(lambda: run_scheme(x2, spec, N))
    out["quad"] = {"J": J, "count": a, "count_2J": b, "ratio": b / a}
    fspec = MatrixKernelSpec.scalar(Fractional(0.6), 3)
    Jf = 4 * J
    xf1, xf2 = gen_paths(seed, 1, Jf)[0], gen_paths(seed, 1, 2 * Jf)[0]
    a = _count(lambda: run_fft_batch([xf1], fspec, N))
    b = _count(lambda: run_fft_batch([xf2], fspec, N))
    out["fft"] = {"J": Jf, "count": a, "count_2J": b, "ratio": b / a}

    def fdata(R: int) -> FsskData:
        return FsskData(JordanForm.diagonal(np.linspace(0.5, 2.0, R)), np.ones((1, R)), np.eye(3)[None])

    d4, d8 = fdata(4), fdata(8)
    a = _count_cat(lambda: run_fssk(x1, d4, N), "recursion")
    b = _count_cat(lambda: run_fssk(x2, d4, N), "recursion")
    out["fssk_J"] = {"J": J, "count": a, "count_2J": b, "ratio": b / a}
    a = _count_cat(lambda: run_fssk(x1, d4, N), "recursion")
    b = _count_cat(lambda: run_fssk(x1, d8, N), "recursion")
    out["fssk_R"] = {"R": 4, "count": a, "count_2R": b, "ratio": b / a}
    gdata = goursat_test_kernel()
    Jg = J // 2
    (y1, w1), (y2, w2) = gen_paths(seed, 2, Jg), gen_paths(seed, 2, 2 * Jg)
    a = _count(lambda: run_goursat(y1, w1, gdata))
    b = _count(lambda: run_goursat(y2, w2, gdata))
    out["goursat"] = {"J": Jg, "count": a, "count_2J": b, "ratio": b / a}
    return out


SCALING_BOUNDS = {
    "quad": (4 * 0.9, 4 * 1.1),
    "fft": (1.9, 2.6),
    "fssk_J": (2 * 0.95, 2 * 1.05),
    "fssk_R": (4 * 0.85, 4 * 1.15),
    "goursat": (4 * 0.9, 4 * 1.1),
}


# ---------------------------------------------------------------------------
# oracle pinning and state-space checks


def oracle_study(beta: float = 0.6, J: int = 2, N: int = 2, levels: int = 5, seed: int = 0) -> dict:
    """Order-2 scheme versus the brute-force expansion on a tiny path."""
    path = gen_paths(seed, 1, J)[0]
    spec = MatrixKernelSpec.scalar(Fractional(beta), 3)
    ref = brute_force_vsig(path, spec, N)
    errs = [run_scheme(path.refine(l), spec, N, ExponentSet.order2(beta)).v[-1].max_abs_diff(ref)
            for l in range(levels)]
    return {"beta": beta, "J": J, "N": N, "errors": errs}


def euler_setups(seed: int = 5) -> dict[tuple[int, int], FsskData]:
    """The (q, R) = (1, 1) and (4, 3) kernels used for the Euler comparison."""
    rng = np.random.default_rng(seed)
    return {
        (1, 1): FsskData(JordanForm.diagonal([1.0]), [[1.0]], np.eye(3)[None]),
        (4, 3): FsskData(JordanForm((JordanBlock("real", 2, lam=1.0), JordanBlock("real", 1, lam=0.5))),
                         rng.uniform(0.2, 1.0, (4, 3)), rng.normal(size=(4, 3, 3)) / 2),
    }


def euler_study(data: FsskData, J: int = 16, N: int = 5, ps: Sequence[int] = range(2, 9), M: int = 4,
                seed: int = 3) -> dict:
    paths = gen_paths(seed, M, J)
    exact = [run_fssk(x, data, N).v[-1] for x in paths]
    L = data.dense_lambda()
    errs = []
    for p in ps:
        errs.append(max(euler_state_ode(x, L, data.b, data.A, N, p).max_abs_diff(e, factorial=True)
                        for x, e in zip(paths, exact)))
    return {"p": list(ps), "errors": errs, "slope": fit_slope(errs, list(ps), last=len(errs))}


# ---------------------------------------------------------------------------
# signature kernel


def goursat_test_kernel(seed: int = 0) -> FsskData:
    """R = 3, q = 2 kernel: a size-2 Jordan chain at rate 2 and a single rate 4."""
    rng = np.random.default_rng(seed)
    Lam = JordanForm((JordanBlock("real", 2, lam=2.0), JordanBlock("real", 1, lam=4.0)))
    return FsskData(Lam, rng.uniform(0.5, 1.5, size=(2, 3)), rng.normal(size=(2, 3, 3)) / np.sqrt(3))


def classical_kernel() -> FsskData:
    return FsskData(JordanForm.diagonal([0.0]), [[1.0]], np.eye(3)[None])


def sigkernel_study(data: FsskData, schemes: Sequence[str] = ("pc", "exp", "naive"), levels: int = 4,
                    M: int = 8, J: int = 16, seed: int = 1, N_ref: int = 10) -> dict:
    """Max error over M path pairs of each scheme against the truncated inner-product reference."""
    paths = gen_paths(seed, 2 * M, J)
    pairs = [(paths[2 * i], paths[2 * i + 1]) for i in range(M)]
    refs = [kappa_reference(x, w, data, N_ref) for x, w in pairs]
    errors = {}
    for s in schemes:
        errors[s] = [max(abs(run_goursat(x, w, data, scheme=s, lam=l).kappa - r) for (x, w), r in zip(pairs, refs))
                     for l in range(levels)]
    return {"errors": errors, "M": M, "J": J, "N_ref": N_ref}


__all__ = [
    "ConvergenceReport",
    "SCALING_BOUNDS",
    "classical_kernel",
    "convergence_study",
    "euler_setups",
    "euler_study",
    "fit_slope",
    "goursat_test_kernel",
    "oracle_study",
    "scaling_study",
    "sigkernel_study",
]
