"""Independent reference implementations.

These routines trade speed for directness and share nothing with the
production schemes beyond tensor primitives and kernel evaluation:

* nested adaptive quadrature of the defining simplex integrals,
* brute-force summation of the weighted-monomial expansion,
* explicit Euler on the state ODE of a finite-state-space kernel,
* the fractional Adams predictor-corrector (product trapezoidal) scheme,
* finite differences of the matrix exponential for Frechet derivatives.

Size guards raise instead of silently degrading.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Sequence

import numpy as np
import scipy.integrate
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .kernel_weights import (
    Fractional,
    Gamma,
    MatrixKernelSpec,
    PiecewiseConstant,
    ScalarKernel,
    kernel_value,
    words,
)
from .paths import Path
from .tensor_algebra import TruncatedTensor, outer

QUAD_TOL = {1: 1e-10, 2: 1e-8, 3: 1e-6}
MAX_EULER_LEVEL = 12


class OracleError(RuntimeError):
    """An oracle was asked for more than it can deliver reliably."""


# ---------------------------------------------------------------------------
# simplex quadrature


def _split(k: ScalarKernel) -> tuple[float, Callable[[float, float], float]]:
    """k(t, s) = (t - s)^e g(t, s) with g bounded near the diagonal."""
    if isinstance(k, Fractional):
        c = 1.0 / math.gamma(k.beta)
        return k.beta - 1.0, lambda t, s: c
    if isinstance(k, Gamma):
        c = k.alpha / math.gamma(k.beta)
        return k.beta - 1.0, lambda t, s: c * math.exp(-k.lam * (t - s))
    return 0.0, lambda t, s: kernel_value(k, t, s)


def _chain_integral(factors: Sequence[tuple[float, Callable]], cells: Sequence[tuple[float, float]],
                    tau: float, tol: float) -> tuple[float, float]:
    """Integral of prod_l k_l(r_{l+1}, r_l) over r_1 < ... < r_n, r_l in cells[l], r_{n+1} = tau."""
    n = len(factors)
    inner_tol = tol * 1e-2

    def F(level: int, upper: float, eps: float) -> tuple[float, float]:
        # integrate r_level against k_level(upper, r_level) F(level - 1, r_level)
        e, g = factors[level]
        lo, hi = cells[level]
        b = min(hi, upper)
        if b <= lo:
            return 0.0, 0.0
        if level == 0:
            inner = lambda r: 1.0
        else:
            inner = lambda r: F(level - 1, r, inner_tol)[0]
        if e != 0.0 and b == upper:
            f = lambda r: g(upper, r) * inner(r)
            val, err = scipy.integrate.quad(f, lo, b, weight="alg", wvar=(0.0, e),
                                            epsabs=eps, epsrel=eps, limit=200)
        else:
            f = lambda r: kernel_value_split(e, g, upper, r) * inner(r)
            val, err = scipy.integrate.quad(f, lo, b, epsabs=eps, epsrel=eps, limit=200)
        return val, err

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.integrate.IntegrationWarning)
        return F(n - 1, tau, tol)


def kernel_value_split(e: float, g: Callable, t: float, s: float) -> float:
    d = t - s
    if e == 0.0:
        return g(t, s)
    return d**e * g(t, s) if d > 0 else math.inf


def simplex_quadrature_weight(kernels: Sequence[ScalarKernel], word: Sequence[int], s: float, t: float,
                              tau: float, tol: float | None = None) -> float:
    """K^{w,tau}_{s,t}: the chain integral over the simplex s < r_1 < ... < r_n < t.

    Args:
        kernels: Scalar kernels k_1..k_q.
        word: Letters p_1..p_n in 1..q, with n <= 3.
        s, t, tau: Times with s <= t <= tau.
        tol: Absolute tolerance; defaults to 1e-10, 1e-8, 1e-6 for n = 1, 2, 3.

    Raises:
        OracleError: for |w| > 3 or when the error estimate exceeds ``tol``.
    """
    n = len(word)
    if not 1 <= n <= 3:
        raise OracleError("simplex quadrature supports words of length 1..3")
    if not s <= t <= tau:
        raise ValueError("need s <= t <= tau")
    tol = QUAD_TOL[n] if tol is None else tol
    factors = [_split(kernels[p - 1]) for p in word]
    val, err = _chain_integral(factors, [(s, t)] * n, tau, tol)
    if err > max(tol, tol * abs(val)) * 10:
        raise OracleError(f"quadrature error estimate {err:.2e} exceeds tolerance {tol:.0e}")
    return val


# ---------------------------------------------------------------------------
# brute-force weighted-monomial expansion


def brute_force_vsig(path: Path, spec: MatrixKernelSpec, N: int, j: int | None = None,
                     tau: float | None = None) -> TruncatedTensor:
    """VSig^{tau}_{t_0, t_j} by direct summation over cells, words and nested quadrature.

    Every ordered assignment of the n integration times to cells contributes its
    chain integral times the tensor A_{p_1} v_{c_1} (x) ... (x) A_{p_n} v_{c_n}, with
    v_c the velocity on cell c.

    Raises:
        OracleError: if J > 4, N > 3 or q > 2.
    """
    j = path.J if j is None else j
    if j > 4 or N > 3 or spec.q > 2:
        raise OracleError("brute force is limited to J <= 4, N <= 3, q <= 2")
    tau = float(path.t[j]) if tau is None else float(tau)
    if tau < path.t[j]:
        raise ValueError("tau must not precede t_j")
    A = spec.A_stack()
    vel = path.increments()[:j] / path.steps()[:j, None]
    Av = np.einsum("pmd,cd->cpm", A, vel)  # (cell, letter, m)
    factors_all = [_split(k) for k in spec.kernels]
    cells = [(float(path.t[c]), float(path.t[c + 1])) for c in range(j)]
    levels = [np.ones(1)]
    for n in range(1, N + 1):
        acc = np.zeros(spec.m**n)
        for assign in itertools.combinations_with_replacement(range(j), n):
            for w in words(spec.q, n):
                weight, err = _chain_integral([factors_all[p - 1] for p in w], [cells[c] for c in assign],
                                              tau, QUAD_TOL[n])
                if err > QUAD_TOL[n] * 10:
                    raise OracleError(f"quadrature error estimate {err:.2e} too large")
                if weight == 0.0:
                    continue
                acc += weight * reduce(outer, [Av[c, p - 1] for c, p in zip(assign, w)])
        levels.append(acc)
    return TruncatedTensor(spec.m, N, tuple(levels))


# ---------------------------------------------------------------------------
# explicit Euler on the finite-state-space state ODE


def euler_state_ode(path: Path, Lam: ArrayLike, b: ArrayLike, A: ArrayLike, N: int, p: int) -> TruncatedTensor:
    """Dyadically refined explicit Euler for the tensor-valued state Z in R^R.

    Each cell is split into 2^p steps; per step
    Z^l <- Z^l - h sum_r Lam_{lr} Z^r + (1 + sum_r Z^r) (x) (sum_a b_{a,l} A_a dx),
    and the terminal readout is 1 + sum_l Z^l.

    Args:
        path: Input path.
        Lam: Dense (R, R) matrix.
        b: (q, R) loadings.
        A: (q, m, d) channel maps.
        N: Truncation level.
        p: Refinement exponent, at most 12.
    """
    if p > MAX_EULER_LEVEL or p < 0:
        raise OracleError(f"Euler refinement level must lie in 0..{MAX_EULER_LEVEL}")
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    A = np.asarray(A, dtype=float)
    if A.ndim == 2:
        A = A[None]
    R, m = Lam.shape[0], A.shape[1]
    k = 2**p
    Z = [np.zeros((R, m**n)) for n in range(N + 1)]
    for dx, h in zip(path.increments(), path.steps()):
        u = np.einsum("al,amd,d->lm", b, A, dx) / k  # (R, m)
        hs = h / k
        for _ in range(k):
            S = [Z[n].sum(axis=0) for n in range(N + 1)]
            S[0] = S[0] + 1.0
            Z = [Z[0] - hs * Lam @ Z[0]] + [
                Z[n] - hs * Lam @ Z[n] + np.einsum("a,lm->lam", S[n - 1], u).reshape(R, -1)
                for n in range(1, N + 1)
            ]
    levels = [Z[n].sum(axis=0) for n in range(N + 1)]
    levels[0] = levels[0] + 1.0
    return TruncatedTensor(m, N, tuple(levels))


# ---------------------------------------------------------------------------
# fractional Adams predictor-corrector


@dataclass(frozen=True)
class AdamsWeights:
    """Lag-indexed product-trapezoid weights on a uniform grid: ``wL[L - 1]`` for lag L = j - i."""

    wL: NDArray[np.float64]
    wR: NDArray[np.float64]

    @property
    def wE(self) -> NDArray[np.float64]:
        return self.wL + self.wR

    @classmethod
    def build(cls, k: ScalarKernel, h: float, J: int) -> "AdamsWeights":
        """omega^L = (1/h) int (t_{i+1} - s)/h k(t_j, s) ds, omega^R with (s - t_i)/h."""
        e, g = _split(k)
        wL = np.empty(J)
        wR = np.empty(J)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.integrate.IntegrationWarning)
            for L in range(1, J + 1):
                tj = L * h
                kern = lambda s: kernel_value_split(e, g, tj, s)
                if L == 1 and e != 0.0:
                    fl = lambda s: (h - s) / h * g(tj, s)
                    fr = lambda s: s / h * g(tj, s)
                    opts = dict(weight="alg", wvar=(0.0, e))
                else:
                    fl = lambda s: (h - s) / h * kern(s)
                    fr = lambda s: s / h * kern(s)
                    opts = {}
                wL[L - 1] = scipy.integrate.quad(fl, 0.0, h, epsabs=1e-14, epsrel=1e-12, limit=200, **opts)[0] / h
                wR[L - 1] = scipy.integrate.quad(fr, 0.0, h, epsabs=1e-14, epsrel=1e-12, limit=200, **opts)[0] / h
        return cls(wL, wR)


def _times_vec(v: NDArray[np.float64], y: NDArray[np.float64], N: int, m: int) -> NDArray[np.float64]:
    """Flat (v (x) y) truncated at N, for flat v of T^N(R^m) and a vector y."""
    out = np.zeros_like(v)
    off = [0]
    for n in range(N + 1):
        off.append(off[-1] + m**n)
    for n in range(1, N + 1):
        out[off[n] : off[n + 1]] = np.outer(v[off[n - 1] : off[n]], y).ravel()
    return out


def adams_pc_vsig(path: Path, k: ScalarKernel, N: int, A: ArrayLike | None = None) -> list[TruncatedTensor]:
    """Fractional Adams predictor-corrector for v_t = 1 + int_0^t v_s (x) k(t, s) A dx_s.

    Returns v_0..v_J with v_j approximating VSig^{t_j}_{0, t_j}.

    Raises:
        ValueError: on a non-uniform grid or a non-convolution kernel.
    """
    if not path.is_uniform():
        raise ValueError("the Adams oracle needs a uniform grid")
    if isinstance(k, PiecewiseConstant):
        raise ValueError("the Adams oracle needs a convolution kernel")
    Am = np.eye(path.d) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    y = path.increments() @ Am.T
    m, J = y.shape[1], path.J
    h = float(path.steps()[0])
    W = AdamsWeights.build(k, h, J)
    unit = TruncatedTensor.unit(m, N).flat()
    v = [unit]
    P = []  # v_i (x) y_i
    Q = []  # v_{i+1} (x) y_i
    for j in range(1, J + 1):
        P.append(_times_vec(v[j - 1], y[j - 1], N, m))
        lags = j - np.arange(j)
        Pm = np.array(P)
        pred = unit + W.wE[lags - 1] @ Pm
        corr = unit + W.wL[lags - 1] @ Pm
        if j > 1:
            corr = corr + W.wR[lags[:-1] - 1] @ np.array(Q)
        corr = corr + W.wR[0] * _times_vec(pred, y[j - 1], N, m)
        v.append(corr)
        Q.append(_times_vec(corr, y[j - 1], N, m))
    return [TruncatedTensor.from_flat(x, m, N) for x in v]


# ---------------------------------------------------------------------------
# Frechet derivatives of the matrix exponential

_FD5 = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))


def frechet_mixed_derivative(Lam: ArrayLike, Cs: Sequence[ArrayLike], t: float, h: float = 1e-2) -> NDArray[np.float64]:
    """d^n/dh_1...dh_n exp(t(-Lam + sum_i h_i C_i)) at 0 by tensor-product 5-point stencils."""
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    Cs = [np.asarray(C, dtype=float) for C in Cs]
    n = len(Cs)
    if n > 4:
        raise OracleError("finite-difference Frechet oracle supports n <= 4")
    out = np.zeros_like(Lam)
    for combo in itertools.product(_FD5, repeat=n):
        M = -Lam + sum(o * h * C for (o, _), C in zip(combo, Cs))
        out += math.prod(wt for _, wt in combo) * scipy.linalg.expm(t * M)
    return out / (12.0 * h) ** n


# ---------------------------------------------------------------------------
# truncated signature-kernel reference


def kappa_reference(x: Path, w: Path, data, N: int = 10) -> float:
    """<pi_{<=N} VSig(x)^1_{0,1}, pi_{<=N} VSig(w)^1_{0,1}> from the exact state recursion."""
    from .fssk import run_fssk

    a = run_fssk(x, data, N).v[-1].flat()
    c = run_fssk(w, data, N).v[-1].flat()
    return float(a @ c)
