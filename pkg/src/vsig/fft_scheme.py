"""FFT-accelerated higher-order scheme for convolution kernels on uniform grids.

On a uniform grid the weights of the higher-order scheme depend on the cell
pair only through the lag, so every level-n update is a sum of causal
convolutions in the lag variable. The levels are processed in order: the
coefficients of levels < n are complete before the sources of level n are
formed, and the interpolation solve runs per level.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from . import opcount
from .kernel_weights import MatrixKernelSpec, alpha_words, multi_indices
from .paths import Path
from .quad_scheme import ExponentSet, SchemeResult, _Weights, solve_scaled, transformed_increments
from .tensor_algebra import TruncatedTensor, outer


class GridError(ValueError):
    """Raised for non-uniform grids or kernels that are not of convolution type."""


def padded_length(J: int) -> int:
    """Smallest power of two >= 2J."""
    return 1 << max(1, (2 * J - 1).bit_length())


@dataclass(frozen=True)
class FftPlan:
    """Real-to-complex transforms of length L along axis ``axis`` (batched over the rest)."""

    L: int
    axis: int = -2

    def forward(self, x: NDArray[np.float64]) -> NDArray[np.complex128]:
        cols = x.size // x.shape[self.axis]
        opcount.add("fft", int(cols * self.L * math.log2(self.L)))
        return np.fft.rfft(x, n=self.L, axis=self.axis)

    def inverse(self, X: NDArray[np.complex128]) -> NDArray[np.float64]:
        cols = X.size // X.shape[self.axis]
        opcount.add("fft", int(cols * self.L * math.log2(self.L)))
        return np.fft.irfft(X, n=self.L, axis=self.axis)


def lag_layout(omega: NDArray[np.float64]) -> NDArray[np.float64]:
    """Causal layout (0, omega(1), ..., omega(J)) of lag weights omega(1..J) (last axis)."""
    zero = np.zeros(omega.shape[:-1] + (1,))
    return np.concatenate([zero, omega], axis=-1)


def causal_convolve(G: NDArray[np.float64], omega: NDArray[np.float64], L: int | None = None) -> NDArray[np.float64]:
    """out[j] = sum_{i<j} omega(j - i) G[i] for j = 0..J.

    Args:
        G: Sources with shape (J, ...) (sequence axis first).
        omega: Lag weights omega(1..J), shape (J,).
        L: Padded length; defaults to the smallest power of two >= 2J.

    Returns:
        Array of shape (J + 1, ...).
    """
    G = np.asarray(G, dtype=float)
    omega = np.asarray(omega, dtype=float)
    J = G.shape[0]
    if omega.shape != (J,):
        raise ValueError(f"need {J} lag weights, got shape {omega.shape}")
    L = L or padded_length(J)
    if L < 2 * J:
        raise ValueError("padded length must be at least 2J")
    plan = FftPlan(L, axis=0)
    flat = G.reshape(J, -1)
    W = plan.forward(lag_layout(omega)[:, None])
    out = plan.inverse(W * plan.forward(flat))[: J + 1]
    return out.reshape((J + 1,) + G.shape[1:])


def _arrangements(ell: tuple[int, ...]) -> list[tuple[int, ...]]:
    letters = [r for r, c in enumerate(ell) for _ in range(c)]
    return sorted(set(itertools.permutations(letters)))


def shuffle_monomials(ys: NDArray[np.float64], N: int) -> list[list[NDArray[np.float64]]]:
    """Sources M_l(y) (x) y^p per level k = 1..N, in :func:`alpha_words` order.

    M_l(y) is the sum over distinct arrangements of the multiset with l_r copies
    of y^r, so that pi_k E = sum_{|l| = k-1, p} alpha_p(l) M_l(y) (x) y^p.

    Args:
        ys: Increments, shape batch + (q, m).
    """
    q = ys.shape[-2]
    out: list[list[NDArray[np.float64]]] = [[] for _ in range(N + 1)]
    for ell in multi_indices(q, N - 1):
        k = sum(ell)
        acc = None
        for arr in _arrangements(ell):
            mono = np.ones(ys.shape[:-2] + (1,))
            for r in arr:
                mono = outer(mono, ys[..., r, :])
            acc = mono if acc is None else acc + mono
        for p in range(q):
            out[k + 1].append(outer(acc, ys[..., p, :]))
    return out


def _level_keys(q: int, N: int) -> list[list[int]]:
    """Column indices into the alpha_words table for each level k."""
    cols: list[list[int]] = [[] for _ in range(N + 1)]
    for c, w in enumerate(alpha_words(q, N)):
        cols[len(w)].append(c)
    return cols


def _check_inputs(paths: Sequence[Path], spec: MatrixKernelSpec) -> None:
    if not paths:
        raise ValueError("need at least one path")
    p0 = paths[0]
    for p in paths:
        if not p.is_uniform():
            raise GridError("the FFT scheme needs a uniform grid")
        if p.J != p0.J or not np.allclose(p.t, p0.t, rtol=0, atol=1e-14):
            raise GridError("batched paths must share one time grid")
    if not spec.is_convolution():
        raise GridError("the FFT scheme needs a kernel of convolution type")


def run_fft_batch(
    paths: Sequence[Path],
    spec: MatrixKernelSpec,
    N: int,
    B: ExponentSet | None = None,
    mem_budget: float = 2.5e8,
) -> list[list[TruncatedTensor]]:
    """FFT scheme for several paths on a common uniform grid.

    Returns:
        For each path the list v_0..v_J.
    """
    B = B or ExponentSet.order0()
    _check_inputs(paths, spec)
    J, m, q = paths[0].J, spec.m, spec.q
    W = _Weights(spec, paths[0], N, B, "shuffle")
    L = padded_length(J)
    plan = FftPlan(L, axis=-2)
    nB, nth = len(B), len(B.thetas)
    keys = _level_keys(q, N)
    # What[sigma][a][col] : transformed lag weights, shape (L//2+1,)
    tabs = np.stack([np.stack(W.tables[s]) for s in range(nB)])  # (nB, nth, J, ncols)
    What = np.fft.rfft(lag_layout(np.moveaxis(tabs, 2, -1)), n=L, axis=-1)  # (nB, nth, ncols, L//2+1)
    per_path = nth * (L // 2 + 1) * m**N * 16 * 2
    chunk = max(1, int(mem_budget // per_path))
    results: list[list[TruncatedTensor]] = []
    for start in range(0, len(paths), chunk):
        batch = paths[start : start + chunk]
        ys = np.stack([transformed_increments(p, spec) for p in batch])  # (P, J, q, m)
        P = ys.shape[0]
        mono = shuffle_monomials(ys, N)
        C = [np.zeros((P, J, nB, m**n)) for n in range(N + 1)]
        C[0][:, :, 0, 0] = 1.0
        V = [np.zeros((P, J + 1, m**n)) for n in range(N + 1)]
        V[0][:] = 1.0
        for n in range(1, N + 1):
            acc = np.zeros((nth, P, L // 2 + 1, m**n), dtype=complex)
            for r in range(n):
                for sg in range(nB):
                    left = C[r][:, :, sg, :]
                    if not left.any():
                        continue
                    for j, col in enumerate(keys[n - r]):
                        G = outer(left, mono[n - r][j])
                        Gh = plan.forward(G)
                        acc += What[sg, :, col, None, :, None] * Gh[None]
                        opcount.add("fft_mul", nth * Gh.size)
            Fh = plan.inverse(acc)[:, :, : J + 1, :]  # (nth, P, J+1, m^n)
            V[n][:] = Fh[0]
            if J > 1:
                X = solve_scaled([Fh[a, :, 1:J, :] for a in range(nth)], B)
                for rho in range(nB):
                    C[n][:, 1:, rho, :] = X[rho]
        for p in range(P):
            results.append(
                [TruncatedTensor(m, N, tuple(V[n][p, j].copy() for n in range(N + 1))) for j in range(J + 1)]
            )
    return results


def run_fft_scheme(path: Path, spec: MatrixKernelSpec, N: int, B: ExponentSet | None = None) -> SchemeResult:
    """FFT variant of :func:`vsig.quad_scheme.run_scheme` for one path."""
    B = B or ExponentSet.order0()
    v = run_fft_batch([path], spec, N, B)[0]
    manifest = {
        "scheme": "fft",
        "J": path.J,
        "N": N,
        "B": B.to_json(),
        "node_matrix_cond": B.cond,
        "L": padded_length(path.J),
    }
    return SchemeResult(v, [], [], manifest)
