"""Higher-order approximative Volterra signature scheme with quadratic cost.

On every cell [t_i, t_{i+1}] the upper-parameter map u -> VSig^{t_i+u}_{0,t_i}
is replaced by an expansion sum_rho C_{i,rho} u^rho fitted at the nodes
theta_a h_i. Internally the scheme stores the scaled coefficients
C~_{i,rho} = h_i^rho C_{i,rho}, which pair with the normalized decorated
weights from :mod:`vsig.kernel_weights` and make the node matrix
(theta_a^rho) independent of the step size.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import opcount
from .kernel_weights import (
    MatrixKernelSpec,
    SymmetricAlpha,
    alpha_words,
    multi_index_rank,
    multi_indices,
    words,
)
from .paths import Path
from .tensor_algebra import (
    Levels,
    TruncatedTensor,
    horner_levels,
    outer,
    product_levels,
    shuffle_vec_levels,
    unit_levels,
)


class InterpolationError(ValueError):
    """Raised when the node matrix (theta_a^rho) is singular or badly conditioned."""


@dataclass(frozen=True)
class ExponentSet:
    """Exponents 0 = rho_0 < rho_1 < ... and interpolation nodes theta_0 = 0, ...

    Nodes default to equispaced points a/(|B|-1) in [0, 1].
    """

    rhos: tuple[float, ...]
    thetas: tuple[float, ...] = ()
    cond: float = field(init=False, default=1.0)

    def __post_init__(self) -> None:
        rhos = tuple(float(r) for r in self.rhos)
        if not rhos or rhos[0] != 0.0 or any(b <= a for a, b in zip(rhos, rhos[1:])):
            raise InterpolationError("exponents must start at 0 and increase strictly")
        thetas = tuple(float(x) for x in self.thetas) or tuple(
            a / (len(rhos) - 1) if len(rhos) > 1 else 0.0 for a in range(len(rhos))
        )
        if len(thetas) != len(rhos) or thetas[0] != 0.0 or len(set(thetas)) != len(thetas):
            raise InterpolationError("need |B| distinct nodes with theta_0 = 0")
        if any(not 0.0 <= x <= 1.0 for x in thetas):
            raise InterpolationError("nodes must lie in [0, 1]")
        object.__setattr__(self, "rhos", rhos)
        object.__setattr__(self, "thetas", thetas)
        V = self.vandermonde()
        c = float(np.linalg.cond(V))
        if not np.isfinite(c) or c > 1e12:
            raise InterpolationError(f"node matrix is singular (condition number {c:.3g})")
        object.__setattr__(self, "cond", c)

    @classmethod
    def order0(cls) -> "ExponentSet":
        return cls((0.0,))

    @classmethod
    def order1(cls, beta: float) -> "ExponentSet":
        return cls((0.0, beta, 1.0), (0.0, 0.5, 1.0))

    @classmethod
    def order2(cls, beta: float) -> "ExponentSet":
        return cls((0.0, beta, 1.0, 1.0 + beta, 2.0), (0.0, 0.25, 0.5, 0.75, 1.0))

    @classmethod
    def for_order(cls, order: int, beta: float) -> "ExponentSet":
        return (cls.order0, lambda: cls.order1(beta), lambda: cls.order2(beta))[order]()

    def __len__(self) -> int:
        return len(self.rhos)

    def vandermonde(self) -> NDArray[np.float64]:
        """V[a, r] = theta_a ** rho_r (with 0 ** 0 = 1)."""
        th = np.asarray(self.thetas)[:, None]
        rh = np.asarray(self.rhos)[None, :]
        return np.where(rh == 0.0, 1.0, th**rh)

    def to_json(self) -> dict:
        return {"rhos": list(self.rhos), "thetas": list(self.thetas)}


def _closed_form_beta(B: ExponentSet) -> float | None:
    """beta if B = {0, beta, 1} with nodes {0, 1/2, 1} and the closed form is well posed."""
    if len(B) == 3 and B.thetas == (0.0, 0.5, 1.0) and B.rhos[2] == 1.0:
        beta = B.rhos[1]
        if abs(2.0**-beta - 0.5) >= 1e-12:
            return beta
    return None


def solve_scaled(F: Sequence[NDArray[np.float64]], B: ExponentSet) -> list[NDArray[np.float64]]:
    """Solve sum_rho theta_a^rho X_rho = F_a componentwise (scaled unknowns X_rho = h^rho C_rho)."""
    beta = _closed_form_beta(B)
    if beta is not None:
        F0, Fh, F1 = F
        den = 2.0**-beta - 0.5
        d1, dh = F1 - F0, Fh - F0
        return [F0, (dh - 0.5 * d1) / den, (2.0**-beta * d1 - dh) / den]
    Vinv = np.linalg.inv(B.vandermonde())
    stacked = np.stack(F)
    out = np.tensordot(Vinv, stacked, axes=(1, 0))
    opcount.add("interp", 2 * Vinv.size * stacked[0].size)
    return list(out)


def solve_interp_system(values: Sequence[ArrayLike], h: float, B: ExponentSet) -> list[NDArray[np.float64]]:
    """Coefficients C_rho with sum_rho (theta_a h)^rho C_rho = values[a].

    For B = {0, beta, 1} with nodes {0, 1/2, 1} the explicit solution
    C_0 = F^0, C_beta = (F^{1/2} - F^0 - (F^1 - F^0)/2) / (h^beta (2^{-beta} - 1/2)),
    C_1 = (2^{-beta}(F^1 - F^0) - (F^{1/2} - F^0)) / (h (2^{-beta} - 1/2)) is used.
    """
    F = [np.asarray(v, dtype=float) for v in values]
    if len(F) != len(B):
        raise InterpolationError("need one value per node")
    X = solve_scaled(F, B)
    return [x / h**rho for x, rho in zip(X, B.rhos)]


# ---------------------------------------------------------------------------
# local evaluation subroutines (batched over a leading axis)


def vte_shuffle_levels(v: Levels, ys: NDArray[np.float64], alpha: NDArray[np.float64], N: int) -> Levels:
    """v (x) E for symmetric weights via the descending-degree shuffle recursion.

    Args:
        v: Batched level list, blocks of shape (B, m**n).
        ys: Increments, shape (B, q, m).
        alpha: alpha_p(l) as (B, #multi-indices, q) in :func:`multi_indices` order.
        N: Truncation level.
    """
    q, m = ys.shape[-2], ys.shape[-1]
    ells = multi_indices(q, N - 1)
    rank = multi_index_rank(q, N - 1)
    batch = ys.shape[:-2]
    prev: dict[tuple[int, ...], list[Levels]] = {}
    for deg in range(N - 1, -1, -1):
        cur: dict[tuple[int, ...], list[Levels]] = {}
        for ell in (e for e in ells if sum(e) == deg):
            fac = math.prod(math.factorial(c) for c in ell)
            per_p: list[Levels] = []
            for p in range(q):
                lv: Levels = [alpha[..., rank[ell], p : p + 1] / fac]
                lv += [np.zeros(batch + (m**k,)) for k in range(1, N - deg)]
                if deg <= N - 2:
                    for r in range(q):
                        nxt = list(ell)
                        nxt[r] += 1
                        X = prev[tuple(nxt)][p]
                        coef = (ell[r] + 1) / (deg + 1)
                        y = ys[..., r, :]
                        for k, blk in enumerate(X):
                            lv[k + 1] = lv[k + 1] + coef * shuffle_vec_levels(blk, y, m, k)
                per_p.append(lv)
            cur[ell] = per_p
        prev = cur
    E0 = prev[(0,) * q]
    calE: Levels = [np.zeros(batch + (1,))]
    for k in range(N):
        acc = None
        for p in range(q):
            term = outer(E0[p][k], ys[..., p, :])
            acc = term if acc is None else acc + term
        calE.append(acc)
    return product_levels(v, calE, N, right_nilpotent=True)


def vte_words_levels(v: Levels, ys: NDArray[np.float64], coefs: NDArray[np.float64], N: int) -> Levels:
    """v (x) E by direct summation over all words; ``coefs`` is (B, #words) in :func:`words` order, n = 1..N."""
    q, m = ys.shape[-2], ys.shape[-1]
    batch = ys.shape[:-2]
    calE: Levels = [np.zeros(batch + (1,))]
    col = 0
    for n in range(1, N + 1):
        acc = np.zeros(batch + (m**n,))
        for w in words(q, n):
            mono = ys[..., w[0] - 1, :]
            for p in w[1:]:
                mono = outer(mono, ys[..., p - 1, :])
            acc = acc + coefs[..., col : col + 1] * mono
            col += 1
        calE.append(acc)
    return product_levels(v, calE, N, right_nilpotent=True)


def all_words(q: int, N: int) -> list[tuple[int, ...]]:
    return [w for n in range(1, N + 1) for w in words(q, n)]


def _to_levels(t: TruncatedTensor) -> Levels:
    return [blk[None, :] for blk in t.levels]


def _from_levels(lv: Levels, m: int) -> TruncatedTensor:
    return TruncatedTensor(m, len(lv) - 1, tuple(np.asarray(b).reshape(-1).copy() for b in lv))


def eval_vte_words(v: TruncatedTensor, ys: ArrayLike, alpha: SymmetricAlpha | ArrayLike) -> TruncatedTensor:
    """v (x)_N E^tau_{s,t}(y_1, ..., y_q) for symmetric weights (shuffle recursion).

    Args:
        v: Left factor.
        ys: Array (q, m) of transformed increments y_p = A_p (x_t - x_s).
        alpha: :class:`SymmetricAlpha` or an array (#multi-indices, q).
    """
    Y = np.asarray(ys, dtype=float)
    vals = alpha.values if isinstance(alpha, SymmetricAlpha) else np.asarray(alpha, dtype=float)
    if vals.shape != (len(multi_indices(Y.shape[0], v.N - 1)), Y.shape[0]):
        raise ValueError("alpha table does not cover all multi-indices with |l| <= N - 1")
    out = vte_shuffle_levels(_to_levels(v), Y[None], vals[None], v.N)
    return _from_levels(out, v.m)


def eval_vte_horner(v: TruncatedTensor, y: ArrayLike, beta: ArrayLike) -> TruncatedTensor:
    """q = 1 case: v (x)_N E with pi_n E = beta_n y^{(x)n} and beta_n = kappa^n/(t-s)^n."""
    from .tensor_algebra import horner_vte

    return horner_vte(v, y, beta)


def eval_vte_brute(v: TruncatedTensor, ys: ArrayLike, coefs: ArrayLike) -> TruncatedTensor:
    """v (x)_N E with one normalized coefficient per word (all words, lengths 1..N)."""
    Y = np.asarray(ys, dtype=float)
    out = vte_words_levels(_to_levels(v), Y[None], np.asarray(coefs, dtype=float)[None], v.N)
    return _from_levels(out, v.m)


# ---------------------------------------------------------------------------
# weight tables


class _Weights:
    """Normalized decorated weights for every (cell, target) pair used by the scheme.

    ``get(sigma, a, i)`` returns (i, n_coef) rows for cells b = 0..i-1 (the cell
    [t_b, t_{b+1}]) evaluated at tau = t_i + theta_a h_i.
    """

    def __init__(self, spec: MatrixKernelSpec, path: Path, N: int, B: ExponentSet, mode: str):
        self.eng = spec.engine()
        self.t = path.t
        self.h = path.steps()
        self.J = path.J
        self.B = B
        self.mode = mode
        q = spec.q
        if mode == "horner":
            self.word_list = [(1,) * n for n in range(1, N + 1)]
        elif mode == "shuffle":
            self.word_list = alpha_words(q, N)
        else:
            self.word_list = all_words(q, N)
        self.uniform = path.is_uniform() and self.eng.convolution
        nth = len(B.thetas)
        self.tables: list = []
        if self.uniform:
            h = float(self.h.mean())
            lags = np.arange(1, self.J + 1)
            for rho in B.rhos:
                rows = []
                for th in B.thetas:
                    taus = h + (lags - 1 + th) * h
                    rows.append(self._pack(self.eng.coeffs(self.word_list, rho, 0.0, h, taus)))
                self.tables.append(rows)  # [sigma][a] -> (J, n_coef) indexed by lag-1
        else:
            th = np.asarray(B.thetas)
            for rho in B.rhos:
                per_b = []
                for b in range(self.J):
                    i = np.arange(b + 1, self.J + 1)
                    hi = np.append(self.h, self.h[-1])[i]
                    taus = (self.t[i][:, None] + th[None, :] * hi[:, None]).ravel()
                    vals = self.eng.coeffs(self.word_list, rho, self.t[b], self.t[b + 1], taus)
                    per_b.append(self._pack(vals).reshape(len(i), nth, -1))
                self.tables.append(per_b)

    def _pack(self, vals: NDArray[np.float64]) -> NDArray[np.float64]:
        """(n_words, n_tau) -> (n_tau, n_coef) in the layout the subroutine expects."""
        if self.mode == "horner":
            return np.concatenate([np.zeros((vals.shape[1], 1)), vals.T], axis=1)
        return vals.T

    def get(self, sigma: int, a: int, i: int) -> NDArray[np.float64]:
        if self.uniform:
            return self.tables[sigma][a][i - 1 :: -1][:i]
        return np.stack([self.tables[sigma][b][i - b - 1, a] for b in range(i)])

    def at(self, sigma: int, b: int, tau: float) -> NDArray[np.float64]:
        rho = self.B.rhos[sigma]
        vals = self.eng.coeffs(self.word_list, rho, self.t[b], self.t[b + 1], [tau])
        return self._pack(vals)[0]


@dataclass
class SchemeResult:
    """Outputs of a scheme run.

    Attributes:
        v: v_0..v_J approximating VSig^{t_j}_{t_0,t_j}.
        readouts: Values at the requested look-ahead times (empty if none).
        coeffs: Scaled coefficients C~_{i,rho} as level blocks of shape (J, |B|, m**n).
        manifest: Run metadata.
    """

    v: list[TruncatedTensor]
    readouts: list[TruncatedTensor]
    coeffs: Levels
    manifest: dict


def _dispatch(spec: MatrixKernelSpec, method: str) -> str:
    if method != "auto":
        if method not in ("horner", "shuffle", "words"):
            raise ValueError(f"unknown method {method!r}")
        if method == "horner" and spec.q != 1:
            raise ValueError("the Horner subroutine needs q = 1")
        return method
    if spec.q == 1:
        return "horner"
    return "shuffle"


def _local(mode: str, v: Levels, ys: NDArray[np.float64], W: NDArray[np.float64], N: int, q: int) -> Levels:
    if mode == "horner":
        return horner_levels(v, ys[:, 0, :], W, N)
    if mode == "shuffle":
        return vte_shuffle_levels(v, ys, W.reshape(W.shape[0], -1, q), N)
    return vte_words_levels(v, ys, W, N)


def transformed_increments(path: Path, spec: MatrixKernelSpec) -> NDArray[np.float64]:
    """y_i^p = A_p (x_{t_i} - x_{t_{i-1}}) as an array (J, q, m)."""
    if path.d != spec.d:
        raise ValueError(f"path dimension {path.d} does not match kernel input dimension {spec.d}")
    return np.einsum("pmd,jd->jpm", spec.A_stack(), path.increments())


def run_scheme(
    path: Path,
    spec: MatrixKernelSpec,
    N: int,
    B: ExponentSet | None = None,
    readout: Sequence[float] | None = None,
    method: str = "auto",
) -> SchemeResult:
    """Higher-order approximative algorithm for the Volterra signature.

    Args:
        path: Piecewise-linear input path.
        spec: Matrix kernel.
        N: Truncation level.
        B: Exponent set with nodes (default {0}).
        readout: Optional look-ahead times tau_j >= t_j, one per grid index j = 0..J.
        method: "auto", "horner" (q = 1), "shuffle" (symmetric weights) or "words".

    Returns:
        A :class:`SchemeResult`; ``v[j]`` approximates VSig^{t_j}_{t_0,t_j}.
    """
    B = B or ExponentSet.order0()
    mode = _dispatch(spec, method)
    if mode == "words" and spec.q**N > 4096:
        warnings.warn("brute-force word summation with q**N > 4096 terms", RuntimeWarning, stacklevel=2)
    J, m, q = path.J, spec.m, spec.q
    ys = transformed_increments(path, spec)
    W = _Weights(spec, path, N, B, mode)
    nB, nth = len(B), len(B.thetas)
    C: Levels = [np.zeros((J, nB, m**n)) for n in range(N + 1)]
    C[0][0, 0, 0] = 1.0
    v_out = [TruncatedTensor.unit(m, N)]
    for i in range(1, J + 1):
        nodes = range(nth) if i < J else range(1)
        F: list[Levels] = []
        for a in nodes:
            Fa = unit_levels(m, N)
            for sg in range(nB):
                vb = [blk[:i, sg] for blk in C]
                contrib = _local(mode, vb, ys[:i], W.get(sg, a, i), N, q)
                Fa = [f + c.sum(axis=0) for f, c in zip(Fa, contrib)]
            F.append(Fa)
        v_out.append(TruncatedTensor(m, N, tuple(F[0])))
        if i < J:
            for n in range(N + 1):
                X = solve_scaled([Fa[n] for Fa in F], B)
                for r in range(nB):
                    C[n][i, r] = X[r]
            C[0][i, :, 0] = 0.0
            C[0][i, 0, 0] = 1.0
    readouts: list[TruncatedTensor] = []
    if readout is not None:
        taus = np.asarray(readout, dtype=float)
        if taus.size != J + 1 or np.any(taus < path.t - 1e-15):
            raise ValueError("readout needs one tau_j >= t_j per grid index")
        readouts.append(TruncatedTensor.unit(m, N))
        for j in range(1, J + 1):
            acc = unit_levels(m, N)
            for sg in range(nB):
                Wj = np.stack([W.at(sg, b, float(taus[j])) for b in range(j)])
                contrib = _local(mode, [blk[:j, sg] for blk in C], ys[:j], Wj, N, q)
                acc = [f + c.sum(axis=0) for f, c in zip(acc, contrib)]
            readouts.append(TruncatedTensor(m, N, tuple(acc)))
    manifest = {
        "scheme": "quad",
        "method": mode,
        "J": J,
        "N": N,
        "B": B.to_json(),
        "node_matrix_cond": B.cond,
        "uniform_weights": W.uniform,
    }
    return SchemeResult(v_out, readouts, C, manifest)
