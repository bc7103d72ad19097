"""Exact Volterra signatures for finite-state-space kernels.

Kernels have the form K(t, s) = sum_p (1^T exp(-Lambda (t-s)) b_p) A_p. The
weights factor into matrices Phi/Psi of the interval length, which are
evaluated by a parabolic contour quadrature of the Laplace inversion
integral. A linear state recursion over the grid then yields the truncated
signature exactly, up to that quadrature error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from . import opcount
from .kernel_weights import (
    Constant,
    Exponential,
    MatrixKernelSpec,
    StateSpace,
    UnsupportedKernelError,
    multi_index_rank,
    multi_indices,
)
from .paths import Path
from .tensor_algebra import Levels, TruncatedTensor, outer, shuffle_vec_levels


class ContourError(ValueError):
    """Raised when the quadrature contour cannot enclose the spectrum of -delta Lambda."""


# ---------------------------------------------------------------------------
# real Jordan form


@dataclass(frozen=True)
class JordanBlock:
    """One block of Lambda.

    ``kind == "real"``: Lambda block lam I - N of size ``size``.
    ``kind == "rot"``: block bidiagonal with diagonal [[a, omega], [-omega, a]]
    and superdiagonal -I_2, dimension 2 * size.
    """

    kind: str
    size: int
    lam: float = 0.0
    a: float = 0.0
    omega: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("real", "rot"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("block size must be >= 1")
        if self.kind == "rot" and not self.omega > 0:
            raise ValueError("rotation blocks need omega > 0")

    @property
    def dim(self) -> int:
        return self.size if self.kind == "real" else 2 * self.size

    def to_json(self) -> dict:
        if self.kind == "real":
            return {"type": "real", "lambda": self.lam, "size": self.size}
        return {"type": "rot", "a": self.a, "omega": self.omega, "size": self.size}


@dataclass(frozen=True)
class JordanForm:
    """Lambda in real Jordan form, stored block by block."""

    blocks: tuple[JordanBlock, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ValueError("need at least one Jordan block")

    @classmethod
    def diagonal(cls, lams: Sequence[float]) -> "JordanForm":
        return cls(tuple(JordanBlock("real", 1, lam=float(x)) for x in lams))

    @property
    def R(self) -> int:
        return sum(b.dim for b in self.blocks)

    def offsets(self) -> list[int]:
        out, o = [], 0
        for b in self.blocks:
            out.append(o)
            o += b.dim
        return out

    def dense(self) -> NDArray[np.float64]:
        L = np.zeros((self.R, self.R))
        for o, b in zip(self.offsets(), self.blocks):
            if b.kind == "real":
                for i in range(b.size):
                    L[o + i, o + i] = b.lam
                    if i + 1 < b.size:
                        L[o + i, o + i + 1] = -1.0
            else:
                D = np.array([[b.a, b.omega], [-b.omega, b.a]])
                for i in range(b.size):
                    k = o + 2 * i
                    L[k : k + 2, k : k + 2] = D
                    if i + 1 < b.size:
                        L[k : k + 2, k + 2 : k + 4] = -np.eye(2)
        return L

    def eigenvalues(self) -> NDArray[np.complex128]:
        ev: list[complex] = []
        for b in self.blocks:
            if b.kind == "real":
                ev += [complex(b.lam)] * b.size
            else:
                ev += [complex(b.a, b.omega), complex(b.a, -b.omega)] * b.size
        return np.asarray(ev)

    def to_json(self) -> dict:
        return {"blocks": [b.to_json() for b in self.blocks]}

    @classmethod
    def from_json(cls, obj: dict) -> "JordanForm":
        blocks = []
        for b in obj["blocks"]:
            if b["type"] == "real":
                blocks.append(JordanBlock("real", int(b["size"]), lam=float(b["lambda"])))
            else:
                blocks.append(JordanBlock("rot", int(b["size"]), a=float(b["a"]), omega=float(b["omega"])))
        return cls(tuple(blocks))


def jordan_exp(J: JordanForm | NDArray[np.float64], delta: float) -> NDArray[np.float64]:
    """E(delta) = exp(-Lambda delta), blockwise for a :class:`JordanForm`."""
    if delta < 0:
        raise ValueError("jordan_exp needs delta >= 0")
    if not isinstance(J, JordanForm):
        return scipy.linalg.expm(-np.asarray(J, dtype=float) * delta)
    E = np.zeros((J.R, J.R))
    for o, b in zip(J.offsets(), J.blocks):
        poly = [delta**k / math.factorial(k) for k in range(b.size)]
        if b.kind == "real":
            e = math.exp(-b.lam * delta)
            for i in range(b.size):
                for j in range(i, b.size):
                    E[o + i, o + j] = e * poly[j - i]
        else:
            c, s = math.cos(b.omega * delta), math.sin(b.omega * delta)
            rot = math.exp(-b.a * delta) * np.array([[c, -s], [s, c]])
            for i in range(b.size):
                for j in range(i, b.size):
                    E[o + 2 * i : o + 2 * i + 2, o + 2 * j : o + 2 * j + 2] = rot * poly[j - i]
    return E


def _shifted_solve(J: JordanForm, zetas: NDArray[np.complex128], delta: float, rhs: NDArray[np.float64],
                   transpose: bool = False) -> NDArray[np.complex128]:
    """Solve (zeta I + delta Lambda) x = rhs (or the transposed system) for every node; O(R) per node."""
    X = np.zeros((zetas.size, J.R), dtype=complex)
    z = zetas
    for o, b in zip(J.offsets(), J.blocks):
        if b.kind == "real":
            d = z + delta * b.lam
            order = range(b.size) if transpose else range(b.size - 1, -1, -1)
            prev = None
            for i in order:
                acc = rhs[o + i] + (0.0 if prev is None else delta * prev)
                prev = acc / d
                X[:, o + i] = prev
        else:
            p = z + delta * b.a
            qq = delta * b.omega
            det = p * p + qq * qq
            order = range(b.size) if transpose else range(b.size - 1, -1, -1)
            prev = None
            for i in order:
                k = o + 2 * i
                r0 = rhs[k] + (0.0 if prev is None else delta * prev[0])
                r1 = rhs[k + 1] + (0.0 if prev is None else delta * prev[1])
                if transpose:  # D^T = [[p, -q], [q, p]]
                    x0, x1 = (p * r0 + qq * r1) / det, (-qq * r0 + p * r1) / det
                else:  # D = [[p, q], [-q, p]]
                    x0, x1 = (p * r0 - qq * r1) / det, (qq * r0 + p * r1) / det
                prev = (x0, x1)
                X[:, k], X[:, k + 1] = x0, x1
    opcount.add("weights", 8 * zetas.size * J.R)
    return X


def _dense_solve(L: NDArray[np.float64], zetas: NDArray[np.complex128], delta: float, rhs: NDArray[np.float64],
                 transpose: bool = False) -> NDArray[np.complex128]:
    R = L.shape[0]
    M = zetas[:, None, None] * np.eye(R)[None] + delta * (L.T if transpose else L)[None]
    opcount.add("weights", zetas.size * R**3)
    return np.linalg.solve(M, np.broadcast_to(rhs.astype(complex), (zetas.size, R))[..., None])[..., 0]


def prony_to_jordan(
    real_terms: Sequence[tuple[float, Sequence[float]]] = (),
    osc_terms: Sequence[tuple[float, float, Sequence[float], Sequence[float]]] = (),
) -> tuple[JordanForm, NDArray[np.float64]]:
    """Matrix form of an exponential-polynomial-trigonometric scalar kernel.

    The kernel is sum_r sum_l e^{-lam_r d} d^{l-1}/(l-1)! alpha_{r,l}
    + sum_r sum_l e^{-a_r d} d^{l-1}/(l-1)! (beta_{r,l} cos(omega_r d) + delta_{r,l} sin(omega_r d)).

    Args:
        real_terms: Pairs (lam_r, [alpha_{r,1}, ..., alpha_{r,m_r}]).
        osc_terms: Tuples (a_r, omega_r, [beta_{r,l}], [delta_{r,l}]).

    Returns:
        (Lambda, b) with 1^T exp(-Lambda d) b equal to the kernel.
    """
    lams = [float(t[0]) for t in real_terms]
    oscs = [(float(t[0]), float(t[1])) for t in osc_terms]
    if len(set(lams)) != len(lams) or len(set(oscs)) != len(oscs):
        raise ValueError("rates must be pairwise distinct")
    blocks: list[JordanBlock] = []
    b: list[float] = []
    for lam, alphas in real_terms:
        al = list(map(float, alphas)) + [0.0]
        if len(al) < 2:
            raise ValueError("degrees must be >= 1")
        blocks.append(JordanBlock("real", len(al) - 1, lam=float(lam)))
        b += [al[i] - al[i + 1] for i in range(len(al) - 1)]
    for a, om, betas, deltas in osc_terms:
        if len(betas) != len(deltas) or not betas:
            raise ValueError("beta and delta coefficient lists must have equal positive length")
        be = list(map(float, betas)) + [0.0]
        de = list(map(float, deltas)) + [0.0]
        n = len(betas)
        blocks.append(JordanBlock("rot", n, a=float(a), omega=float(om)))
        for j in range(1, 2 * n + 1):
            ell = (j + 1) // 2
            # (-1)^(j+1): with exp(d C(-a, omega)) as above this yields +delta sin
            b.append(0.5 * (be[ell - 1] - be[ell] - (-1) ** j * (de[ell - 1] - de[ell])))
    if not blocks:
        raise ValueError("need at least one term")
    return JordanForm(tuple(blocks)), np.asarray(b)


# ---------------------------------------------------------------------------
# kernel data


@dataclass(frozen=True, eq=False)
class FsskData:
    """Finite-state-space kernel data (Lambda, b_1..b_q, A_1..A_q).

    ``Lam`` is a :class:`JordanForm` (fast path) or a dense real matrix.
    """

    Lam: JordanForm | NDArray[np.float64]
    b: NDArray[np.float64]
    A: NDArray[np.float64]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "A", A)
        if not isinstance(self.Lam, JordanForm):
            L = np.atleast_2d(np.asarray(self.Lam, dtype=float))
            if L.shape[0] != L.shape[1]:
                raise ValueError("Lambda must be square")
            object.__setattr__(self, "Lam", L)
        if b.shape != (A.shape[0], self.R):
            raise ValueError(f"b must have shape (q, R) = ({A.shape[0]}, {self.R}), got {b.shape}")
        ev = self.eigenvalues()
        if np.any(ev.real < -1e-12):
            raise ContourError("spectrum of Lambda must have non-negative real part")

    @property
    def R(self) -> int:
        return self.Lam.R if isinstance(self.Lam, JordanForm) else self.Lam.shape[0]

    @property
    def q(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def d(self) -> int:
        return self.A.shape[2]

    def dense_lambda(self) -> NDArray[np.float64]:
        return self.Lam.dense() if isinstance(self.Lam, JordanForm) else self.Lam

    def eigenvalues(self) -> NDArray[np.complex128]:
        if isinstance(self.Lam, JordanForm):
            return self.Lam.eigenvalues()
        return np.linalg.eigvals(self.Lam)

    def E(self, delta: float) -> NDArray[np.float64]:
        return jordan_exp(self.Lam, delta)

    def kernel_value(self, p: int, delta: float) -> float:
        """k_p(delta) = 1^T exp(-Lambda delta) b_p (p is 0-based)."""
        return float(np.sum(self.E(delta) @ self.b[p]))

    def solve(self, zetas: NDArray[np.complex128], delta: float, rhs: NDArray[np.float64],
              transpose: bool = False) -> NDArray[np.complex128]:
        if isinstance(self.Lam, JordanForm):
            return _shifted_solve(self.Lam, zetas, delta, rhs, transpose)
        return _dense_solve(self.Lam, zetas, delta, rhs, transpose)

    @classmethod
    def from_spec(cls, spec: MatrixKernelSpec) -> "FsskData":
        """Stack constant, exponential and state-space components into one state space.

        Exponential and constant components sharing a rate share one state.
        """
        rates: list[float] = []
        dense_blocks: list[NDArray[np.float64]] = []
        entries: list[tuple[str, object]] = []
        for comp in spec.components:
            k = comp.kernel
            if isinstance(k, (Constant, Exponential)):
                lam = 0.0 if isinstance(k, Constant) else float(k.lam)
                coef = float(k.c) if isinstance(k, Constant) else float(k.alpha)
                if lam not in rates:
                    rates.append(lam)
                entries.append(("exp", (lam, coef)))
            elif isinstance(k, StateSpace):
                dense_blocks.append(np.atleast_2d(np.asarray(k.Lam, dtype=float)))
                entries.append(("ss", (len(dense_blocks) - 1, np.asarray(k.b, dtype=float).reshape(-1))))
            else:
                raise UnsupportedKernelError(f"{type(k).__name__} has no finite state space form")
        R0 = len(rates)
        sizes = [B.shape[0] for B in dense_blocks]
        R = R0 + sum(sizes)
        b = np.zeros((spec.q, R))
        for p, (kind, data) in enumerate(entries):
            if kind == "exp":
                lam, coef = data
                b[p, rates.index(lam)] = coef
            else:
                idx, bv = data
                o = R0 + sum(sizes[:idx])
                b[p, o : o + sizes[idx]] = bv
        if dense_blocks:
            Lam: JordanForm | NDArray[np.float64] = scipy.linalg.block_diag(np.diag(rates), *dense_blocks) if R0 else scipy.linalg.block_diag(*dense_blocks)
        else:
            Lam = JordanForm.diagonal(rates)
        return cls(Lam, b, spec.A_stack())

    def to_json(self) -> dict:
        lam = self.Lam.to_json() if isinstance(self.Lam, JordanForm) else {"dense": self.Lam.tolist()}
        return {"jordan": lam, "b": self.b.tolist(), "A": self.A.tolist()}

    @classmethod
    def from_json(cls, obj: dict | str) -> "FsskData":
        if isinstance(obj, str):
            obj = json.loads(obj)
        A = np.asarray(obj["A"], dtype=float)
        if "prony" in obj:
            Js, bs = [], []
            for term in obj["prony"]:
                J, bv = prony_to_jordan(term.get("real", ()), term.get("osc", ()))
                Js.append(J)
                bs.append(bv)
            if len(Js) != 1:
                raise ValueError("the Prony form describes one shared Lambda; give one entry")
            b = np.atleast_2d(bs[0])
            if A.ndim == 2:
                A = A[None]
            return cls(Js[0], np.repeat(b, A.shape[0], axis=0) if b.shape[0] == 1 else b, A)
        jl = obj["jordan"]
        Lam = np.asarray(jl["dense"], dtype=float) if "dense" in jl else JordanForm.from_json(jl)
        return cls(Lam, np.asarray(obj["b"], dtype=float), A)


# ---------------------------------------------------------------------------
# contour quadrature for Phi and Psi


def contour_nodes(mquad: int = 32) -> tuple[NDArray[np.complex128], NDArray[np.complex128], NDArray[np.complex128]]:
    """Upper-half nodes and weights of the optimized parabolic contour with 2 * mquad points.

    Returns (zeta_j, omega_j, omega~_j = omega_j / zeta_j). The weights carry the
    factor z'(theta) h / (2 pi i) = 0.25 + 0.2388 i theta.
    """
    j = np.arange(1, mquad + 1)
    theta = (2 * j - 1) * np.pi / (2 * mquad)
    zeta = 2 * mquad * (0.1309 - 0.1194 * theta**2 + 0.25j * theta)
    omega = np.exp(zeta) * (0.25 + 0.2388j * theta)
    return zeta, omega, omega / zeta


def _check_enclosed(ev: NDArray[np.complex128], delta: float, mquad: int) -> None:
    """Eigenvalues -delta*lam must lie left of the parabola with some margin."""
    s = -delta * ev
    scale = 2 * mquad
    y = np.abs(s.imag) / (0.25 * scale)
    edge = scale * (0.1309 - 0.1194 * y**2)
    if np.any(s.real > edge - 0.5) or np.any(y > np.pi):
        raise ContourError(
            f"contour with mquad={mquad} does not enclose spec(-delta Lambda) at delta={delta}; "
            "increase mquad or refine the grid"
        )


@dataclass(frozen=True)
class PhiPsiTable:
    """Normalized coefficients for one interval length.

    Attributes:
        psi: (n_ell, R) rows psi^_l = delta^{-|l|-1} 1^T Psi^{w(l)}(delta), |l| <= n_max.
        Phi: (n_ell, q, R, R) with Phi^_{p,l} = delta^{-|l|-1} Phi^{p w(l)}(delta).
    """

    delta: float
    q: int
    n_max: int
    ells: tuple[tuple[int, ...], ...]
    rank: dict
    psi: NDArray[np.float64]
    Phi: NDArray[np.float64]

    def psi_of(self, ell: Sequence[int]) -> NDArray[np.float64]:
        return self.psi[self.rank[tuple(ell)]]

    def Phi_of(self, p: int, ell: Sequence[int]) -> NDArray[np.float64]:
        return self.Phi[self.rank[tuple(ell)], p]


def eval_phi_psi(delta: float, data: FsskData, n_max: int, mquad: int = 32) -> PhiPsiTable:
    """Contour evaluation of psi^_l and Phi^_{p,l} for all |l| <= n_max.

    Rank-one structure: M^{p w(l)}(zeta) = u_p r^T prod_r beta_r^{l_r} with
    u_p = R(zeta) b_p, r^T = 1^T R(zeta), beta_p = r^T b_p, R(zeta) = (zeta + delta Lambda)^{-1}.
    """
    if not delta > 0:
        raise ValueError("eval_phi_psi needs delta > 0")
    _check_enclosed(data.eigenvalues(), delta, mquad)
    zeta, om, omt = contour_nodes(mquad)
    R, q = data.R, data.q
    r = data.solve(zeta, delta, np.ones(R), transpose=True)  # (mq, R)
    u = np.stack([data.solve(zeta, delta, data.b[p]) for p in range(q)], axis=1)  # (mq, q, R)
    beta = np.einsum("jr,pr->jp", r, data.b)  # (mq, q)
    ells = tuple(multi_indices(q, n_max))
    rank = multi_index_rank(q, n_max)
    E = np.array(ells)  # (n_ell, q)
    gamma = np.prod(beta[:, None, :] ** E[None, :, :], axis=-1)  # (mq, n_ell)
    psi = 2 * np.einsum("j,jl,jr->lr", omt, gamma, r).real
    Phi = 2 * np.einsum("j,jl,jpa,jb->lpab", om, gamma, u, r).real
    opcount.add("weights", 2 * zeta.size * len(ells) * q * R * R)
    return PhiPsiTable(delta, q, n_max, ells, rank, psi, Phi)


def phi_psi_series(delta: float, data: FsskData, n_max: int, mquad: int = 32) -> tuple[list, list]:
    """Unnormalized q = 1 families: phi_n(delta) (n = 0..n_max) and rows 1^T psi_n(delta) (n = 1..n_max).

    phi_0 = E(delta), phi_n = Phi^{1^n}, psi_n = Psi^{1^{n-1}}.
    """
    if data.q != 1:
        raise ValueError("phi_psi_series is the q = 1 family")
    tab = eval_phi_psi(delta, data, n_max, mquad)
    phis = [data.E(delta)] + [delta**n * tab.Phi_of(0, (n - 1,)) for n in range(1, n_max + 1)]
    psis = [None] + [delta**n * tab.psi_of((n - 1,)) for n in range(1, n_max + 1)]
    return phis, psis


# ---------------------------------------------------------------------------
# local update operators


def _shuffle_series(coef: NDArray[np.float64], ells, rank, ys: NDArray[np.float64], depth: int) -> Levels:
    """sum_{|l| <= depth} coef[l] / l! * y_1^{sh l_1} sh ... sh y_q^{sh l_q} by descending degree.

    ``coef`` has shape (n_ell, *S); returns levels 0..depth of shape S + (m**n,).
    """
    q, m = ys.shape
    S = coef.shape[1:]
    prev: dict = {}
    for deg in range(depth, -1, -1):
        cur: dict = {}
        for ell in (e for e in ells if sum(e) == deg):
            fac = math.prod(math.factorial(c) for c in ell)
            lv: Levels = [coef[rank[ell]][..., None] / fac]
            lv += [np.zeros(S + (m**k,)) for k in range(1, depth - deg + 1)]
            if deg < depth:
                for r in range(q):
                    nxt = list(ell)
                    nxt[r] += 1
                    X = prev[tuple(nxt)]
                    c = (ell[r] + 1) / (deg + 1)
                    for k, blk in enumerate(X):
                        lv[k + 1] = lv[k + 1] + c * shuffle_vec_levels(blk, ys[r], m, k)
            cur[ell] = lv
        prev = cur
    return prev[(0,) * q]


def eval_fg(ys: ArrayLike, N: int, table: PhiPsiTable) -> tuple[Levels, Levels]:
    """f^ = 1^T F_delta(y) (levels 0..N-1, blocks (R, m**n)) and G^p (levels 0..N-2, blocks (q, R, R, m**n))."""
    Y = np.atleast_2d(np.asarray(ys, dtype=float))
    if table.n_max < N - 1:
        raise ValueError("coefficient table does not reach |l| = N - 1")
    f = _shuffle_series(table.psi, table.ells, table.rank, Y, N - 1)
    if N >= 2:
        G = _shuffle_series(table.Phi, table.ells, table.rank, Y, N - 2)
    else:
        G = []
    return f, G


def state_step(Z: Levels, ys: NDArray[np.float64], E: NDArray[np.float64], f: Levels, G: Levels) -> Levels:
    """Z^p <- Z^p.E + (f^ + sum_l Z^l.G^l) (x) y_p; Z blocks have shape (q, R, m**n)."""
    N = len(Z) - 1
    q, m = ys.shape
    B: Levels = [f[n].copy() for n in range(N)]
    for a in range(1, N):
        for bdeg in range(0, N - a):
            if bdeg >= len(G):
                break
            term = np.einsum("lia,lijb->jab", Z[a], G[bdeg])
            B[a + bdeg] = B[a + bdeg] + term.reshape(term.shape[0], -1)
            opcount.add("recursion", 2 * q * Z[a].shape[1] * term.size)
    out: Levels = [np.zeros_like(Z[0])]
    for n in range(1, N + 1):
        ZE = np.einsum("pia,ij->pja", Z[n], E)
        opcount.add("recursion", 2 * E.shape[0] * ZE.size)
        out.append(ZE + outer(B[n - 1][None], ys[:, None, :]))
        opcount.add("recursion", 2 * out[-1].size)
    return out


def state_step_q1_horner(Z: Levels, dx: NDArray[np.float64], psi_hat: Sequence, phi_hat: Sequence) -> Levels:
    """q = 1 fused update Z <- 1^T.sum_n psi^_n dx^n + Z.sum_n phi^_n dx^n.

    Args:
        Z: Levels 0..N with blocks (R, m**n).
        dx: Increment (m,).
        psi_hat: Rows psi^_n for n = 1..N (index 0 unused).
        phi_hat: Matrices phi^_n for n = 0..N-1; phi^_0 = E(delta).
    """
    N = len(Z) - 1
    E = phi_hat[0]
    out: Levels = [np.einsum("ia,ij->ja", Z[0], E)]
    for n in range(1, N + 1):
        U = psi_hat[n][:, None]
        W = np.einsum("ia,ij->ja", Z[0], phi_hat[n]) if n < N else np.zeros((Z[0].shape[0], 1))
        for k in range(1, n):
            U = outer(U, dx)
            W = outer(W, dx) + np.einsum("ia,ij->ja", Z[k], phi_hat[n - k])
            opcount.add("recursion", 2 * E.shape[0] * W.size)
        blk = outer(U + W, dx) + np.einsum("ia,ij->ja", Z[n], E)
        opcount.add("recursion", 2 * E.shape[0] * blk.size)
        out.append(blk)
    return out


def readout(Z: Levels, tau_minus_t: float, data: FsskData) -> TruncatedTensor:
    """1 + sum_p Z^p.(E(tau - t) b_p)."""
    if tau_minus_t < 0:
        raise ValueError("readout needs tau >= t")
    rvec = data.E(tau_minus_t) @ data.b.T  # (R, q)
    levels = [np.einsum("pia,ip->a", blk, rvec) for blk in Z]
    levels[0] = levels[0] + 1.0
    return TruncatedTensor(data.m, len(Z) - 1, tuple(levels))


@dataclass
class FsskResult:
    v: list[TruncatedTensor]
    readouts: list[TruncatedTensor]
    Z: Levels
    manifest: dict


def _q1_coeffs(tab: PhiPsiTable, E: NDArray[np.float64], N: int) -> tuple[list, list]:
    psi_hat = [None] + [tab.psi_of((n - 1,)) for n in range(1, N + 1)]
    phi_hat = [E] + [tab.Phi_of(0, (n - 1,)) for n in range(1, N)]
    return psi_hat, phi_hat


def run_fssk(
    path: Path,
    data: FsskData,
    N: int,
    readout_taus: Sequence[float] | None = None,
    mquad: int = 32,
    method: str = "auto",
) -> FsskResult:
    """State recursion and readout over a piecewise-linear path.

    Args:
        path: Input path with d matching the kernel.
        data: Kernel data.
        N: Truncation level.
        readout_taus: Optional tau_j >= t_j per grid index for look-ahead readouts.
        mquad: Half the number of contour nodes.
        method: "auto", "horner" (q = 1 only) or "shuffle".

    Returns:
        :class:`FsskResult` with v[j] = VSig^{t_j}_{t_0, t_j}.
    """
    if path.d != data.d:
        raise ValueError(f"path dimension {path.d} does not match kernel input dimension {data.d}")
    if method == "auto":
        method = "horner" if data.q == 1 else "shuffle"
    if method == "horner" and data.q != 1:
        raise ValueError("the Horner update needs q = 1")
    m, R, q = data.m, data.R, data.q
    ys_all = np.einsum("pmd,jd->jpm", data.A, path.increments())
    Z: Levels = [np.zeros((q, R, m**n)) for n in range(N + 1)]
    v = [TruncatedTensor.unit(m, N)]
    taus = None if readout_taus is None else np.asarray(readout_taus, dtype=float)
    if taus is not None and (taus.size != path.J + 1 or np.any(taus < path.t - 1e-15)):
        raise ValueError("readout needs one tau_j >= t_j per grid index")
    reads = [] if taus is None else [readout(Z, float(taus[0] - path.t[0]), data)]
    cache: dict = {}
    hits = 0
    for j, delta in enumerate(np.diff(path.t)):
        key = float(f"{delta:.14e}")
        if key not in cache:
            E = data.E(float(delta))
            tab = eval_phi_psi(float(delta), data, max(N - 1, 0), mquad)
            cache[key] = (E, tab)
        else:
            hits += 1
        E, tab = cache[key]
        ys = ys_all[j]
        if method == "horner":
            psi_hat, phi_hat = _q1_coeffs(tab, E, N)
            Z = [blk[None] for blk in state_step_q1_horner([blk[0] for blk in Z], ys[0], psi_hat, phi_hat)]
        else:
            f, G = eval_fg(ys, N, tab)
            Z = state_step(Z, ys, E, f, G)
        v.append(readout(Z, 0.0, data))
        if taus is not None:
            reads.append(readout(Z, float(taus[j + 1] - path.t[j + 1]), data))
    manifest = {"scheme": "fssk", "method": method, "J": path.J, "N": N, "R": R, "q": q,
                "mquad": mquad, "table_cache_hits": hits, "tables": len(cache)}
    return FsskResult(v, reads, Z, manifest)
