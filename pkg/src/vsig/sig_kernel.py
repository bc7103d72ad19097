"""Volterra signature kernel for finite-state-space kernels.

The inner product kappa(s, t) = <VSig(x)_{0,s}, VSig(w)_{0,t}> equals
eta = 1 + 1^T K 1 where (K, Psi, Phi) solve a Goursat system in R^{R x R}.
We discretize it cell by cell on the product grid of the two paths:

* ``pc``: second-order predictor-corrector with exponential transport,
* ``exp``: first-order stencil with exponential transport of Psi and Phi,
* ``naive``: first-order stencil with explicit Euler transport.

The discrete coefficient gamma_{i,j} is a second difference of the static
kernel over a cell, so it carries the factor ds * dt. The auxiliary states
are stored per cell column/row and already include one of those factors;
this is why sources enter the exponential updates through phi_1 and phi_2
alone (P / ds and Q / ds), matching the Euler variant in the ds -> 0 limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from . import opcount
from ._accel import HAVE_NUMBA, njit
from .fssk import FsskData, JordanForm
from .paths import Path

SERIES_THRESHOLD = 1e-3
SERIES_TERMS = 8
SCHEMES = ("pc", "exp", "naive")


class GramShapeError(ValueError):
    """A user Gram table does not match the path grids or the number of channels."""


# ---------------------------------------------------------------------------
# phi functions


def _blocks_of(data_or_lam: FsskData | JordanForm | NDArray[np.float64]) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    lam = data_or_lam.Lam if isinstance(data_or_lam, FsskData) else data_or_lam
    if isinstance(lam, JordanForm):
        return np.asarray(lam.offsets(), dtype=np.int64), np.asarray([b.dim for b in lam.blocks], dtype=np.int64)
    R = np.asarray(lam).shape[0]
    return np.zeros(1, dtype=np.int64), np.asarray([R], dtype=np.int64)


def _phi_block(M: NDArray[np.float64], which: int) -> NDArray[np.float64]:
    n = M.shape[0]
    I = np.eye(n)
    z = np.linalg.eigvals(M) if n > 1 else M.ravel()
    if np.max(np.abs(z)) < SERIES_THRESHOLD:
        out = np.zeros_like(M)
        P = I.copy()
        for k in range(SERIES_TERMS):
            out += P / math.factorial(k + which)
            P = P @ M
        return out
    if np.min(np.abs(z)) >= SERIES_THRESHOLD:
        phi1 = np.linalg.solve(M, scipy.linalg.expm(M) - I)
        return phi1 if which == 1 else np.linalg.solve(M, phi1 - I)
    # mixed spectrum inside one dense block: augmented exponential
    aug = np.zeros((3 * n, 3 * n))
    aug[:n, :n] = M
    aug[:n, n : 2 * n] = I
    aug[n : 2 * n, 2 * n :] = I
    X = scipy.linalg.expm(aug)
    return X[:n, n : 2 * n] if which == 1 else X[:n, 2 * n :]


def phi12_matrix(M: ArrayLike, which: int, blocks: Sequence[tuple[int, int]] | None = None) -> NDArray[np.float64]:
    """phi_1(M) = (e^M - I) M^{-1} or phi_2(M) = (e^M - I - M) M^{-2}.

    Args:
        M: Square matrix, block diagonal along ``blocks``.
        which: 1 or 2.
        blocks: (offset, size) pairs of the diagonal blocks; one dense block if omitted.

    Blocks whose spectral radius is below 1e-3 use an 8-term Taylor series.
    """
    if which not in (1, 2):
        raise ValueError("which must be 1 or 2")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if blocks is None:
        blocks = [(0, M.shape[0])]
    out = np.zeros_like(M)
    for o, s in blocks:
        out[o : o + s, o : o + s] = _phi_block(M[o : o + s, o : o + s], which)
    return out


# ---------------------------------------------------------------------------
# transport operators


@dataclass(frozen=True)
class TransportOps:
    """Per-cell transport matrices along s and t.

    ``Es[i] = exp(-ds_i Lam)``, ``Ps[i] = ds_i phi_1(-ds_i Lam)``,
    ``Qs[i] = ds_i phi_2(-ds_i Lam)`` and the t analogs built from Lam^T. For
    ``kind == "euler"`` they are the explicit Euler surrogates I - ds Lam, ds I, 0.
    """

    Es: NDArray[np.float64]
    Ps: NDArray[np.float64]
    Qs: NDArray[np.float64]
    Et: NDArray[np.float64]
    Pt: NDArray[np.float64]
    Qt: NDArray[np.float64]
    ds: NDArray[np.float64]
    dt: NDArray[np.float64]
    kind: str = "exp"
    distinct: int = 0

    @classmethod
    def build(cls, data: FsskData, ds: ArrayLike, dt: ArrayLike, kind: str = "exp") -> "TransportOps":
        ds = np.asarray(ds, dtype=float)
        dt = np.asarray(dt, dtype=float)
        L = data.dense_lambda()
        R = L.shape[0]
        offs, sizes = _blocks_of(data)
        blocks = list(zip(offs.tolist(), sizes.tolist()))
        cache: dict[float, tuple] = {}

        def triple(h: float) -> tuple:
            key = float(f"{h:.14e}")
            if key not in cache:
                if kind == "euler":
                    cache[key] = (np.eye(R) - h * L, h * np.eye(R), np.zeros((R, R)))
                else:
                    M = -h * L
                    cache[key] = (data.E(h), h * phi12_matrix(M, 1, blocks), h * phi12_matrix(M, 2, blocks))
            return cache[key]

        S = [triple(float(h)) for h in ds]
        T = [tuple(X.T for X in triple(float(h))) for h in dt]
        stack = lambda rows, k: np.ascontiguousarray(np.array([r[k] for r in rows]).reshape(len(rows), R, R))
        return cls(stack(S, 0), stack(S, 1), stack(S, 2), stack(T, 0), stack(T, 1), stack(T, 2),
                   ds, dt, kind, len(cache))


# ---------------------------------------------------------------------------
# static lift and cell coefficients


def rbf_kernel(sigma: float = 1.0) -> Callable[[NDArray[np.float64], NDArray[np.float64]], NDArray[np.float64]]:
    """Gaussian static kernel k(u, v) = exp(-|u - v|^2 / (2 sigma^2)) on row batches."""

    def k(U: NDArray[np.float64], V: NDArray[np.float64]) -> NDArray[np.float64]:
        d2 = np.sum(U**2, axis=1)[:, None] + np.sum(V**2, axis=1)[None, :] - 2.0 * U @ V.T
        return np.exp(-np.maximum(d2, 0.0) / (2.0 * sigma**2))

    return k


@dataclass(frozen=True, eq=False)
class StaticLift:
    """Pairwise static-kernel values k^{a,b}(x_{s_i}, w_{t_j}).

    With ``gram is None`` the linear lift <A_a x, A_b w> is used and only the
    path increments matter. Otherwise ``gram`` has shape (q, q, J_s + 1, J_t + 1).
    """

    gram: NDArray[np.float64] | None = None

    @classmethod
    def linear(cls) -> "StaticLift":
        return cls(None)

    @classmethod
    def from_gram(cls, gram: ArrayLike) -> "StaticLift":
        g = np.asarray(gram, dtype=float)
        if g.ndim == 2:
            g = g[None, None]
        if g.ndim != 4 or g.shape[0] != g.shape[1]:
            raise GramShapeError(f"Gram table must have shape (q, q, Js+1, Jt+1), got {g.shape}")
        return cls(g)

    @classmethod
    def from_kernel(cls, k: Callable, x: Path, w: Path, A: ArrayLike) -> "StaticLift":
        """Tabulate k(A_a x_i, A_b w_j) for a batched static kernel ``k``."""
        A = np.asarray(A, dtype=float)
        if A.ndim == 2:
            A = A[None]
        X = np.einsum("amd,id->aim", A, x.x)
        W = np.einsum("bmd,jd->bjm", A, w.x)
        q = A.shape[0]
        g = np.array([[k(X[a], W[b]) for b in range(q)] for a in range(q)])
        return cls(g)

    def to_json(self) -> dict:
        return {"kind": "linear"} if self.gram is None else {"kind": "gram", "shape": list(self.gram.shape)}


def gram_increments(x: Path, w: Path, lift: StaticLift, A: NDArray[np.float64]) -> NDArray[np.float64]:
    """Second differences G_{i,j}^{a,b} of the static kernel over each cell, shape (Js, Jt, q, q)."""
    q = A.shape[0]
    if lift.gram is None:
        if A.shape[2] != x.d or x.d != w.d:
            raise ValueError("path dimensions do not match the channel maps")
        X = np.einsum("amd,id->iam", A, x.increments())
        W = np.einsum("bmd,jd->jbm", A, w.increments())
        return np.einsum("iam,jbm->ijab", X, W)
    g = lift.gram
    if g.shape != (q, q, x.J + 1, w.J + 1):
        raise GramShapeError(f"Gram table shape {g.shape} != {(q, q, x.J + 1, w.J + 1)}")
    G = g[:, :, 1:, 1:] - g[:, :, :-1, 1:] - g[:, :, 1:, :-1] + g[:, :, :-1, :-1]
    return np.ascontiguousarray(G.transpose(2, 3, 0, 1))


def gamma_cells(x: Path, w: Path, lift: StaticLift | None, data: FsskData) -> NDArray[np.float64]:
    """gamma_{i,j}^{n,m} = sum_{a,b} b_a^n b_b^m G_{i,j}^{a,b}, shape (Js, Jt, R, R)."""
    lift = lift or StaticLift.linear()
    G = gram_increments(x, w, lift, data.A)
    opcount.add("gamma", G.shape[0] * G.shape[1] * 2 * (data.q**2 * data.R + data.q * data.R**2))
    return np.einsum("an,ijab,bm->ijnm", data.b, G, data.b)


# ---------------------------------------------------------------------------
# grid container


@dataclass
class GoursatGrid:
    """Node states K, Psi, Phi (R x R) and eta on the product grid, plus cell gammas."""

    s: NDArray[np.float64]
    t: NDArray[np.float64]
    K: NDArray[np.float64]
    Psi: NDArray[np.float64]
    Phi: NDArray[np.float64]
    eta: NDArray[np.float64]
    gamma: NDArray[np.float64]
    manifest: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, s: NDArray[np.float64], t: NDArray[np.float64], gamma: NDArray[np.float64]) -> "GoursatGrid":
        ns, nt, R = s.size, t.size, gamma.shape[-1]
        z = lambda: np.zeros((ns, nt, R, R))
        return cls(s, t, z(), z(), z(), np.ones((ns, nt)), gamma)

    @property
    def kappa(self) -> float:
        return float(self.eta[-1, -1])

    @property
    def dims(self) -> tuple[int, int]:
        return self.s.size - 1, self.t.size - 1

    def boundary_ok(self) -> bool:
        K, Psi, Phi, eta = self.K, self.Psi, self.Phi, self.eta
        return bool(
            not K[0].any() and not K[:, 0].any() and not Psi[0].any() and not Phi[:, 0].any()
            and np.all(eta[0] == 1.0) and np.all(eta[:, 0] == 1.0)
        )

    def to_json(self, full: bool = False) -> dict:
        out = {"kappa": self.kappa, "grid_dims": list(self.dims), **({"manifest": self.manifest} if self.manifest else {})}
        if full:
            out["eta"] = self.eta.tolist()
            out["K"] = self.K.tolist()
        return out


# ---------------------------------------------------------------------------
# compiled per-cell sweep


@njit
def _bl(B, X, offs, sizes, out):
    # out = B @ X for block-diagonal B
    R = X.shape[1]
    for b in range(offs.size):
        o = offs[b]
        e = o + sizes[b]
        for r in range(o, e):
            for c in range(R):
                acc = 0.0
                for k in range(o, e):
                    acc += B[r, k] * X[k, c]
                out[r, c] = acc


@njit
def _br(X, B, offs, sizes, out):
    # out = X @ B for block-diagonal B
    R = X.shape[0]
    for b in range(offs.size):
        o = offs[b]
        e = o + sizes[b]
        for r in range(R):
            for c in range(o, e):
                acc = 0.0
                for k in range(o, e):
                    acc += X[r, k] * B[k, c]
                out[r, c] = acc


@njit
def _lop(Lam, LamT, X, offs, sizes, tmp, out):
    _bl(Lam, X, offs, sizes, tmp)
    _br(tmp, LamT, offs, sizes, out)


@njit
def _sweep_cells(gam, Lam, Es, Pu, Qu, Et, Ptu, Qtu, ds, dt, offs, sizes, pc, K, Psi, Phi, eta):
    Js, Jt, R = gam.shape[0], gam.shape[1], gam.shape[2]
    LamT = Lam.T.copy()
    tmp = np.empty((R, R))
    H0 = np.empty((R, R))
    J0 = np.empty((R, R))
    a1 = np.empty((R, R))
    a2 = np.empty((R, R))
    Psi_p = np.empty((R, R))
    Phi_p = np.empty((R, R))
    L00 = np.empty((R, R))
    L10 = np.empty((R, R))
    L01 = np.empty((R, R))
    Lp = np.empty((R, R))
    Kp = np.empty((R, R))
    for i in range(Js):
        for j in range(Jt):
            g = gam[i, j]
            e00 = eta[i, j]
            e10 = eta[i + 1, j]
            e01 = eta[i, j + 1]
            area = ds[i] * dt[j]
            _lop(Lam, LamT, K[i + 1, j], offs, sizes, tmp, L10)
            _lop(Lam, LamT, K[i, j + 1], offs, sizes, tmp, L01)
            if pc:
                for r in range(R):
                    for c in range(R):
                        H0[r, c] = 0.5 * g[r, c] * (e00 + e01)
                        J0[r, c] = 0.5 * g[r, c] * (e00 + e10)
            else:
                for r in range(R):
                    for c in range(R):
                        H0[r, c] = g[r, c] * e01
                        J0[r, c] = g[r, c] * e10
            _bl(Es[i], Psi[i, j + 1], offs, sizes, a1)
            _bl(Pu[i], H0, offs, sizes, a2)
            for r in range(R):
                for c in range(R):
                    Psi_p[r, c] = a1[r, c] + a2[r, c]
            _br(Phi[i + 1, j], Et[j], offs, sizes, a1)
            _br(J0, Ptu[j], offs, sizes, a2)
            for r in range(R):
                for c in range(R):
                    Phi_p[r, c] = a1[r, c] + a2[r, c]
            s_eta = 0.0
            for r in range(R):
                for c in range(R):
                    v = (K[i + 1, j, r, c] + K[i, j + 1, r, c] - K[i, j, r, c]
                         + 0.5 * area * (L10[r, c] + L01[r, c])
                         - 0.5 * g[r, c] * (e10 + e01)
                         + (Psi_p[r, c] - Psi[i, j + 1, r, c])
                         + (Phi_p[r, c] - Phi[i + 1, j, r, c]))
                    Kp[r, c] = v
                    s_eta += v
            if not pc:
                for r in range(R):
                    for c in range(R):
                        Psi[i + 1, j + 1, r, c] = Psi_p[r, c]
                        Phi[i + 1, j + 1, r, c] = Phi_p[r, c]
                        K[i + 1, j + 1, r, c] = Kp[r, c]
                eta[i + 1, j + 1] = 1.0 + s_eta
                continue
            ep = 1.0 + s_eta
            # corrector: H1 - H0 and J1 - J0 reuse a1 / a2 as scratch
            for r in range(R):
                for c in range(R):
                    a1[r, c] = 0.5 * g[r, c] * (e10 + ep) - H0[r, c]
                    a2[r, c] = 0.5 * g[r, c] * (e01 + ep) - J0[r, c]
            _bl(Qu[i], a1, offs, sizes, tmp)
            for r in range(R):
                for c in range(R):
                    Psi_p[r, c] += tmp[r, c]
            _br(a2, Qtu[j], offs, sizes, tmp)
            for r in range(R):
                for c in range(R):
                    Phi_p[r, c] += tmp[r, c]
            _lop(Lam, LamT, K[i, j], offs, sizes, tmp, L00)
            _lop(Lam, LamT, Kp, offs, sizes, tmp, Lp)
            s_eta = 0.0
            for r in range(R):
                for c in range(R):
                    v = (K[i + 1, j, r, c] + K[i, j + 1, r, c] - K[i, j, r, c]
                         + 0.25 * area * (L00[r, c] + L10[r, c] + L01[r, c] + Lp[r, c])
                         - 0.25 * g[r, c] * (e00 + e10 + e01 + ep)
                         + (Psi_p[r, c] - Psi[i, j + 1, r, c])
                         + (Phi_p[r, c] - Phi[i + 1, j, r, c]))
                    K[i + 1, j + 1, r, c] = v
                    Psi[i + 1, j + 1, r, c] = Psi_p[r, c]
                    Phi[i + 1, j + 1, r, c] = Phi_p[r, c]
                    s_eta += v
            eta[i + 1, j + 1] = 1.0 + s_eta


# ---------------------------------------------------------------------------
# numpy wavefront sweep


def _sweep_wavefront(gam, Lam, Es, Pu, Qu, Et, Ptu, Qtu, ds, dt, pc, K, Psi, Phi, eta) -> None:
    """Same update as :func:`_sweep_cells`, vectorized over each anti-diagonal i + j = m."""
    Js, Jt = gam.shape[:2]
    LT = Lam.T

    def lop(X):
        return Lam @ X @ LT

    for m in range(Js + Jt - 1):
        i = np.arange(max(0, m - Jt + 1), min(m, Js - 1) + 1)
        j = m - i
        g = gam[i, j]
        e00, e10, e01 = eta[i, j], eta[i + 1, j], eta[i, j + 1]
        K00, K10, K01 = K[i, j], K[i + 1, j], K[i, j + 1]
        Psi01, Phi10 = Psi[i, j + 1], Phi[i + 1, j]
        area = (ds[i] * dt[j])[:, None, None]
        c = lambda v: v[:, None, None]
        L10, L01 = lop(K10), lop(K01)
        if pc:
            H0, J0 = 0.5 * g * c(e00 + e01), 0.5 * g * c(e00 + e10)
        else:
            H0, J0 = g * c(e01), g * c(e10)
        Psi_p = Es[i] @ Psi01 + Pu[i] @ H0
        Phi_p = Phi10 @ Et[j] + J0 @ Ptu[j]
        Kp = (K10 + K01 - K00 + 0.5 * area * (L10 + L01) - 0.5 * g * c(e10 + e01)
              + (Psi_p - Psi01) + (Phi_p - Phi10))
        if pc:
            ep = 1.0 + Kp.sum(axis=(1, 2))
            dH = 0.5 * g * c(e10 + ep) - H0
            dJ = 0.5 * g * c(e01 + ep) - J0
            Psi_p = Psi_p + Qu[i] @ dH
            Phi_p = Phi_p + dJ @ Qtu[j]
            Kp = (K10 + K01 - K00 + 0.25 * area * (lop(K00) + L10 + L01 + lop(Kp))
                  - 0.25 * g * c(e00 + e10 + e01 + ep) + (Psi_p - Psi01) + (Phi_p - Phi10))
        K[i + 1, j + 1] = Kp
        Psi[i + 1, j + 1] = Psi_p
        Phi[i + 1, j + 1] = Phi_p
        eta[i + 1, j + 1] = 1.0 + Kp.sum(axis=(1, 2))


def _cell_ops(R: int, rho: int, pc: bool) -> int:
    products = 22 if pc else 8
    elementwise = 40 if pc else 16
    return products * 2 * R * rho + elementwise * R * R


def sweep(grid: GoursatGrid, data: FsskData, ops: TransportOps, scheme: str = "pc", backend: str = "auto") -> GoursatGrid:
    """Fill the interior of ``grid`` in place.

    Args:
        grid: Grid with boundary values set.
        data: Kernel data supplying Lambda and its block structure.
        ops: Transport operators matching the grid steps.
        scheme: "pc", "exp" or "naive" (naive expects Euler transports).
        backend: "numba", "numpy" or "auto".
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if backend == "auto":
        backend = "numba" if HAVE_NUMBA else "numpy"
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is unavailable or disabled")
    pc = scheme == "pc"
    Lam = np.ascontiguousarray(data.dense_lambda(), dtype=float)
    Pu = ops.Ps / ops.ds[:, None, None]
    Qu = ops.Qs / ops.ds[:, None, None]
    Ptu = ops.Pt / ops.dt[:, None, None]
    Qtu = ops.Qt / ops.dt[:, None, None]
    args = (np.ascontiguousarray(grid.gamma), Lam, ops.Es, Pu, Qu, ops.Et, Ptu, Qtu, ops.ds, ops.dt)
    if backend == "numba":
        offs, sizes = _blocks_of(data)
        _sweep_cells(*args, offs, sizes, pc, grid.K, grid.Psi, grid.Phi, grid.eta)
    else:
        _sweep_wavefront(*args, pc, grid.K, grid.Psi, grid.Phi, grid.eta)
    _, sizes = _blocks_of(data)
    Js, Jt = grid.dims
    opcount.add("recursion", Js * Jt * _cell_ops(data.R, int(np.sum(sizes**2)), pc))
    grid.manifest["backend"] = backend
    return grid


def run_goursat(
    x: Path,
    w: Path,
    data: FsskData,
    lift: StaticLift | None = None,
    scheme: str = "pc",
    lam: int = 0,
    backend: str = "auto",
) -> GoursatGrid:
    """Approximate kappa(x, w) on the dyadically refined product grid.

    Args:
        x, w: Piecewise-linear input paths.
        data: Finite-state-space kernel data.
        lift: Static lift; the linear lift <A_a x, A_b w> when omitted.
        scheme: "pc", "exp" (alias "exp_integrator") or "naive".
        lam: Dyadic refinement level; each cell is split 2**lam x 2**lam.
        backend: "numba", "numpy" or "auto".

    Returns:
        The filled :class:`GoursatGrid`; ``grid.kappa`` is the terminal value.
    """
    if scheme == "exp_integrator":
        scheme = "exp"
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if lam < 0:
        raise ValueError("dyadic level must be >= 0")
    gam0 = gamma_cells(x, w, lift, data)
    k = 2**lam
    # sub-cells inherit the parent second difference scaled by 4^-lam (exact for the linear lift)
    gam = np.repeat(np.repeat(gam0, k, axis=0), k, axis=1) / float(k * k)
    s, t = x.refine(lam).t, w.refine(lam).t
    grid = GoursatGrid.empty(s, t, gam)
    ops = TransportOps.build(data, np.diff(s), np.diff(t), kind="euler" if scheme == "naive" else "exp")
    sweep(grid, data, ops, scheme, backend)
    grid.manifest.update({"scheme": scheme, "dyadic": lam, "grid_dims": list(grid.dims), "R": data.R,
                          "q": data.q, "lift": (lift or StaticLift.linear()).to_json(),
                          "transport_tables": ops.distinct})
    return grid
