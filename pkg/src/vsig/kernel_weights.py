"""Scalar kernel families and their Volterra weight coefficients.

For a word w = p_1...p_n over the component alphabet {1..q} the weight
K^{w,tau}_{s,t} integrates the chain k_{p_1}(r_2 - r_1) ... k_{p_n}(tau - r_n)
over the simplex s < r_1 < ... < r_n < t; its derivative Kdot fixes r_1 = s.
The rho-decorated weight int_s^t (u - s)^rho Kdot^{w,tau}_{u,t} du feeds the
higher-order schemes (rho = 0 gives K itself).

Three analytic routes cover the supported families:

* power family (constant, fractional and Gamma components sharing one decay
  rate): incomplete-Beta closed forms, with 1-D quadrature when the decay is
  nonzero;
* state-space family (constant, exponential and general 1^T e^{-Lambda d} b
  components): the convolution chain is a corner block of the exponential of
  a block-bidiagonal matrix, summed as a power series or through ``expm``;
* piecewise-constant kernels: products of cell coefficients.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np
import scipy.integrate
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .special import lower_inc_gamma, reg_inc_beta, varphi_n
from .tensor_algebra import TruncatedTensor


class UnsupportedKernelError(ValueError):
    """Raised when no analytic route exists for a kernel or decoration."""


class SymmetryError(ValueError):
    """Raised when symmetric coefficients are requested for a non-symmetric kernel."""


# ---------------------------------------------------------------------------
# kernel families


@dataclass(frozen=True)
class Constant:
    c: float = 1.0

    def __call__(self, delta: ArrayLike) -> NDArray[np.float64]:
        return np.full_like(np.asarray(delta, dtype=float), self.c)


@dataclass(frozen=True)
class Exponential:
    alpha: float
    lam: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.lam >= 0):
            raise ValueError("Exponential needs alpha > 0 and lam >= 0")

    def __call__(self, delta: ArrayLike) -> NDArray[np.float64]:
        return self.alpha * np.exp(-self.lam * np.asarray(delta, dtype=float))


@dataclass(frozen=True)
class Fractional:
    beta: float

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError("Fractional needs beta > 0")

    def __call__(self, delta: ArrayLike) -> NDArray[np.float64]:
        d = np.asarray(delta, dtype=float)
        return d ** (self.beta - 1.0) / math.gamma(self.beta)


@dataclass(frozen=True)
class Gamma:
    alpha: float
    beta: float
    lam: float

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0 and self.lam > 0):
            raise ValueError("Gamma needs alpha, beta, lam > 0")

    def __call__(self, delta: ArrayLike) -> NDArray[np.float64]:
        d = np.asarray(delta, dtype=float)
        return self.alpha * np.exp(-self.lam * d) * d ** (self.beta - 1.0) / math.gamma(self.beta)


@dataclass(frozen=True, eq=False)
class PiecewiseConstant:
    """k(t, s) = coeffs[i-1, j-1] for s in [t_{i-1}, t_i) and t in [t_{j-1}, t_j).

    The last cell is closed on the right so that k is defined on [0, T]^2.
    """

    grid: tuple[float, ...]
    coeffs: NDArray[np.float64]

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=float)
        J = g.size - 1
        if J < 1 or np.any(np.diff(g) <= 0):
            raise ValueError("piecewise-constant grid must be strictly increasing")
        if np.shape(self.coeffs) != (J, J):
            raise ValueError(f"coefficient table must be {J}x{J}")

    def cell(self, u: float) -> int:
        """1-based index i of the cell [t_{i-1}, t_i) containing u."""
        g = self.grid
        if u < g[0] or u > g[-1]:
            raise ValueError(f"time {u} outside the kernel grid")
        return min(int(np.searchsorted(g, u, side="right")), len(g) - 1)

    def segment(self, s: float, t: float) -> int:
        """Cell i with [s, t] contained in the closed cell [t_{i-1}, t_i]."""
        i = self.cell(s)
        if t > self.grid[i] * (1 + 1e-14) + 1e-14:
            raise ValueError("interval [s, t] crosses a kernel cell boundary")
        return i

    def value(self, t: float, s: float) -> float:
        return float(self.coeffs[self.cell(s) - 1, self.cell(t) - 1])


@dataclass(frozen=True, eq=False)
class StateSpace:
    """k(d) = 1^T exp(-Lambda d) b."""

    Lam: NDArray[np.float64]
    b: NDArray[np.float64]

    def __post_init__(self) -> None:
        L = np.atleast_2d(np.asarray(self.Lam, dtype=float))
        if L.shape[0] != L.shape[1] or np.asarray(self.b).reshape(-1).size != L.shape[0]:
            raise ValueError("StateSpace needs square Lambda and matching b")

    def __call__(self, delta: ArrayLike) -> NDArray[np.float64]:
        d = np.atleast_1d(np.asarray(delta, dtype=float))
        L = np.atleast_2d(np.asarray(self.Lam, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        vals = np.array([np.sum(scipy.linalg.expm(-L * x) @ b) for x in d.ravel()])
        return vals.reshape(d.shape) if np.ndim(delta) else vals[0]


ScalarKernel = Union[Constant, Exponential, Fractional, Gamma, PiecewiseConstant, StateSpace]


def kernel_value(k: ScalarKernel, t: float, s: float) -> float:
    """Evaluate k(t, s) for s <= t."""
    if isinstance(k, PiecewiseConstant):
        return k.value(t, s)
    return float(k(t - s))


def is_convolution(k: ScalarKernel) -> bool:
    return not isinstance(k, PiecewiseConstant)


@dataclass(frozen=True, eq=False)
class Component:
    kernel: ScalarKernel
    A: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class MatrixKernelSpec:
    """K(t, s) = sum_p k_p(t, s) A_p with A_p of shape (m, d)."""

    components: tuple[Component, ...]
    _engine: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.components:
            raise ValueError("a kernel spec needs at least one component")
        shapes = {np.shape(c.A) for c in self.components}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ValueError("all A_p must share one (m, d) shape")

    @classmethod
    def scalar(cls, kernel: ScalarKernel, d: int, A: ArrayLike | None = None) -> "MatrixKernelSpec":
        Am = np.eye(d) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
        return cls((Component(kernel, Am),))

    @classmethod
    def of(cls, pairs: Sequence[tuple[ScalarKernel, ArrayLike]]) -> "MatrixKernelSpec":
        return cls(tuple(Component(k, np.atleast_2d(np.asarray(A, dtype=float))) for k, A in pairs))

    @property
    def q(self) -> int:
        return len(self.components)

    @property
    def m(self) -> int:
        return int(np.shape(self.components[0].A)[0])

    @property
    def d(self) -> int:
        return int(np.shape(self.components[0].A)[1])

    @property
    def kernels(self) -> tuple[ScalarKernel, ...]:
        return tuple(c.kernel for c in self.components)

    def A_stack(self) -> NDArray[np.float64]:
        return np.stack([np.asarray(c.A, dtype=float) for c in self.components])

    def is_convolution(self) -> bool:
        return all(is_convolution(k) for k in self.kernels)

    def engine(self) -> "WeightEngine":
        if "e" not in self._engine:
            self._engine["e"] = WeightEngine(self.kernels)
        return self._engine["e"]


# ---------------------------------------------------------------------------
# scalar closed forms


def _check_simplex(s: float, t: float, tau: float) -> None:
    if not (s <= t <= tau):
        raise ValueError(f"need s <= t <= tau, got ({s}, {t}, {tau})")


def kappa_dot(k: ScalarKernel, n: int, s: float, t: float, tau: float) -> float:
    """kappa-dot^{n,tau}_{s,t}: the scalar chain weight with its first time fixed at s."""
    _check_simplex(s, t, tau)
    if n < 1:
        raise ValueError("n >= 1")
    return float(word_weight([k], (1,) * n, s, t, tau, dot=True))


def kappa(k: ScalarKernel, n: int, s: float, t: float, tau: float) -> float:
    """kappa^{n,tau}_{s,t} = int_s^t kappa-dot^{n,tau}_{u,t} du."""
    _check_simplex(s, t, tau)
    if n < 1:
        raise ValueError("n >= 1")
    return float(word_weight([k], (1,) * n, s, t, tau))


def kappa_exponential_closed(k: Exponential, n: int, s: float, t: float, tau: float) -> float:
    """e^{-lam(tau-s)} alpha^n (t-s)^n phi_n(lam (t-s)): the exponential closed form."""
    x = t - s
    return math.exp(-k.lam * (tau - s)) * k.alpha**n * x**n * float(varphi_n(k.lam * x, n))


def kappa_gamma_semi_explicit(k: Gamma, n: int, s: float, t: float, tau: float) -> float:
    """kappa^n for the Gamma kernel via int_s^t k(tau-u) G_{n-1}(u-s) du.

    G_0 = 1 and G_{n-1}(y) = alpha^{n-1} lam^{-(n-1)beta} gamma((n-1)beta, lam y)/Gamma((n-1)beta)
    is the diagonal weight of the first n - 1 letters.
    """
    _check_simplex(s, t, tau)
    if t == s:
        return 0.0
    a = (n - 1) * k.beta

    def G(y: float) -> float:
        if n == 1:
            return 1.0
        return k.alpha ** (n - 1) * k.lam ** (-a) * float(lower_inc_gamma(a, k.lam * y)) / math.gamma(a)

    if tau == t:
        # weight (t - u)^{beta - 1} is handled by the algebraic-weight rule
        f = lambda u: k.alpha * math.exp(-k.lam * (t - u)) / math.gamma(k.beta) * G(u - s)
        val, _ = scipy.integrate.quad(f, s, t, weight="alg", wvar=(0.0, k.beta - 1.0),
                                      epsabs=0.0, epsrel=1e-11, limit=200)
        return val
    f = lambda u: float(k(tau - u)) * G(u - s)
    val, _ = scipy.integrate.quad(f, s, t, epsabs=0.0, epsrel=1e-11, limit=200)
    return val


# ---------------------------------------------------------------------------
# multi-indices


@lru_cache(maxsize=None)
def multi_indices(q: int, max_degree: int) -> tuple[tuple[int, ...], ...]:
    """All l in N^q with |l| <= max_degree, ordered by degree then lexicographically (descending)."""
    out: list[tuple[int, ...]] = []
    for deg in range(max_degree + 1):
        level = [c for c in itertools.product(range(deg + 1), repeat=q) if sum(c) == deg]
        out.extend(sorted(level, reverse=True))
    return tuple(out)


@lru_cache(maxsize=None)
def multi_index_rank(q: int, max_degree: int) -> dict[tuple[int, ...], int]:
    return {ell: r for r, ell in enumerate(multi_indices(q, max_degree))}


def representative_word(ell: Sequence[int]) -> tuple[int, ...]:
    """The ordered word 1^{l_1} 2^{l_2} ... q^{l_q} with letters 1-based."""
    return tuple(p + 1 for p, c in enumerate(ell) for _ in range(c))


@lru_cache(maxsize=None)
def words(q: int, n: int) -> tuple[tuple[int, ...], ...]:
    """All words of length n over {1..q} in lexicographic order."""
    return tuple(itertools.product(range(1, q + 1), repeat=n))


# ---------------------------------------------------------------------------
# weight engine


def _as_state(k: ScalarKernel) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    if isinstance(k, Constant):
        return np.zeros((1, 1)), np.array([k.c])
    if isinstance(k, Exponential):
        return np.array([[k.lam]]), np.array([k.alpha])
    if isinstance(k, StateSpace):
        return np.atleast_2d(np.asarray(k.Lam, float)), np.asarray(k.b, float).reshape(-1)
    raise TypeError(type(k).__name__)


def _power_params(kernels: Sequence[ScalarKernel]) -> tuple[list[tuple[float, float]], float] | None:
    """(alpha_p, beta_p) per component and the shared decay, if the power route applies."""
    lams = {k.lam for k in kernels if isinstance(k, Gamma)}
    if len(lams) > 1:
        return None
    lam = lams.pop() if lams else 0.0
    out = []
    for k in kernels:
        if isinstance(k, Fractional):
            out.append((1.0, k.beta))
        elif isinstance(k, Gamma):
            out.append((k.alpha, k.beta))
        elif isinstance(k, Constant) and lam == 0.0:
            out.append((k.c, 1.0))
        else:
            return None
    return out, lam


class WeightEngine:
    """Normalized, rho-decorated weight coefficients for a list of components.

    ``coeffs(word_list, rho, s, t, taus)`` returns an array of shape
    (len(word_list), len(taus)) holding
    int_s^t (u - s)^rho Kdot^{w,tau}_{u,t} du / (t - s)^{|w| + rho}.
    ``dot_coeffs`` returns Kdot^{w,tau}_{s,t} / (t - s)^{|w| - 1}.
    """

    def __init__(self, kernels: Sequence[ScalarKernel]):
        self.kernels = tuple(kernels)
        self.q = len(self.kernels)
        pw = _power_params(self.kernels)
        if pw is not None:
            self.family = "power"
            self.ab, self.lam = pw
        elif all(isinstance(k, (Constant, Exponential, StateSpace)) for k in self.kernels):
            self.family = "state"
            self.states = [_as_state(k) for k in self.kernels]
        elif all(isinstance(k, PiecewiseConstant) for k in self.kernels):
            grids = {tuple(k.grid) for k in self.kernels}
            if len(grids) != 1:
                raise UnsupportedKernelError("piecewise-constant components must share one grid")
            self.family = "piecewise"
        else:
            raise UnsupportedKernelError(
                "mixed kernel families have no analytic weight route; supported mixes are "
                "{constant, fractional, gamma with one shared decay}, "
                "{constant, exponential, state_space} and all piecewise_constant"
            )
        self._chain_cache: dict = {}

    @property
    def convolution(self) -> bool:
        return self.family != "piecewise"

    # -- public entry points -------------------------------------------------

    def coeffs(self, word_list: Sequence[Sequence[int]], rho: float, s: float, t: float,
               taus: ArrayLike) -> NDArray[np.float64]:
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        if rho < 0:
            raise UnsupportedKernelError("decoration exponent rho must be >= 0")
        if np.any(taus < t - 1e-15) or t < s:
            raise ValueError("need s <= t <= tau")
        taus = np.maximum(taus, t)
        out = np.empty((len(word_list), taus.size))
        if t == s:
            out[:] = 0.0
            return out
        for r, w in enumerate(word_list):
            out[r] = self._coeff(tuple(w), float(rho), s, t, taus)
        return out

    def dot_coeffs(self, word_list: Sequence[Sequence[int]], s: float, t: float,
                   taus: ArrayLike) -> NDArray[np.float64]:
        taus = np.maximum(np.atleast_1d(np.asarray(taus, dtype=float)), t)
        out = np.empty((len(word_list), taus.size))
        for r, w in enumerate(word_list):
            out[r] = self._dot(tuple(w), s, t, taus)
        return out

    # -- families ------------------------------------------------------------

    def _coeff(self, w: tuple[int, ...], rho: float, s: float, t: float,
               taus: NDArray[np.float64]) -> NDArray[np.float64]:
        n = len(w)
        h = t - s
        if n == 0:
            return np.zeros_like(taus)
        if self.family == "power":
            return self._power_coeff(w, rho, s, t, taus)
        if self.family == "state":
            return self._state_coeff(w, rho, h, taus - t)
        # piecewise
        i = self.kernels[0].segment(s, t)
        prod_inner = np.prod([self.kernels[p - 1].coeffs[i - 1, i - 1] for p in w[:-1]]) if n > 1 else 1.0
        last = self.kernels[w[-1] - 1]
        vals = np.array([last.coeffs[i - 1, last.cell(tau) - 1] for tau in taus])
        return prod_inner * vals * math.gamma(rho + 1) / math.gamma(rho + n + 1)

    def _dot(self, w: tuple[int, ...], s: float, t: float, taus: NDArray[np.float64]) -> NDArray[np.float64]:
        n = len(w)
        h = t - s
        if self.family == "power":
            alphas = [self.ab[p - 1][0] for p in w]
            betas = [self.ab[p - 1][1] for p in w]
            S, bn = sum(betas[:-1]), betas[-1]
            tot = S + bn
            A = float(np.prod(alphas))
            out = np.zeros_like(taus)
            span = taus - s
            ok = span > 0
            if n == 1:
                out[ok] = A * span[ok] ** (bn - 1) / math.gamma(bn)
            elif h > 0:
                x = np.clip(h / span[ok], 0.0, 1.0)
                out[ok] = A * span[ok] ** (tot - 1) * reg_inc_beta(x, S, bn) / math.gamma(tot)
            if self.lam:
                out = out * np.exp(-self.lam * span)
            return out / h ** (n - 1) if n > 1 else out
        if self.family == "state":
            return self._state_dot(w, h, taus - t)
        i = self.kernels[0].segment(s, t)
        prod_inner = np.prod([self.kernels[p - 1].coeffs[i - 1, i - 1] for p in w[:-1]]) if n > 1 else 1.0
        last = self.kernels[w[-1] - 1]
        vals = np.array([last.coeffs[i - 1, last.cell(tau) - 1] for tau in taus])
        return prod_inner * vals / math.factorial(n - 1)

    # power family: Gamma(rho+1) (tau-s)^{rho+Sum} I_x(rho+1+S, b_n) / Gamma(rho+1+Sum)
    def _power_coeff(self, w, rho, s, t, taus):
        n = len(w)
        h = t - s
        alphas = [self.ab[p - 1][0] for p in w]
        betas = [self.ab[p - 1][1] for p in w]
        S, bn = sum(betas[:-1]), betas[-1]
        tot = S + bn
        A = float(np.prod(alphas))
        if self.lam:
            return np.array([self._gamma_quad(w, rho, s, t, tau) for tau in taus]) / h ** (n + rho)
        if bn == 1.0:
            val = A * math.gamma(rho + 1) * h ** (S + 1 - n) / math.gamma(rho + 1 + tot)
            return np.full_like(taus, val)
        span = taus - s
        x = np.clip(h / span, 0.0, 1.0)
        ib = reg_inc_beta(x, rho + 1 + S, bn)
        # (span/h)^{rho+tot} h^{tot-n} without overflow for tiny h
        logfac = (rho + tot) * np.log(span / h) + (tot - n) * math.log(h)
        return A * math.gamma(rho + 1) / math.gamma(rho + 1 + tot) * ib * np.exp(logfac)

    def _gamma_quad(self, w, rho, s, t, tau) -> float:
        """Unnormalized decorated weight for Gamma components (shared decay) by 1-D quadrature."""
        n = len(w)
        lam = self.lam
        alphas = [self.ab[p - 1][0] for p in w]
        betas = [self.ab[p - 1][1] for p in w]
        S, bn = sum(betas[:-1]), betas[-1]
        A_in = float(np.prod(alphas[:-1]))
        an = alphas[-1]
        if rho == 0.0:
            # semi-explicit: int_s^t k_last(tau - u) G(u - s) du
            def G(y: float) -> float:
                if n == 1:
                    return 1.0
                return A_in * lam ** (-S) * float(lower_inc_gamma(S, lam * y)) / math.gamma(S)

            if tau == t:
                f = lambda u: an * math.exp(-lam * (t - u)) / math.gamma(bn) * G(u - s)
                val, _ = scipy.integrate.quad(f, s, t, weight="alg", wvar=(0.0, bn - 1.0),
                                              epsabs=0.0, epsrel=1e-11, limit=200)
                return val
            f = lambda u: an * math.exp(-lam * (tau - u)) * (tau - u) ** (bn - 1) / math.gamma(bn) * G(u - s)
            val, _ = scipy.integrate.quad(f, s, t, epsabs=0.0, epsrel=1e-11, limit=200)
            return val
        # decorated: int_s^t (u - s)^rho Kdot^{w,tau}_{u,t} du with the closed-form Kdot
        A = A_in * an
        tot = S + bn
        if tau == t:
            f = lambda u: A * math.exp(-lam * (t - u)) / math.gamma(tot)
            val, _ = scipy.integrate.quad(f, s, t, weight="alg", wvar=(rho, tot - 1.0),
                                          epsabs=0.0, epsrel=1e-11, limit=200)
            return val

        def dot(u: float) -> float:
            if u >= t:
                return 0.0
            return float(self._dot(w, u, t, np.array([tau]))[0]) * (t - u) ** (n - 1)

        val, _ = scipy.integrate.quad(dot, s, t, weight="alg", wvar=(rho, 0.0),
                                      epsabs=0.0, epsrel=1e-11, limit=200)
        return val

    # state family -------------------------------------------------------------

    def _chain(self, letters: tuple, h: float):
        """Scaled block-bidiagonal chain matrix and block offsets.

        Diagonal blocks are -h Lambda_l and couplings b_l 1^T, so that the
        corner block of exp(.) equals h^{-(L-1)} times the unscaled one.
        """
        key = (letters, h)
        if key in self._chain_cache:
            return self._chain_cache[key]
        mats = [self.states[p - 1] if p > 0 else (np.zeros((1, 1)), np.ones(1)) for p in letters]
        sizes = [L.shape[0] for L, _ in mats]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        M = np.zeros((offs[-1], offs[-1]))
        for l, (L, b) in enumerate(mats):
            M[offs[l]:offs[l + 1], offs[l]:offs[l + 1]] = -h * L
            if l + 1 < len(mats):
                M[offs[l]:offs[l + 1], offs[l + 1]:offs[l + 2]] = np.outer(b, np.ones(sizes[l + 1]))
        self._chain_cache[key] = (M, offs)
        return M, offs

    def _last_transport(self, p: int, dtaus: NDArray[np.float64]) -> NDArray[np.float64]:
        """Columns E_p(dtau) b_p for each look-ahead gap, shape (R_p, len(dtaus))."""
        L, b = self.states[p - 1]
        if L.shape[0] == 1:
            return b[:, None] * np.exp(-L[0, 0] * dtaus)[None, :]
        return np.stack([scipy.linalg.expm(-L * d) @ b for d in dtaus], axis=1)

    def _state_coeff(self, w, rho, h, dtaus):
        n = len(w)
        M, offs = self._chain(w, h)
        start = offs[n - 1]
        if float(np.abs(M).sum(axis=1).max()) <= 6.0:
            # sum_k (M^k)[0-block, last block] / Gamma(rho + k + 2)
            r = np.zeros(M.shape[0])
            r[: offs[1]] = 1.0
            acc = np.zeros(M.shape[0] - start)
            for k in range(400):
                if k >= n - 1:
                    term = r[start:] / math.gamma(rho + k + 2)
                    acc += term
                    if k > n + 2 and np.abs(term).max() <= 1e-18 * max(np.abs(acc).max(), 1e-300):
                        break
                r = r @ M
            row = math.gamma(rho + 1) * acc
        elif float(rho).is_integer():
            ip = int(rho)
            Ma, offa = self._chain((0,) * (ip + 1) + tuple(w), h)
            E = scipy.linalg.expm(Ma)
            row = math.factorial(ip) * E[0, offa[-2]:]
        else:
            row = self._state_gauss_jacobi(w, rho, h)
        return row @ self._last_transport(w[-1], dtaus)

    def _state_gauss_jacobi(self, w, rho, h):
        """int_0^1 z^rho F(h(1-z)) dz for the unscaled chain, normalized by h^{n-1}."""
        n = len(w)
        M, offs = self._chain(w, 1.0)
        M = M.copy()
        # unscaled chain: diagonal -Lambda, couplings b 1^T
        z, wt = scipy.special.roots_jacobi(48, 0.0, rho)
        z = (z + 1.0) / 2.0
        wt = wt / 2.0 ** (rho + 1)
        row = np.zeros(M.shape[0] - offs[n - 1])
        for zk, wk in zip(z, wt):
            E = scipy.linalg.expm(M * h * (1.0 - zk))
            row += wk * E[0, offs[n - 1]:]
        # D = h^{rho+1} int z^rho F(h(1-z)) dz and F carries an unscaled corner
        return row * h ** (rho + 1) / h ** (n + rho)

    def _state_dot(self, w, h, dtaus):
        n = len(w)
        M, offs = self._chain(w, h)
        E = scipy.linalg.expm(M)
        row = E[0, offs[n - 1]:]
        return row @ self._last_transport(w[-1], dtaus)


# ---------------------------------------------------------------------------
# word-level API


def _engine_for(spec_or_kernels) -> WeightEngine:
    if isinstance(spec_or_kernels, MatrixKernelSpec):
        return spec_or_kernels.engine()
    if isinstance(spec_or_kernels, WeightEngine):
        return spec_or_kernels
    return WeightEngine(spec_or_kernels)


def word_weight(spec_or_kernels, word: Sequence[int], s: float, t: float, tau: float,
                rho: float = 0.0, dot: bool = False) -> float:
    """Unnormalized weight of one word.

    Returns K^{w,tau}_{s,t} (``rho = 0``), the decorated integral
    int_s^t (u-s)^rho Kdot^{w,tau}_{u,t} du, or Kdot^{w,tau}_{s,t} if ``dot``.
    """
    _check_simplex(s, t, tau)
    eng = _engine_for(spec_or_kernels)
    n = len(word)
    h = t - s
    if dot:
        if h == 0 and n > 1:
            return 0.0
        val = float(eng.dot_coeffs([word], s, t, [tau])[0, 0])
        return val * h ** (n - 1) if n > 1 else val
    if h == 0:
        return 0.0
    return float(eng.coeffs([word], rho, s, t, [tau])[0, 0]) * h ** (n + rho)


@dataclass(frozen=True, eq=False)
class CoeffTensor:
    """Normalized word coefficients over the alphabet {1..q}.

    The word-w entry of ``tensor`` is the decorated weight divided by
    (t - s)^{|w| + rho}; the empty word carries 0.
    """

    tensor: TruncatedTensor
    s: float
    t: float
    tau: float
    rho: float

    def weight(self, word: Sequence[int]) -> float:
        """Unnormalized coefficient of ``word``."""
        return self.tensor.coeff(word) * (self.t - self.s) ** (len(word) + self.rho)


def coeff_tensor(spec: MatrixKernelSpec, s: float, t: float, tau: float, N: int,
                 rho: float | None = None) -> CoeffTensor:
    """All normalized coefficients with |w| <= N."""
    _check_simplex(s, t, tau)
    r = 0.0 if rho is None else float(rho)
    eng = spec.engine()
    q = spec.q
    blocks = [np.zeros(1)]
    for n in range(1, N + 1):
        blocks.append(eng.coeffs(words(q, n), r, s, t, [tau])[:, 0])
    return CoeffTensor(TruncatedTensor(q, N, tuple(blocks)), s, t, tau, r)


@dataclass(frozen=True, eq=False)
class SymmetricAlpha:
    """alpha_p(l) indexed as ``values[rank(l), p-1]`` for |l| <= N-1."""

    q: int
    N: int
    ells: tuple[tuple[int, ...], ...]
    rank: dict[tuple[int, ...], int]
    values: NDArray[np.float64]

    def __call__(self, ell: Sequence[int], p: int) -> float:
        return float(self.values[self.rank[tuple(ell)], p - 1])


def alpha_words(q: int, N: int) -> list[tuple[int, ...]]:
    """Representative words w(l)p, ordered as (rank(l), p)."""
    return [representative_word(ell) + (p,) for ell in multi_indices(q, N - 1) for p in range(1, q + 1)]


def symmetric_alpha(spec: MatrixKernelSpec, s: float, t: float, tau: float, N: int,
                    rho: float = 0.0) -> SymmetricAlpha:
    """alpha_p(l) = K^{w(l)p,tau}_{s,t} / (t-s)^{|l|+1} (rho-decorated when rho > 0)."""
    _check_simplex(s, t, tau)
    eng = spec.engine()
    q = spec.q
    ells = multi_indices(q, N - 1)
    vals = eng.coeffs(alpha_words(q, N), rho, s, t, [tau])[:, 0].reshape(len(ells), q)
    return SymmetricAlpha(q, N, ells, multi_index_rank(q, N - 1), vals)


def power_weight_closed(betas: Sequence[float], s: float, t: float, tau: float, rho: float = 0.0) -> float:
    """Multivariate fractional decorated weight in closed form (unnormalized)."""
    S, bn = sum(betas[:-1]), betas[-1]
    tot = S + bn
    span = tau - s
    return math.gamma(rho + 1) * span ** (rho + tot) * float(reg_inc_beta((t - s) / span, rho + 1 + S, bn)) / math.gamma(rho + 1 + tot)
