"""Dense truncated tensor algebra T^N(R^m).

Level n of a tensor is a flat block of m**n coefficients in lexicographic
word order, so the concatenation of blocks a and b is a reshaped outer
product. The ``*_levels`` helpers work on lists of such blocks carrying
arbitrary leading batch axes; the public API wraps them for single tensors.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import opcount

Levels = list[NDArray[np.float64]]


class TensorShapeError(ValueError):
    """Raised on mismatched ambient dimension, truncation level or matrix shape."""


# ---------------------------------------------------------------------------
# batched level-list primitives


def outer(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Concatenation of homogeneous blocks with broadcasting over batch axes."""
    batch = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    out = (a[..., :, None] * b[..., None, :]).reshape(batch + (a.shape[-1] * b.shape[-1],))
    opcount.add("tensor", out.size)
    return out


def zero_levels(m: int, N: int, batch: tuple[int, ...] = ()) -> Levels:
    return [np.zeros(batch + (m**n,)) for n in range(N + 1)]


def unit_levels(m: int, N: int, batch: tuple[int, ...] = ()) -> Levels:
    lv = zero_levels(m, N, batch)
    lv[0][...] = 1.0
    return lv


def product_levels(x: Levels, y: Levels, N: int | None = None, right_nilpotent: bool = False) -> Levels:
    """Truncated concatenation product of batched level lists.

    With ``right_nilpotent`` the terms x^(n) y^(0) are skipped; callers that
    know y^(0) = 0 use it to save work.
    """
    N = len(x) - 1 if N is None else N
    out: Levels = []
    for n in range(N + 1):
        acc = None
        for r in range(n + 1):
            if right_nilpotent and r == n:
                continue
            term = outer(x[r], y[n - r])
            acc = term if acc is None else acc + term
        if acc is None:
            batch = np.broadcast_shapes(x[0].shape[:-1], y[0].shape[:-1])
            acc = np.zeros(batch + (x[1].shape[-1] ** n,))
        out.append(acc)
    return out


def horner_levels(
    v: Levels, y: NDArray[np.float64], beta: NDArray[np.float64], N: int | None = None
) -> Levels:
    """Fused Horner evaluation of v (x) E with pi_n E = beta_n y^{(x)n}, E^(0) = 0.

    Args:
        v: Batched level list.
        y: Increments with shape ``batch + (m,)``.
        beta: Coefficients with shape ``batch + (N + 1,)``; entry 0 is ignored.
        N: Truncation level (defaults to ``len(v) - 1``).
    """
    N = len(v) - 1 if N is None else N
    batch = np.broadcast_shapes(v[0].shape[:-1], y.shape[:-1], beta.shape[:-1])
    out: Levels = [np.zeros(batch + (1,))]
    for n in range(1, N + 1):
        w = v[0] * beta[..., n : n + 1]
        for k in range(1, n):
            w = outer(w, y) + v[k] * beta[..., n - k : n - k + 1]
            opcount.add("tensor", 2 * v[k].size)
        out.append(outer(w, y))
    return out


def shuffle_vec_levels(
    x: NDArray[np.float64], y: NDArray[np.float64], m: int, k: int | None = None
) -> NDArray[np.float64]:
    """Shuffle a batched homogeneous block of degree k with the vector y (degree k + 1).

    The degree must be passed explicitly when m = 1.
    """
    if k is None:
        if m == 1 and x.shape[-1] == 1:
            raise TensorShapeError("degree is ambiguous for m = 1; pass k")
        k = round(math.log(x.shape[-1], m)) if x.shape[-1] > 1 else 0
    batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
    nb = len(batch)
    xs = np.broadcast_to(x, batch + x.shape[-1:]).reshape(batch + (m,) * k)
    acc = np.zeros(batch + (m,) * (k + 1))
    for r in range(k + 1):
        yr = y.reshape(y.shape[:-1] + (1,) * r + (m,) + (1,) * (k - r))
        acc = acc + np.expand_dims(xs, axis=nb + r) * yr
    opcount.add("tensor", 2 * (k + 1) * acc.size)
    return acc.reshape(batch + (m ** (k + 1),))


def scale_levels_list(x: Levels, factors: Sequence[float] | NDArray[np.float64]) -> Levels:
    return [x[n] * factors[n] for n in range(len(x))]


def add_levels(x: Levels, y: Levels) -> Levels:
    opcount.add("tensor", sum(a.size for a in x))
    return [a + b for a, b in zip(x, y)]


# ---------------------------------------------------------------------------
# single tensors


@dataclass(frozen=True, eq=False)
class TruncatedTensor:
    """Element of T^N(R^m) stored level by level.

    Attributes:
        m: Ambient dimension.
        N: Truncation level.
        levels: ``levels[n]`` is a flat float array of length ``m**n``.
    """

    m: int
    N: int
    levels: tuple[NDArray[np.float64], ...]

    def __post_init__(self) -> None:
        if self.m < 1 or self.N < 0:
            raise TensorShapeError(f"invalid (m, N) = ({self.m}, {self.N})")
        if len(self.levels) != self.N + 1:
            raise TensorShapeError("need exactly N + 1 levels")
        for n, blk in enumerate(self.levels):
            if blk.shape != (self.m**n,):
                raise TensorShapeError(f"level {n} has shape {blk.shape}, expected ({self.m**n},)")

    @classmethod
    def from_levels(cls, levels: Iterable[ArrayLike], m: int | None = None) -> "TruncatedTensor":
        blocks = tuple(np.asarray(b, dtype=np.float64).reshape(-1) for b in levels)
        if m is None:
            m = blocks[1].size if len(blocks) > 1 else 1
        return cls(m, len(blocks) - 1, blocks)

    @classmethod
    def zero(cls, m: int, N: int) -> "TruncatedTensor":
        return cls(m, N, tuple(zero_levels(m, N)))

    @classmethod
    def unit(cls, m: int, N: int) -> "TruncatedTensor":
        return cls(m, N, tuple(unit_levels(m, N)))

    @classmethod
    def from_flat(cls, flat: ArrayLike, m: int, N: int) -> "TruncatedTensor":
        arr = np.asarray(flat, dtype=np.float64)
        sizes = [m**n for n in range(N + 1)]
        if arr.size != sum(sizes):
            raise TensorShapeError("flat length does not match (m, N)")
        cuts = np.cumsum(sizes)[:-1]
        return cls(m, N, tuple(b.copy() for b in np.split(arr, cuts)))

    def flat(self) -> NDArray[np.float64]:
        return np.concatenate(self.levels)

    def level(self, n: int) -> NDArray[np.float64]:
        return self.levels[n]

    def coeff(self, word: Sequence[int]) -> float:
        """Coefficient of a word with letters in 1..m."""
        idx = 0
        for letter in word:
            idx = idx * self.m + (letter - 1)
        return float(self.levels[len(word)][idx])

    def _check(self, other: "TruncatedTensor") -> None:
        if (self.m, self.N) != (other.m, other.N):
            raise TensorShapeError(f"(m, N) mismatch: {(self.m, self.N)} vs {(other.m, other.N)}")

    def __add__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        self._check(other)
        return TruncatedTensor(self.m, self.N, tuple(a + b for a, b in zip(self.levels, other.levels)))

    def __sub__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        self._check(other)
        return TruncatedTensor(self.m, self.N, tuple(a - b for a, b in zip(self.levels, other.levels)))

    def __mul__(self, c: float) -> "TruncatedTensor":
        return TruncatedTensor(self.m, self.N, tuple(a * c for a in self.levels))

    __rmul__ = __mul__

    def __matmul__(self, other: "TruncatedTensor") -> "TruncatedTensor":
        return truncated_product(self, other)

    def max_abs_diff(self, other: "TruncatedTensor", factorial: bool = False) -> float:
        """Largest coefficient gap, optionally scaled by n! at level n."""
        self._check(other)
        return max(
            float(np.max(np.abs(a - b))) * (math.factorial(n) if factorial else 1.0)
            for n, (a, b) in enumerate(zip(self.levels, other.levels))
        )

    def to_json(self) -> dict:
        return {"m": self.m, "N": self.N, "levels": [blk.tolist() for blk in self.levels]}

    @classmethod
    def from_json(cls, obj: dict | str) -> "TruncatedTensor":
        if isinstance(obj, str):
            obj = json.loads(obj)
        t = cls.from_levels(obj["levels"], m=int(obj["m"]))
        if t.N != int(obj["N"]):
            raise TensorShapeError("N field disagrees with the number of levels")
        return t

    def to_bytes(self) -> bytes:
        return struct.pack("<II", self.m, self.N) + self.flat().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TruncatedTensor":
        m, N = struct.unpack_from("<II", data, 0)
        flat = np.frombuffer(data, dtype="<f8", offset=8)
        return cls.from_flat(flat, m, N)


def truncated_product(x: TruncatedTensor, y: TruncatedTensor) -> TruncatedTensor:
    """Truncated concatenation product x (x)_N y."""
    x._check(y)
    return TruncatedTensor(x.m, x.N, tuple(product_levels(list(x.levels), list(y.levels))))


def tensor_exp(v: ArrayLike, N: int) -> TruncatedTensor:
    """Tensor exponential sum_n v^{(x)n}/n! truncated at level N."""
    vec = np.asarray(v, dtype=np.float64).reshape(-1)
    blocks = [np.ones(1)]
    for n in range(1, N + 1):
        blocks.append(outer(blocks[-1], vec) / n)
    return TruncatedTensor(vec.size, N, tuple(blocks))


def shuffle_by_vector(x: ArrayLike, y: ArrayLike, N: int | None = None, k: int | None = None) -> NDArray[np.float64]:
    """Shuffle of a homogeneous degree-k block with a single vector.

    Args:
        x: Flat block of length m**k.
        y: Vector of length m.
        N: Optional truncation level; the result degree k + 1 must not exceed it.
        k: Degree of ``x``; inferred from its length unless m = 1.
    """
    xa = np.asarray(x, dtype=np.float64).reshape(-1)
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    m = ya.size
    if k is None:
        if m == 1 and xa.size == 1:
            raise TensorShapeError("degree is ambiguous for m = 1; pass k")
        k = round(math.log(xa.size, m)) if xa.size > 1 else 0
    if m**k != xa.size:
        raise TensorShapeError("block length is not a power of m")
    if N is not None and k + 1 > N:
        raise TensorShapeError(f"shuffle would produce degree {k + 1} > N = {N}")
    return shuffle_vec_levels(xa, ya, m, k)


def horner_vte(v: TruncatedTensor, y: ArrayLike, beta: ArrayLike) -> TruncatedTensor:
    """v (x)_N E where E has no level-0 part and pi_n E = beta_n y^{(x)n}.

    ``beta`` holds beta_1..beta_N (length N) or beta_0..beta_N (length N + 1,
    entry 0 ignored).
    """
    b = np.asarray(beta, dtype=np.float64).reshape(-1)
    if b.size == v.N:
        b = np.concatenate([[0.0], b])
    if b.size != v.N + 1:
        raise TensorShapeError("beta must have N or N + 1 entries")
    ya = np.asarray(y, dtype=np.float64).reshape(-1)
    if ya.size != v.m:
        raise TensorShapeError("increment dimension differs from m")
    return TruncatedTensor(v.m, v.N, tuple(horner_levels(list(v.levels), ya, b)))


def scale_levels(x: TruncatedTensor, a: float, b: float) -> TruncatedTensor:
    """The dilation D_{a,b}: level n >= 1 is multiplied by b a^{n-1}."""
    facs = [1.0] + [b * a ** (n - 1) for n in range(1, x.N + 1)]
    return TruncatedTensor(x.m, x.N, tuple(blk * f for blk, f in zip(x.levels, facs)))


def signature_pwl(increments: ArrayLike, N: int) -> TruncatedTensor:
    """Classical truncated signature of a piecewise-linear path via Chen products."""
    inc = np.atleast_2d(np.asarray(increments, dtype=np.float64))
    out = TruncatedTensor.unit(inc.shape[1], N)
    for dx in inc:
        out = truncated_product(out, tensor_exp(dx, N))
    return out


# ---------------------------------------------------------------------------
# matrices over the ring (T^N, (x)_N)


@dataclass(frozen=True, eq=False)
class TensorMatrix:
    """A rows x cols matrix with entries in T^N(R^m).

    ``levels[n]`` has shape (rows, cols, m**n).
    """

    m: int
    N: int
    levels: tuple[NDArray[np.float64], ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.levels[0].shape[:2]

    @classmethod
    def zeros(cls, rows: int, cols: int, m: int, N: int) -> "TensorMatrix":
        return cls(m, N, tuple(zero_levels(m, N, (rows, cols))))

    @classmethod
    def identity(cls, size: int, m: int, N: int) -> "TensorMatrix":
        lv = zero_levels(m, N, (size, size))
        lv[0][:, :, 0] = np.eye(size)
        return cls(m, N, tuple(lv))

    @classmethod
    def from_real(cls, E: ArrayLike, m: int, N: int) -> "TensorMatrix":
        Ea = np.atleast_2d(np.asarray(E, dtype=np.float64))
        lv = zero_levels(m, N, Ea.shape)
        lv[0][..., 0] = Ea
        return cls(m, N, tuple(lv))

    def entry(self, i: int, j: int) -> TruncatedTensor:
        return TruncatedTensor(self.m, self.N, tuple(blk[i, j].copy() for blk in self.levels))

    def __add__(self, other: "TensorMatrix") -> "TensorMatrix":
        return TensorMatrix(self.m, self.N, tuple(a + b for a, b in zip(self.levels, other.levels)))


def matmul_levels(M: Levels, Nm: Levels, N: int | None = None) -> Levels:
    """Batched ring matrix product; blocks have shape (..., rows, inner, m**n) and (..., inner, cols, m**n)."""
    N = len(M) - 1 if N is None else N
    out: Levels = []
    for n in range(N + 1):
        acc = None
        for r in range(n + 1):
            a, b = M[r], Nm[n - r]
            term = np.einsum("...ila,...ljb->...ijab", a, b)
            term = term.reshape(term.shape[:-2] + (a.shape[-1] * b.shape[-1],))
            opcount.add("tensor", 2 * a.shape[-2] * term.size)
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def real_right_levels(Z: Levels, E: NDArray[np.float64]) -> Levels:
    """(Z.E) for a real matrix E acting on the column index of blocks (..., rows, inner, m**n)."""
    out = [np.einsum("...ila,lj->...ija", blk, E) for blk in Z]
    opcount.add("tensor", 2 * E.shape[0] * sum(o.size for o in out))
    return out


def tensor_matrix_product(M: TensorMatrix | NDArray[np.float64], Nm: TensorMatrix | NDArray[np.float64]) -> TensorMatrix:
    """Ring product M.Nm; either factor may be a plain real matrix (scalar action)."""
    if isinstance(M, TensorMatrix) and isinstance(Nm, TensorMatrix):
        if (M.m, M.N) != (Nm.m, Nm.N):
            raise TensorShapeError("(m, N) mismatch")
        if M.shape[1] != Nm.shape[0]:
            raise TensorShapeError(f"inner dimensions {M.shape} and {Nm.shape} disagree")
        return TensorMatrix(M.m, M.N, tuple(matmul_levels(list(M.levels), list(Nm.levels))))
    if isinstance(M, TensorMatrix):
        E = np.atleast_2d(np.asarray(Nm, dtype=np.float64))
        if M.shape[1] != E.shape[0]:
            raise TensorShapeError("inner dimensions disagree")
        return TensorMatrix(M.m, M.N, tuple(real_right_levels(list(M.levels), E)))
    if isinstance(Nm, TensorMatrix):
        E = np.atleast_2d(np.asarray(M, dtype=np.float64))
        if E.shape[1] != Nm.shape[0]:
            raise TensorShapeError("inner dimensions disagree")
        return TensorMatrix(Nm.m, Nm.N, tuple(np.einsum("il,lja->ija", E, blk) for blk in Nm.levels))
    raise TypeError("at least one factor must be a TensorMatrix")
