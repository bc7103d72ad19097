"""Dictionary-of-words tensor algebra used as an independent oracle in tests."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from vsig.tensor_algebra import TruncatedTensor


def to_words(t: TruncatedTensor) -> dict[tuple[int, ...], float]:
    out = {(): float(t.levels[0][0])}
    for n in range(1, t.N + 1):
        for w in itertools.product(range(1, t.m + 1), repeat=n):
            out[w] = t.coeff(w)
    return out


def from_words(d: dict, m: int, N: int) -> TruncatedTensor:
    levels = [np.zeros(m**n) for n in range(N + 1)]
    for w, c in d.items():
        idx = 0
        for a in w:
            idx = idx * m + a - 1
        levels[len(w)][idx] += c
    return TruncatedTensor(m, N, tuple(levels))


def concat(x: dict, y: dict, N: int) -> dict:
    out: dict = {}
    for u, a in x.items():
        for v, b in y.items():
            if len(u) + len(v) <= N:
                out[u + v] = out.get(u + v, 0.0) + a * b
    return out


@lru_cache(maxsize=None)
def shuffle_words(u: tuple, v: tuple) -> tuple[tuple, ...]:
    """All interleavings of u and v with multiplicity, by the recursive definition."""
    if not u:
        return (v,)
    if not v:
        return (u,)
    return tuple(w + (u[-1],) for w in shuffle_words(u[:-1], v)) + tuple(w + (v[-1],) for w in shuffle_words(u, v[:-1]))


def shuffle(x: dict, y: dict, N: int) -> dict:
    out: dict = {}
    for u, a in x.items():
        for v, b in y.items():
            if len(u) + len(v) > N:
                continue
            for w in shuffle_words(u, v):
                out[w] = out.get(w, 0.0) + a * b
    return out
