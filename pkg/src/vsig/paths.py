"""Piecewise-linear paths: container, CSV I/O, refinement and a sample generator."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
from numpy.typing import ArrayLike, NDArray

FINE_FACTOR = 16


@dataclass(frozen=True, eq=False)
class Path:
    """Samples x(t_0), ..., x(t_J) of a piecewise-linear path in R^d."""

    t: NDArray[np.float64]
    x: NDArray[np.float64]

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
            object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)
        if t.ndim != 1 or t.size < 2 or x.shape[0] != t.size:
            raise ValueError("need at least two samples with matching t and x rows")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time column must be strictly increasing")

    @classmethod
    def from_arrays(cls, t: ArrayLike, x: ArrayLike) -> "Path":
        return cls(np.asarray(t, dtype=float), np.asarray(x, dtype=float))

    @property
    def J(self) -> int:
        return self.t.size - 1

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def increments(self) -> NDArray[np.float64]:
        return np.diff(self.x, axis=0)

    def steps(self) -> NDArray[np.float64]:
        return np.diff(self.t)

    def is_uniform(self, rtol: float = 1e-12) -> bool:
        h = self.steps()
        return bool(np.all(np.abs(h - h.mean()) <= rtol * h.mean()))

    def refine(self, lam: int) -> "Path":
        """Split every cell into 2**lam equal parts (the path itself is unchanged)."""
        if lam == 0:
            return self
        k = 2**lam
        frac = np.arange(k) / k
        t = np.concatenate([self.t[:-1, None] + frac[None, :] * self.steps()[:, None]]).ravel()
        x = (self.x[:-1, None, :] + frac[None, :, None] * self.increments()[:, None, :]).reshape(-1, self.d)
        return Path(np.append(t, self.t[-1]), np.vstack([x, self.x[-1]]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(self.d)])
        for ti, xi in zip(self.t, self.x):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in xi])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Path":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0].strip() != "t" or len(rows[0]) < 2:
            raise ValueError("path CSV needs a header 't,x1,...,xd'")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        if data.ndim != 2 or data.shape[1] != len(rows[0]):
            raise ValueError("ragged path CSV")
        return cls(data[:, 0], data[:, 1:])

    def save(self, path: str | FsPath) -> None:
        FsPath(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path: str | FsPath) -> "Path":
        return cls.from_csv(FsPath(path).read_text())


def sample_path(rng: np.random.Generator, J: int, fine_factor: int = FINE_FACTOR) -> Path:
    """One unit-speed path in R^3 on [0, 1] driven by randomly perturbed spherical angles."""
    nu = rng.uniform(1.25, 3.75)
    a_th = rng.uniform(0.2, 1.0)
    a_ph = rng.uniform(0.15, 0.65)
    p_th, p_ph, p_th2, p_ph2 = rng.uniform(0.0, 2 * math.pi, size=4)
    n_fine = fine_factor * J
    tf = np.arange(n_fine) / n_fine
    theta = 2 * math.pi * nu * tf + a_th * np.sin(2 * math.pi * tf + p_th) + 0.35 * a_th * np.sin(6 * math.pi * tf + p_th2)
    phi = math.pi / 2 + a_ph * np.sin(4 * math.pi * tf + p_ph) + 0.25 * a_ph * np.sin(8 * math.pi * tf + p_ph2)
    xdot = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    xf = np.vstack([np.zeros(3), np.cumsum(xdot / n_fine, axis=0)])
    idx = np.arange(J + 1) * fine_factor
    return Path(np.linspace(0.0, 1.0, J + 1), xf[idx])


def gen_paths(seed: int, M: int, J: int, fine_factor: int = FINE_FACTOR) -> list[Path]:
    """M sample paths with J + 1 points each; deterministic in ``seed``."""
    if M < 1 or J < 1:
        raise ValueError("M and J must be positive")
    rng = np.random.default_rng(seed)
    return [sample_path(rng, J, fine_factor) for _ in range(M)]
