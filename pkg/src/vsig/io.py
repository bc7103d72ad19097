"""File formats: kernel-spec JSON, tensor series, run manifests."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path as FsPath
from typing import Any, Sequence

import numpy as np

from .fssk import FsskData
from .kernel_weights import (
    Component,
    Constant,
    Exponential,
    Fractional,
    Gamma,
    MatrixKernelSpec,
    PiecewiseConstant,
    ScalarKernel,
    StateSpace,
)
from .paths import Path
from .quad_scheme import ExponentSet
from .tensor_algebra import TruncatedTensor


class ParseError(ValueError):
    """Malformed input file or JSON document."""


def _num(obj: dict, *keys: str, default: float | None = None) -> float:
    for k in keys:
        if k in obj:
            return float(obj[k])
    if default is None:
        raise ParseError(f"missing field {keys[0]!r} in {obj}")
    return default


def kernel_from_json(obj: dict) -> ScalarKernel:
    """Build a scalar kernel from ``{"type": ..., params}``."""
    if not isinstance(obj, dict) or "type" not in obj:
        raise ParseError("kernel entry needs a 'type' field")
    kind = str(obj["type"]).lower()
    if kind == "constant":
        return Constant(_num(obj, "c", default=1.0))
    if kind == "exponential":
        return Exponential(_num(obj, "alpha", default=1.0), _num(obj, "lam", "lambda"))
    if kind == "fractional":
        return Fractional(_num(obj, "beta"))
    if kind == "gamma":
        return Gamma(_num(obj, "alpha", default=1.0), _num(obj, "beta"), _num(obj, "lam", "lambda"))
    if kind == "piecewise_constant":
        return PiecewiseConstant(tuple(float(g) for g in obj["grid"]), np.asarray(obj["coeffs"], dtype=float))
    if kind == "state_space":
        L = obj.get("Lam", obj.get("Lambda"))
        if L is None:
            raise ParseError("state_space kernel needs 'Lam'")
        return StateSpace(np.atleast_2d(np.asarray(L, dtype=float)), np.asarray(obj["b"], dtype=float))
    raise ParseError(f"unknown kernel type {kind!r}")


def kernel_to_json(k: ScalarKernel) -> dict:
    if isinstance(k, Constant):
        return {"type": "constant", "c": k.c}
    if isinstance(k, Exponential):
        return {"type": "exponential", "alpha": k.alpha, "lam": k.lam}
    if isinstance(k, Fractional):
        return {"type": "fractional", "beta": k.beta}
    if isinstance(k, Gamma):
        return {"type": "gamma", "alpha": k.alpha, "beta": k.beta, "lam": k.lam}
    if isinstance(k, PiecewiseConstant):
        return {"type": "piecewise_constant", "grid": list(k.grid), "coeffs": np.asarray(k.coeffs).tolist()}
    if isinstance(k, StateSpace):
        return {"type": "state_space", "Lam": np.atleast_2d(k.Lam).tolist(), "b": np.asarray(k.b).ravel().tolist()}
    raise TypeError(f"cannot serialize {type(k).__name__}")


def spec_from_json(obj: dict | str, d: int | None = None) -> MatrixKernelSpec:
    """Parse ``{"components": [{"kernel": {...}, "A": [[...]]}, ...]}``.

    ``A`` may be omitted when ``d`` is given, in which case it is the identity.
    """
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e}") from e
    comps = obj.get("components") if isinstance(obj, dict) else None
    if not comps:
        raise ParseError("kernel spec needs a non-empty 'components' list")
    out = []
    for c in comps:
        k = kernel_from_json(c.get("kernel", {}))
        if "A" in c:
            A = np.atleast_2d(np.asarray(c["A"], dtype=float))
        elif d is not None:
            A = np.eye(d)
        else:
            raise ParseError("component without 'A' and no path dimension to default to")
        out.append(Component(k, A))
    return MatrixKernelSpec(tuple(out))


def spec_to_json(spec: MatrixKernelSpec) -> dict:
    return {"components": [{"kernel": kernel_to_json(c.kernel), "A": np.asarray(c.A).tolist()}
                           for c in spec.components]}


def fssk_data_from_json(obj: dict | str, d: int | None = None) -> FsskData:
    """Accept either FsskData JSON (``jordan``/``prony``) or a KernelSpec with state-space form."""
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e}") from e
    if "components" in obj:
        return FsskData.from_spec(spec_from_json(obj, d))
    if "jordan" not in obj and "prony" not in obj:
        raise ParseError("expected 'jordan', 'prony' or 'components'")
    try:
        return FsskData.from_json(obj)
    except KeyError as e:
        raise ParseError(f"missing field {e}") from e


def spec_hash(obj: Any) -> str:
    """SHA-256 of the canonical (sorted-key, compact) JSON encoding."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def exponent_set_from_json(obj: dict) -> ExponentSet:
    return ExponentSet(tuple(obj["rhos"]), tuple(obj["thetas"]))


def read_json(path: str | FsPath) -> Any:
    try:
        return json.loads(FsPath(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from e


def load_path(path: str | FsPath) -> Path:
    """Read a ``t,x1,...,xd`` CSV.

    Raises:
        ParseError: unreadable numbers, missing header or ragged rows.
        ValueError: well-formed file whose time column is not increasing.
    """
    text = FsPath(path).read_text()
    rows = [r for r in text.splitlines() if r.strip()]
    if not rows or rows[0].split(",")[0].strip() != "t" or len(rows[0].split(",")) < 2:
        raise ParseError(f"{path}: path CSV needs a header 't,x1,...,xd'")
    width = len(rows[0].split(","))
    try:
        data = np.array([[float(v) for v in r.split(",")] for r in rows[1:]], dtype=float)
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e
    if data.ndim != 2 or data.shape[1] != width:
        raise ParseError(f"{path}: ragged path CSV")
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite entry")
    return Path(data[:, 0], data[:, 1:])


# ---------------------------------------------------------------------------
# tensor series

_SERIES_MAGIC = b"VSIG"


def series_to_json(series: Sequence[TruncatedTensor]) -> dict:
    m, N = series[0].m, series[0].N
    return {"m": m, "N": N, "series": [t.flat().tolist() for t in series]}


def series_from_json(obj: dict) -> list[TruncatedTensor]:
    m, N = int(obj["m"]), int(obj["N"])
    return [TruncatedTensor.from_flat(np.asarray(f, dtype=float), m, N) for f in obj["series"]]


def series_to_bytes(series: Sequence[TruncatedTensor]) -> bytes:
    """Magic, u32 count, then each tensor in its own binary encoding (fixed length)."""
    body = b"".join(t.to_bytes() for t in series)
    return _SERIES_MAGIC + struct.pack("<I", len(series)) + body


def series_from_bytes(data: bytes) -> list[TruncatedTensor]:
    if data[:4] != _SERIES_MAGIC:
        raise ParseError("not a tensor series file")
    (n,) = struct.unpack_from("<I", data, 4)
    body = data[8:]
    if n == 0:
        return []
    size = len(body) // n
    return [TruncatedTensor.from_bytes(body[i * size:(i + 1) * size]) for i in range(n)]


def write_series(path: str | FsPath, series: Sequence[TruncatedTensor]) -> None:
    p = FsPath(path)
    if p.suffix == ".bin":
        p.write_bytes(series_to_bytes(series))
    else:
        p.write_text(json.dumps(series_to_json(series)))


def read_series(path: str | FsPath) -> list[TruncatedTensor]:
    p = FsPath(path)
    if p.suffix == ".bin":
        return series_from_bytes(p.read_bytes())
    return series_from_json(read_json(p))


def to_jsonable(obj: Any) -> Any:
    """Recursively turn numpy scalars and arrays into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


__all__ = [
    "ParseError",
    "exponent_set_from_json",
    "fssk_data_from_json",
    "kernel_from_json",
    "kernel_to_json",
    "load_path",
    "read_json",
    "read_series",
    "series_from_bytes",
    "series_from_json",
    "series_to_bytes",
    "series_to_json",
    "spec_from_json",
    "spec_hash",
    "spec_to_json",
    "to_jsonable",
    "write_series",
]
