"""Special functions behind the kernel weights.

The regularized incomplete Beta function uses a modified Lentz continued
fraction, the lower incomplete Gamma function a series/continued-fraction
split, and ``math.lgamma`` supplies log-Gamma. All evaluators accept an array
in the argument ``x`` (or ``delta``) with scalar shape parameters.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import ArrayLike, NDArray

_EPS = 1e-16
_TINY = 1e-300
_MAXIT = 2000


def _betacf(x: NDArray[np.float64], a: float, b: float) -> NDArray[np.float64]:
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < _TINY, _TINY, d)
    d = 1.0 / d
    h = d.copy()
    done = np.zeros(x.shape, dtype=bool)
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        h = np.where(done, h, h * d * c)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < _TINY, _TINY, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _TINY, _TINY, c)
        d = 1.0 / d
        delta = d * c
        h = np.where(done, h, h * delta)
        done |= np.abs(delta - 1.0) < _EPS
        if done.all():
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b})")


def reg_inc_beta(x: ArrayLike, a: float, b: float) -> NDArray[np.float64] | float:
    """Regularized incomplete Beta function I_x(a, b).

    Args:
        x: Point(s) in [0, 1].
        a: First shape parameter, > 0.
        b: Second shape parameter, > 0.

    Returns:
        I_x(a, b) with the shape of ``x`` (a float for scalar input).

    Raises:
        ValueError: If a parameter is out of range.
    """
    if not (a > 0 and b > 0):
        raise ValueError(f"reg_inc_beta needs a, b > 0, got a={a}, b={b}")
    xa = np.asarray(x, dtype=np.float64)
    if np.any((xa < 0) | (xa > 1)) or np.any(~np.isfinite(xa)):
        raise ValueError("reg_inc_beta needs x in [0, 1]")
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    if b == 1.0:
        out = xa**a
    elif a == 1.0:
        with np.errstate(divide="ignore"):
            out = -np.expm1(b * np.log1p(-xa))
    else:
        out = np.empty_like(xa)
        out[xa == 0] = 0.0
        out[xa == 1] = 1.0
        inner = (xa > 0) & (xa < 1)
        lbeta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
        direct = inner & (xa < (a + 1.0) / (a + b + 2.0))
        swap = inner & ~direct
        if direct.any():
            xd = xa[direct]
            front = np.exp(a * np.log(xd) + b * np.log1p(-xd) - lbeta)
            out[direct] = front * _betacf(xd, a, b) / a
        if swap.any():
            xs = xa[swap]
            front = np.exp(a * np.log(xs) + b * np.log1p(-xs) - lbeta)
            out[swap] = 1.0 - front * _betacf(1.0 - xs, b, a) / b
    return float(out[0]) if scalar else out


def lower_inc_gamma(a: float, x: ArrayLike) -> NDArray[np.float64] | float:
    """Lower incomplete Gamma function gamma(a, x) = int_0^x e^{-v} v^{a-1} dv (not regularized)."""
    if not a > 0:
        raise ValueError(f"lower_inc_gamma needs a > 0, got {a}")
    xa = np.asarray(x, dtype=np.float64)
    if np.any(xa < 0) or np.any(~np.isfinite(xa)):
        raise ValueError("lower_inc_gamma needs finite x >= 0")
    scalar = xa.ndim == 0
    xa = np.atleast_1d(xa)
    out = np.zeros_like(xa)
    gln = math.lgamma(a)
    ser = (xa > 0) & (xa < a + 1.0)
    cf = xa >= a + 1.0
    if ser.any():
        xs = xa[ser]
        ap = a
        term = np.full_like(xs, 1.0 / a)
        total = term.copy()
        for _ in range(_MAXIT):
            ap += 1.0
            term = term * xs / ap
            total += term
            if np.all(np.abs(term) < np.abs(total) * _EPS):
                break
        else:
            raise ArithmeticError("incomplete gamma series did not converge")
        out[ser] = total * np.exp(-xs + a * np.log(xs))
    if cf.any():
        xc = xa[cf]
        bq = xc + 1.0 - a
        c = np.full_like(xc, 1.0 / _TINY)
        d = 1.0 / bq
        h = d.copy()
        for i in range(1, _MAXIT + 1):
            an = -i * (i - a)
            bq = bq + 2.0
            d = an * d + bq
            d = np.where(np.abs(d) < _TINY, _TINY, d)
            c = bq + an / c
            c = np.where(np.abs(c) < _TINY, _TINY, c)
            d = 1.0 / d
            delta = d * c
            h = h * delta
            if np.all(np.abs(delta - 1.0) < _EPS):
                break
        else:
            raise ArithmeticError("incomplete gamma continued fraction did not converge")
        upper = np.exp(-xc + a * np.log(xc)) * h
        out[cf] = math.exp(gln) - upper
    return float(out[0]) if scalar else out


def varphi_n(delta: ArrayLike, n: int) -> NDArray[np.float64] | float:
    """phi_n(delta) = (1/(n-1)!) int_0^1 e^{delta(1-u)} u^{n-1} du for delta >= 0.

    The Taylor series sum_k delta^k/(n+k)! has positive terms, so it is used
    whenever the upward recurrence phi_{k+1} = (phi_k - 1/k!)/delta would
    cancel, i.e. for delta < max(0.5, n + 1).
    """
    if n < 1:
        raise ValueError("varphi_n needs n >= 1")
    da = np.asarray(delta, dtype=np.float64)
    if np.any(da < 0):
        raise ValueError("varphi_n needs delta >= 0")
    scalar = da.ndim == 0
    da = np.atleast_1d(da)
    out = np.empty_like(da)
    small = da < max(0.5, n + 1.0)
    if small.any():
        ds = da[small]
        term = np.full_like(ds, 1.0 / math.factorial(n))
        total = term.copy()
        k = 0
        while True:
            k += 1
            term = term * ds / (n + k)
            total += term
            if np.all(term <= total * _EPS) or k > 4000:
                break
        out[small] = total
    if (~small).any():
        dl = da[~small]
        phi = np.expm1(dl) / dl
        for k in range(1, n):
            phi = (phi - 1.0 / math.factorial(k)) / dl
        out[~small] = phi
    return float(out[0]) if scalar else out
