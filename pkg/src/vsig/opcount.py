"""Analytic floating-point operation counters.

Counts are tallied per primitive call (multiplies plus adds) from the operand
shapes, not measured by hardware. Counting is off unless a ``counting`` block
is active, so hot paths pay a single ``None`` check.
"""

from __future__ import annotations

import contextlib
from collections import Counter
from typing import Iterator

_stack: list[Counter[str]] = []


def enabled() -> bool:
    return bool(_stack)


def add(category: str, n: float) -> None:
    """Record ``n`` floating operations under ``category`` in every open block."""
    if _stack:
        for c in _stack:
            c[category] += int(n)


@contextlib.contextmanager
def counting() -> Iterator[Counter[str]]:
    """Count operations inside the block; the yielded counter stays valid after.

    Example:
        >>> with counting() as c:
        ...     add("demo", 3)
        >>> c["demo"]
        3
    """
    c: Counter[str] = Counter()
    _stack.append(c)
    try:
        yield c
    finally:
        _stack.remove(c)


def total(c: Counter[str]) -> int:
    return int(sum(c.values()))
