"""Bitmask helpers for reuse patterns.

A reuse pattern is a subset of BTS indices ``0..n-1`` stored as an int whose
bit ``i`` is set when BTS ``i`` belongs to the pattern. Every array of length
``2**n`` in the package is indexed by these bitmasks.
"""

from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

MAX_BTS = 16


class ExponentialSizeError(ValueError):
    """Raised when ``2**n`` sized tables would be built above the cap."""


def check_size(n: int, cap: int = MAX_BTS) -> None:
    if n < 1:
        raise ValueError(f"need at least one BTS, got n={n}")
    if n > cap:
        raise ExponentialSizeError(
            f"n={n} exceeds the cap of {cap}: tables have exponential size 2**n"
        )


def full(n: int) -> int:
    return (1 << n) - 1


def singleton(i: int) -> int:
    return 1 << i


def members(bits: int) -> list[int]:
    out = []
    i = 0
    while bits:
        if bits & 1:
            out.append(i)
        bits >>= 1
        i += 1
    return out


def from_members(idx: Iterable[int]) -> int:
    bits = 0
    for i in idx:
        bits |= 1 << int(i)
    return bits


def contains(bits: int, i: int) -> bool:
    return bool((bits >> i) & 1)


def popcount(bits: int) -> int:
    return bin(bits).count("1")


def subsets(bits: int) -> Iterator[int]:
    """All subsets of ``bits`` including 0, in increasing order."""
    sub = 0
    while True:
        yield sub
        if sub == bits:
            return
        sub = (sub - bits) & bits


def membership(n: int) -> np.ndarray:
    """Boolean matrix ``M[i, A]`` that is True iff BTS i is in pattern A."""
    codes = np.arange(1 << n)
    return ((codes[None, :] >> np.arange(n)[:, None]) & 1).astype(bool)


def sizes(n: int) -> np.ndarray:
    return membership(n).sum(axis=0)


def label(bits: int) -> str:
    """1-based set notation, e.g. ``{1,3}``."""
    return "{" + ",".join(str(i + 1) for i in members(bits)) + "}"
