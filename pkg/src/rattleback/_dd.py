"""Vectorized double-double arithmetic (pairs ``hi + lo`` of float64 arrays).

Error-free transformations after Dekker and Knuth; enough for the few
products and sums where float64 cancellation is amplified by ``y**(1-λ)``.
"""
from __future__ import annotations

import numpy as np

_SPLIT = 134217729.0  # 2**27 + 1


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    t = _SPLIT * a
    hi = t - (t - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


class DD:
    __slots__ = ("hi", "lo")

    def __init__(self, hi, lo=None):
        self.hi = np.asarray(hi, dtype=float)
        self.lo = np.zeros_like(self.hi) if lo is None else np.asarray(lo, dtype=float)

    def __add__(self, other):
        other = other if isinstance(other, DD) else DD(other)
        s, e = _two_sum(self.hi, other.hi)
        e = e + self.lo + other.lo
        hi, lo = _two_sum(s, e)
        return DD(hi, lo)

    __radd__ = __add__

    def __neg__(self):
        return DD(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-(other if isinstance(other, DD) else DD(other)))

    def __rsub__(self, other):
        return DD(other) - self

    def __mul__(self, other):
        other = other if isinstance(other, DD) else DD(other)
        p, e = _two_prod(self.hi, other.hi)
        e = e + (self.hi * other.lo + self.lo * other.hi)
        hi, lo = _two_sum(p, e)
        return DD(hi, lo)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = DD(np.ones_like(self.hi))
        for _ in range(int(n)):
            out = out * self
        return out

    def value(self) -> np.ndarray:
        return self.hi + self.lo
