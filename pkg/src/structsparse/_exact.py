"""Exact sums and decimal rendering for mixed int / float / Fraction data."""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable

import numpy as np


def exact_sum(values) -> int | Fraction:
    """Exact sum of a numeric array.

    Integers sum as Python ints.  Floats are split into integer mantissas
    grouped by binary exponent, so the result is the exact rational sum of
    the float values (no rounding at any step).
    """
    a = np.asarray(values)
    if a.size == 0:
        return 0
    if a.dtype == object:
        tot = 0
        for v in a.ravel():
            tot += v if isinstance(v, (int, Fraction)) else Fraction(v)
        return tot
    if np.issubdtype(a.dtype, np.integer) or a.dtype == np.bool_:
        a = a.astype(np.int64, copy=False).ravel()
        if a.size * max(int(np.abs(a).max()), 1) < 2**62:
            return int(a.sum())
        return sum(int(v) for v in a)
    a = a.astype(np.float64, copy=False).ravel()
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite value")
    m, e = np.frexp(a)
    mant = (m * 2.0**53).astype(np.int64)
    e = e.astype(np.int64) - 53
    if np.all(mant == 0):
        return 0
    emin = int(e[mant != 0].min())
    tot = 0
    for ex in np.unique(e[mant != 0]):
        sel = mant[(e == ex) & (mant != 0)]
        hi = (sel >> 26).sum()
        lo = (sel & ((1 << 26) - 1)).sum()
        tot += ((int(hi) << 26) + int(lo)) << int(ex - emin)
    return Fraction(tot) * Fraction(2) ** emin if emin < 0 else Fraction(tot << emin)


def normalize(v):
    """Fractions with denominator 1 become ints."""
    if isinstance(v, Fraction) and v.denominator == 1:
        return int(v.numerator)
    return v


def to_decimal(v) -> str:
    """Exact decimal text for ints and for rationals with a finite expansion."""
    v = normalize(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        v = Fraction(v)
    if not isinstance(v, Fraction):
        raise TypeError(type(v))
    num, den = v.numerator, v.denominator
    d = den
    twos = fives = 0
    while d % 2 == 0:
        d //= 2
        twos += 1
    while d % 5 == 0:
        d //= 5
        fives += 1
    if d != 1:
        return f"{num}/{den}"
    digits = max(twos, fives)
    scaled = abs(num) * 10**digits // den
    sign = "-" if num < 0 else ""
    s = str(scaled).rjust(digits + 1, "0")
    whole, frac = s[:-digits], s[-digits:].rstrip("0")
    return f"{sign}{whole}.{frac}" if frac else f"{sign}{whole}"


def from_decimal(s: str) -> int | Fraction:
    if "/" in s:
        n, d = s.split("/")
        return normalize(Fraction(int(n), int(d)))
    return normalize(Fraction(s))


def ceil_log(x: float, base: float) -> int:
    return math.ceil(math.log(x) / math.log(base))


def fsum_exact(it: Iterable) -> int | Fraction:
    tot = 0
    for v in it:
        tot += v if isinstance(v, (int, Fraction)) else Fraction(v)
    return normalize(tot)
