"""Tropical convolutions of monotone arrays and their sparse approximations.

A monotone array is compressed into a *representative sequence* (RS): a short
list of ``(index, value)`` steps whose values grow geometrically.  Two such
sequences are convolved directly, without expanding them, and the result is
again a short sequence whose staircase stays within a ``(1 + beta)`` factor of
the exact convolution.

Values may be Python ints, ``Fraction`` or floats in the reference routines;
the fast routines work on integers only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _kernels as K

__all__ = [
    "RepSeq",
    "StepHashTable",
    "completion",
    "head_completion",
    "exact_minplus",
    "exact_maxplus",
    "rs_minplus",
    "rs_maxplus",
    "fast_rs_minplus",
    "fast_rs_maxplus",
    "thin_tail",
    "thin_head",
    "dyadic",
    "is_rs",
    "as_dense_pairs",
]


@dataclass(frozen=True)
class RepSeq:
    """Sparse monotone staircase.

    Parameters
    ----------
    indices : sequence of int
        Strictly increasing step positions.
    values : sequence
        Non-decreasing step values with ``values[v+1] >= (1+alpha) values[v]``.
    alpha : float or Fraction
        Gap parameter of the sequence.
    backptrs : list of (int, int), optional
        For each entry, the positions in the two input sequences it came from.
    """

    indices: tuple
    values: tuple
    alpha: float | Fraction = 0
    backptrs: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        vals = tuple(self.values)
        if len(idx) != len(vals):
            raise ValueError("indices and values differ in length")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        if self.backptrs is not None:
            object.__setattr__(self, "backptrs", tuple(tuple(int(x) for x in b) for b in self.backptrs))

    @classmethod
    def from_pairs(cls, pairs, alpha=0, backptrs=None) -> "RepSeq":
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs), alpha, backptrs)

    @property
    def pairs(self) -> list:
        return list(zip(self.indices, self.values))

    def __len__(self):
        return len(self.indices)

    @property
    def max_index(self) -> int:
        return self.indices[-1]

    @property
    def max_value(self):
        return self.values[-1]

    def validate(self, alpha=None) -> None:
        """Raise ``ValueError`` unless the sequence is a valid ``alpha``-RS."""
        if not self.indices:
            raise ValueError("empty sequence")
        if not is_rs(self, self.alpha if alpha is None else alpha):
            raise ValueError("not a representative sequence for the given gap")


def _exact(x):
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, Fraction):
        return x
    return Fraction(float(x))


def is_rs(seq: RepSeq, alpha) -> bool:
    """Exact check of index order, non-negativity and the geometric gap."""
    a = _exact(alpha)
    idx = seq.indices
    vals = [_exact(v) for v in seq.values]
    if not idx or idx[0] < 0 or vals[0] < 0:
        return False
    for v in range(len(idx) - 1):
        if idx[v + 1] <= idx[v]:
            return False
        if vals[v + 1] < (1 + a) * vals[v]:
            return False
    return True


def completion(seq: RepSeq) -> np.ndarray:
    """Dense staircase rounding each position up to the next step value.

    Examples
    --------
    >>> completion(RepSeq((0, 1, 3), (0, 1, 2.5))).tolist()
    [0.0, 1.0, 2.5, 2.5]
    """
    if len(seq) == 0:
        raise ValueError("empty sequence")
    out = np.empty(seq.max_index + 1, dtype=_dtype(seq.values))
    lo = 0
    for i, v in zip(seq.indices, seq.values):
        out[lo:i + 1] = v
        lo = i + 1
    return out


def head_completion(seq: RepSeq, cardinality: int) -> np.ndarray:
    """Dense staircase rounding each position down to the previous step value.

    Positions before the first step are 0; positions after the last step keep
    the last value up to ``cardinality``.
    """
    if len(seq) == 0:
        raise ValueError("empty sequence")
    if cardinality < seq.max_index:
        raise ValueError("cardinality below the largest index")
    out = np.zeros(cardinality + 1, dtype=_dtype(seq.values))
    idx = list(seq.indices) + [cardinality + 1]
    for v in range(len(seq)):
        out[idx[v]:idx[v + 1]] = seq.values[v]
    return out


def _dtype(values):
    if all(isinstance(v, (int, np.integer)) for v in values):
        return np.int64 if all(abs(int(v)) < 2**62 for v in values) else object
    if any(isinstance(v, Fraction) for v in values):
        return object
    return np.float64


def _conv(a, b, op):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input")
    dt = object if object in (a.dtype, b.dtype) else np.result_type(a.dtype, b.dtype)
    out = np.empty(a.size + b.size - 1, dtype=dt)
    filled = np.zeros(out.size, dtype=bool)
    for i in range(a.size):
        seg = a[i] + b
        sl = slice(i, i + b.size)
        cur = out[sl]
        new = np.where(filled[sl], op(cur, seg), seg) if dt != object else [
            op(c, s) if f else s for c, s, f in zip(cur, seg, filled[sl])]
        out[sl] = new
        filled[sl] = True
    return out


def exact_minplus(A, B) -> np.ndarray:
    """``s[t] = min_i a[i] + b[t-i]``, by the quadratic loop.

    >>> exact_minplus([0, 1, 5], [0, 2, 3]).tolist()
    [0, 1, 3, 4, 8]
    """
    return _conv(A, B, lambda x, y: np.minimum(x, y) if not isinstance(x, Fraction) else min(x, y))


def exact_maxplus(A, B) -> np.ndarray:
    """``s[t] = max_i a[i] + b[t-i]``, by the quadratic loop."""
    return _conv(A, B, lambda x, y: np.maximum(x, y) if not isinstance(x, Fraction) else max(x, y))


def thin_tail(pairs, beta, backptrs=None):
    """Backward greedy thinning of an index-sorted candidate list.

    Keeps the last entry, then every earlier entry whose value is at most the
    last kept value divided by ``1 + beta``.  Returns ``(kept_pairs, kept_bp)``.
    """
    b = _exact(beta)
    keep = []
    s = None
    for e in range(len(pairs) - 1, -1, -1):
        v = _exact(pairs[e][1])
        if s is None or v * (1 + b) <= s:
            keep.append(e)
            s = v
            if s == 0:
                break
    keep.reverse()
    out = [pairs[e] for e in keep]
    bp = None if backptrs is None else [backptrs[e] for e in keep]
    return out, bp


def thin_head(pairs, beta, backptrs=None):
    """Forward greedy thinning: keep an entry only when it exceeds (1+beta) x last kept."""
    b = _exact(beta)
    keep = []
    k = None
    for e in range(len(pairs)):
        v = _exact(pairs[e][1])
        if k is None or v > (1 + b) * k:
            keep.append(e)
            k = v
    out = [pairs[e] for e in keep]
    bp = None if backptrs is None else [backptrs[e] for e in keep]
    return out, bp


def _all_pairs(A: RepSeq, B: RepSeq, better):
    best = {}
    for u, (i, a) in enumerate(zip(A.indices, A.values)):
        for w, (j, b) in enumerate(zip(B.indices, B.values)):
            l = i + j
            v = a + b
            if l not in best or better(v, best[l][0]):
                best[l] = (v, u, w)
    ks = sorted(best)
    return [(l, best[l][0]) for l in ks], [(best[l][1], best[l][2]) for l in ks]


def rs_minplus(alpha, beta, A: RepSeq, B: RepSeq) -> RepSeq:
    """Reference approximate (min,+) convolution of two sequences.

    Forms all pairwise sums, keeps the minimum per index and thins backward so
    the result is a ``beta``-RS whose completion lies between the exact
    convolution of the completions and ``1 + beta`` times it.
    """
    if len(A) == 0 or len(B) == 0:
        raise ValueError("empty sequence")
    pairs, bp = _all_pairs(A, B, lambda v, cur: v < cur)
    out, bp = thin_tail(pairs, beta, bp)
    return RepSeq.from_pairs(out, beta, bp)


def rs_maxplus(alpha, beta, A: RepSeq, B: RepSeq, cardinalities=None) -> RepSeq:
    """Reference approximate (max,+) convolution, the forward-thinning mirror of :func:`rs_minplus`.

    A missing entry at index 0 is treated as ``(0, 0)``, which is what the
    head-completion already assumes.
    """
    A = _with_zero(A)
    B = _with_zero(B)
    pairs, bp = _all_pairs(A, B, lambda v, cur: v > cur)
    out, bp = thin_head(pairs, beta, bp)
    return RepSeq.from_pairs(out, beta, bp)


def _with_zero(S: RepSeq) -> RepSeq:
    if S.indices[0] == 0:
        return S
    return RepSeq((0,) + S.indices, (0,) + S.values, S.alpha)


def dyadic(beta, vmax: int = 1) -> tuple[int, int]:
    """Round ``beta`` down to ``p / q`` with ``q`` a power of two.

    ``q`` is as large as possible (at most 2**30) while ``2 * vmax * 2q`` stays
    inside int64, so gap tests on values up to ``vmax`` cannot overflow.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    vmax = max(int(vmax), 1)
    s = min(30, 60 - vmax.bit_length())
    if s < 1:
        raise OverflowError("values too large for exact int64 gap tests")
    q = 1 << s
    p = math.floor(Fraction(beta) * q) if not isinstance(beta, float) else math.floor(beta * q)
    if p < 1:
        raise ValueError(f"beta={beta} is below the representable resolution 1/{q}")
    return p, q


def halving_window(p: int, q: int) -> int:
    """Smallest ``tau`` with ``(1 + p/q)**tau >= 2``, rounded up when in doubt.

    In a sequence whose consecutive values grow by at least ``1 + p/q``,
    values at least halve every ``tau`` positions.  Never exceeds
    ``ceil(q / p)``.
    """
    x = p / q
    t = math.ceil(math.log(2) / math.log1p(x))
    if t * math.log1p(x) - math.log(2) < 1e-9:
        t += 1
    return max(1, min(t, -(-q // p)))


class StepHashTable:
    """Map ``key -> last position whose value is <= (1+beta)**key``.

    Keys run over ``[-1, ceil(log_{1+beta} U)]``.  :meth:`lookup` answers
    "last position with value <= theta" with the two-key rule: try the ceiling
    key, fall back to the floor key.
    """

    def __init__(self, values, beta):
        self.values = [_exact(v) for v in values]
        self.base = 1 + _exact(beta)
        top = self.values[-1]
        kmax = 0
        while self.base ** kmax < top:
            kmax += 1
        self.table = {}
        w = -1
        for key in range(-1, kmax + 1):
            thr = self.base ** key
            while w + 1 < len(self.values) and self.values[w + 1] <= thr:
                w += 1
            self.table[key] = w
        self.kmax = kmax

    def key_range(self):
        return -1, self.kmax

    def _ceil_log(self, theta):
        # smallest key with base**key >= theta (clamped to the table)
        if theta <= 0:
            return -1
        key = -1
        while key < self.kmax and self.base ** key < theta:
            key += 1
        return key

    def lookup(self, theta) -> int:
        theta = _exact(theta)
        if theta < 0:
            return -1
        c = self._ceil_log(theta)
        w = self.table[c]
        if w >= 0 and self.values[w] > theta:
            w = self.table[max(c - 1, -1)]
        while w >= 0 and self.values[w] > theta:
            w -= 1
        return w


def _int_arrays(S: RepSeq):
    vals = []
    for v in S.values:
        if isinstance(v, float) and not v.is_integer():
            raise ValueError("fast convolution needs integer values")
        if isinstance(v, Fraction) and v.denominator != 1:
            raise ValueError("fast convolution needs integer values")
        iv = int(v)
        if iv != 0 and iv < 1:
            raise ValueError("values must be 0 or at least 1")
        vals.append(iv)
    if any(v < 0 for v in vals):
        raise ValueError("values must be non-negative")
    return np.asarray(S.indices, np.int64), np.asarray(vals, np.int64)


def _check_params(alpha, beta):
    if not (0 < beta <= alpha <= 1):
        raise ValueError("need 0 < beta <= alpha <= 1")


def fast_rs_minplus(alpha, beta, A: RepSeq, B: RepSeq, lookup: str = "auto",
                    verbatim: bool = False) -> RepSeq:
    """Approximate (min,+) convolution by threshold descent.

    Starting from the sum of the two last entries, repeatedly look for the
    largest index whose pair sum is at most the current value divided by
    ``1 + beta``.  Only ``ceil(1/alpha) + 1`` candidates per side need
    checking because values at least halve every ``ceil(1/alpha)`` steps.

    Parameters
    ----------
    alpha, beta : float
        Input gap and output gap, ``0 < beta <= alpha <= 1``.  ``beta`` is
        rounded down to a dyadic rational; the result's ``alpha`` field holds
        the value actually used.
    lookup : {"auto", "hash", "search"}
        Step-hash lookups, binary-search lookups, or pick by input size.
    verbatim : bool
        Skip the zero offset in the first candidate loop.  Exists for
        comparison only; that variant can miss the best pair.
    """
    _check_params(alpha, beta)
    ai, av = _int_arrays(A)
    bi, bv = _int_arrays(B)
    A.validate(alpha)
    B.validate(alpha)
    vmax = int(av[-1] + bv[-1])
    p, q = dyadic(beta, vmax)
    pa, qa = dyadic(alpha, vmax) if alpha > beta else (p, q)
    tau = halving_window(pa, qa)
    cap = len(av) + len(bv) + 2 + int(math.log(max(vmax, 1)) / math.log1p(p / q)) + 2
    cap = min(cap, int(ai[-1] + bi[-1]) + 2)
    oi, ov, o1, o2 = (np.empty(cap, np.int64) for _ in range(4))
    mode = {"auto": -1, "search": 0, "hash": 1}[lookup]
    n = K.descent_min(ai, av, len(av), bi, bv, len(bv), p, q, tau, mode, verbatim, oi, ov, o1, o2)
    return RepSeq(oi[:n].tolist(), ov[:n].tolist(), Fraction(p, q), list(zip(o1[:n].tolist(), o2[:n].tolist())))


def fast_rs_maxplus(alpha, beta, A: RepSeq, B: RepSeq, cardinalities=None,
                    lookup: str = "auto") -> RepSeq:
    """Approximate (max,+) convolution by threshold ascent.

    The head-completion of the result is at most the exact (max,+)
    convolution of the inputs' head-completions and at least ``1/(1+beta)``
    of it.  Output indices above ``M1 + M2`` are not produced.  Back-pointers
    of ``-1`` refer to the implicit ``(0, 0)`` entry of an input that did not
    start at index 0.
    """
    _check_params(alpha, beta)
    shift = []
    arrs = []
    for S in (A, B):
        i, v = _int_arrays(S)
        S.validate(alpha)
        if i[0] != 0:
            i = np.concatenate([[0], i])
            v = np.concatenate([[0], v])
            shift.append(1)
        else:
            shift.append(0)
        arrs.append((i, v))
    (ai, av), (bi, bv) = arrs
    if cardinalities is not None:
        M1, M2 = cardinalities
        if M1 < A.max_index or M2 < B.max_index:
            raise ValueError("cardinality below the largest index")
        kcap = int(M1) + int(M2)
    else:
        kcap = int(ai[-1] + bi[-1])
    vmax = int(av[-1] + bv[-1])
    p, q = dyadic(beta, vmax)
    pa, qa = dyadic(alpha, vmax) if alpha > beta else (p, q)
    tau = halving_window(pa, qa)
    cap = min(len(av) + len(bv) + 2 + int(math.log(max(vmax, 1)) / math.log1p(p / q)) + 2,
              int(ai[-1] + bi[-1]) + 2)
    oi, ov, o1, o2 = (np.empty(cap, np.int64) for _ in range(4))
    mode = {"auto": -1, "search": 0, "hash": 1}[lookup]
    n = K.ascent_max(ai, av, len(av), bi, bv, len(bv), p, q, tau, mode, kcap, oi, ov, o1, o2)
    bp = [(u - shift[0], w - shift[1]) for u, w in zip(o1[:n].tolist(), o2[:n].tolist())]
    idx, val = oi[:n].tolist(), ov[:n].tolist()
    return RepSeq(idx, val, Fraction(p, q), bp)


def as_dense_pairs(values: Sequence) -> RepSeq:
    """Every position of a dense array as an entry (a 0-RS)."""
    return RepSeq(tuple(range(len(values))), tuple(values), 0)
