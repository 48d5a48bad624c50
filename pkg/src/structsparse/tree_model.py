"""Head and tail projections onto rooted subtrees of a perfect b-ary tree.

Signals live on a heap-ordered perfect tree: node ``h`` has children
``b*h + 1 .. b*h + b``.  Levels are counted from the leaves (level 1) up to
the root (level ``L``), so the nodes of level ``i`` form one contiguous block
of the heap array.

The tail problem keeps a rooted subtree of at most ``k`` nodes while
minimizing the weight left out; the head problem maximizes the weight kept.
Besides an exact ``O(nk)`` dynamic program this module provides:

* :func:`fast_tail_tree`   -- level-by-level approximate (min,+) convolutions
* :func:`linear_tail_tree` -- the same after discarding light subtrees when k is small
* :func:`linear_head_tree` -- approximate (max,+) convolutions with a two-part
  assembly of the mid-level arrays

All three first map the weights to bounded integers relative to a cheap
baseline solution, so every comparison inside the compiled kernels is exact.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from ._exact import exact_sum, normalize
from .rs_conv import RepSeq, dyadic, fast_rs_maxplus, halving_window, fast_rs_minplus, rs_maxplus, rs_minplus

__all__ = [
    "TreeSignal",
    "ProjectionBudget",
    "LevelSchedule",
    "SubtreeSolution",
    "DiscretizationContext",
    "LookupTable",
    "lp_transform",
    "is_rooted_subtree",
    "exact_tree_projection",
    "exact_arrays",
    "tail_baseline",
    "head_baseline",
    "discretize",
    "level_schedule",
    "fast_tail_tree",
    "linear_tail_tree",
    "linear_head_tree",
    "find_tree",
    "bary_convolve",
    "bucket_weights",
]

EXACT_THRESHOLD = 63


# --------------------------------------------------------------------------
# data types


@dataclass
class TreeSignal:
    """Weights of a perfect b-ary tree in heap (level) order.

    Inputs whose length is not ``(b**L - 1)/(b - 1)`` are zero-padded.
    """

    weights: np.ndarray
    b: int = 2
    p: float = 1.0

    def __post_init__(self):
        if self.b < 2:
            raise ValueError("arity must be at least 2")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        w = np.asarray(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d array")
        if w.dtype == object:
            w = np.asarray([float(v) for v in w])
        if not np.issubdtype(w.dtype, np.number):
            raise ValueError("weights must be numeric")
        if np.issubdtype(w.dtype, np.floating) and not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        n = 1
        while n < w.size:
            n = n * self.b + 1
        if n != w.size:
            w = np.concatenate([w, np.zeros(n - w.size, dtype=w.dtype)])
        self.weights = w

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def levels(self) -> int:
        return _levels(self.n, self.b)

    def level_range(self, i: int) -> tuple[int, int]:
        """Heap positions ``[start, stop)`` of level ``i`` (leaves are level 1)."""
        return _level_range(self.levels, i, self.b)


@dataclass(frozen=True)
class ProjectionBudget:
    k: int
    epsilon: float = 0.1
    delta: float = 0.05

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")


@dataclass
class LevelSchedule:
    xi: int
    eta: int
    eps_prime: float
    eps_levels: dict = field(default_factory=dict)

    def eps_i(self, i: int) -> float:
        return self.eps_levels[i]


@dataclass
class SubtreeSolution:
    """A rooted subtree with its kept (head) and discarded (tail) weight.

    ``support`` holds sorted heap positions.  ``head_value + tail_value``
    equals the total weight exactly.
    """

    support: np.ndarray
    head_value: int | Fraction
    tail_value: int | Fraction
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return int(self.support.size)


@dataclass
class DiscretizationContext:
    """Parameters of a weight rounding relative to a baseline value ``W``."""

    W: int | Fraction
    kind: str
    epsilon: float
    n: int
    k: int
    log_n: int
    x_max: float | None = None


# --------------------------------------------------------------------------
# shape helpers


def _levels(n: int, b: int) -> int:
    L = 0
    m = 0
    while m < n:
        m = m * b + 1
        L += 1
    if m != n:
        raise ValueError(f"{n} is not the size of a perfect {b}-ary tree")
    return L


def _size(i: int, b: int) -> int:
    return (b**i - 1) // (b - 1)


def _level_range(L: int, i: int, b: int) -> tuple[int, int]:
    d = L - i
    return _size(d, b), _size(d + 1, b)


def _subtree_sums(w: np.ndarray, b: int) -> np.ndarray:
    L = _levels(w.size, b)
    u = np.array(w, dtype=object if w.dtype == object else w.dtype, copy=True)
    for i in range(2, L + 1):
        s, e = _level_range(L, i, b)
        cs, ce = _level_range(L, i - 1, b)
        u[s:e] += u[cs:ce].reshape(-1, b).sum(axis=1)
    return u


def is_rooted_subtree(support, n: int, b: int = 2) -> bool:
    """True when every selected node's parent is selected too."""
    sel = np.zeros(n, dtype=bool)
    s = np.asarray(sorted(set(int(v) for v in support)), dtype=np.int64)
    if s.size == 0:
        return True
    if s[0] != 0 or s[-1] >= n:
        return False
    sel[s] = True
    kids = s[s > 0]
    return bool(np.all(sel[(kids - 1) // b]))


def _solution(w: np.ndarray, mask_or_support, total=None, **meta) -> SubtreeSolution:
    if isinstance(mask_or_support, np.ndarray) and mask_or_support.dtype == bool:
        sup = np.flatnonzero(mask_or_support)
    else:
        sup = np.asarray(sorted(set(int(v) for v in mask_or_support)), dtype=np.int64)
    head = normalize(exact_sum(w[sup]))
    tot = normalize(exact_sum(w)) if total is None else total
    return SubtreeSolution(sup, head, normalize(tot - head), dict(meta))


def lp_transform(T: TreeSignal, p: float | None = None) -> TreeSignal:
    """Replace weights by ``|x|**p`` (``p`` defaults to the signal's own)."""
    p = T.p if p is None else p
    w = np.abs(T.weights)
    if p != 1:
        w = w.astype(np.float64) ** p
    return TreeSignal(w, T.b, 1.0)


def _prune_depth(T: TreeSignal, k: int) -> TreeSignal:
    # nodes at depth >= k can never be part of a rooted subtree with k nodes
    if k >= T.levels:
        return T
    return TreeSignal(T.weights[:_size(k, T.b)], T.b, T.p)


# --------------------------------------------------------------------------
# exact dynamic program


def _maxconv_trunc(A: np.ndarray, B: np.ndarray, K_: int):
    """Row-wise truncated (max,+) convolution with arg-split, ``A, B`` of shape (N, *)."""
    N, la = A.shape
    lb = B.shape[1]
    lo = min(la + lb - 1, K_ + 1)
    out = np.full((N, lo), -np.inf if A.dtype.kind == "f" else np.iinfo(np.int64).min // 4, dtype=A.dtype)
    arg = np.zeros((N, lo), dtype=np.int64)
    for i in range(min(la, lo)):
        m = min(lb, lo - i)
        cand = A[:, i:i + 1] + B[:, :m]
        cur = out[:, i:i + m]
        better = cand > cur
        out[:, i:i + m] = np.where(better, cand, cur)
        arg[:, i:i + m] = np.where(better, i, arg[:, i:i + m])
    return out, arg


def _head_dp(w: np.ndarray, b: int, k: int):
    """Bottom-up head arrays truncated at ``k``; returns root array and split tables."""
    L = _levels(w.size, b)
    dt = np.float64 if w.dtype.kind == "f" else np.int64
    w = w.astype(dt)
    s, e = _level_range(L, 1, b)
    H = np.zeros((e - s, min(1, k) + 1), dtype=dt)
    if k >= 1:
        H[:, 1] = w[s:e]
    splits = {1: None}
    for i in range(2, L + 1):
        s, e = _level_range(L, i, b)
        N = e - s
        ch = H.reshape(N, b, -1)
        acc = ch[:, 0, :]
        args = []
        for c in range(1, b):
            acc, arg = _maxconv_trunc(acc, ch[:, c, :], k - 1)
            args.append(arg)
        newH = np.empty((N, min(acc.shape[1] + 1, k + 1)), dtype=dt)
        newH[:, 0] = 0
        newH[:, 1:] = acc[:, :newH.shape[1] - 1] + w[s:e, None]
        H = newH
        splits[i] = args
    return H[0], splits


def _head_reconstruct(w: np.ndarray, b: int, splits, budget: int) -> np.ndarray:
    L = _levels(w.size, b)
    mask = np.zeros(w.size, dtype=bool)
    stack = [(L, 0, budget)]
    while stack:
        i, j, l = stack.pop()
        if l <= 0:
            continue
        s, _ = _level_range(L, i, b)
        mask[s + j] = True
        if i == 1:
            continue
        rem = l - 1
        parts = []
        args = splits[i]
        for c in range(b - 1, 0, -1):
            if rem <= 0:
                parts.append(0)
                continue
            a = args[c - 1]
            r = min(rem, a.shape[1] - 1)
            left = int(a[j, r])
            parts.append(r - left)
            rem = left
        parts.append(rem)
        parts.reverse()
        for c in range(b):
            stack.append((i - 1, b * j + c, parts[c]))
    return mask


def exact_tree_projection(T: TreeSignal, k: int, mode: str = "tail") -> SubtreeSolution:
    """Optimal rooted subtree with at most ``k`` nodes.

    The same subtree is optimal for head and tail, so ``mode`` only labels the
    objective in the metadata.  Runs the truncated ``O(nk)`` dynamic program.
    """
    if mode not in ("head", "tail"):
        raise ValueError("mode must be 'head' or 'tail'")
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer")
    k = int(k)
    Tp = lp_transform(T)
    w = Tp.weights
    work = _prune_depth(Tp, k).weights
    kk = min(k, work.size)
    H, splits = _head_dp(work, T.b, kk)
    best = int(np.argmax(H))
    mask = _head_reconstruct(work, T.b, splits, best)
    full = np.zeros(w.size, dtype=bool)
    full[:work.size] = mask
    return _solution(w, full, algorithm="exact", objective=mode)


def exact_arrays(weights: Sequence, b: int = 2, mode: str = "tail") -> np.ndarray:
    """Full exact DP array of one subtree given in level order.

    ``mode='head'``: entry ``l`` is the best kept weight with at most ``l`` nodes.
    ``mode='tail'``: entry ``l`` is the least discarded weight when at least
    ``l`` nodes are removed.
    """
    w = np.asarray(weights)
    if w.dtype == object:
        w = w.astype(np.float64)
    H, _ = _head_dp(w, b, w.size)
    if mode == "head":
        return H
    tot = w.sum()
    return tot - H[::-1]


# --------------------------------------------------------------------------
# baselines and discretization


def _log_n(T: TreeSignal) -> int:
    return max(T.levels, 1)


def tail_baseline(T: TreeSignal, k: int) -> tuple[SubtreeSolution, int | Fraction]:
    """Keep the ``k`` nodes with the largest subtree sums (ties: heap order).

    Parents always outrank their children, so the kept set is a rooted
    subtree.  Its tail ``W`` is at most ``(L - 1)`` times optimal.
    """
    Tp = lp_transform(T)
    w = Tp.weights
    u = _subtree_sums(w, T.b)
    sol = _solution(w, _top_k(u, k), algorithm="tail_baseline")
    return sol, sol.tail_value


def _top_k(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries, ties going to the smaller index."""
    k = min(k, v.size)
    if k == v.size:
        return np.arange(k)
    thr = np.partition(v, v.size - k)[v.size - k]
    above = np.flatnonzero(v > thr)
    ties = np.flatnonzero(v == thr)[:k - above.size]
    return np.sort(np.concatenate([above, ties]))


def head_baseline(T: TreeSignal, k: int) -> tuple[SubtreeSolution, int | Fraction]:
    """Close the ``max(1, k // L)`` heaviest nodes upward to the root.

    ``L`` is the depth after discarding levels no rooted ``k``-subtree can
    reach, so the closure has at most ``k`` nodes.
    """
    Tp = lp_transform(T)
    w = Tp.weights
    work = _prune_depth(Tp, k)
    L = work.levels
    q = max(1, k // L)
    ww = work.weights
    top = _top_k(ww, q)
    mask = np.zeros(w.size, dtype=bool)
    for h in top.tolist():
        while not mask[h]:
            mask[h] = True
            if h == 0:
                break
            h = (h - 1) // T.b
    sol = _solution(w, mask, algorithm="head_baseline")
    return sol, sol.head_value


def discretize(T: TreeSignal, context: DiscretizationContext) -> TreeSignal:
    """Round weights to bounded integers relative to the baseline value ``W``.

    * ``tail``: ``ceil(x n log n / (eps W))`` for ``x <= W``; heavier nodes get
      ``ceil(n log n / eps) + n`` inflated by the whole error budget, so no
      approximate solution can afford to remove them.
    * ``head``: ``floor(k x / (eps W))``.
    * ``head-local``: ``floor(x log^2 n / (eps x_max))``.
    """
    w = lp_transform(T).weights
    c = context
    if c.kind == "tail":
        if c.W == 0:
            raise ValueError("W = 0: the baseline is already optimal")
        W = Fraction(c.W) if not isinstance(c.W, (int, Fraction)) else c.W
        num = Fraction(c.n * c.log_n) / (Fraction(c.epsilon) * W)
        # heavier than any solution the later stages may return, so such
        # nodes are never removed
        base = math.ceil(Fraction(c.n * c.log_n) / Fraction(c.epsilon)) + c.n
        slack = Fraction((1 + c.epsilon) ** (1 / TAIL_SHARES["disc"])) * Fraction(1000001, 1000000)
        big = math.ceil(slack * base) + 1
        over = _greater(w, W)
        out = _scale_round(np.where(over, 0, w), num, up=True)
        out[over] = big
        return TreeSignal(out, T.b, 1.0)
    if c.kind == "head":
        if c.W == 0:
            raise ValueError("W = 0: every subtree has head 0")
        W = Fraction(c.W) if not isinstance(c.W, (int, Fraction)) else c.W
        num = Fraction(c.k) / (Fraction(c.epsilon) * W)
        return TreeSignal(_scale_round(w, num, up=False), T.b, 1.0)
    if c.kind == "head-local":
        if not c.x_max:
            return TreeSignal(np.zeros(w.size, np.int64), T.b, 1.0)
        num = Fraction(c.log_n**2) / (Fraction(c.epsilon) * Fraction(c.x_max))
        return TreeSignal(_scale_round(w, num, up=False), T.b, 1.0)
    raise ValueError(f"unknown discretization kind {c.kind!r}")


def _greater(w: np.ndarray, W) -> np.ndarray:
    if np.issubdtype(w.dtype, np.integer):
        # for integers, v > W exactly when v > floor(W)
        f = math.floor(W)
        if f >= 2**63 - 1:
            return np.zeros(w.size, dtype=bool)
        if f < -2**63:
            return np.ones(w.size, dtype=bool)
        return w > np.int64(f)
    return np.array([Fraction(float(v)) > W for v in w]) if w.size < 4096 else _fgreater(w, W)


def _fgreater(w, W):
    # float comparison, corrected exactly near the boundary
    wf = float(W)
    out = w > wf
    near = np.flatnonzero(np.isclose(w, wf, rtol=1e-12, atol=0))
    for h in near.tolist():
        out[h] = Fraction(float(w[h])) > W
    return out


def _scale_round(w: np.ndarray, factor: Fraction, up: bool) -> np.ndarray:
    """``ceil`` or ``floor`` of ``w * factor`` computed exactly, as int64."""
    num, den = factor.numerator, factor.denominator
    if np.issubdtype(w.dtype, np.integer) and w.size:
        big = int(np.abs(w).max()) * abs(num)
        if big < 2**62 and den < 2**62:
            prod = w.astype(np.int64) * np.int64(num)
            return -((-prod) // np.int64(den)) if up else prod // np.int64(den)
    f = float(factor)
    approx = w.astype(np.float64) * f
    if approx.size and approx.max() > 2**62:
        raise OverflowError("discretized weights exceed int64")
    r = np.ceil(approx) if up else np.floor(approx)
    out = r.astype(np.int64)
    # exact correction wherever the float product is close to an integer
    frac = np.abs(approx - np.round(approx))
    near = np.flatnonzero(frac <= 1e-6 * np.maximum(1.0, np.abs(approx)))
    if near.size:
        for h in near.tolist():
            x = w[h]
            xv = Fraction(int(x)) if np.issubdtype(w.dtype, np.integer) else Fraction(float(x))
            v = xv * num / den
            out[h] = math.ceil(v) if up else math.floor(v)
    return out


def bucket_weights(x, eps: float) -> np.ndarray:
    """Round positive integer weights up to the grid ``ceil((1+eps)**j)``."""
    x = np.asarray(x, dtype=np.int64)
    out = x.copy()
    pos = x > 0
    j = np.ceil(np.log(x[pos]) / math.log1p(eps) - 1e-12)
    v = np.ceil((1 + eps) ** j).astype(np.int64)
    out[pos] = np.maximum(v, x[pos])
    return out


# --------------------------------------------------------------------------
# schedules


def level_schedule(n: int, eps: float, kind: str = "fast", L: int | None = None) -> LevelSchedule:
    """Levels bounding the middle band, clamped to ``[1, L]``.

    ``kind='fast'``: lower level ``ceil(loglog n - log(1/eps) - logloglog n)``,
    upper level ``ceil(loglog n + log(1/eps))``.  ``kind='linear'``: upper
    level ``ceil(2 loglog n)``.  Logs are base 2.
    """
    if L is None:
        L = max(1, math.ceil(math.log2(n + 1)))
    ll = math.log2(math.log2(n)) if n > 2 else 0.0
    lll = math.log2(ll) if ll > 1 else 0.0
    inv = math.log2(1 / eps)
    xi = math.ceil(ll - inv - lll)
    if kind == "linear":
        eta = math.ceil(2 * ll)
    else:
        eta = math.ceil(ll + inv)
    xi = min(max(xi, 1), L)
    eta = min(max(eta, xi), L)
    return LevelSchedule(xi, eta, eps / (eta - xi + 1))


def _geom_weights(eta: int, L: int) -> dict:
    return {i: 3.0 ** (-(i - eta) / 4) for i in range(eta, L + 1)}


def top_schedule(budget: float, eta: int, L: int, q: int, mult: dict | None = None) -> dict:
    """Gaps ``eps_i`` for levels ``eta..L`` with ``sum mult_i * eps_i = budget``.

    The gaps shrink geometrically (ratio ``3**(-1/4)`` per level).  Gaps that
    would fall below the integer resolution ``4/q`` are raised to it and the
    remaining budget is shared by the other levels in the same proportions.
    """
    geo = _geom_weights(eta, L)
    mult = mult or {i: 1.0 for i in geo}
    floor = 4.0 / q
    fixed: dict = {}
    while True:
        free = [i for i in geo if i not in fixed]
        rest = budget - sum(mult[i] * floor for i in fixed)
        if rest <= 0 or not free:
            raise ValueError("epsilon too small for the value range of this tree")
        c = rest / sum(mult[i] * geo[i] for i in free)
        low = [i for i in free if c * geo[i] < floor]
        if not low:
            out = {i: c * geo[i] for i in free}
            out.update({i: floor for i in fixed})
            return out
        fixed.update({i: floor for i in low})


# --------------------------------------------------------------------------
# look-up table


class LookupTable:
    """Exact DP arrays of small subtrees, memoized by their weight tuple.

    With ``bucket_eps`` set, weights are first rounded up to a geometric grid
    so that nearby subtrees share an entry; the stored arrays then belong to
    the bucketed weights.
    """

    def __init__(self, b: int = 2, mode: str = "tail", bucket_eps: float | None = None):
        self.b = b
        self.mode = mode
        self.bucket_eps = bucket_eps
        self.cache: dict[tuple, np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    def key(self, weights) -> tuple:
        w = np.asarray(weights, dtype=np.int64)
        if self.bucket_eps:
            w = bucket_weights(w, self.bucket_eps)
        return tuple(w.tolist())

    def query(self, weights) -> np.ndarray:
        key = self.key(weights)
        arr = self.cache.get(key)
        if arr is None:
            self.misses += 1
            arr = exact_arrays(np.asarray(key, dtype=np.int64), self.b, self.mode)
            self.cache[key] = arr
        else:
            self.hits += 1
        return arr

    def dedupe(self, rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distinct (bucketed) rows and the row -> distinct-row map."""
        rows = np.asarray(rows, dtype=np.int64)
        if self.bucket_eps:
            rows = bucket_weights(rows, self.bucket_eps)
        uniq, inv = _unique_rows(rows)
        self.misses += uniq.shape[0]
        self.hits += rows.shape[0] - uniq.shape[0]
        return uniq, inv.reshape(-1).astype(np.int64)


def _unique_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # pack each row into one mixed-radix integer when that fits, else sort rows
    lo = int(rows.min()) if rows.size else 0
    base = (int(rows.max()) - lo + 1) if rows.size else 1
    width = rows.shape[1] if rows.ndim == 2 else 1
    if rows.ndim == 2 and base ** width < 2**62:
        key = np.zeros(rows.shape[0], np.int64)
        for j in range(width):
            key = key * base + (rows[:, j] - lo)
        _, first, inv = np.unique(key, return_index=True, return_inverse=True)
        return rows[first], inv
    return np.unique(rows, axis=0, return_inverse=True)


# --------------------------------------------------------------------------
# compiled level engine


class _Level:
    """Per-level storage: one final sequence and ``b-1`` fold accumulators per node."""

    def __init__(self, N: int, fcap: int, acap: int, b: int, acc: bool = True):
        self.N, self.fcap, self.acap = N, fcap, acap
        z = np.zeros
        self.f_idx = z(N * fcap, np.int64)
        self.f_val = z(N * fcap, np.int64)
        self.f_b1 = z(N * fcap, np.int64)
        self.f_b2 = z(N * fcap, np.int64)
        self.f_cnt = z(N, np.int64)
        na = (b - 1) * N * acap if acc else 1
        self.a_idx = z(na, np.int64)
        self.a_val = z(na, np.int64)
        self.a_b1 = z(na, np.int64)
        self.a_b2 = z(na, np.int64)
        self.a_cnt = z(max((b - 1) * N, 1), np.int64)
        if not acc:
            self.acap = 1

    def seq(self, j: int) -> RepSeq:
        o = j * self.fcap
        m = self.f_cnt[j]
        return RepSeq(self.f_idx[o:o + m].tolist(), self.f_val[o:o + m].tolist())


class _Engine:
    """Runs level passes and keeps every level for reconstruction."""

    def __init__(self, b: int, L: int):
        self.b = b
        self.L = L
        self.stores: list[dict[int, _Level]] = [{}]
        self.fmaps: list[np.ndarray] = []

    def add_forest(self, fmap: np.ndarray) -> int:
        self.stores.append({})
        self.fmaps.append(np.asarray(fmap, dtype=np.int64))
        return len(self.stores) - 2

    def leaf(self, store: int, head: bool, x: np.ndarray) -> _Level:
        lev = _Level(x.size, 2, 1, self.b, acc=False)
        K.leaf_level(head, x.astype(np.int64), lev.f_idx, lev.f_val, lev.f_b1, lev.f_b2, lev.f_cnt, 2)
        self.stores[store][1] = lev
        return lev

    def conv(self, store: int, i: int, head: bool, x: np.ndarray, sums: np.ndarray, *,
             exact: bool, pq=(0, 1), pq2=(0, 1), tau: int = 1, cap: int, kcap: int,
             sent_factor: float = 1.0, lookup: int = -1, verbatim: bool = False) -> _Level:
        child = self.stores[store][i - 1]
        N = x.size
        fcap = cap + 1
        lev = _Level(N, fcap, cap, self.b)
        K.conv_level(head, N, self.b, _size(i, self.b),
                     child.f_idx, child.f_val, child.f_cnt, child.fcap,
                     lev.a_idx, lev.a_val, lev.a_b1, lev.a_b2, lev.a_cnt, lev.acap,
                     lev.f_idx, lev.f_val, lev.f_b1, lev.f_b2, lev.f_cnt, lev.fcap,
                     x.astype(np.int64), sums.astype(np.int64), float(sent_factor),
                     exact, pq[0], pq[1], tau, pq2[0], pq2[1], kcap, lookup, verbatim)
        self.stores[store][i] = lev
        return lev

    def link(self, i: int, head: bool, fid: int, pq, N: int) -> _Level:
        src = self.stores[1 + fid][i]
        lev = _Level(N, src.fcap, 1, self.b, acc=False)
        K.link_level(head, N, self.fmaps[fid], fid, src.f_idx, src.f_val, src.f_cnt, src.fcap,
                     lev.f_idx, lev.f_val, lev.f_b1, lev.f_b2, lev.f_cnt, lev.fcap, pq[0], pq[1])
        self.stores[0][i] = lev
        return lev

    def rethin(self, store: int, i: int, head: bool, pq) -> None:
        lev = self.stores[store][i]
        K.rethin_level(head, lev.N, lev.f_idx, lev.f_val, lev.f_b1, lev.f_b2, lev.f_cnt, lev.fcap, pq[0], pq[1])

    def reconstruct(self, root_pos: int, n: int) -> np.ndarray:
        ns = len(self.stores)
        shp = (ns, self.L + 1)
        fin_off = np.zeros(shp, np.int64)
        fin_cap = np.ones(shp, np.int64)
        acc_off = np.zeros(shp, np.int64)
        acc_cap = np.ones(shp, np.int64)
        acc_n = np.zeros(shp, np.int64)
        fb1, fb2, ab1, ab2 = [], [], [], []
        fo = ao = 0
        for s, levels in enumerate(self.stores):
            for i, lev in levels.items():
                fin_off[s, i] = fo
                fin_cap[s, i] = lev.fcap
                fb1.append(lev.f_b1)
                fb2.append(lev.f_b2)
                fo += lev.f_b1.size
                acc_off[s, i] = ao
                acc_cap[s, i] = lev.acap
                acc_n[s, i] = lev.N
                ab1.append(lev.a_b1)
                ab2.append(lev.a_b2)
                ao += lev.a_b1.size
        width = max([m.size for m in self.fmaps], default=1)
        fm = np.zeros((max(len(self.fmaps), 1), width), np.int64)
        for f, m in enumerate(self.fmaps):
            fm[f, :m.size] = m
        return K.find_tree(self.b, self.L, root_pos, n,
                           np.concatenate(fb1), np.concatenate(fb2), fin_off, fin_cap,
                           np.concatenate(ab1), np.concatenate(ab2), acc_off, acc_cap, acc_n, fm)


def _cap_for(size: int, vmax: int, pq) -> int:
    p, q = pq
    return int(min(size + 1, 4 + math.floor(math.log(max(vmax, 2)) / math.log1p(p / q))))


def _level_arrays(w: np.ndarray, b: int, L: int):
    xs = {}
    sums = {}
    u = _subtree_sums(w, b)
    for i in range(1, L + 1):
        s, e = _level_range(L, i, b)
        xs[i] = w[s:e]
        sums[i] = u[s:e]
    return xs, sums


def _subtree_rows(xs: dict, b: int, F: int) -> np.ndarray:
    """Level-ordered weights of every level-``F`` subtree, one row each."""
    N = xs[F].size
    parts = [xs[i].reshape(N, -1) for i in range(F, 0, -1)]
    return np.concatenate(parts, axis=1)


def _forest_levels(rows: np.ndarray, b: int, F: int):
    """Split subtree rows back into per-level arrays of the forest they form."""
    xs = {}
    col = 0
    for i in range(F, 0, -1):
        width = b ** (F - i)
        xs[i] = np.ascontiguousarray(rows[:, col:col + width]).reshape(-1)
        col += width
    sums = {1: xs[1].copy()}
    for i in range(2, F + 1):
        sums[i] = xs[i] + sums[i - 1].reshape(-1, b).sum(axis=1)
    return xs, sums


def _exact_forest(eng: _Engine, fid: int, rows: np.ndarray, F: int, head: bool, kcap: int) -> None:
    b = eng.b
    xs, sums = _forest_levels(rows, b, F)
    st = 1 + fid
    eng.leaf(st, head, xs[1])
    for i in range(2, F + 1):
        cap = min(_size(i, b), kcap) + 1
        eng.conv(st, i, head, xs[i], sums[i], exact=True, cap=cap, kcap=kcap)


# shares of the error budget, as exponents of (1+eps) (tail) or (1-eps) (head);
# the top levels get the largest share since their sequences are the longest
TAIL_SHARES = {"disc": 0.05, "band": 0.15, "top": 0.8}
HEAD_SHARES = {"disc": 0.05, "local": 0.05, "band": 0.1, "top": 0.8}


def _share(eps: float, part: str, head: bool) -> float:
    if head:
        return 1 - (1 - min(eps, 0.99)) ** HEAD_SHARES[part]
    return (1 + eps) ** TAIL_SHARES[part] - 1


def _trivial_full(T: TreeSignal, w: np.ndarray, algo: str) -> SubtreeSolution:
    return _solution(w, np.ones(w.size, dtype=bool), algorithm=algo, route="k >= n")


def _tail_prelude(T: TreeSignal, budget: ProjectionBudget, algo: str):
    Tp = lp_transform(T)
    w = Tp.weights
    k = budget.k
    if k >= w.size:
        return _trivial_full(T, w, algo), None
    work = _prune_depth(Tp, k)
    if work.n <= EXACT_THRESHOLD:
        sol = exact_tree_projection(T, k, "tail")
        sol.metadata.update(algorithm=algo, route="exact (small tree)")
        return sol, None
    return None, (Tp, w, work)


def _finish(T_full_w: np.ndarray, work_n: int, mask: np.ndarray, k: int, b: int, **meta) -> SubtreeSolution:
    full = np.zeros(T_full_w.size, dtype=bool)
    full[:work_n] = mask
    filled = _fill_budget(T_full_w, full, k, b)
    if filled:
        meta["filled"] = filled
    return _solution(T_full_w, full, **meta)


def _fill_budget(w: np.ndarray, mask: np.ndarray, k: int, b: int) -> int:
    """Spend unused budget on the heaviest positive frontier nodes, in place.

    Adding a node to a rooted subtree can only raise its head, so this never
    hurts either guarantee.
    """
    room = k - int(mask.sum())
    if room <= 0:
        return 0
    n = w.size
    if not mask[0]:
        cand = [0]
    else:
        inside = np.flatnonzero(mask)
        kids = (b * inside[:, None] + np.arange(1, b + 1)[None, :]).ravel()
        kids = kids[kids < n]
        cand = kids[~mask[kids]].tolist()
    heap = [(-w[h], h) for h in cand if w[h] > 0]
    heapq.heapify(heap)
    added = 0
    while heap and added < room:
        _, h = heapq.heappop(heap)
        mask[h] = True
        added += 1
        for c in range(b * h + 1, min(b * h + b + 1, n)):
            if w[c] > 0:
                heapq.heappush(heap, (-w[c], c))
    return added


def fast_tail_tree(T: TreeSignal, budget: ProjectionBudget, *, verbatim: bool = False,
                   lookup: str = "auto", bucket_eps: float | None = None) -> SubtreeSolution:
    """(1+eps)-approximate tail projection in near-linear time.

    Pipeline: integer rounding against the baseline; exact arrays for the
    small subtrees at the lower band level (deduplicated through a
    :class:`LookupTable`); approximate (min,+) convolutions with a uniform gap
    through the middle band; a geometrically shrinking gap above it; the
    cheapest root entry that removes at least ``n - k`` nodes; reconstruction
    from back-pointers.
    """
    done, ctx = _tail_prelude(T, budget, "fast_tail_tree")
    if done is not None:
        return done
    Tp, w, work = ctx
    k, eps = budget.k, budget.epsilon
    e_d = _share(eps, "disc", False)
    base, W = tail_baseline(work, k)
    if W == 0:
        return _finish(w, work.n, _mask(base.support, work.n), k, work.b, algorithm="fast_tail_tree",
                       route="baseline optimal")
    ctxd = DiscretizationContext(W, "tail", e_d, work.n, k, work.levels)
    xd = discretize(work, ctxd).weights
    mask, meta = _run_tail(xd, work.b, k, eps, "fast", verbatim=verbatim, lookup=lookup, bucket_eps=bucket_eps)
    return _finish(w, work.n, mask, k, work.b, algorithm="fast_tail_tree", W=W, **meta)


def _mask(support, n):
    m = np.zeros(n, dtype=bool)
    m[np.asarray(support, dtype=np.int64)] = True
    return m


_LOOKUP = {"auto": -1, "search": 0, "hash": 1}


def _run_tail(xd: np.ndarray, b: int, k: int, eps: float, kind: str, *, delta: float = 0.5,
              verbatim: bool = False, lookup: str = "auto", bucket_eps=None):
    n = xd.size
    L = _levels(n, b)
    e_band = _share(eps, "band", False)
    e_top = _share(eps, "top", False)
    sched = level_schedule(n, eps, kind, L)
    xs, sums = _level_arrays(xd, b, L)
    total = int(sums[L][0])
    mode = _LOOKUP[lookup]
    meta = {"xi": sched.xi, "eta": sched.eta}
    # gap parameters (rounded down to dyadic rationals)
    vmax = int(math.ceil(total * (1 + eps) * 1.01)) + 4 * n + 8
    q = dyadic(1.0, vmax)[1]
    top = top_schedule(math.log1p(e_top), sched.eta, L, q)
    meta["eps_levels"] = top
    if kind == "fast":
        F = sched.xi
        band_levels = sched.eta - F + 1
        eps_p = math.log1p(e_band) / band_levels
        pq_band = dyadic(eps_p, vmax)
    else:
        F = sched.eta
        pq_band = None
    pq_top = {i: dyadic(top[i], vmax) for i in top}
    eng = _Engine(b, L)
    table = LookupTable(b, "tail", bucket_eps)
    if kind == "fast":
        rows = _subtree_rows(xs, b, F)
        uniq, inv = table.dedupe(rows)
        fid = eng.add_forest(inv)
        _exact_forest(eng, fid, uniq, F, False, 2**62)
        eng.link(F, False, fid, pq_band, xs[F].size)
        meta["lookup_rows"] = int(uniq.shape[0])
        acc = Fraction(1)
        fr = Fraction(pq_band[0], pq_band[1])
        acc *= 1 + fr
        for i in range(F + 1, sched.eta + 1):
            acc *= 1 + fr
            cap = _cap_for(_size(i, b), vmax, pq_band)
            tau = halving_window(*pq_band)
            eng.conv(0, i, False, xs[i], sums[i], exact=False, pq=pq_band, pq2=pq_band, tau=tau,
                     cap=cap, kcap=2**62, sent_factor=float(acc) * (1 + 1e-12), lookup=mode, verbatim=verbatim)
        pe = pq_top[sched.eta]
        eng.rethin(0, sched.eta, False, pe)
        acc *= 1 + Fraction(*pe)
    else:
        # light subtrees at the upper level are dropped wholesale
        N = xs[F].size
        u = sums[F]
        e_p = _share(eps, "band", False)
        cnt = math.ceil((1 + e_p) * n ** (1 - delta) / e_p)
        keep = np.ones(N, dtype=bool)
        if cnt < N:
            thr = np.sort(u)[::-1][cnt - 1]
            keep = u >= thr
        meta["dropped_subtrees"] = int(N - keep.sum())
        kept = np.flatnonzero(keep)
        rows = _subtree_rows(xs, b, F)[kept] if kept.size else np.zeros((0, _size(F, b)), np.int64)
        if kept.size:
            uniq, inv = table.dedupe(rows)
        else:
            uniq, inv = np.zeros((1, _size(F, b)), np.int64), np.zeros(0, np.int64)
        fmap = np.zeros(N, np.int64)
        fmap[kept] = inv
        fid = eng.add_forest(fmap)
        _exact_forest(eng, fid, uniq, F, False, 2**62)
        pe = pq_top[F]
        lev = eng.link(F, False, fid, pe, N)
        size_F = _size(F, b)
        for j in np.flatnonzero(~keep).tolist():
            o = j * lev.fcap
            lev.f_idx[o] = size_F
            lev.f_val[o] = int(u[j])
            lev.f_b1[o] = K.EXCLUDED
            lev.f_b2[o] = 0
            lev.f_cnt[j] = 1
        acc = 1 + Fraction(*pe)
    for i in range(sched.eta + 1, L + 1):
        pq = pq_top[i]
        acc *= 1 + Fraction(*pq)
        cap = _cap_for(_size(i, b), vmax, pq) + 1
        # children were thinned with the previous level's (larger) gap
        tau = halving_window(*pq_top[i - 1])
        eng.conv(0, i, False, xs[i], sums[i], exact=False, pq=pq, pq2=pq, tau=tau, cap=cap,
                 kcap=2**62, sent_factor=float(acc) * (1 + 1e-12), lookup=mode, verbatim=verbatim)
    root = eng.stores[0][L]
    m = int(root.f_cnt[0])
    idx = root.f_idx[:m]
    pos = int(np.searchsorted(idx, n - k, side="left"))
    meta["root_entries"] = m
    meta["estimate"] = int(root.f_val[pos])
    mask = eng.reconstruct(pos, n)
    meta["lookup_hits"] = table.hits
    return mask, meta


def linear_tail_tree(T: TreeSignal, budget: ProjectionBudget, *, verbatim: bool = False,
                     lookup: str = "auto") -> SubtreeSolution:
    """(1+eps)-approximate tail projection that skips light subtrees when ``k`` is small.

    At the upper band level only the heaviest ``ceil((1+eps) n**(1-delta)/eps)``
    subtrees are solved (exactly); the rest are removed as a whole.  When
    ``k > n**(1-delta)`` this falls back to :func:`fast_tail_tree`.
    """
    k, eps, delta = budget.k, budget.epsilon, budget.delta
    if k > T.n ** (1 - delta):
        sol = fast_tail_tree(T, budget, verbatim=verbatim, lookup=lookup)
        sol.metadata.update(fallback="fast_tail_tree", algorithm="linear_tail_tree")
        return sol
    done, ctx = _tail_prelude(T, budget, "linear_tail_tree")
    if done is not None:
        return done
    Tp, w, work = ctx
    e_d = _share(eps, "disc", False)
    base, W = tail_baseline(work, k)
    if W == 0:
        return _finish(w, work.n, _mask(base.support, work.n), k, work.b, algorithm="linear_tail_tree",
                       route="baseline optimal")
    xd = discretize(work, DiscretizationContext(W, "tail", e_d, work.n, k, work.levels)).weights
    mask, meta = _run_tail(xd, work.b, k, eps, "linear", delta=delta, verbatim=verbatim, lookup=lookup)
    return _finish(w, work.n, mask, k, work.b, algorithm="linear_tail_tree", W=W, **meta)


def linear_head_tree(T: TreeSignal, budget: ProjectionBudget, *, lookup: str = "auto") -> SubtreeSolution:
    """(1-eps)-approximate head projection in linear time.

    The arrays at the upper band level are assembled from two parts: the
    first few entries come from exact truncated (max,+) convolutions, the
    rest from approximate convolutions over weights re-rounded relative to
    the subtree's heaviest node.  Above that level approximate (max,+)
    convolutions with shrinking gaps run up to the root, where the best
    entry with at most ``k`` nodes is reconstructed.
    """
    Tp = lp_transform(T)
    w = Tp.weights
    k, eps = budget.k, budget.epsilon
    if k >= w.size:
        return _trivial_full(T, w, "linear_head_tree")
    work = _prune_depth(Tp, k)
    if work.n <= EXACT_THRESHOLD:
        sol = exact_tree_projection(T, k, "head")
        sol.metadata.update(algorithm="linear_head_tree", route="exact (small tree)")
        return sol
    base, W = head_baseline(work, k)
    if W == 0:
        return _finish(w, work.n, _mask(base.support, work.n), k, work.b, algorithm="linear_head_tree",
                       route="all zero")
    e_d = _share(eps, "disc", True)
    L = work.levels
    ctxd = DiscretizationContext(W, "head", e_d, work.n, k, L)
    big = _big_weight_nodes(work.weights, W, L)
    if big.size:
        raise AssertionError("heavy-node closure is non-empty; baseline invariant broken")
    xd = discretize(work, ctxd).weights
    mask, meta = _run_head(xd, work.b, k, eps, lookup=lookup)
    return _finish(w, work.n, mask, k, work.b, algorithm="linear_head_tree", W=W, **meta)


def _big_weight_nodes(w: np.ndarray, W, L: int) -> np.ndarray:
    """Nodes whose weight is at least ``3 log n`` times the head baseline."""
    thr = 3 * L * (W if isinstance(W, (int, Fraction)) else Fraction(W))
    wf = w.astype(np.float64)
    cand = np.flatnonzero(wf >= float(thr) * (1 - 1e-12))
    return np.asarray([h for h in cand.tolist() if Fraction(float(w[h])) >= thr], dtype=np.int64)


def _run_head(xd: np.ndarray, b: int, k: int, eps: float, *, lookup: str = "auto"):
    n = xd.size
    L = _levels(n, b)
    sched = level_schedule(n, eps, "fast", L)
    xi, eta = sched.xi, sched.eta
    mode = _LOOKUP[lookup]
    e_c2 = _share(eps, "local", True)
    e_band = _share(eps, "band", True)
    e_top = _share(eps, "top", True)
    xs, sums = _level_arrays(xd, b, L)
    total = int(sums[L][0])
    ll = math.log2(math.log2(n))
    c1 = max(math.ceil(2 * ll), eta)
    size_eta = _size(eta, b)
    meta = {"xi": xi, "eta": eta, "exact_prefix": c1}
    eng = _Engine(b, L)
    table = LookupTable(b, "head")
    kk = min(k, n)
    # part 1: exact arrays, first c1 entries only
    rows = _subtree_rows(xs, b, eta)
    u1, inv1 = table.dedupe(rows)
    f1 = eng.add_forest(inv1)
    _exact_forest(eng, f1, u1, eta, True, min(c1 - 1, kk))
    # part 2: re-rounded weights relative to each subtree's heaviest node
    logn = math.log2(n)
    D = max(math.ceil(logn**2 / e_c2), math.ceil((2**eta + 1) / e_c2))
    xmax = rows.max(axis=1)
    scaled = xmax > D
    rows2 = rows.copy()
    if scaled.any():
        rs = rows[scaled]
        xm = xmax[scaled][:, None]
        rows2[scaled] = (rs * D) // xm
    num = np.where(scaled, xmax, 1).astype(np.int64)
    den = np.where(scaled, D, 1).astype(np.int64)
    u2, inv2 = table.dedupe(rows2)
    f2 = eng.add_forest(inv2)
    vmax2 = int(u2.sum(axis=1).max()) + 2 if u2.size else 2
    topk = int(np.sort(xd)[::-1][:kk].sum())
    vmax = max(min(total, topk), vmax2) + 2
    band_steps = 1 + 2 * (eta - xi)
    pq_band = dyadic(e_band / band_steps, vmax)
    xs2, sums2 = _forest_levels(u2, b, eta)
    st2 = 1 + f2
    eng.leaf(st2, True, xs2[1])
    kc2 = min(kk, size_eta)
    for i in range(2, xi + 1):
        eng.conv(st2, i, True, xs2[i], sums2[i], exact=True, cap=min(_size(i, b), kc2) + 1, kcap=kc2)
    eng.rethin(st2, xi, True, pq_band)
    tau_b = halving_window(*pq_band)
    for i in range(xi + 1, eta + 1):
        cap = min(_cap_for(_size(i, b), vmax, pq_band), kc2 + 1) + 1
        eng.conv(st2, i, True, xs2[i], sums2[i], exact=False, pq=pq_band, pq2=pq_band, tau=tau_b,
                 cap=cap, kcap=kc2, lookup=mode)
    meta["rescaled_subtrees"] = int(scaled.sum())
    # merge the two parts at the upper band level
    q = dyadic(1.0, vmax)[1]
    top = top_schedule(e_top, eta, L, q, {i: (1.0 if i == eta else 2.0) for i in range(eta, L + 1)})
    meta["eps_levels"] = top
    pq_top = {i: dyadic(top[i], vmax) for i in top}
    N = xs[eta].size
    s1 = eng.stores[1 + f1][eta]
    s2 = eng.stores[st2][eta]
    lev = _Level(N, s1.fcap + s2.fcap, 1, b, acc=False)
    pe = pq_top[eta]
    K.merge_link_level(N, eng.fmaps[f1], f1, s1.f_idx, s1.f_val, s1.f_cnt, s1.fcap,
                       eng.fmaps[f2], f2, s2.f_idx, s2.f_val, s2.f_cnt, s2.fcap, num, den, c1,
                       lev.f_idx, lev.f_val, lev.f_b1, lev.f_b2, lev.f_cnt, lev.fcap, pe[0], pe[1])
    eng.stores[0][eta] = lev
    for i in range(eta + 1, L + 1):
        pq = pq_top[i]
        cap = min(_cap_for(_size(i, b), vmax, pq), kk + 1) + 1
        tau = halving_window(*pq_top[i - 1])
        eng.conv(0, i, True, xs[i], sums[i], exact=False, pq=pq, pq2=pq, tau=tau, cap=cap,
                 kcap=kk, lookup=mode)
    root = eng.stores[0][L]
    m = int(root.f_cnt[0])
    idx = root.f_idx[:m]
    pos = int(np.searchsorted(idx, kk, side="right")) - 1
    meta["root_entries"] = m
    meta["estimate"] = int(root.f_val[pos])
    mask = eng.reconstruct(pos, n)
    return mask, meta


# --------------------------------------------------------------------------
# reconstruction and b-ary folding on explicit sequences


def find_tree(L_index: int, sequences: dict, b: int, n: int, head: bool = False) -> np.ndarray:
    """Rebuild a support from per-node sequences with back-pointers.

    ``sequences`` maps a heap position to ``(seq, folds)``: the node's final
    :class:`RepSeq` and the list of fold accumulators it was built from.  A
    final entry's back-pointer ``(a, -1)`` points at position ``a`` of the
    last accumulator; ``(-1, -1)`` excludes the subtree and ``(-2, -2)``
    keeps the node with nothing below.  ``L_index`` selects the root entry
    by index.
    """
    root_seq, _ = sequences[0]
    try:
        pos = root_seq.indices.index(L_index)
    except ValueError:
        raise ValueError("no root entry with that index") from None
    mask = np.zeros(n, dtype=bool)
    stack = [(0, pos)]
    while stack:
        h, e = stack.pop()
        seq, folds = sequences[h]
        code = seq.backptrs[e][0]
        if code == K.EXCLUDED:
            continue
        mask[h] = True
        if code == K.TERMINAL:
            continue
        a = code
        for r in range(len(folds) - 1, -1, -1):
            u, w2 = folds[r].backptrs[a]
            stack.append((b * h + 2 + r, w2))
            a = u
        stack.append((b * h + 1, a))
    return mask


def bary_convolve(children: Sequence[RepSeq], alpha, beta, head: bool = False,
                  cardinalities: Sequence[int] | None = None, fast: bool = True) -> list[RepSeq]:
    """Left fold of pairwise approximate convolutions over ``b`` children.

    Returns every accumulator of the fold; the last one is the result.  Each
    step loses at most a ``(1 + beta)`` factor, so the fold as a whole stays
    within ``(1 + beta)**(b - 1)``.
    """
    if len(children) < 2:
        raise ValueError("need at least two children")
    folds = []
    acc = children[0]
    card = cardinalities[0] if cardinalities is not None else None
    for j, ch in enumerate(children[1:], start=1):
        if head:
            c2 = cardinalities[j] if cardinalities is not None else ch.max_index
            c1 = card if card is not None else acc.max_index
            acc = (fast_rs_maxplus(alpha, beta, acc, ch, (c1, c2)) if fast
                   else rs_maxplus(alpha, beta, acc, ch))
            card = c1 + c2
        else:
            acc = fast_rs_minplus(alpha, beta, acc, ch) if fast else rs_minplus(alpha, beta, acc, ch)
        alpha = min(Fraction(alpha) if not isinstance(alpha, Fraction) else alpha, Fraction(acc.alpha))
        folds.append(acc)
    return folds
