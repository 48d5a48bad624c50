"""Brute-force reference solvers, independent of the package internals."""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def frac(v):
    return v if isinstance(v, (int, Fraction)) else Fraction(float(v))


# ---- tree ----------------------------------------------------------------


def rooted_subtrees(n: int, b: int = 2, kmax: int | None = None):
    """All rooted subtrees of a heap-ordered perfect tree, as frozensets.

    Grown node by node from the root; only usable for small ``n``.
    """
    kmax = n if kmax is None else kmax
    seen = {frozenset([0])}
    frontier = [frozenset([0])]
    yield frozenset()
    yield frozenset([0])
    while frontier:
        nxt = []
        for S in frontier:
            if len(S) >= kmax:
                continue
            for v in S:
                for c in range(b * v + 1, b * v + b + 1):
                    if c < n and c not in S:
                        T = S | {c}
                        if T not in seen:
                            seen.add(T)
                            nxt.append(T)
                            yield T
        frontier = nxt


def brute_tree(weights, k: int, b: int = 2):
    """(best head, best tail) over rooted subtrees with at most k nodes."""
    w = [frac(v) for v in weights]
    total = sum(w, Fraction(0))
    best = Fraction(0)
    for S in rooted_subtrees(len(w), b, k):
        if len(S) <= k:
            hv = sum((w[i] for i in S), Fraction(0))
            best = max(best, hv)
    return best, total - best


def dp_head(weights, k: int, b: int = 2):
    """Plain-Python truncated tree knapsack: best head with at most k nodes."""
    w = [frac(v) for v in weights]
    n = len(w)

    def solve(v):
        if v >= n:
            return [Fraction(0)]
        acc = [Fraction(0)]
        for c in range(b * v + 1, b * v + b + 1):
            ch = solve(c)
            out = [None] * min(len(acc) + len(ch) - 1, k)
            for i, a in enumerate(acc):
                for j, bb in enumerate(ch):
                    if i + j < len(out) and (out[i + j] is None or a + bb > out[i + j]):
                        out[i + j] = a + bb
            acc = out
        arr = [Fraction(0)] + [a + w[v] for a in acc[:k]]
        for i in range(1, len(arr)):
            arr[i] = max(arr[i], arr[i - 1])
        return arr

    return solve(0)[-1]


# ---- convolutions -----------------------------------------------------------


def brute_minplus(a, b):
    return [min(a[i] + b[t - i] for i in range(len(a)) if 0 <= t - i < len(b))
            for t in range(len(a) + len(b) - 1)]


def brute_maxplus(a, b):
    return [max(a[i] + b[t - i] for i in range(len(a)) if 0 <= t - i < len(b))
            for t in range(len(a) + len(b) - 1)]


# ---- CEMD -----------------------------------------------------------------


def col_emd(a, b):
    return sum(abs(x - y) for x, y in zip(sorted(a), sorted(b)))


def all_supports(h: int, w: int, s: int):
    cols = list(itertools.combinations(range(h), s))
    for choice in itertools.product(cols, repeat=w):
        yield choice


def support_value(P, choice):
    phi = sum((frac(P[i][j]) for j, c in enumerate(choice) for i in c), Fraction(0))
    d = sum(col_emd(choice[j], choice[j + 1]) for j in range(len(choice) - 1))
    return phi, d


def brute_flow_objective(P, s: int, lam):
    """min over per-column-s supports of -phi + lam * emd."""
    h, w = len(P), len(P[0])
    lam = frac(lam)
    return min(-phi + lam * d for phi, d in (support_value(P, c) for c in all_supports(h, w, s)))


def brute_cemd_opt(P, s: int, B):
    h, w = len(P), len(P[0])
    best = Fraction(0)
    for c in all_supports(h, w, s):
        phi, d = support_value(P, c)
        if d <= B and phi > best:
            best = phi
    return best


def all_paths(h: int, w: int):
    return itertools.product(range(h), repeat=w)


def brute_emd(A, B):
    A = list(A)
    return min(sum(abs(a - b) for a, b in zip(A, perm)) for perm in itertools.permutations(B))
