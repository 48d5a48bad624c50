"""Projecting a tree signal onto rooted subtrees.

A wavelet-like signal concentrates its energy near the root and along a few
branches.  We keep at most k nodes forming a rooted subtree and compare the
approximate solvers with the exact dynamic program, then watch the running
time grow with the tree size.

    python3 demos/01_tree_projection.py
"""

import time

import numpy as np

from structsparse import (ProjectionBudget, TreeSignal, exact_tree_projection, fast_tail_tree,
                          linear_head_tree, linear_tail_tree)


def wavelet_like(L, rng):
    """Coefficients decaying with depth, with one strong branch."""
    n = 2**L - 1
    depth = np.floor(np.log2(np.arange(1, n + 1))).astype(int)
    w = rng.integers(0, 100, size=n) // (1 + depth)
    h = 0
    while h < n:
        w[h] += 400
        h = 2 * h + 2
    return TreeSignal(w)


rng = np.random.default_rng(0)
T = wavelet_like(10, rng)
k = 60
print(f"tree with {T.n} nodes, total weight {int(T.weights.sum())}, keep k = {k}")

opt = exact_tree_projection(T, k)
print(f"  exact            tail {opt.tail_value}")
for name, sol in [("fast tail", fast_tail_tree(T, ProjectionBudget(k, 0.1))),
                  ("linear tail", linear_tail_tree(T, ProjectionBudget(k, 0.1, 0.5))),
                  ("linear head", linear_head_tree(T, ProjectionBudget(k, 0.1)))]:
    print(f"  {name:<16} tail {sol.tail_value}  ratio {float(sol.tail_value / opt.tail_value):.4f}"
          f"  nodes {len(sol)}")

print("\nthe strong branch is kept:", all(h in set(opt.support.tolist()) for h in (0, 2, 6, 14)))

print("\nrunning time of the fast tail solver (eps = 0.2, k = n/10)")
fast_tail_tree(wavelet_like(10, rng), ProjectionBudget(100, 0.2))
prev = None
for L in (12, 14, 16, 18):
    T = wavelet_like(L, rng)
    t = time.perf_counter()
    fast_tail_tree(T, ProjectionBudget(T.n // 10, 0.2))
    dt = time.perf_counter() - t
    growth = f"  x{dt / prev:.1f} for 4x the nodes" if prev else ""
    print(f"  n = 2^{L:<3} {dt * 1e3:8.1f} ms{growth}")
    prev = dt
