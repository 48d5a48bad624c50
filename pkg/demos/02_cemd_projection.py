"""Constrained earth mover's distance supports on a grid.

Each column of the grid keeps exactly s entries, and the rows used by
neighbouring columns may only drift by a total of B (the earth mover's
distance between consecutive columns).  This fits signals made of a few
slowly moving lines, such as seismic traces.

    python3 demos/02_cemd_projection.py
"""

import numpy as np

from structsparse import CemdParams, GridSignal, cemd_head_projection, cemd_tail_projection, exact_cemd

rng = np.random.default_rng(3)
h, w, s = 12, 16, 2
X = rng.random((h, w)) * 0.6
rows = np.array([2, 8])
for j in range(w):
    X[rows, j] += 3.0
    if j % 4 == 3:
        rows = np.clip(rows + rng.choice([-1, 1], size=2), 0, h - 1)


def show(mask):
    for i in range(h):
        print("   " + "".join("#" if mask[i, j] else "." for j in range(w)))


print("two drifting lines in noise; the true lines:")
show(X > 2)
for B in (0, 4, 12):
    head = cemd_head_projection(GridSignal(X), CemdParams(s * w, B))
    exact = exact_cemd(GridSignal(X), CemdParams(s * w, B))
    print(f"\nB = {B}: head projection keeps {float(head.phi):.2f} of {X.sum():.2f}"
          f" (best possible {float(exact.phi):.2f}), EMD used {head.emd}")
    show(head.mask(h))

tail = cemd_tail_projection(GridSignal(X), CemdParams(s * w, 4))
print(f"\ntail projection with B = 4 may spend up to 2B: EMD {tail.emd}, "
      f"discarded {float(tail.metadata['tail']):.2f}")
