"""Head and tail projections for the constrained earth-mover-distance model.

A support on an ``h x w`` grid is in the model when every column holds
exactly ``s = k / w`` entries and the summed EMD between neighbouring columns
is at most ``B``.  The head projection combines min-cost flows on the EMD
flow network, a bisection over the EMD price ``lambda``, and a path
decomposition that trades EMD for head value.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from ._exact import exact_sum, normalize

__all__ = [
    "GridSignal",
    "CemdParams",
    "FlowNetwork",
    "SupportResult",
    "LambdaBracket",
    "emd",
    "support_emd",
    "build_flow_network",
    "min_cost_flow",
    "lambda_search",
    "path_decompose",
    "path_phi",
    "path_emd",
    "cemd_head_projection",
    "cemd_tail_projection",
    "in_model",
    "exact_cemd",
]


@dataclass
class GridSignal:
    X: np.ndarray
    p: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.X)
        if X.ndim != 2 or X.size == 0:
            raise ValueError("X must be a non-empty 2-d array")
        if not np.issubdtype(X.dtype, np.number):
            raise ValueError("X must be numeric")
        if np.issubdtype(X.dtype, np.floating) and not np.all(np.isfinite(X)):
            raise ValueError("X must be finite")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        self.X = X

    @property
    def h(self) -> int:
        return self.X.shape[0]

    @property
    def w(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.size

    def powered(self) -> np.ndarray:
        """``|X|**p``, kept integral when X is integral and p is an integer."""
        a = np.abs(self.X)
        if self.p == 1:
            return a
        if np.issubdtype(a.dtype, np.integer) and float(self.p).is_integer():
            return a.astype(np.int64) ** int(self.p)
        return a.astype(np.float64) ** self.p


@dataclass(frozen=True)
class CemdParams:
    k: int
    B: float = 0
    delta: float = 0.05

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ValueError("k must be a positive integer")
        if self.B < 0:
            raise ValueError("B must be non-negative")
        if not 0 < self.delta < 0.25:
            raise ValueError("delta must lie in (0, 1/4)")

    def s(self, X: GridSignal) -> int:
        if self.k % X.w:
            raise ValueError(f"k={self.k} is not a multiple of the column count {X.w}")
        s = self.k // X.w
        if s > X.h:
            raise ValueError(f"column sparsity {s} exceeds the column height {X.h}")
        return s


@dataclass
class FlowNetwork:
    """Unit-capacity network with node costs realized by node splitting.

    Node ids: 0 source, 1 sink, ``2 + 2*(j*h + i)`` the in-copy and ``+1``
    the out-copy of grid entry ``(i, j)``.  Edge ``e`` and ``e ^ 1`` are a
    forward edge and its residual twin.
    """

    h: int
    w: int
    s: int
    lam: float
    tail: np.ndarray
    head: np.ndarray
    cap: np.ndarray
    cost: np.ndarray

    @property
    def n_nodes(self) -> int:
        return 2 + 2 * self.h * self.w

    def node_in(self, i: int, j: int) -> int:
        return 2 + 2 * (j * self.h + i)

    def node_out(self, i: int, j: int) -> int:
        return 3 + 2 * (j * self.h + i)

    def forward_edges(self):
        """``(u, v, cost)`` for every forward edge."""
        f = np.arange(0, self.tail.size, 2)
        return list(zip(self.tail[f].tolist(), self.head[f].tolist(), self.cost[f].tolist()))


@dataclass
class SupportResult:
    """A per-column support: ``rows[:, j]`` lists the sorted rows used in column ``j``."""

    rows: np.ndarray
    phi: int | float | Fraction
    emd: int
    metadata: dict = field(default_factory=dict)

    def mask(self, h: int) -> np.ndarray:
        m = np.zeros((h, self.rows.shape[1]), dtype=bool)
        for j in range(self.rows.shape[1]):
            m[self.rows[:, j], j] = True
        return m

    def flat_support(self, h: int) -> np.ndarray:
        """Flat indices in row-major order."""
        return np.flatnonzero(self.mask(h).ravel())


@dataclass
class LambdaBracket:
    l: Fraction
    r: Fraction
    x_min: float
    x_max: float
    iterations: int = 0
    converged: bool = True


# --------------------------------------------------------------------------
# EMD


def emd(A, B) -> int:
    """EMD between two equal-size sets of rows: pair them in sorted order."""
    a = sorted(int(v) for v in A)
    b = sorted(int(v) for v in B)
    if len(a) != len(b):
        raise ValueError("sets must have equal size")
    return sum(abs(x - y) for x, y in zip(a, b))


def _rows_from(support, h: int, w: int) -> np.ndarray:
    """Accept an ``h x w`` boolean mask or a collection of (row, col) pairs."""
    a = np.asarray(support)
    if a.dtype == bool and a.shape == (h, w):
        cols = [np.flatnonzero(a[:, j]) for j in range(w)]
    else:
        cols = [[] for _ in range(w)]
        for i, j in support:
            cols[int(j)].append(int(i))
        cols = [np.sort(np.asarray(c, dtype=np.int64)) for c in cols]
    sizes = {len(c) for c in cols}
    if len(sizes) != 1:
        raise ValueError("every column must hold the same number of entries")
    return np.stack([np.asarray(c, dtype=np.int64) for c in cols], axis=1)


def support_emd(support, h: int, w: int) -> int:
    """Sum of EMDs between neighbouring columns of a support."""
    return _rows_emd(_rows_from(support, h, w))


def _rows_emd(rows: np.ndarray) -> int:
    rows = np.sort(np.asarray(rows), axis=0)
    return int(np.abs(np.diff(rows, axis=1)).sum())


def _phi(P: np.ndarray, rows: np.ndarray):
    vals = P[rows, np.arange(rows.shape[1])[None, :]]
    return normalize(exact_sum(vals.ravel()))


def _result(P: np.ndarray, rows: np.ndarray, **meta) -> SupportResult:
    rows = np.sort(np.asarray(rows, dtype=np.int64), axis=0)
    return SupportResult(rows, _phi(P, rows), int(np.abs(np.diff(rows, axis=1)).sum()), dict(meta))


def in_model(rows: np.ndarray, h: int, w: int, s: int, B) -> bool:
    rows = np.asarray(rows)
    if rows.shape != (s, w):
        return False
    for j in range(w):
        c = rows[:, j]
        if np.unique(c).size != s or c.min() < 0 or c.max() >= h:
            return False
    return _rows_emd(rows) <= B


# --------------------------------------------------------------------------
# flow network and min-cost flow


def build_flow_network(X: GridSignal, params: CemdParams, lam) -> FlowNetwork:
    """The EMD flow network for price ``lam``.

    source -> column 0 (cost 0), in -> out per entry (cost ``-|x|**p``),
    out(i, j) -> in(i', j+1) (cost ``lam * |i - i'|``), column w-1 -> sink.
    All capacities are 1; the source supplies ``s`` units.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    h, w = X.h, X.w
    s = params.s(X)
    P = X.powered().astype(np.float64)
    lam = float(lam)
    tails, heads, costs = [], [], []

    def add(u, v, c):
        tails.extend((u, v))
        heads.extend((v, u))
        costs.extend((c, -c))

    nin = lambda i, j: 2 + 2 * (j * h + i)
    for i in range(h):
        add(0, nin(i, 0), 0.0)
    for j in range(w):
        for i in range(h):
            add(nin(i, j), nin(i, j) + 1, -float(P[i, j]))
    for j in range(w - 1):
        for i in range(h):
            for i2 in range(h):
                add(nin(i, j) + 1, nin(i2, j + 1), lam * abs(i - i2))
    for i in range(h):
        add(nin(i, w - 1) + 1, 1, 0.0)
    m = len(tails)
    cap = np.zeros(m, np.int64)
    cap[0::2] = 1
    return FlowNetwork(h, w, s, lam, np.asarray(tails, np.int64), np.asarray(heads, np.int64),
                       cap, np.asarray(costs, np.float64))


@njit(cache=True)
def _ssp(nv, tail, head, cap, cost, src, snk, units):
    """Successive shortest paths with potentials; unit augmentations."""
    m = tail.shape[0]
    deg = np.zeros(nv + 1, np.int64)
    for e in range(m):
        deg[tail[e] + 1] += 1
    for v in range(nv):
        deg[v + 1] += deg[v]
    adj = np.empty(m, np.int64)
    fill = deg[:-1].copy()
    for e in range(m):
        adj[fill[tail[e]]] = e
        fill[tail[e]] += 1
    cap = cap.copy()
    inf = np.inf
    # initial potentials: Bellman-Ford over forward edges (the network is acyclic)
    pot = np.full(nv, inf)
    pot[src] = 0.0
    for _ in range(nv):
        changed = False
        for e in range(0, m, 2):
            u = tail[e]
            if pot[u] < inf and pot[u] + cost[e] < pot[head[e]]:
                pot[head[e]] = pot[u] + cost[e]
                changed = True
        if not changed:
            break
    for v in range(nv):
        if pot[v] == inf:
            pot[v] = 0.0
    dist = np.empty(nv)
    prev = np.empty(nv, np.int64)
    done = np.empty(nv, np.bool_)
    sent = 0
    for _ in range(units):
        dist[:] = inf
        prev[:] = -1
        done[:] = False
        dist[src] = 0.0
        while True:
            u = -1
            best = inf
            for v in range(nv):
                if not done[v] and dist[v] < best:
                    best = dist[v]
                    u = v
            if u < 0:
                break
            done[u] = True
            for a in range(deg[u], deg[u + 1]):
                e = adj[a]
                if cap[e] <= 0:
                    continue
                v = head[e]
                rc = cost[e] + pot[u] - pot[v]
                if rc < 0.0:
                    rc = 0.0
                nd = dist[u] + rc
                if nd < dist[v]:
                    dist[v] = nd
                    prev[v] = e
        if dist[snk] == inf:
            break
        for v in range(nv):
            if dist[v] < inf:
                pot[v] += dist[v]
        v = snk
        while v != src:
            e = prev[v]
            cap[e] -= 1
            cap[e ^ 1] += 1
            v = tail[e]
        sent += 1
    return sent, cap


def min_cost_flow(G: FlowNetwork, X: GridSignal | None = None) -> SupportResult:
    """Integral min-cost flow of value ``s``; the support is the set of used entries.

    The result carries the ``s`` node-disjoint paths of the flow in
    ``metadata['paths']`` (one row per path, one entry per column).
    """
    if G.s > G.h:
        raise ValueError("supply exceeds column height")
    sent, cap = _ssp(G.n_nodes, G.tail, G.head, G.cap, G.cost, 0, 1, G.s)
    if sent < G.s:
        raise ValueError("network cannot carry the requested flow")
    used = (cap[0::2] == 0)
    fwd_t = G.tail[0::2][used]
    fwd_h = G.head[0::2][used]
    nxt = {}
    for u, v in zip(fwd_t.tolist(), fwd_h.tolist()):
        nxt.setdefault(u, []).append(v)
    paths = []
    for v0 in nxt.get(0, []):
        path = []
        v = v0
        while v != 1:
            cell = (v - 2) // 2
            path.append(cell % G.h)
            v = nxt[v + 1][0]
        paths.append(path)
    paths = np.asarray(paths, dtype=np.int64)
    rows = np.sort(paths, axis=0)
    P = X.powered() if X is not None else -G.cost[0::2][G.h:G.h + G.h * G.w].reshape(G.w, G.h).T
    res = _result(P, rows, lam=G.lam)
    res.metadata["paths"] = paths
    return res


def _flow(X: GridSignal, params: CemdParams, lam) -> SupportResult:
    return min_cost_flow(build_flow_network(X, params, lam), X)


def _objective(res: SupportResult, lam) -> Fraction:
    return -Fraction(res.phi) + Fraction(lam) * res.emd


# --------------------------------------------------------------------------
# lambda search


def _xrange(P: np.ndarray):
    nz = P[P > 0]
    if nz.size == 0:
        return None, None
    return float(nz.min()), float(nz.max())


def lambda_search(X: GridSignal, params: CemdParams, max_iter: int = 200):
    """Bisection over the EMD price.

    Returns ``(omega_l, omega_r, bracket)`` with ``emd(omega_l) <= B <=
    emd(omega_r)``.  When the unconstrained optimum already satisfies the
    budget both solutions are that optimum.  ``bracket.converged`` is False
    if the iteration cap stopped the search before the width target.
    """
    P = X.powered()
    x_min, x_max = _xrange(P)
    s = params.s(X)
    if x_min is None:
        rows = np.tile(np.arange(s)[:, None], (1, X.w))
        r = _result(P, rows, lam=0)
        return r, r, LambdaBracket(Fraction(0), Fraction(0), 0.0, 0.0)
    B = params.B
    om0 = _flow(X, params, 0)
    if om0.emd <= B:
        return om0, om0, LambdaBracket(Fraction(0), Fraction(0), x_min, x_max)
    hi = Fraction(2 * x_max) * X.h * X.w
    omh = _flow(X, params, hi)
    while omh.emd > 0:
        hi *= 2
        omh = _flow(X, params, hi)
    l, r = hi, Fraction(0)
    om_l, om_r = omh, om0
    width = Fraction(params.delta) * Fraction(x_min) / (X.w * X.h**2)
    it = 0
    while l - r > width and it < max_iter:
        mid = (l + r) / 2
        om = _flow(X, params, mid)
        if om.emd <= B:
            l, om_l = mid, om
        else:
            r, om_r = mid, om
        it += 1
        assert om_l.emd <= B <= om_r.emd
    br = LambdaBracket(l, r, x_min, x_max, it, l - r <= width)
    return om_l, om_r, br


# --------------------------------------------------------------------------
# path decomposition


def path_phi(P: np.ndarray, path) -> int | float | Fraction:
    path = np.asarray(path, dtype=np.int64)
    return normalize(exact_sum(P[path, np.arange(path.size)]))


def path_emd(path) -> int:
    return int(np.abs(np.diff(np.asarray(path, dtype=np.int64))).sum())


def path_decompose(path, d: int, X: GridSignal | np.ndarray, check: bool = True) -> np.ndarray:
    """A path with at most ``1/d`` of the EMD and at least ``1/(2d)`` of the head value.

    ``path[j]`` is the row used in column ``j``.  The path is cut at a row:
    the lower part is the path clamped from above, the upper part the path
    clamped from below.  Returns the lower part, a single straight row, or
    the decomposition of the upper part with ``d - 1``.
    """
    if int(d) != d or d < 1:
        raise ValueError("d must be a positive integer")
    P = X.powered() if isinstance(X, GridSignal) else np.asarray(X)
    path = np.asarray(path, dtype=np.int64)
    d = int(d)
    while True:
        D = path_emd(path)
        if d == 1 or D == 0:
            return path
        F = Fraction(path_phi(P, path))
        lo, hi = int(path.min()), int(path.max())
        # lower parts only gain EMD as the cut rises: take the highest admissible cut
        t = lo
        for c in range(lo, hi):
            if path_emd(np.minimum(path, c)) * d <= D:
                t = c
            else:
                break
        low = np.minimum(path, t)
        if check:
            for c in range(lo, hi):
                lw, up = np.minimum(path, c), np.maximum(path, c + 1)
                assert Fraction(path_phi(P, lw)) + Fraction(path_phi(P, up)) >= F
                assert path_emd(lw) + path_emd(up) <= D
        if Fraction(path_phi(P, low)) * 2 * d >= F:
            return low
        row = np.full(path.size, t + 1, dtype=np.int64)
        if Fraction(path_phi(P, row)) * 2 * d >= F:
            return row
        path = np.maximum(path, t + 2)
        d -= 1


def _decollide(rows: np.ndarray, h: int) -> np.ndarray:
    """Turn per-column row multisets into sets without raising the EMD.

    Rank ``i`` of a column is mapped to ``i + clamp(r_i - i, 0, h - s)`` after
    sorting the shifted values; both steps are 1-Lipschitz per rank, so the
    sorted-pairing EMD between neighbouring columns cannot grow.
    """
    s, w = rows.shape
    out = np.empty_like(rows)
    idx = np.arange(s)
    for j in range(w):
        r = np.sort(rows[:, j])
        dlt = np.sort(np.clip(r - idx, 0, h - s))
        out[:, j] = dlt + idx
    return out


# --------------------------------------------------------------------------
# projections


def cemd_head_projection(X: GridSignal, params: CemdParams) -> SupportResult:
    """In-model support whose head value is at least ``(1/4 - delta)`` of the best.

    The support has exactly ``s`` entries per column and EMD at most ``B``.
    """
    s = params.s(X)
    P = X.powered()
    B = params.B
    om_l, om_r, br = lambda_search(X, params)
    meta = {"lambda_l": str(br.l), "lambda_r": str(br.r), "iterations": br.iterations,
            "bracket_converged": br.converged}
    if om_r.emd <= B:
        om_r.metadata.update(meta, source="unconstrained")
        return om_r
    om_l.metadata.update(meta, source="omega_l")
    if B == 0:
        # the large-price flow is already optimal among zero-EMD supports
        return om_l
    d = int(om_r.emd // B)
    # rank paths: pairing sorted rows of neighbouring columns realizes the EMD
    ranks = np.sort(om_r.rows, axis=0)
    parts = np.stack([path_decompose(ranks[i], d + 1, P) for i in range(s)])
    rows_rp = _decollide(parts, X.h) if _collides(parts) else np.sort(parts, axis=0)
    cand = _result(P, rows_rp, source="omega_r_prime", d=d)
    if cand.emd > B:
        raise AssertionError("decomposed support exceeds the EMD budget")
    cand.metadata.update(meta)
    if Fraction(cand.phi) > Fraction(om_l.phi):
        return cand
    return om_l


def _collides(rows: np.ndarray) -> bool:
    return any(np.unique(rows[:, j]).size < rows.shape[0] for j in range(rows.shape[1]))


def _lambda_grid(X: GridSignal, P) -> list:
    x_min, x_max = _xrange(P)
    if x_min is None:
        return [Fraction(0)]
    hi = Fraction(2 * x_max) * X.h * X.w
    lo = Fraction(x_min) / (4 * X.w * X.h**2)
    grid = [Fraction(0)]
    lam = lo
    while lam < hi:
        grid.append(lam)
        lam *= 2
    grid.append(hi)
    return grid


def cemd_tail_projection(X: GridSignal, params: CemdParams, slack: int = 2) -> SupportResult:
    """Support with EMD at most ``slack * B`` and the largest head found on a fixed price grid.

    The price grid depends only on ``X``, so a larger budget can only admit
    more candidates: the tail is non-increasing in ``B``.
    """
    s = params.s(X)
    P = X.powered()
    limit = slack * params.B
    best = None
    grid = _lambda_grid(X, P)
    for lam in grid:
        om = _flow(X, params, lam)
        if om.emd <= limit and (best is None or Fraction(om.phi) > Fraction(best.phi)):
            best = om
    if best is None:
        rows = np.tile(np.arange(s)[:, None], (1, X.w))
        best = _result(P, rows)
    total = normalize(exact_sum(P.ravel()))
    best.metadata.update(tail=normalize(Fraction(total) - Fraction(best.phi)), grid_size=len(grid))
    return best


def exact_cemd(X: GridSignal, params: CemdParams) -> SupportResult:
    """Best in-model support by dynamic programming over column subsets.

    States are (rows of the current column, EMD spent so far); the cost is
    ``C(h, s)**2 * w * (B + 1)``, so this is only for small grids.
    """
    s = params.s(X)
    P = X.powered()
    B = int(math.floor(params.B))
    subsets = [np.array(c) for c in itertools.combinations(range(X.h), s)]
    col = [[Fraction(exact_sum(P[c, j])) for c in subsets] for j in range(X.w)]
    move = np.array([[int(np.abs(a - b).sum()) for b in subsets] for a in subsets])
    # best[(c, d)] = (value, back-pointer)
    layers = [{(c, 0): (col[0][c], None) for c in range(len(subsets))}]
    for j in range(1, X.w):
        nxt = {}
        for (c, d), (v, _) in layers[-1].items():
            for c2 in range(len(subsets)):
                d2 = d + int(move[c, c2])
                if d2 > B:
                    continue
                v2 = v + col[j][c2]
                key = (c2, d2)
                if key not in nxt or v2 > nxt[key][0]:
                    nxt[key] = (v2, (c, d))
        layers.append(nxt)
    key = max(layers[-1], key=lambda k_: layers[-1][k_][0])
    rows = np.empty((s, X.w), dtype=np.int64)
    for j in range(X.w - 1, -1, -1):
        rows[:, j] = subsets[key[0]]
        key = layers[j][key][1]
    return _result(P, rows, source="exact")
