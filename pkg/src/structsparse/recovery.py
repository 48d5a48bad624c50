"""Model-based iterative hard thresholding with approximate projections.

Each iteration takes a gradient step restricted to the support returned by a
head oracle, then projects the result with a tail oracle:

    x <- T(x + mu * H(A^T (y - A x)))

``mu`` starts from the normalized-IHT rule; a few larger multiples are tried
and the step is halved until the residual does not increase.  Iterates are
least-squares fits on the tail support when ``debias`` is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .cemd_model import CemdParams, GridSignal, cemd_head_projection, cemd_tail_projection, support_emd
from .tree_model import (ProjectionBudget, TreeSignal, fast_tail_tree, is_rooted_subtree,
                         linear_head_tree)

__all__ = [
    "MeasurementSystem",
    "RecoveryConfig",
    "RecoveryResult",
    "generate_instance",
    "random_rooted_subtree",
    "random_cemd_support",
    "tree_oracles",
    "cemd_oracles",
    "am_iht",
    "validate_tree",
    "validate_cemd",
    "measurement_count",
]

Oracle = Callable[[np.ndarray], np.ndarray]


@dataclass
class MeasurementSystem:
    A: np.ndarray
    y: np.ndarray
    e: np.ndarray


@dataclass
class RecoveryConfig:
    model: str
    k: int
    n: int | None = None
    b: int = 2
    h: int | None = None
    w: int | None = None
    B: int = 0
    epsilon: float = 0.1
    delta: float = 0.05
    max_iters: int = 50
    tol: float = 1e-12
    measurement_factor: float = 6.0
    head_factor: int = 1
    max_backtracks: int = 30
    debias: bool = True
    step_search: int = 3

    def __post_init__(self):
        if self.model not in ("tree", "cemd"):
            raise ValueError("model must be 'tree' or 'cemd'")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.model == "tree" and not self.n:
            raise ValueError("tree model needs n")
        if self.model == "cemd":
            if not (self.h and self.w):
                raise ValueError("cemd model needs h and w")
            if self.k % self.w or self.k // self.w > self.h:
                raise ValueError("k must be a multiple of w with k/w <= h")
            if self.B < 0:
                raise ValueError("B must be non-negative")

    @property
    def size(self) -> int:
        return self.n if self.model == "tree" else self.h * self.w


@dataclass
class RecoveryResult:
    x: np.ndarray
    iterations: int
    residuals: list
    support: np.ndarray
    metadata: dict = field(default_factory=dict)


def measurement_count(config: RecoveryConfig) -> int:
    """``factor * k`` for trees; ``k + ceil(3 k max(1, ln(B/k)))`` for CEMD."""
    k = config.k
    if config.model == "tree":
        return int(math.ceil(config.measurement_factor * k))
    B = max(config.B, 1)
    return k + int(math.ceil(3 * k * max(1.0, math.log(B / k))))


# --------------------------------------------------------------------------
# instance generation


def random_rooted_subtree(n: int, k: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """Grow a rooted subtree by adding uniformly random frontier nodes."""
    if k > n:
        raise ValueError("k exceeds the tree size")
    chosen = [0]
    frontier = [c for c in range(1, b + 1) if c < n]
    while len(chosen) < k:
        v = frontier.pop(int(rng.integers(len(frontier))))
        chosen.append(v)
        frontier.extend(c for c in range(b * v + 1, b * v + b + 1) if c < n)
    return np.sort(np.asarray(chosen, dtype=np.int64))


def random_cemd_support(h: int, w: int, s: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """Random rows (s x w) with distinct rows per column and EMD at most B."""
    if s > h:
        raise ValueError("s exceeds the column height")
    rows = np.empty((s, w), dtype=np.int64)
    rows[:, 0] = np.sort(rng.choice(h, size=s, replace=False))
    used = 0
    for j in range(1, w):
        prev = rows[:, j - 1]
        cand = np.sort(np.clip(prev + rng.integers(-1, 2, size=s), 0, h - 1))
        cost = int(np.abs(cand - prev).sum())
        if np.unique(cand).size == s and used + cost <= B:
            rows[:, j] = cand
            used += cost
        else:
            rows[:, j] = prev
    return rows


def generate_instance(config: RecoveryConfig, noise_level: float = 0.0, seed: int | None = None,
                      m: int | None = None):
    """Random in-model signal, Gaussian measurements and scaled noise.

    Returns ``(x, system)``; the CEMD signal is flattened row-major.
    """
    rng = np.random.default_rng(seed)
    n = config.size
    x = np.zeros(n)
    if config.model == "tree":
        sup = random_rooted_subtree(n, config.k, config.b, rng)
        x[sup] = rng.standard_normal(sup.size)
    else:
        s = config.k // config.w
        rows = random_cemd_support(config.h, config.w, s, config.B, rng)
        X = np.zeros((config.h, config.w))
        X[rows, np.arange(config.w)[None, :]] = rng.standard_normal(rows.shape)
        x = X.ravel()
    m = measurement_count(config) if m is None else m
    A = rng.standard_normal((m, n)) / math.sqrt(m)
    e = np.zeros(m)
    if noise_level > 0:
        e = rng.standard_normal(m)
        e *= noise_level / np.linalg.norm(e)
    return x, MeasurementSystem(A, A @ x + e, e)


# --------------------------------------------------------------------------
# oracles


def tree_oracles(config: RecoveryConfig, head_factor: int | None = None):
    """Head and tail oracles returning boolean supports; both work on ``|v|**2``."""
    kh = min((head_factor or config.head_factor) * config.k, config.n)

    def head(v):
        T = TreeSignal(np.abs(v), config.b, 2.0)
        sol = linear_head_tree(T, ProjectionBudget(kh, config.epsilon, config.delta))
        m = np.zeros(v.size, bool)
        m[sol.support[sol.support < v.size]] = True
        return m

    def tail(v):
        T = TreeSignal(np.abs(v), config.b, 2.0)
        sol = fast_tail_tree(T, ProjectionBudget(config.k, config.epsilon, config.delta))
        m = np.zeros(v.size, bool)
        m[sol.support[sol.support < v.size]] = True
        return m

    return head, tail


def cemd_oracles(config: RecoveryConfig, head_factor: int | None = None):
    hf = head_factor or config.head_factor
    h, w = config.h, config.w
    s = config.k // w
    sh = min(hf * s, h)
    head_params = CemdParams(sh * w, hf * config.B + config.B, config.delta)
    tail_params = CemdParams(config.k, config.B, config.delta)

    def head(v):
        r = cemd_head_projection(GridSignal(np.abs(v).reshape(h, w), 2.0), head_params)
        return r.mask(h).ravel()

    def tail(v):
        r = cemd_tail_projection(GridSignal(np.abs(v).reshape(h, w), 2.0), tail_params)
        return r.mask(h).ravel()

    return head, tail


# --------------------------------------------------------------------------
# validators


def validate_tree(x: np.ndarray, k: int, b: int = 2) -> bool:
    sup = np.flatnonzero(x)
    return sup.size <= k and is_rooted_subtree(sup, x.size, b)


def validate_cemd(support: np.ndarray, h: int, w: int, s: int, B, x: np.ndarray | None = None) -> bool:
    """``support`` holds s rows per column with EMD <= B, and covers the nonzeros of ``x``."""
    M = np.asarray(support, dtype=bool).reshape(h, w)
    if np.any(M.sum(axis=0) != s):
        return False
    if x is not None and np.any((np.asarray(x).reshape(h, w) != 0) & ~M):
        return False
    return support_emd(M, h, w) <= B


# --------------------------------------------------------------------------
# the loop


def _step(A, y, x, d, tail_oracle, debias):
    b = x + d
    T = tail_oracle(b)
    xn = np.where(T, b, 0.0)
    if debias and T.any():
        # least squares on the chosen support; the support stays in the model
        cols = np.flatnonzero(T)
        xn = np.zeros(x.size)
        xn[cols] = np.linalg.lstsq(A[:, cols], y, rcond=None)[0]
    rn_new = y - A @ xn
    return T, xn, rn_new, float(np.linalg.norm(rn_new))


def am_iht(system: MeasurementSystem, config: RecoveryConfig, head_oracle: Oracle | None = None,
           tail_oracle: Oracle | None = None, x0: np.ndarray | None = None) -> RecoveryResult:
    """Recover an in-model signal from ``y = A x + e``.

    The oracles map a vector to a boolean support.  Every iterate is the
    restriction of a vector to a tail-oracle support, so it is in the model.

    The first trial step tries ``mu * 2**j`` for ``j <= step_search`` and keeps
    the lowest residual; ``mu`` is then halved until the residual does not
    increase.
    """
    if head_oracle is None or tail_oracle is None:
        h, t = tree_oracles(config) if config.model == "tree" else cemd_oracles(config)
        head_oracle = head_oracle or h
        tail_oracle = tail_oracle or t
    A, y = system.A, system.y
    n = A.shape[1]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    sup = x != 0
    res = y - A @ x
    rn = float(np.linalg.norm(res))
    history = [rn]
    supports = []
    scales = [2.0**j for j in range(config.step_search + 1)]
    it = 0
    for it in range(1, config.max_iters + 1):
        g = A.T @ res
        gh = np.where(head_oracle(g), g, 0.0)
        Ag = A @ gh
        den = float(Ag @ Ag)
        if den == 0.0:
            break
        mu = float(gh @ gh) / den
        best = None
        for j in range(config.max_backtracks):
            for c in (scales if j == 0 else (1.0,)):
                cand = _step(A, y, x, mu * c * gh, tail_oracle, config.debias)
                if best is None or cand[3] < best[3]:
                    best = cand
            if best[3] <= rn:
                break
            mu /= 2
        T, xn, rn_new, nn = best
        if nn > rn:
            break
        improvement = rn - nn
        x, res, rn, sup = xn, rn_new, nn, T
        history.append(rn)
        supports.append(T.copy())
        if rn <= config.tol * max(1.0, float(np.linalg.norm(y))) or improvement <= config.tol * rn:
            break
    return RecoveryResult(x, it, history, sup, {"accepted_steps": len(history) - 1, "supports": supports})
