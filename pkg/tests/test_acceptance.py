"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``REPORT`` and printed at the end of the pytest
run (see ``conftest.py``); running this file directly prints them as well.
"""

import itertools
import math
import statistics
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import all_paths, brute_cemd_opt, brute_flow_objective, rooted_subtrees
from structsparse.cemd_model import (CemdParams, GridSignal, build_flow_network, cemd_head_projection,
                                     in_model, min_cost_flow, path_decompose, path_emd, path_phi)
from structsparse.recovery import RecoveryConfig, am_iht, generate_instance, validate_cemd
from structsparse.rs_conv import (RepSeq, completion, exact_maxplus, exact_minplus, fast_rs_maxplus,
                                  fast_rs_minplus, head_completion, rs_minplus, thin_head, thin_tail)
from structsparse.tree_model import (DiscretizationContext, ProjectionBudget, TreeSignal, discretize,
                                     exact_tree_projection, fast_tail_tree, head_baseline,
                                     is_rooted_subtree, linear_head_tree, linear_tail_tree,
                                     tail_baseline)

REPORT: dict[int, str] = {}


def report(num: int, name: str, ok: bool, detail: str) -> None:
    REPORT[num] = f"criterion {num} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
    print(REPORT[num])


# ---- trees -------------------------------------------------------------------

TREE_SIZES = (15, 63, 255, 1023)
TREE_EPS = (0.1, 0.5)


def tree_instances():
    """50 random perfect binary trees per size, weights U[0, 100]."""
    rng = np.random.default_rng(2024)
    for n in TREE_SIZES:
        for _ in range(50):
            T = TreeSignal(rng.integers(0, 101, size=n))
            for k in sorted({1, math.ceil(n / 10), math.ceil(n / 3)}):
                yield T, k


def valid(sol, T, k):
    return is_rooted_subtree(sol.support, T.n, T.b) and len(sol) <= k


def test_tail_ratio():
    t0 = time.perf_counter()
    checks = bad = 0
    for T, k in tree_instances():
        opt = exact_tree_projection(T, k).tail_value
        for eps in TREE_EPS:
            runs = [fast_tail_tree(T, ProjectionBudget(k, eps))]
            if k <= T.n ** 0.5:
                runs.append(linear_tail_tree(T, ProjectionBudget(k, eps, 0.5)))
            for sol in runs:
                checks += 1
                bad += not (valid(sol, T, k) and sol.tail_value <= (1 + Fraction(eps)) * opt)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 60
    report(1, "tail ratio", ok, f"{checks} checks, {bad} violations, {elapsed:.1f} s")
    assert ok


def test_head_ratio():
    checks = bad = 0
    for T, k in tree_instances():
        opt = exact_tree_projection(T, k, "head").head_value
        for eps in TREE_EPS:
            sol = linear_head_tree(T, ProjectionBudget(k, eps))
            checks += 1
            bad += not (valid(sol, T, k) and sol.head_value >= (1 - Fraction(eps)) * opt)
    report(2, "head ratio", bad == 0, f"{checks} checks, {bad} violations")
    assert bad == 0


# ---- convolution sandwich ----------------------------------------------------

GAPS = [Fraction(1), Fraction(1, 2), Fraction(1, 3), Fraction(1, 4), Fraction(1, 8), Fraction(1, 10),
        Fraction(1, 16), Fraction(1, 32)]


def random_staircase(rng, m):
    """Nondecreasing integers in {0} or [1, 1e6], starting at 0."""
    vals = np.sort(rng.integers(1, 10**6 + 1, size=m))
    vals[: int(rng.integers(1, 3))] = 0
    return vals.tolist()


def test_convolution_sandwich():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(1000):
        alpha = GAPS[int(rng.integers(len(GAPS)))]
        smaller = [g for g in GAPS if g <= alpha]
        beta = smaller[int(rng.integers(len(smaller)))]
        da = random_staircase(rng, int(rng.integers(1, 30)))
        db = random_staircase(rng, int(rng.integers(1, 30)))
        A = RepSeq.from_pairs(thin_tail(list(enumerate(da)), alpha)[0], alpha)
        B = RepSeq.from_pairs(thin_tail(list(enumerate(db)), alpha)[0], alpha)
        exact = exact_minplus(completion(A), completion(B))
        for out in (rs_minplus(alpha, beta, A, B), fast_rs_minplus(alpha, beta, A, B)):
            c = completion(out)
            for t in range(exact.size):
                ct = Fraction(int(c[min(t, c.size - 1)]))
                if not Fraction(int(exact[t])) <= ct <= (1 + beta) * int(exact[t]):
                    bad += 1
                    break
        # max side: head sequences must start at index 0
        Ah = RepSeq.from_pairs(thin_head(list(enumerate(da)), alpha)[0], alpha)
        Bh = RepSeq.from_pairs(thin_head(list(enumerate(db)), alpha)[0], alpha)
        M1, M2 = len(da) - 1, len(db) - 1
        ex = exact_maxplus(head_completion(Ah, M1), head_completion(Bh, M2))
        hc = head_completion(fast_rs_maxplus(alpha, beta, Ah, Bh, (M1, M2)), M1 + M2)
        for t in range(ex.size):
            if not (1 - beta) * int(ex[t]) <= Fraction(int(hc[t])) <= int(ex[t]):
                bad += 1
                break
    report(3, "convolution sandwich", bad == 0, f"1000 cases, {bad} violations")
    assert bad == 0


# ---- discretization ----------------------------------------------------------


def discretized_optima(weights, disc, k):
    """Original (head, tail) of every support that is optimal for ``disc``.

    Ties on the rounded weights are all reported, so the caller can check
    the worst one.
    """
    n = len(weights)
    total = int(np.sum(weights))
    best, sets = None, []
    for S in rooted_subtrees(n, 2, k):
        if len(S) > k:
            continue
        v = sum(int(disc[i]) for i in S)
        if best is None or v > best:
            best, sets = v, [S]
        elif v == best:
            sets.append(S)
    heads = [sum(int(weights[i]) for i in S) for S in sets]
    return heads, [total - h for h in heads]


def test_discretization_bounds():
    rng = np.random.default_rng(11)
    bad = cases = 0
    for _ in range(100):
        n = int(rng.choice([7, 15, 31]))
        w = rng.integers(0, 101, size=n)
        T = TreeSignal(w)
        k = int(rng.integers(1, min(n, 6) + 1))
        eps = float(rng.choice([0.1, 0.25, 0.5]))
        L = math.ceil(math.log2(n))
        opt = exact_tree_projection(T, k)
        opt_t, opt_h = opt.tail_value, opt.head_value
        W = tail_baseline(T, k)[1]
        Wh = head_baseline(T, k)[1]
        cases += 1
        ok = opt_t <= W <= L * opt_t
        ok &= opt_h == 0 or opt_h < (2 * L + 1) * Wh
        if W > 0:
            xd = discretize(T, DiscretizationContext(W, "tail", eps, n, k, L)).weights
            _, tails = discretized_optima(w, xd, k)
            ok &= max(tails) <= (1 + Fraction(eps)) * opt_t
        if Wh > 0:
            xd = discretize(T, DiscretizationContext(Wh, "head", eps, n, k, L)).weights
            heads, _ = discretized_optima(w, xd, k)
            ok &= min(heads) >= (1 - Fraction(eps)) * opt_h
        bad += not ok
    report(4, "discretization and baselines", bad == 0, f"{cases} trees, {bad} violations")
    assert bad == 0


# ---- CEMD --------------------------------------------------------------------


def grid_shapes(hmax, wmax, smax):
    for h in range(1, hmax + 1):
        for w in range(1, wmax + 1):
            for s in range(1, min(h, smax) + 1):
                yield h, w, s


def test_flow_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    bad = cases = 0
    for h, w, s in grid_shapes(4, 3, 2):
        for _ in range(25):
            X = rng.integers(0, 10, size=(h, w))
            G = GridSignal(X)
            for lam in (0, 1, 5):
                r = min_cost_flow(build_flow_network(G, CemdParams(s * w, 0), lam), G)
                cases += 1
                ok = -Fraction(r.phi) + lam * r.emd == brute_flow_objective(X.tolist(), s, lam)
                paths = r.metadata["paths"]
                cells = {(int(i), j) for p in paths for j, i in enumerate(p)}
                ok &= len(paths) == s and len(cells) == s * w
                bad += not ok
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 120
    report(5, "flow optimality", ok, f"{cases} flows, {bad} violations, {elapsed:.1f} s")
    assert ok


def test_path_decomposition():
    rng = np.random.default_rng(6)
    bad = cases = 0
    for _ in range(500):
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        P = rng.integers(0, 10, size=(h, w))
        path = rng.integers(0, h, size=w)
        d = int(rng.integers(1, 5))
        out = path_decompose(path, d, P)
        D, F = path_emd(path), Fraction(path_phi(P, path))
        ok = path_emd(out) * d <= D and 2 * d * Fraction(path_phi(P, out)) >= F
        if h <= 4 and w <= 4:
            # the best path within the reduced budget must also clear the bound
            best = max(Fraction(path_phi(P, np.array(q))) for q in all_paths(h, w)
                       if path_emd(np.array(q)) * d <= D)
            ok &= Fraction(path_phi(P, out)) <= best and 2 * d * best >= F
        cases += 1
        bad += not ok
    report(6, "path decomposition", bad == 0, f"{cases} paths, {bad} violations")
    assert bad == 0


def test_cemd_head_guarantee():
    rng = np.random.default_rng(8)
    delta = 0.05
    bad = cases = 0
    worst = Fraction(10)
    for h, w, s in grid_shapes(5, 3, 2):
        for B, p in itertools.product((0, 1, 2, 4), (1, 2)):
            for _ in range(3):
                X = rng.integers(0, 10, size=(h, w))
                r = cemd_head_projection(GridSignal(X, float(p)), CemdParams(s * w, B, delta))
                opt = brute_cemd_opt((X ** p).tolist(), s, B)
                ok = in_model(r.rows, h, w, s, B)
                ok &= Fraction(r.phi) >= (Fraction(1, 4) - Fraction(delta)) * opt
                if opt:
                    worst = min(worst, Fraction(r.phi) / opt)
                cases += 1
                bad += not ok
    report(7, "CEMD head guarantee", bad == 0,
           f"{cases} grids, {bad} violations, worst ratio {float(worst):.3f}")
    assert bad == 0


# ---- recovery ----------------------------------------------------------------


def recovery_run(cfg, in_model_check):
    ok = violations = 0
    for seed in range(50):
        x, sysm = generate_instance(cfg, 0.0, seed)
        res = am_iht(sysm, cfg)
        ok += np.linalg.norm(x - res.x) <= 1e-3 * np.linalg.norm(x) and res.iterations <= 50
        violations += not all(in_model_check(T) for T in res.metadata["supports"])
        violations += not in_model_check(res.x != 0)
    return ok, violations


def test_recovery():
    tree = RecoveryConfig("tree", 16, n=255, measurement_factor=6, max_iters=50)
    cemd = RecoveryConfig("cemd", 16, h=8, w=8, B=8, max_iters=50)

    def tree_ok(T):
        return T.sum() <= 16 and is_rooted_subtree(np.flatnonzero(T), 255)

    def cemd_ok(T):
        return validate_cemd(np.asarray(T).reshape(8, 8), 8, 8, 2, 16)

    t_ok, t_bad = recovery_run(tree, tree_ok)
    c_ok, c_bad = recovery_run(cemd, cemd_ok)
    ok = t_ok >= 45 and c_ok >= 45 and t_bad == 0 and c_bad == 0
    report(8, "recovery", ok, f"tree {t_ok}/50, CEMD {c_ok}/50, off-model iterates {t_bad + c_bad}")
    assert ok


# ---- scaling -----------------------------------------------------------------


def timed(f, T, k):
    t = time.perf_counter()
    f(T, ProjectionBudget(k, 0.2))
    return time.perf_counter() - t


def paired_ratio(f, small, big, rounds=3, inner=5):
    """Median over rounds of (large run) / (median of small runs in the same round).

    Interleaving keeps slow drifts of the machine out of the ratio.
    """
    timed(f, small, small.n // 10)
    timed(f, big, big.n // 10)
    ratios, bigs = [], []
    for _ in range(rounds):
        ts = statistics.median(timed(f, small, small.n // 10) for _ in range(inner))
        tb = timed(f, big, big.n // 10)
        ratios.append(tb / ts)
        bigs.append(tb)
    return statistics.median(ratios), statistics.median(bigs)


@pytest.mark.slow
def test_near_linear_scaling():
    rng = np.random.default_rng(9)
    small = TreeSignal(rng.integers(0, 101, size=2**14 - 1))
    big = TreeSignal(rng.integers(0, 101, size=2**20 - 1))
    parts, ok = [], True
    for f in (fast_tail_tree, linear_head_tree):
        ratio, tb = paired_ratio(f, small, big)
        ok &= ratio < 128 and tb < 30
        parts.append(f"{f.__name__} {tb:.2f} s, ratio {ratio:.0f}x")
    report(9, "near-linear scaling", ok, "; ".join(parts))
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
