"""Compiled inner loops shared by the convolution and tree modules.

All sequence values are int64.  An approximation parameter beta is carried as
an exact rational ``p / q`` so every gap test is an integer comparison:
``v <= s / (1 + beta)``  becomes  ``v * (q + p) <= s * q``.

Back-pointer codes used in the per-level storage (``b1`` column):

* ``>= 0``  position in the previous fold accumulator (or in child 0)
* ``-1``    node excluded, together with its whole subtree
* ``-2``    node included, nothing below it is referenced
* ``<= -10`` link into forest ``-(b1 + 10)``; ``b2`` holds the position there
"""

import math

import numpy as np
from numba import njit

EXCLUDED = -1
TERMINAL = -2
LINK_BASE = -10


@njit(cache=True)
def build_table(vals, m, lb):
    """Step-hash table: ``tbl[key + 1]`` is the last position with value <= (1+beta)**key."""
    top = vals[m - 1]
    K = 0
    if top >= 1:
        K = int(math.ceil(math.log(top) / lb)) + 1
    tbl = np.empty(K + 2, np.int64)
    w = -1
    for key in range(-1, K + 1):
        thr = math.exp(key * lb)
        while w + 1 < m and vals[w + 1] <= thr:
            w += 1
        tbl[key + 1] = w
    return tbl


@njit(cache=True)
def find_le(vals, m, c, R, F, tbl, lb, use_tbl):
    """Largest position w with ``(vals[w] + c) * F <= R``, or -1."""
    if use_tbl:
        y = R / F - c
        if y < 1.0:
            key = -1
        else:
            key = int(math.ceil(math.log(y) / lb))
        kmax = tbl.shape[0] - 2
        if key > kmax:
            key = kmax
        w = tbl[key + 1]
        while w + 1 < m and (vals[w + 1] + c) * F <= R:
            w += 1
        while w >= 0 and (vals[w] + c) * F > R:
            w -= 1
        return w
    lo = 0
    hi = m
    while lo < hi:
        mid = (lo + hi) >> 1
        if (vals[mid] + c) * F <= R:
            lo = mid + 1
        else:
            hi = mid
    return lo - 1


@njit(cache=True)
def choose_table(av, ma, bv, mb, ai, bi, lb):
    U = max(av[ma - 1], bv[mb - 1])
    M = max(ai[ma - 1], bi[mb - 1])
    if U < 1:
        return False
    return math.ceil(math.log(U) / lb) < M


@njit(cache=True)
def descent_min(ai, av, ma, bi, bv, mb, p, q, tau, mode, verbatim, oi, ov, o1, o2):
    """Threshold descent for an approximate (min,+) convolution.

    Writes entries in ascending index order; returns the count.  ``mode`` is
    0 for binary-search lookups, 1 for step-hash lookups, -1 to pick by size.
    """
    F = q + p
    lb = math.log1p(p / q)
    if mode < 0:
        use_tbl = choose_table(av, ma, bv, mb, ai, bi, lb)
    else:
        use_tbl = mode == 1
    if use_tbl:
        ta = build_table(av, ma, lb)
        tb = build_table(bv, mb, lb)
    else:
        ta = np.empty(1, np.int64)
        tb = ta
    n = 0
    oi[0] = ai[ma - 1] + bi[mb - 1]
    ov[0] = av[ma - 1] + bv[mb - 1]
    o1[0] = ma - 1
    o2[0] = mb - 1
    n = 1
    s = ov[0]
    a0 = av[0]
    b0 = bv[0]
    while (a0 + b0) * F < s * q:
        R = s * q
        # for integers, (v + c) * F <= R exactly when v + c <= R // F
        Rf = R // F
        t = find_le(bv, mb, a0, R, F, tb, lb, use_tbl)
        bl = ai[0] + bi[t]
        bs = a0 + bv[t]
        bu = 0
        bw = t
        vp = find_le(av, ma, b0, R, F, ta, lb, use_tbl)
        # a window position's partner is at most the partner of the window's
        # far end, which bounds every index still reachable in that window
        ulo = find_le(av, ma, bv[max(t - tau, 0)], R, F, ta, lb, use_tbl)
        amax = ai[ulo] if ulo >= 0 else -(np.int64(1) << 62)
        wlo = find_le(bv, mb, av[max(vp - tau, 0)], R, F, tb, lb, use_tbl)
        bmax = bi[wlo] if wlo >= 0 else -(np.int64(1) << 62)
        d0 = 1 if verbatim else 0
        # partners move right as the other position moves left, so each
        # window is one forward walk after the first lookup
        u = -2
        for d in range(d0, min(t, tau) + 1):
            w = t - d
            if bi[w] + amax < bl:
                break
            if u < -1:
                u = find_le(av, ma, bv[w], R, F, ta, lb, use_tbl)
            else:
                c = Rf - bv[w]
                while u + 1 < ma and av[u + 1] <= c:
                    u += 1
            if u >= 0:
                l = ai[u] + bi[w]
                v = av[u] + bv[w]
                if l > bl or (l == bl and v < bs):
                    bl = l
                    bs = v
                    bu = u
                    bw = w
        w = -2
        for d in range(0, min(vp, tau) + 1):
            u = vp - d
            if ai[u] + bmax < bl:
                break
            if w < -1:
                w = find_le(bv, mb, av[u], R, F, tb, lb, use_tbl)
            else:
                c = Rf - av[u]
                while w + 1 < mb and bv[w + 1] <= c:
                    w += 1
            if w >= 0:
                l = ai[u] + bi[w]
                v = av[u] + bv[w]
                if l > bl or (l == bl and v < bs):
                    bl = l
                    bs = v
                    bu = u
                    bw = w
        if bl >= oi[n - 1]:
            raise RuntimeError("descent did not move to a smaller index")
        oi[n] = bl
        ov[n] = bs
        o1[n] = bu
        o2[n] = bw
        n += 1
        s = bs
    _reverse4(oi, ov, o1, o2, n)
    return n


@njit(cache=True)
def ascent_max(ai, av, ma, bi, bv, mb, p, q, tau, mode, kcap, oi, ov, o1, o2):
    """Threshold ascent for an approximate (max,+) convolution.

    Both inputs must have an entry at index 0.  Entries with index above
    ``kcap`` are not produced.
    """
    F = q + p
    lb = math.log1p(p / q)
    if mode < 0:
        use_tbl = choose_table(av, ma, bv, mb, ai, bi, lb)
    else:
        use_tbl = mode == 1
    if use_tbl:
        ta = build_table(av, ma, lb)
        tb = build_table(bv, mb, lb)
    else:
        ta = np.empty(1, np.int64)
        tb = ta
    oi[0] = 0
    ov[0] = av[0] + bv[0]
    o1[0] = 0
    o2[0] = 0
    n = 1
    kappa = ov[0]
    a0 = av[0]
    b0 = bv[0]
    top = av[ma - 1] + bv[mb - 1]
    amax = av[ma - 1]
    bmax = bv[mb - 1]
    big = np.int64(2**62)
    while top * q > kappa * F:
        R = kappa * F
        Rq = R // q
        bl = big
        bs = -1
        bu = -1
        bw = -1
        # smallest position of B feasible with A's first entry (mb if none);
        # the best pair uses a B position in [t - 1 - tau, t] or an A position
        # in the mirrored window
        t = find_le(bv, mb, a0, R, q, tb, lb, use_tbl) + 1
        lo = max(0, t - 1 - tau)
        u = -2
        for w in range(min(t, mb - 1), lo - 1, -1):
            if (bv[w] + amax) * q <= R:
                break
            if u < -1:
                u = find_le(av, ma, bv[w], R, q, ta, lb, use_tbl) + 1
            else:
                c = Rq - bv[w]
                while u < ma and av[u] <= c:
                    u += 1
            l = ai[u] + bi[w]
            v = av[u] + bv[w]
            if l < bl or (l == bl and v > bs):
                bl = l
                bs = v
                bu = u
                bw = w
            # partners only move right from here on
            if ai[u] + bi[lo] > bl:
                break
        vp = find_le(av, ma, b0, R, q, ta, lb, use_tbl) + 1
        lo = max(0, vp - 1 - tau)
        w = -2
        for u in range(min(vp, ma - 1), lo - 1, -1):
            if (av[u] + bmax) * q <= R:
                break
            if w < -1:
                w = find_le(bv, mb, av[u], R, q, tb, lb, use_tbl) + 1
            else:
                c = Rq - av[u]
                while w < mb and bv[w] <= c:
                    w += 1
            l = ai[u] + bi[w]
            v = av[u] + bv[w]
            if l < bl or (l == bl and v > bs):
                bl = l
                bs = v
                bu = u
                bw = w
            if ai[lo] + bi[w] > bl:
                break
        if bw < 0:
            raise RuntimeError("ascent found no feasible pair")
        if bl > kcap:
            break
        if bl <= oi[n - 1]:
            raise RuntimeError("ascent did not move to a larger index")
        oi[n] = bl
        ov[n] = bs
        o1[n] = bu
        o2[n] = bw
        n += 1
        kappa = bs
    return n


@njit(cache=True)
def _reverse4(a, b, c, d, n):
    i = 0
    j = n - 1
    while i < j:
        a[i], a[j] = a[j], a[i]
        b[i], b[j] = b[j], b[i]
        c[i], c[j] = c[j], c[i]
        d[i], d[j] = d[j], d[i]
        i += 1
        j -= 1


@njit(cache=True)
def thin_desc(ii, vv, b1, b2, m, p, q):
    """In-place backward greedy thinning (min side).  Returns the new count."""
    if m == 0:
        return 0
    F = q + p
    keep = np.empty(m, np.int64)
    nk = 0
    keep[0] = m - 1
    nk = 1
    s = vv[m - 1]
    for e in range(m - 2, -1, -1):
        if s == 0:
            break
        if vv[e] * F <= s * q:
            keep[nk] = e
            nk += 1
            s = vv[e]
    for r in range(nk):
        e = keep[nk - 1 - r]
        ii[r] = ii[e]
        vv[r] = vv[e]
        b1[r] = b1[e]
        b2[r] = b2[e]
    return nk


@njit(cache=True)
def thin_asc(ii, vv, b1, b2, m, p, q):
    """In-place forward greedy thinning (max side).  Returns the new count."""
    if m == 0:
        return 0
    F = q + p
    nk = 1
    kappa = vv[0]
    for e in range(1, m):
        if vv[e] * q > kappa * F:
            ii[nk] = ii[e]
            vv[nk] = vv[e]
            b1[nk] = b1[e]
            b2[nk] = b2[e]
            nk += 1
            kappa = vv[e]
    return nk


@njit(cache=True)
def pair_conv(head, ai, av, ma, bi, bv, mb, kcap, p, q, oi, ov, o1, o2):
    """All-pairs (min,+) or (max,+) convolution followed by greedy thinning.

    With ``p == 0`` the thinning keeps exactly the staircase of the exact
    convolution of the two completions.  Entries with index above ``kcap``
    are dropped.
    """
    top = ai[ma - 1] + bi[mb - 1]
    if top > kcap:
        top = kcap
    L = top + 1
    best = np.empty(L, np.int64)
    bu = np.full(L, -1, np.int64)
    bw = np.empty(L, np.int64)
    for u in range(ma):
        iu = ai[u]
        if iu > top:
            break
        for w in range(mb):
            l = iu + bi[w]
            if l > top:
                break
            v = av[u] + bv[w]
            if bu[l] < 0 or (head and v > best[l]) or ((not head) and v < best[l]):
                best[l] = v
                bu[l] = u
                bw[l] = w
    # greedy thinning straight from the per-index table
    F = q + p
    n = 0
    if head:
        kappa = np.int64(-1)
        for l in range(L):
            if bu[l] >= 0 and (n == 0 or best[l] * q > kappa * F):
                oi[n] = l
                ov[n] = best[l]
                o1[n] = bu[l]
                o2[n] = bw[l]
                n += 1
                kappa = best[l]
        return n
    s = np.int64(-1)
    for l in range(L - 1, -1, -1):
        if bu[l] < 0:
            continue
        if n > 0 and s == 0:
            break
        if n == 0 or best[l] * F <= s * q:
            oi[n] = l
            ov[n] = best[l]
            o1[n] = bu[l]
            o2[n] = bw[l]
            n += 1
            s = best[l]
    _reverse4(oi, ov, o1, o2, n)
    return n


@njit(cache=True)
def leaf_level(head, x, f_idx, f_val, f_b1, f_b2, f_cnt, f_cap):
    for j in range(x.shape[0]):
        o = j * f_cap
        w = x[j]
        if head:
            f_idx[o] = 0
            f_val[o] = 0
            f_b1[o] = EXCLUDED
            f_b2[o] = 0
            if w > 0:
                f_idx[o + 1] = 1
                f_val[o + 1] = w
                f_b1[o + 1] = TERMINAL
                f_b2[o + 1] = 0
                f_cnt[j] = 2
            else:
                f_cnt[j] = 1
        else:
            if w > 0:
                f_idx[o] = 0
                f_val[o] = 0
                f_b1[o] = TERMINAL
                f_b2[o] = 0
                f_idx[o + 1] = 1
                f_val[o + 1] = w
                f_b1[o + 1] = EXCLUDED
                f_b2[o + 1] = 0
                f_cnt[j] = 2
            else:
                f_idx[o] = 1
                f_val[o] = 0
                f_b1[o] = EXCLUDED
                f_b2[o] = 0
                f_cnt[j] = 1


@njit(cache=True)
def pair_weight(top):
    # all pairs cost about 2-3 ns each while the per-index table stays in
    # cache, against about 9 ns per window step of the threshold walk
    if top <= 2048:
        return 4
    return 3 if top <= 6000 else 1


@njit(cache=True)
def conv_level(head, N, b, size,
               c_idx, c_val, c_cnt, c_cap,
               a_idx, a_val, a_b1, a_b2, a_cnt, a_cap,
               f_idx, f_val, f_b1, f_b2, f_cnt, f_cap,
               node_w, node_sum, sent_factor,
               exact, p, q, tau, p2, q2, kcap, lookup, verbatim):
    """Process one tree level: fold the children of every node, then finish.

    Tail nodes append the whole-subtree sentinel; head nodes shift by their
    own weight and are re-thinned with gap ``p2 / q2``.
    """
    stride = N * a_cap
    F2 = q2 + p2
    for j in range(N):
        co = (b * j) * c_cap
        ci = c_idx[co:co + c_cnt[b * j]]
        cv = c_val[co:co + c_cnt[b * j]]
        cm = c_cnt[b * j]
        for r in range(1, b):
            ch = b * j + r
            oo = ch * c_cap
            di = c_idx[oo:oo + c_cnt[ch]]
            dv = c_val[oo:oo + c_cnt[ch]]
            dm = c_cnt[ch]
            ao = (r - 1) * stride + j * a_cap
            oi = a_idx[ao:ao + a_cap]
            ov = a_val[ao:ao + a_cap]
            o1 = a_b1[ao:ao + a_cap]
            o2 = a_b2[ao:ao + a_cap]
            kc = kcap - 1 if head else np.int64(2**62)
            if exact:
                m = pair_conv(head, ci, cv, cm, di, dv, dm, kc, 0, 1, oi, ov, o1, o2)
            elif lookup < 0 and cm * dm <= pair_weight(ci[cm - 1] + di[dm - 1]) * (cm + dm) * min(tau, max(cm, dm)):
                # auto mode: all pairs when cheaper than the threshold walk
                m = pair_conv(head, ci, cv, cm, di, dv, dm, kc, p, q, oi, ov, o1, o2)
            elif head:
                m = ascent_max(ci, cv, cm, di, dv, dm, p, q, tau, lookup, kc, oi, ov, o1, o2)
            else:
                m = descent_min(ci, cv, cm, di, dv, dm, p, q, tau, lookup, verbatim, oi, ov, o1, o2)
            a_cnt[(r - 1) * N + j] = m
            ci = oi
            cv = ov
            cm = m
        fo = j * f_cap
        if head:
            f_idx[fo] = 0
            f_val[fo] = 0
            f_b1[fo] = EXCLUDED
            f_b2[fo] = 0
            n = 1
            x = node_w[j]
            for e in range(cm):
                if ci[e] + 1 > kcap:
                    break
                f_idx[fo + n] = ci[e] + 1
                f_val[fo + n] = cv[e] + x
                f_b1[fo + n] = e
                f_b2[fo + n] = 0
                n += 1
            n = thin_asc(f_idx[fo:fo + f_cap], f_val[fo:fo + f_cap],
                         f_b1[fo:fo + f_cap], f_b2[fo:fo + f_cap], n, p2, q2)
            f_cnt[j] = n
        else:
            for e in range(cm):
                f_idx[fo + e] = ci[e]
                f_val[fo + e] = cv[e]
                f_b1[fo + e] = e
                f_b2[fo + e] = 0
            n = cm
            tot = node_sum[j]
            sv = np.int64(math.ceil(sent_factor * tot))
            if sv < tot:
                sv = tot
            last = f_val[fo + n - 1]
            need = (last * F2 + q2 - 1) // q2
            if sv < need:
                sv = need
            if last == 0 and sv == 0:
                n -= 1
            f_idx[fo + n] = size
            f_val[fo + n] = sv
            f_b1[fo + n] = EXCLUDED
            f_b2[fo + n] = 0
            f_cnt[j] = n + 1


@njit(cache=True)
def rethin_level(head, N, f_idx, f_val, f_b1, f_b2, f_cnt, f_cap, p, q):
    for j in range(N):
        fo = j * f_cap
        e = fo + f_cap
        if head:
            f_cnt[j] = thin_asc(f_idx[fo:e], f_val[fo:e], f_b1[fo:e], f_b2[fo:e], f_cnt[j], p, q)
        else:
            f_cnt[j] = thin_desc(f_idx[fo:e], f_val[fo:e], f_b1[fo:e], f_b2[fo:e], f_cnt[j], p, q)


@njit(cache=True)
def link_level(head, N, fmap, fid, src_idx, src_val, src_cnt, src_cap,
               f_idx, f_val, f_b1, f_b2, f_cnt, f_cap, p, q):
    """Copy forest root sequences into a main level as link entries, thinned."""
    for j in range(N):
        sid = fmap[j]
        so = sid * src_cap
        m = src_cnt[sid]
        fo = j * f_cap
        for e in range(m):
            f_idx[fo + e] = src_idx[so + e]
            f_val[fo + e] = src_val[so + e]
            f_b1[fo + e] = LINK_BASE - fid
            f_b2[fo + e] = e
        e2 = fo + f_cap
        if head:
            f_cnt[j] = thin_asc(f_idx[fo:e2], f_val[fo:e2], f_b1[fo:e2], f_b2[fo:e2], m, p, q)
        else:
            f_cnt[j] = thin_desc(f_idx[fo:e2], f_val[fo:e2], f_b1[fo:e2], f_b2[fo:e2], m, p, q)


@njit(cache=True)
def merge_link_level(N, map1, fid1, s1_idx, s1_val, s1_cnt, s1_cap,
                     map2, fid2, s2_idx, s2_val, s2_cnt, s2_cap, num, den, cut,
                     f_idx, f_val, f_b1, f_b2, f_cnt, f_cap, p, q):
    """Head sequences assembled from two forests.

    Entries of forest 1 with index < ``cut`` are used as they are; entries of
    forest 2 are rescaled by ``num[j] / den[j]`` (rounded down) and merged in.
    The merged list is reduced to its prefix-maximum staircase and thinned.
    """
    for j in range(N):
        fo = j * f_cap
        s1 = map1[j]
        s2 = map2[j]
        o1 = s1 * s1_cap
        o2 = s2 * s2_cap
        m1 = s1_cnt[s1]
        m2 = s2_cnt[s2]
        e1 = 0
        e2 = 0
        n = 0
        while e1 < m1 or e2 < m2:
            take1 = False
            if e1 < m1 and s1_idx[o1 + e1] < cut:
                if e2 >= m2 or s1_idx[o1 + e1] <= s2_idx[o2 + e2]:
                    take1 = True
            elif e2 >= m2:
                break
            if take1:
                f_idx[fo + n] = s1_idx[o1 + e1]
                f_val[fo + n] = s1_val[o1 + e1]
                f_b1[fo + n] = LINK_BASE - fid1
                f_b2[fo + n] = e1
                e1 += 1
                if e1 < m1 and s1_idx[o1 + e1] >= cut:
                    e1 = m1
            else:
                f_idx[fo + n] = s2_idx[o2 + e2]
                f_val[fo + n] = (s2_val[o2 + e2] * num[j]) // den[j]
                f_b1[fo + n] = LINK_BASE - fid2
                f_b2[fo + n] = e2
                e2 += 1
            # keep indices strictly increasing: on a repeated index keep the larger value
            if n > 0 and f_idx[fo + n] == f_idx[fo + n - 1]:
                if f_val[fo + n] > f_val[fo + n - 1]:
                    f_val[fo + n - 1] = f_val[fo + n]
                    f_b1[fo + n - 1] = f_b1[fo + n]
                    f_b2[fo + n - 1] = f_b2[fo + n]
            else:
                n += 1
        e = fo + f_cap
        f_cnt[j] = thin_asc(f_idx[fo:e], f_val[fo:e], f_b1[fo:e], f_b2[fo:e], n, p, q)


@njit(cache=True)
def find_tree(b, top, root_pos, n_heap,
              fin_b1, fin_b2, fin_off, fin_cap,
              acc_b1, acc_b2, acc_off, acc_cap, acc_n, fmaps):
    """Depth-first reconstruction from stored back-pointers.

    Store 0 is the main tree (levels counted from the leaves); store ``1 + f``
    is forest ``f``.  Returns a boolean support mask over heap positions.
    """
    support = np.zeros(n_heap, np.bool_)
    cap = 64 + b * top * 4
    st_s = np.empty(cap, np.int64)
    st_l = np.empty(cap, np.int64)
    st_id = np.empty(cap, np.int64)
    st_p = np.empty(cap, np.int64)
    st_h = np.empty(cap, np.int64)
    sp = 0
    st_s[0] = 0
    st_l[0] = top
    st_id[0] = 0
    st_p[0] = root_pos
    st_h[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        s = st_s[sp]
        lv = st_l[sp]
        sid = st_id[sp]
        pos = st_p[sp]
        h = st_h[sp]
        e = fin_off[s, lv] + sid * fin_cap[s, lv] + pos
        c1 = fin_b1[e]
        if c1 <= LINK_BASE:
            f = LINK_BASE - c1
            if sp + 1 > cap:
                raise RuntimeError("reconstruction stack overflow")
            st_s[sp] = 1 + f
            st_l[sp] = lv
            st_id[sp] = fmaps[f, sid]
            st_p[sp] = fin_b2[e]
            st_h[sp] = h
            sp += 1
            continue
        if c1 == EXCLUDED:
            continue
        if h >= n_heap:
            raise RuntimeError("reconstruction left the tree")
        support[h] = True
        if c1 == TERMINAL:
            continue
        if c1 < 0:
            raise RuntimeError("dangling back-pointer")
        if sp + b > cap:
            raise RuntimeError("reconstruction stack overflow")
        a = c1
        N = acc_n[s, lv]
        ac = acc_cap[s, lv]
        for r in range(b - 2, -1, -1):
            ae = acc_off[s, lv] + r * N * ac + sid * ac + a
            st_s[sp] = s
            st_l[sp] = lv - 1
            st_id[sp] = b * sid + r + 1
            st_p[sp] = acc_b2[ae]
            st_h[sp] = b * h + 2 + r
            sp += 1
            a = acc_b1[ae]
        st_s[sp] = s
        st_l[sp] = lv - 1
        st_id[sp] = b * sid
        st_p[sp] = a
        st_h[sp] = b * h + 1
        sp += 1
    return support
