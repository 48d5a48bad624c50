from fractions import Fraction

import numpy as np
import pytest

from oracles import brute_maxplus, brute_minplus
from structsparse.rs_conv import (RepSeq, StepHashTable, completion, dyadic, exact_maxplus, exact_minplus,
                                  fast_rs_maxplus, fast_rs_minplus, head_completion, is_rs, rs_maxplus,
                                  rs_minplus, thin_head, thin_tail)


def rs(*pairs, alpha=0):
    return RepSeq.from_pairs(pairs, alpha)


# ---- completions ---------------------------------------------------------


@pytest.mark.parametrize("pairs, expected", [
    (((0, 0), (2, 2)), [0, 2, 2]),
    (((1, 3),), [3, 3]),
    (((0, 0), (1, 1), (3, 2.5)), [0, 1, 2.5, 2.5]),
])
def test_completion_examples(pairs, expected):
    assert completion(rs(*pairs)).tolist() == expected


def test_completion_empty_raises():
    with pytest.raises(ValueError):
        completion(RepSeq((), ()))


@pytest.mark.parametrize("pairs, card, expected", [
    (((1, 1), (3, 2)), 4, [0, 1, 1, 2, 2]),
    (((0, 0),), 2, [0, 0, 0]),
])
def test_head_completion_examples(pairs, card, expected):
    assert head_completion(rs(*pairs), card).tolist() == expected


def test_head_completion_staircase_shape():
    # entries at 0, 1, 3, 6 with cardinality 8
    seq = rs((0, 1), (1, 2), (3, 5), (6, 9))
    hc = head_completion(seq, 8)
    assert hc[2] == 2 and hc[4] == hc[5] == 5 and hc[7] == hc[8] == 9


def test_head_completion_cardinality_too_small():
    with pytest.raises(ValueError):
        head_completion(rs((1, 1), (3, 2)), 2)


# ---- exact convolutions --------------------------------------------------


@pytest.mark.parametrize("A, B, expected", [
    ([0, 1, 5], [0, 2, 3], [0, 1, 3, 4, 8]),
    ([0], [0, 2], [0, 2]),
    ([1, 1], [1, 1], [2, 2, 2]),
])
def test_exact_minplus_examples(A, B, expected):
    assert exact_minplus(A, B).tolist() == expected
    assert brute_minplus(A, B) == expected


@pytest.mark.parametrize("A, B, expected", [
    ([0, 1, 5], [0, 2, 3], [0, 2, 5, 7, 8]),
    ([0], [0, 2], [0, 2]),
])
def test_exact_maxplus_examples(A, B, expected):
    assert exact_maxplus(A, B).tolist() == expected
    assert brute_maxplus(A, B) == expected


def test_maxplus_equals_negated_minplus():
    rng = np.random.default_rng(3)
    for _ in range(100):
        A = rng.integers(-50, 50, size=rng.integers(1, 9))
        B = rng.integers(-50, 50, size=rng.integers(1, 9))
        assert exact_maxplus(A, B).tolist() == (-exact_minplus(-A, -B)).tolist()


def test_exact_convolution_with_fractions():
    A = [Fraction(1, 3), Fraction(1, 2)]
    B = [Fraction(0), Fraction(5, 7)]
    assert list(exact_minplus(A, B)) == brute_minplus(A, B)


# ---- representative sequences -------------------------------------------


def test_is_rs_gap_and_order():
    assert is_rs(rs((0, 0), (1, 1), (3, 2)), 1)
    assert not is_rs(rs((0, 0), (1, 1), (3, 1.5)), 1)
    assert not is_rs(rs((1, 1), (1, 2)), 0)


def test_thin_tail_keeps_last_and_respects_gap():
    pairs = [(0, 0), (1, 1), (2, 2), (3, 3)]
    out, _ = thin_tail(pairs, 1)
    assert out == [(0, 0), (1, 1), (3, 3)]


def test_thin_head_keeps_first_and_respects_gap():
    pairs = [(0, 0), (1, 4), (2, 5), (3, 9)]
    out, _ = thin_head(pairs, 1)
    assert out == [(0, 0), (1, 4), (3, 9)]


def test_rs_minplus_example():
    A = rs((0, 0), (1, 1), alpha=1)
    B = rs((0, 0), (2, 2), alpha=1)
    out = rs_minplus(1, 1, A, B)
    assert out.pairs == [(0, 0), (1, 1), (3, 3)]
    exact = exact_minplus(completion(A), completion(B))
    assert exact.tolist() == [0, 1, 2, 3]
    c = completion(out)
    assert all(e <= v <= 2 * e for e, v in zip(exact, c))


def test_rs_minplus_all_zero():
    assert rs_minplus(1, 1, rs((0, 0)), rs((0, 0))).pairs == [(0, 0)]


def test_fast_rs_minplus_matches_reference_example():
    A = rs((0, 0), (1, 1), alpha=1)
    B = rs((0, 0), (2, 2), alpha=1)
    assert fast_rs_minplus(1, 1, A, B).pairs == rs_minplus(1, 1, A, B).pairs


def test_fast_rs_minplus_with_zero_sequence():
    out = fast_rs_minplus(1, 1, rs((0, 0), (4, 8)), rs((0, 0)))
    assert out.pairs == [(0, 0), (4, 8)]


def test_fast_rs_minplus_parameter_checks():
    A = rs((0, 0), (1, 1))
    with pytest.raises(ValueError):
        fast_rs_minplus(0.5, 1, A, A)
    with pytest.raises(ValueError):
        fast_rs_minplus(1, 1, rs((0, 1), (1, 1)), A)  # not a 1-RS


@pytest.mark.parametrize("lookup", ["auto", "hash", "search"])
def test_fast_rs_minplus_lookup_modes_agree(lookup):
    rng = np.random.default_rng(11)
    for _ in range(50):
        vals = np.cumsum(rng.integers(0, 200, size=30))
        A = RepSeq.from_pairs(thin_tail(list(enumerate(vals.tolist())), 0.25)[0], 0.25)
        vals = np.cumsum(rng.integers(0, 200, size=30))
        B = RepSeq.from_pairs(thin_tail(list(enumerate(vals.tolist())), 0.25)[0], 0.25)
        out = fast_rs_minplus(0.25, 0.25, A, B, lookup=lookup)
        exact = exact_minplus(completion(A), completion(B))
        c = completion(out)[: exact.size]
        assert np.all(exact <= c) and np.all(c * 4 <= exact * 5)


def test_verbatim_first_loop_can_miss_the_best_pair():
    # the verbatim loop window skips the zero offset; scan until it misses
    rng = np.random.default_rng(0)
    missed = 0
    for _ in range(3000):
        vals = np.cumsum(rng.integers(0, 20, size=8))
        vals[0] = 0
        A = RepSeq.from_pairs(thin_tail(list(enumerate(vals.tolist())), 1)[0], 1)
        vals = np.cumsum(rng.integers(0, 20, size=8))
        vals[0] = 0
        B = RepSeq.from_pairs(thin_tail(list(enumerate(vals.tolist())), 1)[0], 1)
        exact = exact_minplus(completion(A), completion(B))
        good = completion(fast_rs_minplus(1, 1, A, B))[: exact.size]
        bad = completion(fast_rs_minplus(1, 1, A, B, verbatim=True))[: exact.size]
        assert np.all(good <= 2 * exact)
        missed += bool(np.any(bad > 2 * exact))
    assert missed > 0


def test_fast_rs_maxplus_single_entries():
    out = fast_rs_maxplus(1, 1, rs((1, 2)), rs((1, 3)), (1, 1))
    exact = exact_maxplus(head_completion(rs((1, 2)), 1), head_completion(rs((1, 3)), 1))
    assert exact.tolist() == [0, 3, 5]
    hc = head_completion(out, 2)
    assert all(0 * e <= v <= e for e, v in zip(exact, hc))
    assert out.pairs == [(0, 0), (1, 3)]


def test_fast_rs_maxplus_example_two():
    A = rs((0, 0), (1, 4), alpha=1)
    out = fast_rs_maxplus(1, 1, A, A, (1, 1))
    exact = exact_maxplus(head_completion(A, 1), head_completion(A, 1))
    assert exact.tolist() == [0, 4, 8]
    hc = head_completion(out, 2)
    assert np.all(hc <= exact) and np.all(hc >= 0 * exact)


def test_rs_maxplus_reference_is_head_sandwiched():
    A = rs((0, 0), (1, 4), (3, 9), alpha=Fraction(1, 2))
    B = rs((0, 0), (2, 7), alpha=Fraction(1, 2))
    out = rs_maxplus(Fraction(1, 2), Fraction(1, 2), A, B)
    exact = exact_maxplus(head_completion(A, 3), head_completion(B, 2))
    hc = head_completion(out, 5)
    for e, v in zip(exact, hc):
        assert Fraction(1, 2) * e <= v <= e


# ---- dyadic rounding and the step hash -----------------------------------


def test_dyadic_rounds_down():
    p, q = dyadic(0.1, 1000)
    assert Fraction(p, q) <= Fraction(0.1)
    assert q & (q - 1) == 0
    assert Fraction(0.1) - Fraction(p, q) < Fraction(1, q)


def test_dyadic_rejects_tiny_beta():
    with pytest.raises(ValueError):
        dyadic(1e-12, 2**40)
    with pytest.raises(ValueError):
        dyadic(0, 10)


def test_step_hash_lookup_matches_scan():
    vals = [0, 1, 3, 7, 15, 40]
    H = StepHashTable(vals, 1)
    prev = -1
    lo, hi = H.key_range()
    for key in range(lo, hi + 1):
        assert H.table[key] >= prev
        prev = H.table[key]
    for theta in [0, 0.5, 1, 2, 3, 6.9, 7, 14, 39, 40, 100]:
        expect = max((i for i, v in enumerate(vals) if v <= theta), default=-1)
        assert H.lookup(theta) == expect
