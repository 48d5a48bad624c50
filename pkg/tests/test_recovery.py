import numpy as np
import pytest

from structsparse.cemd_model import support_emd
from structsparse.recovery import (MeasurementSystem, RecoveryConfig, am_iht, generate_instance,
                                   measurement_count, random_cemd_support, random_rooted_subtree,
                                   validate_cemd, validate_tree)
from structsparse.tree_model import is_rooted_subtree

TREE = RecoveryConfig("tree", 16, n=255)
CEMD = RecoveryConfig("cemd", 16, h=8, w=8, B=8)


def test_config_validation():
    with pytest.raises(ValueError):
        RecoveryConfig("graph", 4, n=15)
    with pytest.raises(ValueError):
        RecoveryConfig("tree", 4, n=15, max_iters=0)
    with pytest.raises(ValueError):
        RecoveryConfig("cemd", 5, h=4, w=4)
    with pytest.raises(ValueError):
        RecoveryConfig("cemd", 4, h=4, w=4, B=-1)


def test_measurement_counts():
    assert measurement_count(TREE) == 96
    # ln(B/k) < 0 here, so the logarithmic factor is floored at 1
    assert measurement_count(CEMD) == 16 + 48
    big = RecoveryConfig("cemd", 8, h=16, w=8, B=200)
    assert measurement_count(big) == 8 + int(np.ceil(24 * np.log(25)))


def test_generated_instances_are_consistent():
    for seed in range(10):
        x, sysm = generate_instance(TREE, 0.0, seed)
        assert np.array_equal(sysm.y, sysm.A @ x)
        assert validate_tree(x, 16)
        x, sysm = generate_instance(CEMD, 0.0, seed)
        M = (x != 0).reshape(8, 8)
        assert np.all(M.sum(axis=0) == 2)
        assert support_emd(M, 8, 8) <= 8
        x, sysm = generate_instance(TREE, 0.3, seed)
        assert np.linalg.norm(sysm.y - sysm.A @ x - sysm.e) <= 1e-9
        assert np.linalg.norm(sysm.e) == pytest.approx(0.3)


def test_random_supports():
    rng = np.random.default_rng(0)
    for _ in range(20):
        sup = random_rooted_subtree(63, 10, 2, rng)
        assert sup.size == 10 and is_rooted_subtree(sup, 63)
        rows = random_cemd_support(6, 5, 2, 3, rng)
        assert np.all(np.diff(rows, axis=0) > 0)
        assert int(np.abs(np.diff(rows, axis=1)).sum()) <= 3
    with pytest.raises(ValueError):
        random_rooted_subtree(7, 8, 2, rng)
    with pytest.raises(ValueError):
        random_cemd_support(2, 3, 3, 0, rng)


def test_identity_measurements_recover_in_one_step():
    for cfg in (TREE, CEMD):
        x, _ = generate_instance(cfg, 0.0, 1)
        n = x.size
        A = np.eye(n)
        res = am_iht(MeasurementSystem(A, x.copy(), np.zeros(n)), cfg)
        assert res.iterations == 1
        assert np.allclose(res.x, x, atol=1e-12)


def test_single_node_tree_recovery():
    cfg = RecoveryConfig("tree", 1, n=255, max_iters=30)
    ok = 0
    for seed in range(50):
        x, sysm = generate_instance(cfg, 0.0, seed, m=8)
        res = am_iht(sysm, cfg)
        ok += np.linalg.norm(x - res.x) <= 1e-6 * np.linalg.norm(x)
    assert ok >= 45


@pytest.mark.parametrize("cfg", [TREE, CEMD], ids=["tree", "cemd"])
def test_residuals_monotone_and_iterates_in_model(cfg):
    for seed in range(3):
        x, sysm = generate_instance(cfg, 0.0, seed)
        res = am_iht(sysm, cfg)
        r = res.residuals
        assert all(b <= a for a, b in zip(r, r[1:]))
        assert len(res.metadata["supports"]) == res.metadata["accepted_steps"]
        for T in res.metadata["supports"]:
            if cfg.model == "tree":
                assert T.sum() <= cfg.k and is_rooted_subtree(np.flatnonzero(T), cfg.n)
            else:
                assert validate_cemd(T, 8, 8, 2, 2 * cfg.B)
        if cfg.model == "tree":
            assert validate_tree(res.x, cfg.k)
        else:
            assert validate_cemd(res.support, 8, 8, 2, 2 * cfg.B, res.x)


def test_noisy_recovery_error_scales_with_noise():
    errs = []
    for seed in range(5):
        x, sysm = generate_instance(TREE, 0.01, seed)
        res = am_iht(sysm, TREE)
        errs.append(np.linalg.norm(x - res.x))
    assert np.median(errs) <= 0.1


def test_validators_reject_bad_supports():
    x = np.zeros(15)
    x[[0, 3]] = 1
    assert not validate_tree(x, 4)
    x = np.zeros(15)
    x[[0, 1, 2]] = 1
    assert not validate_tree(x, 2)
    M = np.zeros((4, 3), bool)
    M[[0, 3, 0], [0, 1, 2]] = True
    assert validate_cemd(M, 4, 3, 1, 6)
    assert not validate_cemd(M, 4, 3, 1, 5)
    assert not validate_cemd(M, 4, 3, 2, 6)
    xs = np.zeros(12)
    xs[1] = 1.0
    assert not validate_cemd(M, 4, 3, 1, 6, xs)
