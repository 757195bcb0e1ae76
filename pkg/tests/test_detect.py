import numpy as np
import pytest

from fogaccess.detect import (DetectorConfig, bi_ad, bi_ad_rows, detect_from_beliefs, error_probability,
                              home_blocks, nmse_active_db, nmse_db)


def test_bi_ad_all_ones():
    assert bi_ad(np.ones(8)) == 1


def test_bi_ad_eight_of_ten():
    assert bi_ad([0.9] * 8 + [0.1] * 2, DetectorConfig(p_bi=0.9)) == 0


def test_bi_ad_threshold_inclusive():
    assert bi_ad([0.9] * 9 + [0.1], DetectorConfig(p_bi=0.9)) == 1


def test_bi_ad_strict_epsilon():
    assert bi_ad([0.5]) == 0


def test_bi_ad_rows_matches_scalar():
    pi = np.random.default_rng(0).uniform(size=(30, 10))
    assert [bi_ad(r) for r in pi] == bi_ad_rows(pi).tolist()


def test_detector_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(epsilon_bi=1.0)
    with pytest.raises(ValueError):
        DetectorConfig(p_bi=0.0)


def test_pe_examples():
    a = np.array([1, 0, 0, 1])
    assert error_probability(a, a).pe == 0
    assert error_probability(1 - a, a).pe == 1
    r = error_probability([1, 0, 1, 1], a)
    assert r.pe == 0.25 and r.false_alarm == 0.25 and r.miss == 0
    with pytest.raises(ValueError):
        error_probability([1, 0], a)


def test_nmse_examples():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    assert nmse_db(np.zeros_like(X), X) == pytest.approx(0.0, abs=1e-12)
    assert nmse_db(2 * X, X) == pytest.approx(0.0, abs=1e-12)
    e = rng.standard_normal(X.shape) + 0j
    e *= np.sqrt(0.01 * np.sum(np.abs(X) ** 2) / np.sum(np.abs(e) ** 2))
    assert nmse_db(X + e, X) == pytest.approx(-20.0, abs=1e-9)
    assert nmse_db(X, X) == -300.0
    with pytest.raises(ValueError):
        nmse_db(X, np.zeros_like(X))


def test_nmse_active_rows_only():
    X = np.array([[1.0, 1.0], [0.0, 0.0]])
    Xh = np.array([[1.0, 1.0], [5.0, 5.0]])
    assert nmse_active_db(Xh, X, [1, 0]) == -300.0


def test_home_blocks_and_zeroing():
    pi = np.array([[0.9, 0.9, 0.1, 0.1], [0.9, 0.9, 0.1, 0.1]])
    x = np.ones((2, 4))
    assert np.array_equal(home_blocks(pi, [0, 1], 2), [[0.9, 0.9], [0.1, 0.1]])
    res = detect_from_beliefs(pi, x, np.array([0, 1]), 2, 7)
    assert res.alpha_hat.tolist() == [1, 0]
    assert np.all(res.X_hat[1] == 0) and np.all(res.X_hat[0] == 1)
    assert res.iters == 7
