import numpy as np
import pytest

from ctfgen.mmdagg import ConfigurationError, mmdagg_test


def test_identical_samples_never_reject(rng):
    A = rng.normal(size=(40, 2))
    for seed in range(10):
        assert not mmdagg_test(A, A.copy(), rng=np.random.default_rng(seed)).reject


def test_deterministic_given_seed(rng):
    A, B = rng.normal(size=(30, 1)), rng.normal(0.5, 1.0, size=(30, 1))
    r1 = mmdagg_test(A, B, rng=np.random.default_rng(3))
    r2 = mmdagg_test(A, B, rng=np.random.default_rng(3))
    assert r1.reject == r2.reject
    np.testing.assert_array_equal(r1.thresholds, r2.thresholds)
    assert r1.adjusted_u == r2.adjusted_u


def test_statistic_is_unbiased_gaussian_mmd(rng):
    A, B = rng.normal(size=(25, 2)), rng.normal(size=(25, 2))
    res = mmdagg_test(A, B, bandwidths=[1.3], rng=rng)

    def k(a, b):
        return np.exp(-np.sum((a - b) ** 2) / (2 * 1.3**2))

    n = 25
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                total += k(A[i], A[j]) + k(B[i], B[j]) - k(A[i], B[j]) - k(A[j], B[i])
    assert res.statistics[0] == pytest.approx(total / (n * (n - 1)), abs=1e-13)


def test_default_grid_is_seven_dyadic_scales(rng):
    res = mmdagg_test(rng.normal(size=(30, 1)), rng.normal(size=(30, 1)), rng=rng)
    assert res.bandwidths.size == 7
    np.testing.assert_allclose(res.bandwidths[1:] / res.bandwidths[:-1], 2.0)
    np.testing.assert_allclose(res.weights, 1 / 7)


def test_reject_iff_some_statistic_exceeds_threshold(rng):
    for shift in (0.0, 0.4, 1.0):
        res = mmdagg_test(rng.normal(size=(30, 1)), rng.normal(shift, 1, size=(30, 1)), rng=rng)
        assert res.reject == bool(np.any(res.statistics > res.thresholds))


def test_small_calibration(rng):
    rejections = sum(
        mmdagg_test(rng.normal(size=(50, 1)), rng.normal(size=(50, 1)), rng=rng, bootstrap_iters=200,
                    level_iters=200).reject
        for _ in range(40)
    )
    assert rejections <= 8


def test_strong_shift_is_detected(rng):
    for _ in range(5):
        assert mmdagg_test(rng.normal(size=(50, 1)), rng.normal(2.0, 1, size=(50, 1)), rng=rng).reject


@pytest.mark.parametrize("bw", [[], [0.0], [1.0, -1.0], [np.inf]])
def test_degenerate_grid(rng, bw):
    with pytest.raises(ConfigurationError):
        mmdagg_test(rng.normal(size=(20, 1)), rng.normal(size=(20, 1)), bandwidths=bw)


def test_sample_size_contract(rng):
    with pytest.raises(ValueError):
        mmdagg_test(rng.normal(size=(19, 1)), rng.normal(size=(19, 1)))
    with pytest.raises(ValueError):
        mmdagg_test(rng.normal(size=(20, 1)), rng.normal(size=(20, 1)), alpha=1.0)


def test_summary_fields(rng):
    s = mmdagg_test(rng.normal(size=(20, 1)), rng.normal(size=(20, 1)), rng=rng).summary()
    assert set(s) == {"reject", "max_stat", "max_ratio", "adjusted_u"}
    assert s["reject"] == (s["max_ratio"] > 1.0)
