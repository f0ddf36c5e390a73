import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from ctfgen.kernels import sqdist
from ctfgen.sinkhorn import default_epsilon, sinkhorn


def test_single_point():
    out = sinkhorn(np.array([[3.7]]))
    np.testing.assert_array_equal(out.plan, [[1.0]])
    assert out.converged


def test_zero_cost_gives_product_coupling():
    out = sinkhorn(np.zeros((3, 4)), epsilon=0.1)
    np.testing.assert_allclose(out.plan, np.full((3, 4), 1 / 12), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_small_epsilon_matches_exact_assignment(seed):
    rng = np.random.default_rng(seed)
    pts = rng.permutation(np.arange(6.0))[:, None] * 2.0
    target = pts[rng.permutation(6)] + rng.normal(scale=0.05, size=(6, 1))
    C = sqdist(pts, target)
    rows, cols = linear_sum_assignment(C)
    out = sinkhorn(C, epsilon=0.05, max_iters=5000)
    assert out.converged
    assert out.plan[rows, cols].sum() >= 0.9


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_marginals_objective_and_positivity(m, n, seed):
    rng = np.random.default_rng(seed)
    C = sqdist(rng.normal(size=(m, 2)), rng.normal(size=(n, 2)))
    out = sinkhorn(C, epsilon=max(0.2 * float(C.mean()), 1e-3), max_iters=20_000, tol=1e-9)
    assert out.converged and out.marginal_error <= 1e-9
    assert np.all(out.plan >= 0)
    np.testing.assert_allclose(out.plan.sum(axis=1), 1 / m, atol=1e-9)
    assert np.all(np.diff(out.objective) <= 1e-12 * (1 + np.abs(out.objective[1:])))


def test_non_convergence_is_flagged():
    C = sqdist(np.arange(5.0)[:, None], np.arange(5.0)[:, None] + 0.5)
    with pytest.warns(RuntimeWarning):
        out = sinkhorn(C, epsilon=1e-3, max_iters=3, anneal=False)
    assert not out.converged and out.iterations == 3
    assert np.all(np.isfinite(out.plan))


def test_default_epsilon_scales_with_cost():
    C = np.array([[0.0, 2.0], [4.0, 6.0]])
    assert default_epsilon(C) == pytest.approx(0.05 * 3.0)
    assert sinkhorn(C).epsilon == pytest.approx(0.15)


@pytest.mark.parametrize("bad", [np.array([1.0, 2.0]), np.array([[np.nan]])])
def test_rejects_bad_cost(bad):
    with pytest.raises(ValueError):
        sinkhorn(bad)


def test_rejects_nonpositive_epsilon():
    with pytest.raises(ValueError):
        sinkhorn(np.zeros((2, 2)), epsilon=0.0)
