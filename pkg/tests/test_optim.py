import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctfgen.autodiff import backward, parameter
from ctfgen.optim import Adam, AdamW, LrSchedule, lr_at, optimizer_step


def test_one_adam_step_on_square():
    w = parameter(1.0)
    opt = Adam([w], lr=0.1)
    backward(w * w)
    opt.step()
    # m_hat = g, v_hat = g^2 after bias correction, so the step is lr * g / (|g| + eps)
    assert w.data == pytest.approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-8), abs=1e-15)
    assert w.data == pytest.approx(0.9, abs=1e-8)


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(0)
    grads = rng.normal(size=(5, 3))
    w = parameter(np.zeros(3))
    opt = Adam([w], lr=0.01, betas=(0.8, 0.99), eps=1e-6)
    ref, m, v = np.zeros(3), np.zeros(3), np.zeros(3)
    for t, g in enumerate(grads, start=1):
        opt.step([g])
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        ref = ref - 0.01 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.99**t)) + 1e-6)
    np.testing.assert_allclose(w.data, ref, rtol=0, atol=1e-15)


def test_zero_gradient_is_exact_noop():
    data = np.array([0.3, -1.7, 2.0])
    w = parameter(data.copy())
    opt = Adam([w], lr=0.5)
    for _ in range(3):
        opt.step([np.zeros(3)])
    assert w.data.tobytes() == data.tobytes()


def test_adamw_decoupled_decay_with_zero_gradient():
    w = parameter(np.array([2.0, -4.0]))
    opt = AdamW([w], lr=0.1, weight_decay=0.5)
    opt.step([np.zeros(2)])
    np.testing.assert_allclose(w.data, np.array([2.0, -4.0]) * (1 - 0.1 * 0.5), rtol=0, atol=1e-15)


def test_non_finite_gradient_names_parameter():
    w = parameter(np.ones(2), name="mech.out.weight")
    opt = Adam([w])
    with pytest.raises(FloatingPointError, match="mech.out.weight"):
        opt.step([np.array([1.0, np.nan])])
    assert np.all(w.data == 1.0)


def test_optimizer_step_checks_parameter_list():
    a, b = parameter(1.0), parameter(2.0)
    opt = Adam([a])
    with pytest.raises(ValueError):
        optimizer_step(opt, [b], [np.zeros(())])


def test_schedule_endpoints():
    s = LrSchedule(1e-3, 10, 100)
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, 10) == 1e-3
    assert lr_at(s, 100) == pytest.approx(0.0, abs=1e-20)
    assert lr_at(s, 55) == pytest.approx(1e-3 * 0.5 * (1 + math.cos(math.pi * 0.5)))


def test_schedule_without_warmup_starts_at_base():
    assert lr_at(LrSchedule(0.1, 0, 10), 0) == pytest.approx(0.1)


@pytest.mark.parametrize("step", [-1, 101])
def test_schedule_rejects_out_of_range(step):
    with pytest.raises(ValueError):
        lr_at(LrSchedule(1e-3, 10, 100), step)


@given(st.integers(1, 50), st.integers(0, 100))
def test_schedule_continuous_at_warmup_peak(warmup, extra):
    s = LrSchedule(1.0, warmup, warmup + extra + 1)
    assert lr_at(s, warmup) == 1.0
    assert abs(lr_at(s, warmup + 1) - 1.0) <= 1.0 - math.cos(math.pi / (extra + 1))
    assert abs(lr_at(s, warmup) - lr_at(s, warmup - 1)) <= 1.0 / warmup + 1e-15
