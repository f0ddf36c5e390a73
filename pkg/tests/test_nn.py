import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctfgen.autodiff import Tensor
from ctfgen.gradcheck import finite_difference_check
from ctfgen.nn import DimensionError, Mlp, MlpConfig, mlp_forward


def test_zero_weight_net_outputs_zero(rng):
    net = Mlp(MlpConfig(3, 8, 2, 2), rng)
    for p in net.parameters():
        p.data[...] = 0.0
    np.testing.assert_array_equal(net(rng.normal(size=(5, 3))).data, np.zeros((5, 2)))


def test_single_linear_identity():
    net = Mlp(MlpConfig(2, 4, 0, 2))
    net.output.weight.data[...] = np.eye(2)
    net.output.bias.data[...] = 0.0
    np.testing.assert_array_equal(mlp_forward(net, np.array([1.0, 2.0])).data, [1.0, 2.0])


def test_one_hidden_hand_evaluation():
    net = Mlp(MlpConfig(1, 2, 1, 1, prelu_init=0.25))
    layer = net.hidden[0]
    layer.weight.data[...] = [[2.0, -3.0]]
    layer.bias.data[...] = [0.5, 1.0]
    net.output.weight.data[...] = [[1.0], [4.0]]
    net.output.bias.data[...] = [-1.0]
    # hidden pre-activations 2.5 and -2.0; PReLU gives 2.5 and -0.5
    expected = 1.0 * 2.5 + 4.0 * (-0.5) - 1.0
    assert net(np.array([1.0])).item() == pytest.approx(expected, abs=1e-15)


def test_skip_topology_is_projection_then_residuals():
    net = Mlp(MlpConfig(1, 2, 2, 1, prelu_init=0.5, use_skip=True))
    for layer in net.hidden:
        layer.weight.data[...] = 0.0
        layer.bias.data[...] = -1.0
    net.projection.weight.data[...] = [[1.0, 2.0]]
    net.projection.bias.data[...] = 0.0
    net.output.weight.data[...] = [[1.0], [1.0]]
    net.output.bias.data[...] = 0.0
    # h0 = [x, 2x]; each block adds prelu(-1) = -0.5 per unit
    assert net(np.array([3.0])).item() == pytest.approx(3.0 + 6.0 - 2 * 2 * 0.5)


def test_input_dimension_checked(rng):
    net = Mlp(MlpConfig(3, 4, 1, 1), rng)
    with pytest.raises(DimensionError):
        net(np.zeros((2, 2)))


@pytest.mark.parametrize(
    "kwargs",
    [dict(hidden_dim=0), dict(num_hidden=-1), dict(prelu_init=0.0), dict(prelu_init=1.0)],
)
def test_config_validation(kwargs):
    base = dict(input_dim=1, hidden_dim=4, num_hidden=1, output_dim=1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        MlpConfig(**base)


def test_forward_is_bitwise_deterministic(rng):
    cfg = MlpConfig(3, 16, 3, 2, use_skip=True)
    a = Mlp(cfg, np.random.default_rng(1))
    b = Mlp(cfg, np.random.default_rng(1))
    x = rng.normal(size=(7, 3))
    assert a(x).data.tobytes() == b(x).data.tobytes()
    assert a.fingerprint() == b.fingerprint()


def test_layer_count_and_prelu_layout():
    net = Mlp(MlpConfig(2, 4, 3, 1, use_skip=True))
    assert len(net.layers) == 5
    assert net.projection.slope is None and net.output.slope is None
    assert all(layer.slope.data.shape == () for layer in net.hidden)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_mlp_gradients_match_finite_differences(seed, skip):
    rng = np.random.default_rng(seed)
    net = Mlp(MlpConfig(3, 4, 2, 2, use_skip=skip), rng)
    x = Tensor(rng.normal(size=(4, 3)))

    def loss():
        out = net(x)
        return (out * out).sum()

    assert finite_difference_check(loss, net.parameters(), h=1e-5) < 1e-6
