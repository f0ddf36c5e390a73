"""Feed-forward networks built on :mod:`ctfgen.autodiff`."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, affine, as_tensor, parameter, prelu


class DimensionError(ValueError):
    """Input or checkpoint shape does not match the network configuration."""


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dim: int
    num_hidden: int
    output_dim: int
    prelu_init: float = 0.25
    use_skip: bool = False

    def __post_init__(self):
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise ValueError("input_dim and output_dim must be positive")
        if self.hidden_dim <= 0:
            raise ValueError("hidden_dim must be positive")
        if self.num_hidden < 0:
            raise ValueError("num_hidden must be >= 0")
        if not 0.0 < self.prelu_init < 1.0:
            raise ValueError("prelu_init must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class Layer:
    """One linear map, optionally followed by a PReLU with a single slope."""

    def __init__(self, weight: Tensor, bias: Tensor, slope: Tensor | None):
        self.weight = weight
        self.bias = bias
        self.slope = slope

    def __call__(self, x):
        h = affine(x, self.weight, self.bias)
        return h if self.slope is None else prelu(h, self.slope)

    def parameters(self) -> list[Tensor]:
        ps = [self.weight, self.bias]
        if self.slope is not None:
            ps.append(self.slope)
        return ps


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Mlp:
    """Multilayer perceptron with PReLU activations.

    Without skips: ``num_hidden`` blocks of linear -> PReLU, then a linear
    output layer.  With ``use_skip`` the input is first projected linearly to
    ``hidden_dim`` and every hidden block becomes a residual
    ``h + prelu(h @ W + b)``.

    Weights use a fan-in scaled uniform init (Kaiming style, gain adjusted for
    the PReLU slope); biases start in ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    """

    def __init__(self, config: MlpConfig, rng: np.random.Generator | None = None, name: str = "mlp"):
        self.config = config
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        cfg = config
        act_gain = np.sqrt(2.0 / (1.0 + cfg.prelu_init**2))
        self.projection: Layer | None = None
        self.hidden: list[Layer] = []
        width = cfg.input_dim
        if cfg.use_skip:
            self.projection = self._layer(rng, width, cfg.hidden_dim, 1.0, None, "proj")
            width = cfg.hidden_dim
        for k in range(cfg.num_hidden):
            self.hidden.append(
                self._layer(rng, width, cfg.hidden_dim, act_gain, cfg.prelu_init, f"hidden{k}")
            )
            width = cfg.hidden_dim
        self.output = self._layer(rng, width, cfg.output_dim, 1.0, None, "out")

    def _layer(self, rng, fan_in, fan_out, gain, slope, tag) -> Layer:
        w = parameter(_uniform(rng, fan_in, fan_out, gain), name=f"{self.name}.{tag}.weight")
        bb = 1.0 / np.sqrt(fan_in)
        b = parameter(rng.uniform(-bb, bb, size=fan_out), name=f"{self.name}.{tag}.bias")
        s = None if slope is None else parameter(np.array(slope), name=f"{self.name}.{tag}.prelu")
        return Layer(w, b, s)

    @property
    def layers(self) -> list[Layer]:
        head = [self.projection] if self.projection is not None else []
        return head + self.hidden + [self.output]

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 0 or x.shape[-1] != self.config.input_dim:
            raise DimensionError(
                f"{self.name}: expected last dim {self.config.input_dim}, got shape {x.shape}"
            )
        h = x
        if self.config.use_skip:
            h = self.projection(h)
            for layer in self.hidden:
                h = h + layer(h)
        else:
            for layer in self.hidden:
                h = layer(h)
        return self.output(h)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def fingerprint(self) -> bytes:
        return b"".join(p.data.tobytes() for p in self.parameters())


def mlp_forward(net: Mlp, x) -> Tensor:
    return net(x)
