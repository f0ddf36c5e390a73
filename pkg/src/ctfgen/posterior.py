"""Pushforward posterior over the source context and its training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scm
from .autodiff import Tensor, as_tensor, concat, no_grad
from .kernels import IMQ, KernelConfig, mmd2, sqdist
from .ncm import NcmBundle, mechanism_input
from .nn import DimensionError, Mlp, MlpConfig
from .sinkhorn import sinkhorn

DISTANCES = ("mmd-imq", "sinkhorn", "energy")


class PosteriorNet:
    """``g(x, y, eta) -> c`` with ``eta ~ N(0, I_{d_eta})``."""

    def __init__(self, d: int, rng: np.random.Generator, hidden_dim: int = 128, num_hidden: int = 3,
                 d_eta: int | None = None, prelu_init: float = 0.01, net: Mlp | None = None):
        self.d = d
        self.d_eta = d if d_eta is None else d_eta
        if net is None:
            cfg = MlpConfig(3 * d + self.d_eta, hidden_dim, num_hidden, d, prelu_init, True)
            net = Mlp(cfg, rng, name="posterior")
        self.net = net

    def __call__(self, x, y, eta) -> Tensor:
        return self.net(concat([as_tensor(x), as_tensor(y), as_tensor(eta)], axis=-1))

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def zero_grad(self) -> None:
        self.net.zero_grad()

    def fingerprint(self) -> bytes:
        return self.net.fingerprint()


class ExactSourcePosterior:
    """The true (point-mass) source posterior via closed-form abduction."""

    def __init__(self, d: int):
        self.d = d
        self.d_eta = d

    def __call__(self, x, y, eta) -> Tensor:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
        y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=float)
        return Tensor(scm.abduct_source_context(x, y))

    def parameters(self) -> list[Tensor]:
        return []


def _row(v, width: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != width:
        raise DimensionError(f"expected a vector of length {width}, got {v.size}")
    return v


def posterior_sample(net, x, y, rng: np.random.Generator, k: int) -> np.ndarray:
    """``k`` context samples for one factual ``(x, y)``; shape ``(k, d)``."""
    x = _row(x, net.d)
    y = _row(y, 2 * net.d)
    eta = rng.standard_normal((k, net.d_eta))
    with no_grad():
        out = net(np.tile(x, (k, 1)), np.tile(y, (k, 1)), eta)
    return out.data.reshape(k, net.d)


def joint_tuples(x, c, n, y) -> Tensor:
    """Fixed concatenation order ``(x, c, n, y)`` -> ``(m, 5d)``."""
    return concat([as_tensor(x), as_tensor(c), as_tensor(n), as_tensor(y)], axis=-1)


def _pairwise_dist(a, b):
    return (sqdist(a, b) + 1e-12).sqrt() if isinstance(a, Tensor) or isinstance(b, Tensor) else np.sqrt(
        sqdist(a, b) + 1e-12
    )


def energy_distance(A, B):
    return 2.0 * _pairwise_dist(A, B).mean() - _pairwise_dist(A, A).mean() - _pairwise_dist(B, B).mean()


def _entropic_cost(A, B, epsilon):
    C = sqdist(A, B)
    cdata = C.data if isinstance(C, Tensor) else C
    plan = sinkhorn(cdata, epsilon=epsilon).plan
    return (C * plan).sum()


def sinkhorn_divergence(A, B, scale: float = 0.05):
    """Debiased entropic OT cost; plans are held fixed (envelope gradients)."""
    Ad = A.data if isinstance(A, Tensor) else A
    Bd = B.data if isinstance(B, Tensor) else B
    mean_cost = float(np.mean(sqdist(Ad, Bd)))
    eps = scale * mean_cost if mean_cost > 0 else scale
    return _entropic_cost(A, B, eps) - 0.5 * _entropic_cost(A, A, eps) - 0.5 * _entropic_cost(B, B, eps)


def tuple_distance(S, P, distance: str = "mmd-imq", kernel: KernelConfig = IMQ):
    if distance == "mmd-imq":
        return mmd2(S, P, kernel, "biased", expanded=True)
    if distance == "energy":
        return energy_distance(S, P)
    if distance == "sinkhorn":
        return sinkhorn_divergence(S, P)
    raise ValueError(f"unknown distance {distance!r}; choose from {DISTANCES}")


@dataclass
class PosTuples:
    generative: Tensor  # S: (x, c_hat, n_hat, y_hat)
    posterior: Tensor  # P: (x, g(x, y, eta), n_hat', y)


def build_tuples(bundle: NcmBundle, net, x, y, q: int, rng, freeze_bundle: bool = True) -> PosTuples:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m, d = x.shape
    xr = np.repeat(x, q, axis=0)
    yr = np.repeat(y, q, axis=0)
    eta_c = rng.standard_normal((m * q, d))
    eta_n = rng.standard_normal((m * q, d))
    eta_pos = rng.standard_normal((m * q, net.d_eta))
    eta_n2 = rng.standard_normal((m * q, d))
    if freeze_bundle:
        with no_grad():
            c = bundle.ctx_gen_source(eta_c)
            n = bundle.noise_gen_source(eta_n)
            y_hat = bundle.mech_source(mechanism_input(xr, c, n))
            S = joint_tuples(xr, c, n, y_hat)
            n_p = bundle.noise_gen_source(eta_n2)
    else:
        c = bundle.ctx_gen_source(eta_c)
        n = bundle.noise_gen_source(eta_n)
        y_hat = bundle.mech_source(mechanism_input(xr, c, n))
        S = joint_tuples(xr, c, n, y_hat)
        n_p = bundle.noise_gen_source(eta_n2)
    c_p = net(xr, yr, eta_pos)
    P = joint_tuples(xr, c_p, n_p, yr)
    return PosTuples(S, P)


def standardize(S: Tensor, P: Tensor, floor: float = 1e-12):
    """Scale both tuple sets by the per-coordinate mean and std of ``S``.

    The statistics are part of the graph, so in joint training the bundle also
    sees their gradient; with a frozen bundle they are constants.
    """
    mu = S.mean(axis=0)
    centered = S - mu
    sd = ((centered * centered).mean(axis=0) + floor).sqrt()
    return centered / sd, (P - mu) / sd


def loss_pos(
    bundle: NcmBundle,
    net,
    x,
    y,
    q: int,
    rng,
    distance: str = "mmd-imq",
    freeze_bundle: bool = True,
    kernel: KernelConfig = IMQ,
    standardize_tuples: bool = True,
) -> Tensor:
    """Distance between the generative joint and the posterior-factorised joint.

    With ``freeze_bundle`` only the posterior network receives gradients.
    """
    if distance not in DISTANCES:
        raise ValueError(f"unknown distance {distance!r}; choose from {DISTANCES}")
    t = build_tuples(bundle, net, x, y, q, rng, freeze_bundle)
    S, P = (standardize(t.generative, t.posterior) if standardize_tuples else (t.generative, t.posterior))
    return as_tensor(tuple_distance(S, P, distance, kernel))
