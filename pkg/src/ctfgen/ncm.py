"""Joint neural causal model: mechanisms, exogenous generators and losses.

A bundle holds six networks.  ``mech_source`` / ``mech_target`` map the
concatenation ``(x, c, n)`` (width ``3d``) to an effect in ``R^{2d}``; the four
pushforward generators map standard normal draws in ``R^d`` to context
(``ctx_gen_*``) and noise (``noise_gen_*``) samples.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from . import scm
from .autodiff import Tensor, as_tensor, concat, no_grad
from .kernels import IMQ, KernelConfig, conditional_kls_loss, sqdist
from .nn import DimensionError, Mlp, MlpConfig
from .sinkhorn import OtCoupling, sinkhorn

log = logging.getLogger(__name__)

SOURCE, TARGET = scm.SOURCE, scm.TARGET
NET_NAMES = (
    "mech_source",
    "mech_target",
    "ctx_gen_source",
    "ctx_gen_target",
    "noise_gen_source",
    "noise_gen_target",
)


@dataclass(frozen=True)
class BundleConfig:
    d: int = 1
    hidden_dim: int = 128
    mech_hidden: int = 5
    ctx_hidden: int = 1
    noise_hidden: int = 3
    mech_prelu: float = 0.25
    gen_prelu: float = 0.01

    def net_configs(self) -> dict[str, MlpConfig]:
        d, h = self.d, self.hidden_dim
        mech = MlpConfig(3 * d, h, self.mech_hidden, 2 * d, self.mech_prelu, False)
        ctx = MlpConfig(d, h, self.ctx_hidden, d, self.gen_prelu, True)
        noise = MlpConfig(d, h, self.noise_hidden, d, self.gen_prelu, True)
        return {
            "mech_source": mech,
            "mech_target": mech,
            "ctx_gen_source": ctx,
            "ctx_gen_target": ctx,
            "noise_gen_source": noise,
            "noise_gen_target": noise,
        }


class NcmBundle:
    """The six trainable networks of the joint model."""

    def __init__(self, nets: dict, d: int, config: BundleConfig | None = None):
        missing = set(NET_NAMES) - set(nets)
        if missing:
            raise ValueError(f"bundle is missing networks: {sorted(missing)}")
        self.nets = dict(nets)
        self.d = d
        self.config = config

    @classmethod
    def create(cls, config: BundleConfig, rng: np.random.Generator) -> "NcmBundle":
        nets = {name: Mlp(cfg, rng, name=name) for name, cfg in config.net_configs().items()}
        return cls(nets, config.d, config)

    def __getattr__(self, item):
        nets = self.__dict__.get("nets", {})
        if item in nets:
            return nets[item]
        raise AttributeError(item)

    def mech(self, domain: str):
        return self.nets[f"mech_{domain}"]

    def ctx_gen(self, domain: str):
        return self.nets[f"ctx_gen_{domain}"]

    def noise_gen(self, domain: str):
        return self.nets[f"noise_gen_{domain}"]

    def parameters(self) -> list[Tensor]:
        return [p for name in NET_NAMES for p in _params(self.nets[name])]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def fingerprint(self) -> bytes:
        return b"".join(p.data.tobytes() for p in self.parameters())


def _params(net) -> list[Tensor]:
    return net.parameters() if hasattr(net, "parameters") else []


# ---------------------------------------------------------------------------
# ground-truth stand-ins with the network call signature
# ---------------------------------------------------------------------------


class FunctionNet:
    """Wraps a numpy function ``(m, in) -> (m, out)`` as a parameter-free net."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], name: str = "fn"):
        self.fn = fn
        self.name = name

    def __call__(self, x) -> Tensor:
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=float)
        return Tensor(self.fn(data))

    def parameters(self) -> list[Tensor]:
        return []


def _split3(z: np.ndarray):
    d = z.shape[-1] // 3
    return z[:, :d], z[:, d : 2 * d], z[:, 2 * d :]


def _source_ctx_ppf(eta):
    return 1.0 - 2.0 * stats.beta.ppf(stats.norm.cdf(eta), scm.BETA_A, scm.BETA_B)


def _source_noise_ppf(eta):
    return stats.vonmises.ppf(stats.norm.cdf(eta), scm.VM_KAPPA)


def _source_mech(z):
    return scm.source_mechanism(*_split3(z))


def _target_mech(z):
    return scm.target_mechanism(*_split3(z))


def _target_ctx(eta):
    return eta.copy()


def _target_noise(eta):
    return np.sqrt(scm.TARGET_NOISE_VAR) * eta


def oracle_bundle(d: int) -> NcmBundle:
    """Exact mechanisms and prior pushforwards of the ground-truth SCMs.

    Each generator maps a standard normal draw through the inverse CDF of its
    prior, so the bundle samples the true observational distributions.
    """
    nets = {
        "mech_source": FunctionNet(_source_mech, "mech_source"),
        "mech_target": FunctionNet(_target_mech, "mech_target"),
        "ctx_gen_source": FunctionNet(_source_ctx_ppf, "ctx_gen_source"),
        "ctx_gen_target": FunctionNet(_target_ctx, "ctx_gen_target"),
        "noise_gen_source": FunctionNet(_source_noise_ppf, "noise_gen_source"),
        "noise_gen_target": FunctionNet(_target_noise, "noise_gen_target"),
    }
    return NcmBundle(nets, d)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass
class ExogenousDraw:
    eta_c: np.ndarray
    eta_n: np.ndarray


def draw_exogenous(rng: np.random.Generator, m: int, d: int) -> ExogenousDraw:
    return ExogenousDraw(rng.standard_normal((m, d)), rng.standard_normal((m, d)))


def _check_x(bundle: NcmBundle, x) -> np.ndarray:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != bundle.d:
        raise DimensionError(f"x has last dim {x.shape[-1]}, bundle expects {bundle.d}")
    return x


def mechanism_input(x, c, n) -> Tensor:
    return concat([as_tensor(x), as_tensor(c), as_tensor(n)], axis=-1)


def gen_effect(bundle: NcmBundle, domain: str, x, draw: ExogenousDraw) -> Tensor:
    """``mech(x, ctx_gen(eta_c), noise_gen(eta_n))`` for a batch of rows."""
    x = _check_x(bundle, x)
    c = bundle.ctx_gen(domain)(draw.eta_c)
    n = bundle.noise_gen(domain)(draw.eta_n)
    return bundle.mech(domain)(mechanism_input(x, c, n))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def _generated(bundle, domain, x: np.ndarray, q: int, rng) -> Tensor:
    m, d = x.shape
    draw = draw_exogenous_grid(rng, m, q, d)
    out = gen_effect(bundle, domain, np.repeat(x, q, axis=0), draw)
    return out.reshape(m, q, 2 * d)


def draw_exogenous_grid(rng: np.random.Generator, m: int, q: int, d: int) -> ExogenousDraw:
    eta_c = rng.standard_normal((m, q, d)).reshape(m * q, d)
    eta_n = rng.standard_normal((m, q, d)).reshape(m * q, d)
    return ExogenousDraw(eta_c, eta_n)


def loss_gen(bundle: NcmBundle, domain: str, x, y, q: int, rng, kernel: KernelConfig = IMQ) -> Tensor:
    """Conditional kernel least-squares fit of one domain's generator to its data."""
    x = _check_x(bundle, x)
    y = np.asarray(y, dtype=float).reshape(x.shape[0], -1)
    if q < 1 or x.shape[0] < 1:
        raise ValueError("loss_gen needs n >= 1 and q >= 1")
    return conditional_kls_loss(y, _generated(bundle, domain, x, q, rng), kernel)


def block_dis(y_s, y_t, d: int):
    """Squared error between the source context block and half the target context block."""
    diff = y_s[:, :d] - 0.5 * y_t[:, d:]
    return (diff * diff).sum(axis=-1)


DisCost = Callable[..., Tensor]


def loss_tr(
    bundle: NcmBundle,
    x,
    q: int,
    rng,
    dis: DisCost = block_dis,
    wiring: str = "shared",
) -> Tensor:
    """Cross-domain disambiguation loss.

    ``wiring="shared"`` feeds one source context sample to both mechanisms with
    independent domain noises.  ``wiring="swapped"`` instead feeds the source
    noise sample into the target mechanism's context slot, i.e. the roles of
    the two exogenous generators are exchanged.
    """
    x = _check_x(bundle, x)
    m, d = x.shape
    xr = np.repeat(x, q, axis=0)
    eta_c = rng.standard_normal((m * q, d))
    eta_ns = rng.standard_normal((m * q, d))
    eta_nt = rng.standard_normal((m * q, d))
    c = bundle.ctx_gen_source(eta_c)
    n_s = bundle.noise_gen_source(eta_ns)
    n_t = bundle.noise_gen_target(eta_nt)
    y_s = bundle.mech_source(mechanism_input(xr, c, n_s))
    if wiring == "shared":
        y_t = bundle.mech_target(mechanism_input(xr, c, n_t))
    elif wiring == "swapped":
        y_t = bundle.mech_target(mechanism_input(xr, n_s, n_t))
    else:
        raise ValueError(f"unknown wiring {wiring!r}")
    return as_tensor(dis(y_s, y_t, d)).mean()


def loss_tr_samples(bundle: NcmBundle, x, q: int, rng, wiring: str = "shared", dis: DisCost = block_dis):
    """Per-draw values of the disambiguation cost (no gradients), for diagnostics."""
    x = _check_x(bundle, x)
    m, d = x.shape
    xr = np.repeat(x, q, axis=0)
    with no_grad():
        eta_c = rng.standard_normal((m * q, d))
        eta_ns = rng.standard_normal((m * q, d))
        eta_nt = rng.standard_normal((m * q, d))
        c = bundle.ctx_gen_source(eta_c)
        n_s = bundle.noise_gen_source(eta_ns)
        n_t = bundle.noise_gen_target(eta_nt)
        y_s = bundle.mech_source(mechanism_input(xr, c, n_s))
        ctx = c if wiring == "shared" else n_s
        y_t = bundle.mech_target(mechanism_input(xr, ctx, n_t))
        return np.asarray(as_tensor(dis(y_s, y_t, d)).data)


def loss_cs(
    bundle: NcmBundle,
    x_source,
    x_target,
    y_target,
    q: int,
    rng,
    epsilon: float | None = None,
    kernel: KernelConfig = IMQ,
    return_coupling: bool = False,
    coupling: OtCoupling | None = None,
):
    """Covariate-shift corrective loss.

    An entropic OT plan between the source and target covariates reweights the
    kernel least-squares loss of target observations against target-mechanism
    samples generated at the *source* covariates.  The plan is a constant and
    may be passed in via ``coupling`` when the covariate batches are reused.
    """
    xs = _check_x(bundle, x_source)
    xt = _check_x(bundle, x_target)
    yt = np.asarray(y_target, dtype=float).reshape(xt.shape[0], -1)
    if coupling is None:
        coupling = sinkhorn(sqdist(xs, xt), epsilon=epsilon)
    elif coupling.plan.shape != (xs.shape[0], xt.shape[0]):
        raise DimensionError(f"coupling shape {coupling.plan.shape} does not match the batches")
    if not coupling.converged:
        log.debug("loss_cs: sinkhorn not converged (marginal error %.3g)", coupling.marginal_error)
    plan = coupling.plan
    gens = _generated(bundle, TARGET, xs, q, rng)  # (m, q, 2d)
    within = kernel.from_sqdist(sqdist(gens, gens)).mean(axis=(-2, -1))  # (m,)
    diff = gens[:, None, :, :] - yt[None, :, None, :]  # (m, n, q, 2d)
    cross = kernel.from_sqdist((diff * diff).sum(axis=-1)).mean(axis=-1)  # (m, n)
    loss = kernel.at_zero() * plan.sum() - 2.0 * (cross * plan).sum() + (within * plan.sum(axis=1)).sum()
    return (loss, coupling) if return_coupling else loss


@dataclass(frozen=True)
class LossWeights:
    source: float = 1.0
    target: float = 1.0
    tr: float = 1.0
    cs: float = 0.0


def total_stage1_loss(
    bundle: NcmBundle,
    source_batch,
    target_batch,
    weights: LossWeights,
    q_gen: int,
    q_tr: int,
    rng,
    kernel: KernelConfig = IMQ,
    cs_epsilon: float | None = None,
    dis: DisCost = block_dis,
):
    """Weighted sum of the stage-1 terms.  Returns ``(total, components)``.

    Terms with zero weight are skipped and reported as exactly 0.
    """
    xs, ys = source_batch
    xt, yt = target_batch
    parts: dict[str, Tensor | float] = {
        "loss_gen_source": 0.0,
        "loss_gen_target": 0.0,
        "loss_cs": 0.0,
        "loss_tr": 0.0,
    }
    total = Tensor(0.0)
    if weights.source:
        parts["loss_gen_source"] = loss_gen(bundle, SOURCE, xs, ys, q_gen, rng, kernel)
        total = total + weights.source * parts["loss_gen_source"]
    if weights.target:
        parts["loss_gen_target"] = loss_gen(bundle, TARGET, xt, yt, q_gen, rng, kernel)
        total = total + weights.target * parts["loss_gen_target"]
    if weights.cs:
        parts["loss_cs"] = loss_cs(bundle, xs, xt, yt, q_gen, rng, cs_epsilon, kernel)
        total = total + weights.cs * parts["loss_cs"]
    if weights.tr:
        parts["loss_tr"] = loss_tr(bundle, xs, q_tr, rng, dis)
        total = total + weights.tr * parts["loss_tr"]
    values = {k: (v.item() if isinstance(v, Tensor) else float(v)) for k, v in parts.items()}
    return total, values
