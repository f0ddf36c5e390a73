"""Two-stage (default) and joint training of the NCM bundle and posterior.

Randomness: ``numpy.random.SeedSequence(config.seed).spawn(6)`` gives, in
order, the streams for bundle init, stage-1 batching, stage-1 loss noise,
posterior init, stage-2 batching and posterior-loss noise.  Joint mode reuses
the same streams, so with ``lambda_pos = 0`` it follows the stage-1 parameter
trajectory exactly.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import scm
from .autodiff import Tensor, backward
from .checkpoint import save_checkpoint
from .kernels import KernelConfig
from .ncm import BundleConfig, LossWeights, NcmBundle, total_stage1_loss
from .optim import Adam, LrSchedule, lr_at
from .posterior import DISTANCES, PosteriorNet, loss_pos

log = logging.getLogger(__name__)

STREAMS = ("bundle_init", "stage1_batches", "stage1_noise", "posterior_init", "stage2_batches", "stage2_noise")


class ConfigError(ValueError):
    pass


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss or gradient; the last good checkpoint is kept."""


@dataclass
class Stage1Config:
    epochs: int = 50
    batch_size: int = 128
    q_gen: int = 16
    q_tr: int = 8
    lambda_source: float = 1.0
    lambda_target: float = 1.0
    lambda_tr: float = 1.0
    lambda_cs: float = 0.0
    cs_epsilon: float | None = None
    optimizer: str = "adamw"
    lr: float = 1e-3
    warmup_frac: float = 0.05
    weight_decay: float = 1e-2


@dataclass
class Stage2Config:
    epochs: int = 100
    batch_size: int = 512
    q: int = 2
    distance: str = "mmd-imq"
    standardize: bool = True
    optimizer: str = "adam"
    lr: float = 3e-3
    warmup_frac: float = 0.05
    weight_decay: float = 0.0


@dataclass
class TrainConfig:
    d: int = 1
    mode: str = "two-stage"
    seed: int = 0
    rho: float = 1.0
    hidden_dim: int = 128
    lambda_pos: float = 1.0
    source_path: str | None = None
    target_path: str | None = None
    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)

    def __post_init__(self):
        if self.mode not in ("two-stage", "joint"):
            raise ConfigError(f"mode must be 'two-stage' or 'joint', got {self.mode!r}")
        if self.d < 1 or self.hidden_dim < 1:
            raise ConfigError("d and hidden_dim must be positive")
        for name, st in (("stage1", self.stage1), ("stage2", self.stage2)):
            if st.epochs < 1 or st.batch_size < 1:
                raise ConfigError(f"{name}: epochs and batch_size must be positive")
            if not 0.0 <= st.warmup_frac <= 1.0:
                raise ConfigError(f"{name}: warmup_frac must lie in [0, 1]")
        if self.stage1.q_gen < 1 or self.stage1.q_tr < 1 or self.stage2.q < 1:
            raise ConfigError("sample counts q must be positive")
        if self.stage2.distance not in DISTANCES:
            raise ConfigError(f"stage2.distance must be one of {DISTANCES}")

    @property
    def kernel(self) -> KernelConfig:
        return KernelConfig("imq", rho=self.rho)

    @property
    def bundle_config(self) -> BundleConfig:
        return BundleConfig(d=self.d, hidden_dim=self.hidden_dim)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        _reject_unknown(doc, cls, "config")
        s1 = doc.pop("stage1", {}) or {}
        s2 = doc.pop("stage2", {}) or {}
        _reject_unknown(s1, Stage1Config, "stage1")
        _reject_unknown(s2, Stage2Config, "stage2")
        try:
            return cls(stage1=Stage1Config(**s1), stage2=Stage2Config(**s2), **doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)


def _reject_unknown(doc: dict, klass, where: str) -> None:
    known = {f.name for f in dataclasses.fields(klass)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


@dataclass
class TrainingMetrics:
    """Append-only per-step records; ``wall_time`` is kept out of ``records``."""

    records: list[dict] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    path: Path | None = None
    timing_path: Path | None = None

    def append(self, record: dict, wall_time: float) -> None:
        self.records.append(record)
        self.wall_times.append(wall_time)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        if self.timing_path is not None:
            with open(self.timing_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"stage": record["stage"], "step": record["step"], "wall_time": wall_time}) + "\n")

    def column(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.records])


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


class _Cycler:
    """Endless shuffled minibatches over a dataset (used for the target domain)."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n, self.batch_size, self.rng = n, batch_size, rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        out = []
        need = min(self.batch_size, self.n)
        while need:
            if self.pos >= self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
            take = min(need, self.n - self.pos)
            out.append(self.perm[self.pos : self.pos + take])
            self.pos += take
            need -= take
        return np.concatenate(out)


def _schedule(st, steps_per_epoch: int) -> LrSchedule:
    total = st.epochs * steps_per_epoch
    return LrSchedule(st.lr, int(round(st.warmup_frac * total)), total)


def _optimizer(params, st) -> Adam:
    algo = st.optimizer
    if algo not in ("adam", "adamw"):
        raise ConfigError(f"unknown optimizer {algo!r}")
    return Adam(params, lr=st.lr, weight_decay=st.weight_decay, algorithm=algo)


def _check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingAborted(f"non-finite {what} at step {step}; last good checkpoint retained")


def _validate(ds: scm.Dataset, d: int, name: str) -> None:
    if ds.x.ndim != 2 or ds.x.shape[1] != d or ds.y.shape != (ds.x.shape[0], 2 * d):
        raise ConfigError(f"{name} dataset shape {ds.x.shape}/{ds.y.shape} does not match d={d}")
    if len(ds) < 1:
        raise ConfigError(f"{name} dataset is empty")


def _stage1_weights(st: Stage1Config) -> LossWeights:
    return LossWeights(st.lambda_source, st.lambda_target, st.lambda_tr, st.lambda_cs)


def _record(stage: int, step: int, epoch: int, lr: float, parts: dict, loss_pos: float, total: float) -> dict:
    rec = {"stage": stage, "step": step, "epoch": epoch, "lr": lr, "loss_pos": loss_pos, "total": total}
    rec.update(parts)
    return rec


def _metrics(out_dir) -> TrainingMetrics:
    if out_dir is None:
        return TrainingMetrics()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return TrainingMetrics(path=out_dir / "metrics.jsonl", timing_path=out_dir / "timing.jsonl")


def train_stage1(
    config: TrainConfig,
    source: scm.Dataset,
    target: scm.Dataset,
    out_dir=None,
    metrics: TrainingMetrics | None = None,
    streams: dict | None = None,
    max_steps: int | None = None,
):
    """Fit the six networks on ``l_gen^S + l_gen^T (+ l_cs) + l_tr`` with AdamW."""
    _validate(source, config.d, "source")
    _validate(target, config.d, "target")
    streams = streams or seed_streams(config.seed)
    metrics = metrics if metrics is not None else _metrics(out_dir)
    st = config.stage1
    bundle = NcmBundle.create(config.bundle_config, streams["bundle_init"])
    steps_per_epoch = math.ceil(len(source) / st.batch_size)
    sched = _schedule(st, steps_per_epoch)
    opt = _optimizer(bundle.parameters(), st)
    weights = _stage1_weights(st)
    target_batches = _Cycler(len(target), st.batch_size, streams["stage1_batches"])
    noise = streams["stage1_noise"]
    ckpt = Path(out_dir) / "stage1.ckpt.json" if out_dir is not None else None
    step = 0
    t0 = time.perf_counter()
    for epoch in range(st.epochs):
        for idx in _batches(len(source), st.batch_size, streams["stage1_batches"]):
            tidx = target_batches.next()
            total, parts = total_stage1_loss(
                bundle, (source.x[idx], source.y[idx]), (target.x[tidx], target.y[tidx]),
                weights, st.q_gen, st.q_tr, noise, config.kernel, st.cs_epsilon,
            )
            _check_finite(total.item(), "stage-1 loss", step + 1)
            backward(total)
            lr = lr_at(sched, step + 1)
            try:
                opt.step(lr=lr)
            except FloatingPointError as exc:
                raise TrainingAborted(f"stage 1 step {step + 1}: {exc}") from exc
            opt.zero_grad()
            step += 1
            metrics.append(_record(1, step, epoch, lr, parts, 0.0, total.item()), time.perf_counter() - t0)
            if max_steps is not None and step >= max_steps:
                break
        if ckpt is not None:
            save_checkpoint(ckpt, bundle, None, config.to_dict(), step)
        log.info("stage 1 epoch %d/%d done, step %d, last loss %.5f", epoch + 1, st.epochs, step, total.item())
        if max_steps is not None and step >= max_steps:
            break
    return bundle, metrics


def train_stage2(
    config: TrainConfig,
    bundle: NcmBundle,
    source: scm.Dataset,
    out_dir=None,
    metrics: TrainingMetrics | None = None,
    streams: dict | None = None,
    max_steps: int | None = None,
):
    """Fit the posterior network on ``l_pos`` with the bundle frozen."""
    _validate(source, config.d, "source")
    streams = streams or seed_streams(config.seed)
    metrics = metrics if metrics is not None else _metrics(out_dir)
    st = config.stage2
    before = bundle.fingerprint()
    posterior = PosteriorNet(config.d, streams["posterior_init"], hidden_dim=config.hidden_dim)
    steps_per_epoch = math.ceil(len(source) / st.batch_size)
    sched = _schedule(st, steps_per_epoch)
    opt = _optimizer(posterior.parameters(), st)
    noise = streams["stage2_noise"]
    ckpt = Path(out_dir) / "model.ckpt.json" if out_dir is not None else None
    zero = {"loss_gen_source": 0.0, "loss_gen_target": 0.0, "loss_cs": 0.0, "loss_tr": 0.0}
    step = 0
    t0 = time.perf_counter()
    for epoch in range(st.epochs):
        for idx in _batches(len(source), st.batch_size, streams["stage2_batches"]):
            loss = loss_pos(bundle, posterior, source.x[idx], source.y[idx], st.q, noise,
                            st.distance, freeze_bundle=True, kernel=config.kernel,
                            standardize_tuples=st.standardize)
            _check_finite(loss.item(), "posterior loss", step + 1)
            backward(loss)
            lr = lr_at(sched, step + 1)
            try:
                opt.step(lr=lr)
            except FloatingPointError as exc:
                raise TrainingAborted(f"stage 2 step {step + 1}: {exc}") from exc
            opt.zero_grad()
            step += 1
            metrics.append(_record(2, step, epoch, lr, zero, loss.item(), loss.item()), time.perf_counter() - t0)
            if max_steps is not None and step >= max_steps:
                break
        if ckpt is not None:
            save_checkpoint(ckpt, bundle, posterior, config.to_dict(), step)
        if max_steps is not None and step >= max_steps:
            break
    if bundle.fingerprint() != before:
        raise AssertionError("stage 2 modified stage-1 parameters")
    return posterior, metrics


def train_joint(
    config: TrainConfig,
    source: scm.Dataset,
    target: scm.Dataset,
    out_dir=None,
    max_steps: int | None = None,
):
    """Update all seven networks together on the summed objective (stage-1 optimizer settings)."""
    _validate(source, config.d, "source")
    _validate(target, config.d, "target")
    streams = seed_streams(config.seed)
    metrics = _metrics(out_dir)
    st = config.stage1
    bundle = NcmBundle.create(config.bundle_config, streams["bundle_init"])
    posterior = PosteriorNet(config.d, streams["posterior_init"], hidden_dim=config.hidden_dim)
    steps_per_epoch = math.ceil(len(source) / st.batch_size)
    sched = _schedule(st, steps_per_epoch)
    opt = _optimizer(bundle.parameters() + posterior.parameters(), st)
    weights = _stage1_weights(st)
    target_batches = _Cycler(len(target), st.batch_size, streams["stage1_batches"])
    noise, pos_noise = streams["stage1_noise"], streams["stage2_noise"]
    ckpt = Path(out_dir) / "model.ckpt.json" if out_dir is not None else None
    step = 0
    t0 = time.perf_counter()
    for epoch in range(st.epochs):
        for idx in _batches(len(source), st.batch_size, streams["stage1_batches"]):
            tidx = target_batches.next()
            total, parts = total_stage1_loss(
                bundle, (source.x[idx], source.y[idx]), (target.x[tidx], target.y[tidx]),
                weights, st.q_gen, st.q_tr, noise, config.kernel, st.cs_epsilon,
            )
            pos_value = 0.0
            if config.lambda_pos:
                lp = loss_pos(bundle, posterior, source.x[idx], source.y[idx], config.stage2.q, pos_noise,
                              config.stage2.distance, freeze_bundle=False, kernel=config.kernel,
                              standardize_tuples=config.stage2.standardize)
                pos_value = lp.item()
                total = total + config.lambda_pos * lp
            _check_finite(total.item(), "joint loss", step + 1)
            backward(total)
            lr = lr_at(sched, step + 1)
            try:
                opt.step(lr=lr)
            except FloatingPointError as exc:
                raise TrainingAborted(f"joint step {step + 1}: {exc}") from exc
            opt.zero_grad()
            step += 1
            metrics.append(_record(0, step, epoch, lr, parts, pos_value, total.item()), time.perf_counter() - t0)
            if max_steps is not None and step >= max_steps:
                break
        if ckpt is not None:
            save_checkpoint(ckpt, bundle, posterior, config.to_dict(), step)
        if max_steps is not None and step >= max_steps:
            break
    return bundle, posterior, metrics


def train(config: TrainConfig, source: scm.Dataset, target: scm.Dataset, out_dir=None):
    """Run the configured mode; returns ``(bundle, posterior, metrics)``."""
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("metrics.jsonl", "timing.jsonl"):
            (out / name).unlink(missing_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    if config.mode == "joint":
        return train_joint(config, source, target, out_dir)
    streams = seed_streams(config.seed)
    metrics = _metrics(out_dir)
    bundle, _ = train_stage1(config, source, target, out_dir, metrics, streams)
    posterior, _ = train_stage2(config, bundle, source, out_dir, metrics, streams)
    return bundle, posterior, metrics
