"""Adam / AdamW and the warmup-cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError("need 0 <= warmup_steps <= total_steps")

    def __call__(self, step: int) -> float:
        return lr_at(self, step)


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to zero at ``total_steps``."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    w, total = schedule.warmup_steps, schedule.total_steps
    if w > 0 and step <= w:
        return schedule.base_lr * step / w
    if total == w:
        return schedule.base_lr
    frac = (step - w) / (total - w)
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


class Adam:
    """Adam with bias correction; ``algorithm="adamw"`` uses decoupled decay.

    With ``algorithm="adam"`` a nonzero ``weight_decay`` is added to the
    gradient (classic L2 form).
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
        algorithm: str = "adam",
    ):
        if algorithm not in ("adam", "adamw"):
            raise ValueError(f"unknown algorithm {algorithm!r}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.algorithm = algorithm
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, grads: Sequence[np.ndarray | None] | None = None, lr: float | None = None) -> None:
        """Apply one update.  ``grads`` defaults to each parameter's ``.grad``."""
        if grads is None:
            grads = [p.grad for p in self.params]
        lr = self.lr if lr is None else lr
        for p, g in zip(self.params, grads):
            if g is not None and not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name or '<unnamed>'}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g is None:
                g = np.zeros_like(p.data)
            if self.algorithm == "adamw":
                if self.weight_decay:
                    p.data *= 1.0 - lr * self.weight_decay
            elif self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def AdamW(params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2) -> Adam:
    return Adam(params, lr=lr, betas=betas, eps=eps, weight_decay=weight_decay, algorithm="adamw")


def optimizer_step(opt: Adam, params: Sequence[Tensor], grads: Sequence[np.ndarray], lr=None) -> None:
    if [id(p) for p in params] != [id(p) for p in opt.params]:
        raise ValueError("parameter list does not match the optimizer state")
    opt.step(grads, lr=lr)
