"""Kernels, MMD estimators and the conditional kernel least-squares loss.

Gram computations are written against the array protocol shared by
``numpy.ndarray`` and :class:`ctfgen.autodiff.Tensor`, so the same code gives
plain numbers for numpy inputs and differentiable values for tensors.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .autodiff import Tensor

log = logging.getLogger(__name__)

DEFAULT_RHO = 1.0


@dataclass(frozen=True)
class KernelConfig:
    family: str = "imq"
    rho: float = DEFAULT_RHO
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in ("imq", "rbf"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "imq" and self.rho < 0:
            raise ValueError("IMQ offset rho must be >= 0")
        if self.family == "rbf" and self.bandwidth <= 0:
            raise ValueError("RBF bandwidth must be > 0")

    def from_sqdist(self, d2):
        if self.family == "imq":
            return (d2 + self.rho) ** -0.5
        return (d2 * (-0.5 / self.bandwidth**2)).exp() if isinstance(d2, Tensor) else np.exp(
            -0.5 * d2 / self.bandwidth**2
        )

    def at_zero(self) -> float:
        if self.family == "imq":
            if self.rho == 0:
                raise ZeroDivisionError("IMQ kernel with rho=0 is infinite at zero distance")
            return self.rho**-0.5
        return 1.0


IMQ = KernelConfig()


def imq(x, y, rho: float = DEFAULT_RHO) -> float:
    """``1 / sqrt(rho + ||x - y||^2)`` for two vectors."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    s = rho + float(np.dot(diff.ravel(), diff.ravel()))
    if s == 0.0:
        raise ZeroDivisionError("IMQ kernel undefined: rho = 0 and x == y")
    return 1.0 / math.sqrt(s)


def sqdist(a, b):
    """Pairwise squared distances over the last axis: ``(..., m, D), (..., n, D) -> (..., m, n)``."""
    diff = a[..., :, None, :] - b[..., None, :, :]
    return (diff * diff).sum(axis=-1)


def sqdist_expanded(a, b):
    """Same as :func:`sqdist` via ``|a|^2 + |b|^2 - 2 a.b``; cheaper for large sets."""
    aa = (a * a).sum(axis=-1)
    bb = (b * b).sum(axis=-1)
    ab = a @ (b.T if isinstance(b, Tensor) else np.swapaxes(b, -1, -2))
    return aa[:, None] + bb[None, :] - 2.0 * ab


def gram(a, b, kernel: KernelConfig = IMQ, expanded: bool = False):
    d2 = sqdist_expanded(a, b) if expanded else sqdist(a, b)
    return kernel.from_sqdist(d2)


def _as_2d(x):
    if isinstance(x, Tensor):
        return x if x.ndim == 2 else x.reshape(x.shape[0], -1)
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 1) if x.ndim == 1 else x


def mmd2(A, B, kernel: KernelConfig = IMQ, estimator: str = "biased", expanded: bool = False):
    """Squared MMD between two samples.

    ``biased`` averages every Gram entry (V-statistic).  ``unbiased`` drops the
    diagonal of the two within-sample Gram matrices.
    """
    A, B = _as_2d(A), _as_2d(B)
    m, n = A.shape[0], B.shape[0]
    if estimator == "biased":
        if m < 1 or n < 1:
            raise ValueError("biased MMD needs at least one point per sample")
        kaa = gram(A, A, kernel, expanded).mean()
        kbb = gram(B, B, kernel, expanded).mean()
    elif estimator == "unbiased":
        if m < 2 or n < 2:
            raise ValueError("unbiased MMD needs at least two points per sample")
        kaa = (gram(A, A, kernel, expanded) * (1.0 - np.eye(m))).sum() * (1.0 / (m * (m - 1)))
        kbb = (gram(B, B, kernel, expanded) * (1.0 - np.eye(n))).sum() * (1.0 / (n * (n - 1)))
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    kab = gram(A, B, kernel, expanded).mean()
    out = kaa + kbb - 2.0 * kab
    return out if isinstance(out, Tensor) else float(out)


def conditional_kls_loss(real_y, gen_ys, kernel: KernelConfig = IMQ):
    """Kernel least-squares loss ``||phi(y) - mean_j phi(y_hat_j)||^2``.

    ``real_y`` is data, shape ``(D,)`` or ``(n, D)``; ``gen_ys`` holds the
    generated samples, shape ``(q, D)`` or ``(n, q, D)``.  With a batch axis the
    per-item losses are averaged.  Only ``gen_ys`` carries gradients.
    """
    y = np.asarray(real_y.data if isinstance(real_y, Tensor) else real_y, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
        gen_ys = gen_ys[None] if isinstance(gen_ys, Tensor) else np.asarray(gen_ys)[None]
    if gen_ys.ndim != 3 or gen_ys.shape[0] != y.shape[0] or gen_ys.shape[2] != y.shape[1]:
        raise ValueError(f"shape mismatch: real {y.shape}, generated {gen_ys.shape}")
    if gen_ys.shape[1] < 1:
        raise ValueError("need at least one generated sample per data point")
    diff = gen_ys - y[:, None, :]
    cross = kernel.from_sqdist((diff * diff).sum(axis=-1)).mean(axis=-1)
    within = kernel.from_sqdist(sqdist(gen_ys, gen_ys)).mean(axis=(-2, -1))
    per_item = kernel.at_zero() - 2.0 * cross + within
    out = per_item.mean()
    return out if isinstance(out, Tensor) else float(out)


def median_heuristic(points) -> float:
    """Median pairwise Euclidean distance; 1.0 (with a warning) if all points coincide."""
    pts = _as_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        raise ValueError("median heuristic needs at least two points")
    med = float(np.median(pdist(pts)))
    if med <= 0.0 or not np.isfinite(med):
        warnings.warn("all points identical; falling back to bandwidth 1.0", RuntimeWarning, stacklevel=2)
        return 1.0
    return med


def bandwidth_grid(anchor: float, exponents=range(-3, 4)) -> np.ndarray:
    return anchor * np.array([2.0**i for i in exponents])
