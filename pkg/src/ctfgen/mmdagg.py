"""Aggregated MMD two-sample test with wild-bootstrap thresholds.

For every bandwidth in a dyadic grid around the median heuristic the test
computes the MMD U-statistic and a wild-bootstrap null.  The per-bandwidth
levels ``u * w_l`` are tuned by bisection on ``u`` so that the probability
(under a second, independent bootstrap) of *any* bandwidth rejecting stays at
``alpha``.  The test rejects if any statistic exceeds its adjusted quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import bandwidth_grid, median_heuristic, sqdist


class ConfigurationError(ValueError):
    pass


@dataclass
class TwoSampleResult:
    reject: bool
    level: float
    bandwidths: np.ndarray
    statistics: np.ndarray
    thresholds: np.ndarray
    adjusted_u: float
    weights: np.ndarray = field(repr=False)

    def summary(self) -> dict:
        ratio = self.statistics / np.where(self.thresholds > 0, self.thresholds, np.inf)
        return {
            "reject": bool(self.reject),
            "max_stat": float(np.max(self.statistics)),
            "max_ratio": float(np.max(ratio)),
            "adjusted_u": float(self.adjusted_u),
        }


def _quantile_index(num: int, level: np.ndarray) -> np.ndarray:
    idx = np.ceil(num * (1.0 - level)).astype(int) - 1
    return np.clip(idx, 0, num - 1)


def mmdagg_test(
    A,
    B,
    alpha: float = 0.05,
    bandwidths=None,
    bootstrap_iters: int = 500,
    rng: np.random.Generator | None = None,
    level_iters: int = 500,
    bisection_steps: int = 50,
    weights=None,
) -> TwoSampleResult:
    """Run the aggregated test on two equal-size samples of shape ``(n, D)``."""
    X = np.asarray(A, dtype=float)
    Y = np.asarray(B, dtype=float)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    n = X.shape[0]
    if n < 20 or Y.shape[0] < 20:
        raise ValueError("mmdagg_test needs at least 20 points per sample")
    if Y.shape[0] != n:
        raise ValueError("wild bootstrap requires equal sample sizes")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng(0)
    Z = np.concatenate([X, Y], axis=0)
    if bandwidths is None:
        bandwidths = bandwidth_grid(median_heuristic(Z))
    bandwidths = np.asarray(bandwidths, dtype=float).ravel()
    if bandwidths.size == 0 or np.any(~np.isfinite(bandwidths)) or np.any(bandwidths <= 0):
        raise ConfigurationError("bandwidth grid must be a nonempty set of positive numbers")
    L = bandwidths.size
    w = np.full(L, 1.0 / L) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (L,) or np.any(w <= 0):
        raise ConfigurationError("weights must be positive, one per bandwidth")
    w = w / w.sum()

    d2 = sqdist(Z, Z)
    d_xx, d_yy, d_xy = d2[:n, :n], d2[n:, n:], d2[:n, n:]
    eps1 = rng.choice([-1.0, 1.0], size=(bootstrap_iters, n))
    eps2 = rng.choice([-1.0, 1.0], size=(level_iters, n))
    norm = 1.0 / (n * (n - 1))
    stats = np.empty(L)
    boot1 = np.empty((L, bootstrap_iters + 1))
    boot2 = np.empty((L, level_iters))
    for li, bw in enumerate(bandwidths):
        s = -0.5 / bw**2
        H = np.exp(s * d_xx) + np.exp(s * d_yy) - np.exp(s * d_xy) - np.exp(s * d_xy.T)
        np.fill_diagonal(H, 0.0)
        stats[li] = H.sum() * norm
        b1 = np.einsum("bi,bi->b", eps1 @ H, eps1) * norm
        boot1[li] = np.sort(np.append(b1, stats[li]))
        boot2[li] = np.einsum("bi,bi->b", eps2 @ H, eps2) * norm

    num1 = bootstrap_iters + 1

    def thresholds(u: float) -> np.ndarray:
        idx = _quantile_index(num1, u * w)
        return boot1[np.arange(L), idx]

    lo, hi = 0.0, float(np.min(1.0 / w))
    for _ in range(bisection_steps):
        mid = 0.5 * (lo + hi)
        q = thresholds(mid)
        p_reject = np.mean(np.any(boot2 > q[:, None], axis=0))
        if p_reject <= alpha:
            lo = mid
        else:
            hi = mid
    q = thresholds(lo)
    reject = bool(np.any(stats > q))
    return TwoSampleResult(
        reject=reject,
        level=alpha,
        bandwidths=bandwidths,
        statistics=stats,
        thresholds=q,
        adjusted_u=lo,
        weights=w,
    )
