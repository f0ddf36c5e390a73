"""Central finite-difference checks for autodiff gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward, no_grad


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Relative error ``||g_ad - g_fd|| / max(||g_ad||, ||g_fd||)``.

    ``loss_fn`` must be deterministic (re-seed any randomness inside it).
    With ``max_entries`` only a random subset of parameter entries is probed.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    coords = [(pi, j) for pi, p in enumerate(params) for j in range(p.data.size)]
    if max_entries is not None and len(coords) > max_entries:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_entries, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    analytic = np.array(
        [0.0 if params[pi].grad is None else params[pi].grad.reshape(-1)[j] for pi, j in coords]
    )
    numeric = np.empty(len(coords))
    with no_grad():
        for k, (pi, j) in enumerate(coords):
            flat = params[pi].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + h
            up = loss_fn().item()
            flat[j] = orig - h
            down = loss_fn().item()
            flat[j] = orig
            numeric[k] = (up - down) / (2.0 * h)
    for p in params:
        p.grad = None
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)
