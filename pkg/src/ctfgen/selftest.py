"""Fast end-to-end checks of a build, each against an independent oracle."""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import scm
from .gradcheck import finite_difference_check
from .kernels import IMQ, mmd2, sqdist
from .mmdagg import mmdagg_test
from .ncm import BundleConfig, NcmBundle, loss_cs, loss_gen, loss_tr
from .posterior import PosteriorNet, loss_pos
from .sinkhorn import sinkhorn

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def tiny_model(seed: int, hidden_dim: int = 4):
    """A d=1 bundle and posterior small enough for finite differences."""
    rng = np.random.default_rng(seed)
    bundle = NcmBundle.create(BundleConfig(d=1, hidden_dim=hidden_dim), rng)
    posterior = PosteriorNet(1, rng, hidden_dim=hidden_dim)
    return bundle, posterior


def loss_closures(seed: int, m: int = 5, q: int = 3) -> dict[str, tuple[Callable, list]]:
    """Each training loss as a deterministic closure plus the parameters it trains."""
    bundle, posterior = tiny_model(seed)
    rng = np.random.default_rng(seed + 10_000)
    src = scm.generate_dataset(scm.SOURCE, m, 1, int(rng.integers(2**31)))
    tgt = scm.generate_dataset(scm.TARGET, m, 1, int(rng.integers(2**31)))
    noise_seed = int(rng.integers(2**31))

    def fresh():
        return np.random.default_rng(noise_seed)

    params = bundle.parameters()
    with warnings.catch_warnings():
        # tiny batches can leave the plan slightly unconverged; it is a constant either way
        warnings.simplefilter("ignore", RuntimeWarning)
        plan = sinkhorn(sqdist(src.x, tgt.x))
    return {
        "gen_source": (lambda: loss_gen(bundle, scm.SOURCE, src.x, src.y, q, fresh()), params),
        "gen_target": (lambda: loss_gen(bundle, scm.TARGET, tgt.x, tgt.y, q, fresh()), params),
        "tr": (lambda: loss_tr(bundle, src.x, q, fresh()), params),
        "cs": (lambda: loss_cs(bundle, src.x, tgt.x, tgt.y, q, fresh(), coupling=plan), params),
        "pos": (lambda: loss_pos(bundle, posterior, src.x, src.y, q, fresh()), posterior.parameters()),
        "pos_joint": (
            lambda: loss_pos(bundle, posterior, src.x, src.y, q, fresh(), freeze_bundle=False),
            params + posterior.parameters(),
        ),
    }


def check_gradients(seeds=range(3), tol: float = 1e-5, max_entries: int = 40) -> CheckResult:
    worst = 0.0
    for seed in seeds:
        for name, (fn, params) in loss_closures(seed).items():
            err = finite_difference_check(fn, params, max_entries=max_entries, rng=np.random.default_rng(seed))
            worst = max(worst, err)
            log.debug("gradcheck seed=%d %s rel=%.2e", seed, name, err)
    return CheckResult("gradients", worst < tol, f"worst relative error {worst:.2e}")


def brute_mmd2(A, B, kernel=IMQ, estimator="biased") -> float:
    def k(a, b):
        return kernel.from_sqdist(float(np.sum((a - b) ** 2)))

    n, m = len(A), len(B)
    if estimator == "biased":
        xx = sum(k(a, b) for a in A for b in A) / n**2
        yy = sum(k(a, b) for a in B for b in B) / m**2
    else:
        xx = sum(k(A[i], A[j]) for i, j in itertools.permutations(range(n), 2)) / (n * (n - 1))
        yy = sum(k(B[i], B[j]) for i, j in itertools.permutations(range(m), 2)) / (m * (m - 1))
    xy = sum(k(a, b) for a in A for b in B) / (n * m)
    return xx + yy - 2.0 * xy


def check_mmd(trials: int = 20, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n, m, dim = rng.integers(2, 8), rng.integers(2, 8), rng.integers(1, 4)
        A, B = rng.normal(size=(n, dim)), rng.normal(size=(m, dim))
        for est in ("biased", "unbiased"):
            worst = max(worst, abs(float(mmd2(A, B, IMQ, est)) - brute_mmd2(A, B, IMQ, est)))
    return CheckResult("mmd", worst < 1e-12, f"max abs difference {worst:.1e}")


def check_scm(num: int = 2000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    lat = scm.sample_prior(scm.SOURCE, 1, rng, num)
    keep = np.all(np.abs(lat.c) >= 1e-3, axis=1)
    x, c, n = lat.x[keep], lat.c[keep], lat.n[keep]
    c_hat, n_hat = scm.abduct_source(x, scm.source_mechanism(x, c, n))
    err = max(np.max(np.abs(c_hat - c)), np.max(np.abs(n_hat - n)))
    block = np.max(np.abs(scm.source_mechanism(x, c, n)[:, :1] - scm.target_mechanism(x, c, n)[:, 1:] / 2))
    return CheckResult("scm", err < 1e-9 and block == 0.0, f"latent error {err:.1e}, block gap {block:.1e}")


def check_calibration(reps: int = 30, n: int = 50, seed: int = 0, iters: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    null = sum(
        mmdagg_test(rng.normal(size=(n, 1)), rng.normal(size=(n, 1)), bootstrap_iters=iters,
                    level_iters=iters, rng=rng).reject
        for _ in range(reps)
    )
    alt = sum(
        mmdagg_test(rng.normal(size=(n, 1)), rng.normal(2.0, 1.0, size=(n, 1)), bootstrap_iters=iters,
                    level_iters=iters, rng=rng).reject
        for _ in range(reps)
    )
    ok = null / reps <= 0.2 and alt / reps >= 0.9
    return CheckResult("calibration", ok, f"null rejections {null}/{reps}, shift rejections {alt}/{reps}")


CHECKS = (check_gradients, check_mmd, check_scm, check_calibration)


def run_selftest() -> list[CheckResult]:
    return [check() for check in CHECKS]
