"""Counterfactual sampling and the paired two-sample evaluation protocol."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scm
from .autodiff import no_grad
from .mmdagg import mmdagg_test
from .ncm import NcmBundle, draw_exogenous, gen_effect, mechanism_input
from .nn import DimensionError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MAX_REDRAWS = 100


def _vec(v, width: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.size != width:
        raise DimensionError(f"{what}: expected {width} values, got {v.size}")
    return v


def counterfactual_sample(bundle: NcmBundle, posterior, x_fact, y_fact, x_intv, k: int, rng) -> np.ndarray:
    """Abduction with the posterior, then prediction with the target mechanism.

    Every sample uses its own posterior draw and its own target-noise draw.
    Returns an array of shape ``(k, 2d)``.
    """
    d = bundle.d
    x_fact = _vec(x_fact, d, "x_fact")
    y_fact = _vec(y_fact, 2 * d, "y_fact")
    x_intv = _vec(x_intv, d, "x_intv")
    if k == 0:
        return np.empty((0, 2 * d))
    return _counterfactuals(bundle, posterior, np.tile(x_fact, (k, 1)), np.tile(y_fact, (k, 1)),
                            np.tile(x_intv, (k, 1)), rng)


def _counterfactuals(bundle, posterior, xf, yf, xi, rng) -> np.ndarray:
    k, d = xf.shape
    eta_pos = rng.standard_normal((k, posterior.d_eta))
    eta_nt = rng.standard_normal((k, d))
    with no_grad():
        c = posterior(xf, yf, eta_pos)
        n = bundle.noise_gen_target(eta_nt)
        out = bundle.mech_target(mechanism_input(xi, c, n))
    return np.asarray(out.data)


def model_joint(bundle: NcmBundle, posterior, x_s, x_intv, k: int, rng) -> np.ndarray:
    """``k`` rows of ``[y_hat_S ; counterfactual]`` from the learned model."""
    d = bundle.d
    xs = np.tile(x_s, (k, 1))
    with no_grad():
        y_hat = np.asarray(gen_effect(bundle, scm.SOURCE, xs, draw_exogenous(rng, k, d)).data)
    cf = _counterfactuals(bundle, posterior, xs, y_hat, np.tile(x_intv, (k, 1)), rng)
    return np.concatenate([y_hat, cf], axis=1)


def truth_joint(x_s, x_intv, k: int, rng) -> tuple[np.ndarray, int]:
    """``k`` rows of ``[y_S ; shifted counterfactual]`` from the ground truth.

    Rows whose abduction fails (degenerate context) are redrawn, at most
    ``MAX_REDRAWS`` times.  Returns the rows and the number of redraws.
    """
    d = x_s.size
    xs = np.tile(x_s, (k, 1))
    c = scm.sample_context(scm.SOURCE, d, rng, k)
    n = scm.sample_noise(scm.SOURCE, d, rng, k)
    redraws = 0
    while True:
        bad = np.any(np.abs(c) < scm.DEGENERATE_CONTEXT, axis=1)
        if not bad.any():
            break
        redraws += int(bad.sum())
        if redraws > MAX_REDRAWS:
            raise RuntimeError("too many degenerate truth draws")
        log.info("redrawing %d degenerate truth draws", int(bad.sum()))
        c[bad] = scm.sample_context(scm.SOURCE, d, rng, int(bad.sum()))
        n[bad] = scm.sample_noise(scm.SOURCE, d, rng, int(bad.sum()))
    y_s = scm.source_mechanism(xs, c, n)
    c_abd, _ = scm.abduct_source(xs, y_s)
    n_t = scm.sample_noise(scm.TARGET, d, rng, k)
    cf = scm.target_mechanism(np.tile(x_intv, (k, 1)), c_abd, n_t)
    return np.concatenate([y_s, cf], axis=1), redraws


@dataclass
class EvalReport:
    score: float
    ci_95: tuple[float, float]
    pairs: list[dict]
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "score": self.score,
            "ci_95": list(self.ci_95),
            "pairs": self.pairs,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(doc["score"], tuple(doc["ci_95"]), doc["pairs"], doc.get("config", {}), doc["schema_version"])


def score_interval(score: float, num: int) -> tuple[float, float]:
    """Normal-approximation binomial 95% interval, clipped to [0, 1]."""
    half = 1.96 * math.sqrt(max(score * (1.0 - score), 0.0) / num)
    return max(0.0, score - half), min(1.0, score + half)


def _evaluate_pair(args):
    bundle, posterior, seq, k, alpha, bootstrap_iters, index = args
    rng = np.random.default_rng(seq)
    d = bundle.d
    x_s = scm.sample_x(scm.SOURCE, d, rng, 1)[0]
    x_intv = scm.sample_x(scm.TARGET, d, rng, 1)[0]
    model = model_joint(bundle, posterior, x_s, x_intv, k, rng)
    truth, redraws = truth_joint(x_s, x_intv, k, rng)
    result = mmdagg_test(model, truth, alpha=alpha, bootstrap_iters=bootstrap_iters, level_iters=bootstrap_iters, rng=rng)
    rec = {"index": index, "x_s": x_s.tolist(), "x_intv": x_intv.tolist(), "redraws": redraws}
    rec.update(result.summary())
    return rec


def evaluate(
    bundle: NcmBundle,
    posterior,
    num_pairs: int = 100,
    k: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
    bootstrap_iters: int = 500,
    jobs: int = 1,
) -> EvalReport:
    """Score = fraction of covariate pairs where the aggregated test does not reject.

    Each pair gets its own child seed, so the report does not depend on the
    order (or process) in which pairs are evaluated.
    """
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    seqs = np.random.SeedSequence(seed).spawn(num_pairs)
    tasks = [(bundle, posterior, seqs[i], k, alpha, bootstrap_iters, i) for i in range(num_pairs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(_evaluate_pair, tasks))
    else:
        pairs = [_evaluate_pair(t) for t in tasks]
    pairs.sort(key=lambda r: r["index"])
    score = 1.0 - sum(r["reject"] for r in pairs) / num_pairs
    cfg = {"num_pairs": num_pairs, "k": k, "alpha": alpha, "seed": seed, "bootstrap_iters": bootstrap_iters}
    return EvalReport(score, score_interval(score, num_pairs), pairs, cfg)


def csv_path(path) -> Path:
    return Path(path).with_suffix(".csv")


def emit_report(report: EvalReport, path) -> tuple[Path, Path]:
    """Write the JSON report and a per-pair CSV next to it."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        cpath = csv_path(path)
        with open(cpath, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "x_s", "x_intv", "reject", "max_stat", "max_ratio", "adjusted_u"])
            for r in report.pairs:
                w.writerow([
                    r["index"],
                    ";".join(repr(v) for v in r["x_s"]),
                    ";".join(repr(v) for v in r["x_intv"]),
                    int(r["reject"]),
                    repr(r["max_stat"]),
                    repr(r["max_ratio"]),
                    repr(r["adjusted_u"]),
                ])
    except OSError as exc:
        raise OSError(f"failed writing report {path}: {exc}") from exc
    return path, cpath


def load_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
