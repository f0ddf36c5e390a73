"""Analytic source/target structural causal models used as ground truth.

Both domains share the layout ``x, c, n in R^d`` and ``y in R^{2d}``::

    source:  y = [ A(x) exp(c) / 2 ;  c * n + x ]
    target:  y = [ c * n**2 + x      ;  A(x) exp(c) ]

with ``A(x) = B^T B + 5 I`` and ``B = x (2**x)^T``.

Priors (componentwise i.i.d.)::

    source:  x ~ U(-1, 1),            c = 1 - 2 Beta(4, 5),  n ~ vonMises(0, 4)
    target:  x = 1 - 2 CB(0.6),       c ~ N(0, 1),           n ~ N(0, 0.1)

All samplers draw only uniforms and standard normals from the supplied
``numpy.random.Generator`` so the streams are reproducible across numpy
versions that keep those primitives stable.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SOURCE, TARGET = "source", "target"
DOMAINS = (SOURCE, TARGET)

BETA_A, BETA_B = 4.0, 5.0
VM_KAPPA = 4.0
CB_LAMBDA = 0.6
TARGET_NOISE_VAR = 0.1
DEGENERATE_CONTEXT = 1e-9


class ScmError(ValueError):
    pass


class InfeasibleObservationError(ScmError):
    """The observation is not in the image of the mechanism."""


class DegenerateContextError(ScmError):
    """A context component is too close to zero to recover the noise."""


# ---------------------------------------------------------------------------
# primitive samplers
# ---------------------------------------------------------------------------


def sample_gamma(rng: np.random.Generator, shape: float, size) -> np.ndarray:
    """Marsaglia-Tsang squeeze sampler for Gamma(shape, 1), shape >= 1."""
    if shape < 1.0:
        raise ValueError("sample_gamma requires shape >= 1")
    size = tuple(np.atleast_1d(size))
    total = int(np.prod(size))
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(total)
    filled = 0
    while filled < total:
        m = max(16, int(1.1 * (total - filled)) + 8)
        x = rng.standard_normal(m)
        u = rng.uniform(size=m)
        v = (1.0 + c * x) ** 3
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            logv = np.log(np.where(ok, v, 1.0))
            accept = ok & (np.log(u) < 0.5 * x * x + d - d * v + d * logv)
        got = d * v[accept]
        take = min(len(got), total - filled)
        out[filled : filled + take] = got[:take]
        filled += take
    return out.reshape(size)


def sample_beta(rng: np.random.Generator, a: float, b: float, size) -> np.ndarray:
    ga = sample_gamma(rng, a, size)
    gb = sample_gamma(rng, b, size)
    return ga / (ga + gb)


def sample_von_mises(rng: np.random.Generator, mu: float, kappa: float, size) -> np.ndarray:
    """Best-Fisher wrapped-Cauchy envelope rejection sampler, values in (-pi, pi]."""
    size = tuple(np.atleast_1d(size))
    total = int(np.prod(size))
    tau = 1.0 + math.sqrt(1.0 + 4.0 * kappa * kappa)
    rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * kappa)
    r = (1.0 + rho * rho) / (2.0 * rho)
    out = np.empty(total)
    filled = 0
    while filled < total:
        m = max(16, int(1.5 * (total - filled)) + 8)
        u1, u2, u3 = rng.uniform(size=(3, m))
        z = np.cos(np.pi * u1)
        f = (1.0 + r * z) / (r + z)
        cc = kappa * (r - f)
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = (cc * (2.0 - cc) - u2 > 0) | (np.log(cc / u2) + 1.0 - cc >= 0)
        theta = np.where(u3 > 0.5, 1.0, -1.0) * np.arccos(np.clip(f, -1.0, 1.0))
        got = theta[accept]
        take = min(len(got), total - filled)
        out[filled : filled + take] = got[:take]
        filled += take
    out = np.mod(out + mu + np.pi, 2.0 * np.pi) - np.pi
    out[out == -np.pi] = np.pi
    return out.reshape(size)


def continuous_bernoulli_icdf(u: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form inverse CDF of the continuous Bernoulli distribution on [0, 1]."""
    u = np.asarray(u, dtype=float)
    if abs(lam - 0.5) < 1e-12:
        return u.copy()
    ratio = lam / (1.0 - lam)
    return np.log1p(u * (2.0 * lam - 1.0) / (1.0 - lam)) / math.log(ratio)


def sample_continuous_bernoulli(rng: np.random.Generator, lam: float, size) -> np.ndarray:
    return continuous_bernoulli_icdf(rng.uniform(size=size), lam)


# ---------------------------------------------------------------------------
# priors and mechanisms
# ---------------------------------------------------------------------------


@dataclass
class LatentTriple:
    """Batched latents, each of shape ``(m, d)``."""

    x: np.ndarray
    c: np.ndarray
    n: np.ndarray
    domain: str


def _check_domain(domain: str) -> None:
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")


def sample_x(domain: str, d: int, rng: np.random.Generator, m: int = 1) -> np.ndarray:
    _check_domain(domain)
    if domain == SOURCE:
        return rng.uniform(-1.0, 1.0, size=(m, d))
    return 1.0 - 2.0 * sample_continuous_bernoulli(rng, CB_LAMBDA, (m, d))


def sample_context(domain: str, d: int, rng: np.random.Generator, m: int = 1) -> np.ndarray:
    _check_domain(domain)
    if domain == SOURCE:
        return 1.0 - 2.0 * sample_beta(rng, BETA_A, BETA_B, (m, d))
    return rng.standard_normal((m, d))


def sample_noise(domain: str, d: int, rng: np.random.Generator, m: int = 1) -> np.ndarray:
    _check_domain(domain)
    if domain == SOURCE:
        return sample_von_mises(rng, 0.0, VM_KAPPA, (m, d))
    return math.sqrt(TARGET_NOISE_VAR) * rng.standard_normal((m, d))


def sample_prior(domain: str, d: int, rng: np.random.Generator, m: int = 1) -> LatentTriple:
    x = sample_x(domain, d, rng, m)
    c = sample_context(domain, d, rng, m)
    n = sample_noise(domain, d, rng, m)
    return LatentTriple(x=x, c=c, n=n, domain=domain)


def build_A(x: np.ndarray) -> np.ndarray:
    """``B^T B + 5I`` with ``B = x (2**x)^T``; works on ``(d,)`` or ``(m, d)``."""
    x = np.asarray(x, dtype=float)
    u = np.exp2(x)
    B = x[..., :, None] * u[..., None, :]
    d = x.shape[-1]
    return np.swapaxes(B, -1, -2) @ B + 5.0 * np.eye(d)


def _as_batch(*arrays):
    arrs = [np.asarray(a, dtype=float) for a in arrays]
    single = arrs[0].ndim == 1
    return [np.atleast_2d(a) for a in arrs], single


def source_mechanism(x, c, n) -> np.ndarray:
    (x, c, n), single = _as_batch(x, c, n)
    top = np.einsum("mij,mj->mi", build_A(x), np.exp(c)) / 2.0
    y = np.concatenate([top, c * n + x], axis=-1)
    return y[0] if single else y


def target_mechanism(x, c, n) -> np.ndarray:
    (x, c, n), single = _as_batch(x, c, n)
    bottom = np.einsum("mij,mj->mi", build_A(x), np.exp(c))
    y = np.concatenate([c * n * n + x, bottom], axis=-1)
    return y[0] if single else y


def _cholesky_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched SPD solve ``A z = b`` via Cholesky and two triangular sweeps."""
    L = np.linalg.cholesky(A)
    d = b.shape[-1]
    z = np.empty_like(b)
    for i in range(d):
        z[:, i] = (b[:, i] - np.einsum("mk,mk->m", L[:, i, :i], z[:, :i])) / L[:, i, i]
    out = np.empty_like(b)
    for i in reversed(range(d)):
        out[:, i] = (z[:, i] - np.einsum("mk,mk->m", L[:, i + 1 :, i], out[:, i + 1 :])) / L[:, i, i]
    return out


def _log_context(x: np.ndarray, block: np.ndarray, scale: float) -> np.ndarray:
    arg = scale * _cholesky_solve(build_A(x), block)
    if np.any(~(arg > 0)):
        raise InfeasibleObservationError(
            "observation outside the mechanism image: A^{-1} y block must be positive"
        )
    return np.log(arg)


def abduct_source(x, y):
    """Exact inverse of the source mechanism: returns ``(c, n)``."""
    (x, y), single = _as_batch(x, y)
    d = x.shape[-1]
    c = _log_context(x, y[:, :d], 2.0)
    if np.any(np.abs(c) < DEGENERATE_CONTEXT):
        raise DegenerateContextError("context component within 1e-9 of zero; noise not identifiable")
    n = (y[:, d:] - x) / c
    return (c[0], n[0]) if single else (c, n)


def abduct_source_context(x, y) -> np.ndarray:
    """Context part of :func:`abduct_source`; defined even where ``c == 0``."""
    (x, y), single = _as_batch(x, y)
    d = x.shape[-1]
    c = _log_context(x, y[:, :d], 2.0)
    return c[0] if single else c


def abduct_target_context(x, y) -> np.ndarray:
    """Target context from ``(x, y)``; the target noise is only known up to sign."""
    (x, y), single = _as_batch(x, y)
    d = x.shape[-1]
    c = _log_context(x, y[:, d:], 1.0)
    return c[0] if single else c


def target_noise_magnitude(x, y) -> np.ndarray:
    """``|n|`` for the target mechanism (the sign is not identifiable)."""
    (x, y), single = _as_batch(x, y)
    d = x.shape[-1]
    c = abduct_target_context(x, y)
    c = np.atleast_2d(c)
    if np.any(np.abs(c) < DEGENERATE_CONTEXT):
        raise DegenerateContextError("context component within 1e-9 of zero; noise not identifiable")
    mag = np.sqrt(np.maximum((y[:, :d] - x) / c, 0.0))
    return mag[0] if single else mag


@dataclass
class CfQuery:
    x_fact: np.ndarray
    y_fact: np.ndarray
    x_intv: np.ndarray


def shifted_counterfactual_oracle(
    query: CfQuery, rng: np.random.Generator, k: int, target_noise: np.ndarray | None = None
) -> np.ndarray:
    """Ground-truth shifted counterfactual samples, shape ``(k, 2d)``.

    The source context is abducted exactly from the factual pair, then pushed
    through the target mechanism at ``x_intv`` with fresh target noise.
    ``target_noise`` (shape ``(k, d)``) overrides the noise draw.
    """
    x_fact = np.asarray(query.x_fact, dtype=float).reshape(-1)
    d = x_fact.size
    c = abduct_source_context(x_fact, query.y_fact)
    if target_noise is None:
        target_noise = sample_noise(TARGET, d, rng, k)
    target_noise = np.asarray(target_noise, dtype=float).reshape(k, d)
    x_intv = np.broadcast_to(np.asarray(query.x_intv, dtype=float).reshape(1, d), (k, d))
    return target_mechanism(x_intv, np.broadcast_to(c, (k, d)), target_noise)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    domain: str
    x: np.ndarray
    y: np.ndarray
    c: np.ndarray | None = None
    n: np.ndarray | None = None
    seed: int | None = None

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.x.shape[0]


def header(d: int, with_latents: bool) -> list[str]:
    cols = [f"x_{i}" for i in range(d)] + [f"y_{i}" for i in range(2 * d)]
    if with_latents:
        cols += [f"c_{i}" for i in range(d)] + [f"n_{i}" for i in range(d)]
    return cols


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def generate_dataset(
    domain: str, n: int, d: int, seed: int, with_latents: bool = False, path=None
) -> Dataset:
    """Draw ``n`` observational samples; optionally write CSV plus metadata sidecar."""
    _check_domain(domain)
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = np.random.default_rng(seed)
    lat = sample_prior(domain, d, rng, n)
    mech = source_mechanism if domain == SOURCE else target_mechanism
    y = mech(lat.x, lat.c, lat.n)
    ds = Dataset(domain, lat.x, y, lat.c if with_latents else None, lat.n if with_latents else None, seed)
    if path is not None:
        write_dataset(ds, path)
    return ds


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    with_latents = ds.c is not None
    cols = [ds.x, ds.y] + ([ds.c, ds.n] if with_latents else [])
    rows = np.concatenate(cols, axis=1)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header(ds.d, with_latents))
            for row in rows:
                w.writerow([repr(float(v)) for v in row])
        meta = {
            "schema_version": SCHEMA_VERSION,
            "domain": ds.domain,
            "d": ds.d,
            "n": len(ds),
            "seed": ds.seed,
            "with_latents": with_latents,
        }
        with open(sidecar_path(path), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing dataset to {path}: {exc}") from exc


def load_dataset(path) -> Dataset:
    path = Path(path)
    try:
        meta_file = sidecar_path(path)
        meta = json.loads(meta_file.read_text(encoding="utf-8")) if meta_file.exists() else None
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            cols = next(reader)
            data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    except (OSError, StopIteration, ValueError) as exc:
        raise ScmError(f"cannot read dataset {path}: {exc}") from exc
    nx = sum(1 for col in cols if col.startswith("x_"))
    with_latents = any(col.startswith("c_") for col in cols)
    if nx < 1 or cols != header(nx, with_latents):
        raise ScmError(f"{path}: unexpected header {cols}")
    if meta is not None:
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise ScmError(
                f"{path}: schema_version {meta.get('schema_version')} != supported {SCHEMA_VERSION}"
            )
        if meta.get("d") != nx:
            raise ScmError(f"{path}: sidecar d={meta.get('d')} but header has d={nx}")
    d = nx
    data = data.reshape(-1, len(cols))
    domain = meta["domain"] if meta else os.path.splitext(path.name)[0]
    ds = Dataset(domain, data[:, :d], data[:, d : 3 * d], seed=meta.get("seed") if meta else None)
    if with_latents:
        ds.c = data[:, 3 * d : 4 * d]
        ds.n = data[:, 4 * d : 5 * d]
    return ds
