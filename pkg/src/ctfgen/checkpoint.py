"""JSON checkpoints with base64-encoded little-endian float64 arrays."""

from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ncm import NET_NAMES, BundleConfig, NcmBundle
from .nn import DimensionError, Layer, Mlp, MlpConfig
from .posterior import PosteriorNet

SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_array(a: np.ndarray) -> dict:
    a = np.array(a, dtype="<f8", order="C")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(doc: dict) -> np.ndarray:
    raw = base64.b64decode(doc["data"].encode("ascii"), validate=True)
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(doc["shape"])


def mlp_to_doc(net: Mlp) -> dict:
    layers = []
    for layer in net.layers:
        layers.append(
            {
                "weight": encode_array(layer.weight.data),
                "bias": encode_array(layer.bias.data),
                "prelu": None if layer.slope is None else encode_array(layer.slope.data),
            }
        )
    return {"config": net.config.to_dict(), "layers": layers}


def mlp_from_doc(doc: dict, name: str) -> Mlp:
    cfg = MlpConfig(**doc["config"])
    net = Mlp(cfg, np.random.default_rng(0), name=name)
    if len(doc["layers"]) != len(net.layers):
        raise CheckpointError(f"{name}: expected {len(net.layers)} layers, found {len(doc['layers'])}")
    for layer, ldoc in zip(net.layers, doc["layers"]):
        _assign(layer.weight, decode_array(ldoc["weight"]), name)
        _assign(layer.bias, decode_array(ldoc["bias"]), name)
        if (layer.slope is None) != (ldoc["prelu"] is None):
            raise CheckpointError(f"{name}: PReLU layout mismatch")
        if layer.slope is not None:
            _assign(layer.slope, decode_array(ldoc["prelu"]), name)
    return net


def _assign(param, value: np.ndarray, name: str) -> None:
    if param.data.shape != value.shape:
        raise CheckpointError(f"{name}: shape {value.shape} does not match {param.data.shape}")
    param.data[...] = value


@dataclass
class Checkpoint:
    bundle: NcmBundle
    posterior: PosteriorNet | None
    config: dict
    step: int


def save_checkpoint(path, bundle: NcmBundle, posterior: PosteriorNet | None = None,
                    config: dict | None = None, step: int = 0) -> None:
    """Write atomically (temp file + rename) so readers never see partial state."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "dims": {"d": bundle.d, "d_eta": posterior.d_eta if posterior is not None else None},
        "bundle_config": bundle.config.__dict__ if bundle.config is not None else None,
        "networks": {name: mlp_to_doc(bundle.nets[name]) for name in NET_NAMES},
        "posterior": mlp_to_doc(posterior.net) if posterior is not None else None,
        "config": config or {},
        "step": int(step),
        "rng": "all randomness derives from config.seed via numpy SeedSequence.spawn; no generator state stored",
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path, expected_d: int | None = None) -> Checkpoint:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot parse checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"{path}: not a checkpoint document")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointError(f"{path}: schema_version {version} is not the supported version {SCHEMA_VERSION}")
    try:
        d = int(doc["dims"]["d"])
        if expected_d is not None and d != expected_d:
            raise DimensionError(f"checkpoint has d={d} but d={expected_d} was requested")
        nets = {name: mlp_from_doc(doc["networks"][name], name) for name in NET_NAMES}
        bcfg = BundleConfig(**doc["bundle_config"]) if doc.get("bundle_config") else None
        bundle = NcmBundle(nets, d, bcfg)
        posterior = None
        if doc.get("posterior") is not None:
            pnet = mlp_from_doc(doc["posterior"], "posterior")
            posterior = PosteriorNet(d, None, d_eta=int(doc["dims"]["d_eta"]), net=pnet)
    except DimensionError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint: {exc}") from exc
    if nets["mech_source"].config.input_dim != 3 * d:
        raise DimensionError(f"{path}: network widths inconsistent with d={d}")
    return Checkpoint(bundle, posterior, doc.get("config", {}), int(doc.get("step", 0)))
