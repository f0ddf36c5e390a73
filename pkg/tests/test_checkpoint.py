import json

import numpy as np
import pytest

from ctfgen.checkpoint import (
    SCHEMA_VERSION,
    CheckpointError,
    decode_array,
    encode_array,
    load_checkpoint,
    save_checkpoint,
)
from ctfgen.ncm import NET_NAMES, BundleConfig, NcmBundle
from ctfgen.nn import DimensionError
from ctfgen.posterior import PosteriorNet


@pytest.fixture
def saved(tmp_path):
    rng = np.random.default_rng(3)
    bundle = NcmBundle.create(BundleConfig(d=2, hidden_dim=6), rng)
    post = PosteriorNet(2, rng, hidden_dim=6)
    path = tmp_path / "model.json"
    save_checkpoint(path, bundle, post, {"seed": 3}, step=17)
    return path, bundle, post


@pytest.mark.parametrize("shape", [(), (3,), (2, 4)])
def test_array_encoding_round_trip(shape, rng):
    a = rng.normal(size=shape)
    b = decode_array(json.loads(json.dumps(encode_array(a))))
    assert b.shape == a.shape and b.tobytes() == a.tobytes()


def test_round_trip_is_bit_exact(saved):
    path, bundle, post = saved
    ck = load_checkpoint(path)
    assert ck.step == 17 and ck.config == {"seed": 3}
    for name in NET_NAMES:
        assert ck.bundle.nets[name].fingerprint() == bundle.nets[name].fingerprint()
    assert ck.posterior.fingerprint() == post.fingerprint()
    assert ck.posterior.d_eta == post.d_eta


def test_saving_twice_gives_identical_bytes(saved, tmp_path):
    path, bundle, post = saved
    other = tmp_path / "again.json"
    save_checkpoint(other, bundle, post, {"seed": 3}, step=17)
    assert other.read_bytes() == path.read_bytes()


def test_bundle_only_checkpoint(tmp_path):
    bundle = NcmBundle.create(BundleConfig(d=1, hidden_dim=4), np.random.default_rng(0))
    save_checkpoint(tmp_path / "b.json", bundle)
    assert load_checkpoint(tmp_path / "b.json").posterior is None


def test_no_temp_file_left(saved):
    path, _, _ = saved
    assert [p.name for p in path.parent.iterdir()] == [path.name]


def test_truncated_file(saved):
    path, _, _ = saved
    path.write_text(path.read_text()[:200])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.json")


def test_wrong_schema_version(saved):
    path, _, _ = saved
    doc = json.loads(path.read_text())
    doc["schema_version"] = SCHEMA_VERSION + 1
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="schema_version"):
        load_checkpoint(path)


def test_dimension_mismatch(saved):
    path, _, _ = saved
    with pytest.raises(DimensionError):
        load_checkpoint(path, expected_d=1)


def test_corrupted_weight_shape(saved):
    path, _, _ = saved
    doc = json.loads(path.read_text())
    doc["networks"]["mech_source"]["layers"][0]["weight"] = encode_array(np.zeros((1, 1)))
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
