import json
import subprocess
import sys

import numpy as np
import pytest

from ctfgen import scm
from ctfgen.checkpoint import save_checkpoint
from ctfgen.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, run
from ctfgen.ncm import BundleConfig, NcmBundle
from ctfgen.posterior import PosteriorNet


@pytest.fixture
def ckpt(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "model.json"
    save_checkpoint(path, NcmBundle.create(BundleConfig(d=1, hidden_dim=4), rng), PosteriorNet(1, rng, hidden_dim=4))
    return path


def test_gen_data_matches_library(tmp_path):
    out = tmp_path / "src.csv"
    assert run(["gen-data", "--domain", "source", "--n", "20", "--d", "2", "--seed", "3", "--out", str(out)]) == EXIT_OK
    loaded = scm.load_dataset(out)
    direct = scm.generate_dataset(scm.SOURCE, 20, 2, 3)
    assert loaded.x.tobytes() == direct.x.tobytes() and loaded.y.tobytes() == direct.y.tobytes()
    assert scm.sidecar_path(out).is_file()


def test_infer_prints_csv(ckpt, capsys):
    argv = ["infer", "--ckpt", str(ckpt), "--x-fact", "0.2", "--y-fact", "3.0,0.4", "--x-intv", "-0.1",
            "--num-samples", "3", "--seed", "1"]
    assert run(argv) == EXIT_OK
    first = capsys.readouterr().out
    lines = first.strip().splitlines()
    assert lines[0] == "y_0,y_1" and len(lines) == 4
    assert all(len(line.split(",")) == 2 for line in lines[1:])
    assert run(argv) == EXIT_OK
    assert capsys.readouterr().out == first


def test_infer_writes_file_and_sidecar(ckpt, tmp_path):
    out = tmp_path / "cf.csv"
    assert run(["infer", "--ckpt", str(ckpt), "--x-fact", "0.2", "--y-fact", "3.0,0.4", "--x-intv", "-0.1",
                "--num-samples", "0", "--seed", "1", "--out", str(out)]) == EXIT_OK
    assert out.read_text() == "y_0,y_1\n"
    assert json.loads(scm.sidecar_path(out).read_text())["schema_version"] == 1


def test_eval_writes_report(ckpt, tmp_path, capsys):
    report = tmp_path / "r.json"
    assert run(["eval", "--ckpt", str(ckpt), "--pairs", "2", "--samples", "20", "--alpha", "0.05", "--seed", "0",
                "--report", str(report), "--bootstrap-iters", "50"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("score ")
    assert json.loads(report.read_text())["config"]["num_pairs"] == 2
    assert report.with_suffix(".csv").is_file()


def test_train_end_to_end(tmp_path):
    for domain in scm.DOMAINS:
        assert run(["gen-data", "--domain", domain, "--n", "64", "--d", "1", "--seed", "0",
                    "--out", str(tmp_path / f"{domain}.csv")]) == EXIT_OK
    cfg = {"hidden_dim": 4, "stage1": {"epochs": 1, "batch_size": 32, "q_gen": 2, "q_tr": 2},
           "stage2": {"epochs": 1, "batch_size": 32, "q": 2}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert run(["train", "--config", str(tmp_path / "cfg.json"), "--source", str(tmp_path / "source.csv"),
                "--target", str(tmp_path / "target.csv"), "--out", str(tmp_path / "run")]) == EXIT_OK
    assert (tmp_path / "run" / "model.ckpt.json").is_file()


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["frobnicate"],
        ["gen-data", "--domain", "middle", "--n", "5", "--d", "1", "--seed", "0", "--out", "x.csv"],
        ["gen-data", "--domain", "source", "--n", "0", "--d", "1", "--seed", "0", "--out", "x.csv"],
        ["gen-data", "--domain", "source", "--n", "5", "--d", "1", "--seed", "0"],
        ["infer", "--ckpt", "missing.json", "--x-fact", "0", "--y-fact", "1,1", "--x-intv", "0",
         "--num-samples", "1", "--seed", "0"],
        ["infer", "--ckpt", "m.json", "--x-fact", "a", "--y-fact", "1,1", "--x-intv", "0",
         "--num-samples", "1", "--seed", "0"],
        ["train", "--config", "none.json", "--source", "s.csv", "--target", "t.csv", "--out", "o"],
    ],
)
def test_usage_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_wrong_vector_length_is_usage_error(ckpt):
    assert run(["infer", "--ckpt", str(ckpt), "--x-fact", "0.2,0.1", "--y-fact", "3.0,0.4", "--x-intv", "-0.1",
                "--num-samples", "1", "--seed", "1"]) == EXIT_USAGE


def test_bad_alpha_is_usage_error(ckpt, tmp_path):
    assert run(["eval", "--ckpt", str(ckpt), "--pairs", "1", "--samples", "5", "--alpha", "1.5", "--seed", "0",
                "--report", str(tmp_path / "r.json")]) == EXIT_USAGE


def test_corrupt_checkpoint_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["infer", "--ckpt", str(bad), "--x-fact", "0", "--y-fact", "1,1", "--x-intv", "0",
                "--num-samples", "1", "--seed", "0"]) == EXIT_RUNTIME
    assert capsys.readouterr().err.startswith("error:")


def test_bundle_only_checkpoint_is_runtime_error(tmp_path):
    path = tmp_path / "b.json"
    save_checkpoint(path, NcmBundle.create(BundleConfig(d=1, hidden_dim=4), np.random.default_rng(0)))
    assert run(["infer", "--ckpt", str(path), "--x-fact", "0", "--y-fact", "1,1", "--x-intv", "0",
                "--num-samples", "1", "--seed", "0"]) == EXIT_RUNTIME


def test_bad_config_is_runtime_error(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"nonsense": 1}))
    for name in ("s.csv", "t.csv"):
        scm.generate_dataset(scm.SOURCE, 4, 1, 0, path=tmp_path / name)
    assert run(["train", "--config", str(tmp_path / "cfg.json"), "--source", str(tmp_path / "s.csv"),
                "--target", str(tmp_path / "t.csv"), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


@pytest.mark.parametrize("command", ["gen-data", "train", "infer", "eval", "selftest"])
def test_help(command):
    proc = subprocess.run([sys.executable, "-m", "ctfgen.cli", command, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "usage:" in proc.stdout


@pytest.mark.slow
def test_selftest_passes(capsys):
    assert run(["selftest"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out
