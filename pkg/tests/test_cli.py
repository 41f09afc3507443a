import json

import pytest
from click.testing import CliRunner

from reconmil.bagstore import load_manifest, read_bag
from reconmil.harness.cli import main

SYNTH = {"num_bags": 15, "instances_per_bag": [6, 9], "feature_dim": 8, "witness_fraction": 0.3,
         "witness_shift": 3.0, "seed": 1}
TRAIN = {"D": 8, "d": 8, "n": 4, "e": 2, "L": 1, "lr": 1e-3, "epochs_max": 2, "patience": 1, "k_folds": 3}


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "synth.json").write_text(json.dumps(SYNTH))
    (root / "train.json").write_text(json.dumps(TRAIN))
    res = invoke("synth", "--config", root / "synth.json", "--out", root / "data")
    assert res.exit_code == 0, res.output
    return root


def test_synth_outputs(workspace):
    records = load_manifest(workspace / "data" / "manifest.csv")
    assert len(records) == 15
    meta = json.loads((workspace / "data" / "synth.json").read_text())
    assert meta["seed"] == 1 and set(meta["witnesses"]) == {r.bag_id for r in records}


def test_synth_rejects_unknown_keys(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"num_bags": 4, "colour": "red"}))
    res = invoke("synth", "--config", tmp_path / "s.json", "--out", tmp_path / "d")
    assert res.exit_code == 1 and "unknown config keys: colour" in res.output


def test_train_eval_saliency(workspace):
    out = workspace / "run"
    res = invoke("train", "--config", workspace / "train.json", "--manifest", workspace / "data" / "manifest.csv",
                 "--out", out)
    assert res.exit_code == 0, res.output
    for name in ("model.rmc", "run.json", "report.json", "config.json", "loss_curves.png"):
        assert (out / name).exists(), name
    run = json.loads((out / "run.json").read_text())
    assert run["best_epoch"] <= run["epochs_run"] <= 2

    res = invoke("eval", "--checkpoint", out / "model.rmc", "--manifest", workspace / "data" / "manifest.csv",
                 "--out", out / "eval.json")
    assert res.exit_code == 0, res.output
    first = json.loads(res.output)
    again = invoke("eval", "--checkpoint", out / "model.rmc", "--manifest", workspace / "data" / "manifest.csv")
    assert json.loads(again.output) == first

    bag_path = load_manifest(workspace / "data" / "manifest.csv")[0].path
    res = invoke("saliency", "--checkpoint", out / "model.rmc", "--bag", bag_path, "--out", out / "sal" / "b0")
    assert res.exit_code == 0, res.output
    rows = (out / "sal" / "b0.csv").read_text().splitlines()
    assert len(rows) == read_bag(bag_path).n_instances + 1
    assert (out / "sal" / "b0.pgm").read_text().startswith("P2")

    res = invoke("probe", "--checkpoint", out / "model.rmc", "--manifest", workspace / "data" / "manifest.csv")
    assert res.exit_code == 0, res.output
    assert set(json.loads(res.output)) == {"H", "Z"}


def test_cv_and_baseline(workspace):
    manifest = workspace / "data" / "manifest.csv"
    res = invoke("cv", "--config", workspace / "train.json", "--manifest", manifest, "--out", workspace / "cv")
    assert res.exit_code == 0, res.output
    cvj = json.loads((workspace / "cv" / "cv.json").read_text())
    assert len(cvj["runs"]) == 3 and all(r["checkpoint_path"] for r in cvj["runs"])
    assert (workspace / "cv" / "fold2.rmc").exists() and (workspace / "cv" / "folds.png").exists()

    res = invoke("baseline", "--kind", "attention", "--config", workspace / "train.json", "--manifest", manifest,
                 "--out", workspace / "base")
    assert res.exit_code == 0, res.output
    basej = json.loads((workspace / "base" / "cv.json").read_text())
    assert basej["folds"]["assignment"] == cvj["folds"]["assignment"]


def test_errors_exit_one(workspace, tmp_path):
    manifest = workspace / "data" / "manifest.csv"
    (tmp_path / "bad.json").write_text(json.dumps(dict(TRAIN, D=9)))
    res = invoke("cv", "--config", tmp_path / "bad.json", "--manifest", manifest, "--out", tmp_path / "o")
    assert res.exit_code == 1 and "dimension mismatch" in res.output
    (tmp_path / "junk.rmc").write_bytes(b"nope")
    res = invoke("eval", "--checkpoint", tmp_path / "junk.rmc", "--manifest", manifest)
    assert res.exit_code == 1 and "bad magic" in res.output
    (tmp_path / "two.json").write_text(json.dumps(dict(TRAIN, k_folds=2)))
    res = invoke("train", "--config", tmp_path / "two.json", "--manifest", manifest, "--out", tmp_path / "o")
    assert res.exit_code == 1 and "k_folds" in res.output


def test_oracle_command_passes():
    res = invoke("oracle", "--cases", 3)
    assert res.exit_code == 0, res.output
    assert "FAIL" not in res.output


def test_gradcheck_command_passes():
    res = invoke("gradcheck")
    assert res.exit_code == 0, res.output
