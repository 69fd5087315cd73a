import json

import numpy as np
import pytest

from cfrs.cli import main
from cfrs.config import SystemConfig
from cfrs.network import NetworkParams


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--fingers", "4", "--impressions", "3", "--out", str(root / "data"),
                 "--seed", "5"]) == 0
    assert main(["train", "--data", str(root / "data"), "--epochs", "3", "--subset", "all",
                 "--out", str(root / "m.ckpt"), "--batch-size", "6"]) == 0
    return root


def test_synth_layout(trained):
    data = trained / "data"
    assert len(list(data.rglob("*.png"))) == 12
    assert main(["synth", "--fingers", "2", "--impressions", "2", "--out", str(data)]) == 11


def test_train_outputs(trained, capsys):
    cfg = SystemConfig.load(trained / "m.json")
    assert cfg.calibration() is not None
    assert cfg.operating_threshold is not None
    assert NetworkParams.load(cfg.checkpoint).spec.input_shape == (310, 240, 3)


def test_training_loss_decreases(tmp_path, trained, capsys):
    main(["train", "--data", str(trained / "data"), "--epochs", "4", "--subset", "all",
          "--out", str(tmp_path / "m.ckpt"), "--batch-size", "6"])
    losses = [float(l.split()[-1]) for l in capsys.readouterr().out.splitlines()
              if l.startswith("epoch")]
    assert len(losses) == 4 and losses[-1] < losses[0]


def test_zero_epochs_warns(tmp_path, trained, caplog):
    assert main(["train", "--data", str(trained / "data"), "--epochs", "0", "--subset", "all",
                 "--out", str(tmp_path / "z.ckpt")]) == 0
    assert "untrained" in caplog.text


def test_missing_data_dir(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "x")]) == 4
    assert "none" in capsys.readouterr().err


def test_enroll_verify_lifecycle(tmp_path, trained, capsys):
    data = trained / "data" / "f001"
    cfg = ["--config", str(trained / "m.json"), "--store", str(tmp_path / "st")]
    photos = [str(data / f"{k}.png") for k in range(3)]
    assert main(["enroll", "--id", "u1", "--photos", *photos[:2], *cfg]) == 2
    assert main(["enroll", "--id", "u1", "--photos", *photos, *cfg]) == 0
    assert main(["enroll", "--id", "u1", "--photos", *photos, *cfg]) == 7
    capsys.readouterr()
    assert main(["verify", "--id", "u1", "--photo", photos[0], *cfg]) == 0
    out = capsys.readouterr().out
    assert "decision match" in out
    assert main(["verify", "--id", "ghost", "--photo", photos[0], *cfg]) == 8
    assert main(["list", *cfg]) == 0
    assert capsys.readouterr().out.split() == ["u1"]
    assert main(["remove", "--id", "u1", *cfg]) == 0
    assert main(["remove", "--id", "u1", *cfg]) == 0
    assert capsys.readouterr().out.splitlines() == ["removed u1", "u1 was not enrolled"]
    assert main(["list", *cfg]) == 0
    assert capsys.readouterr().out == ""


def test_evaluate_counts(tmp_path, trained, capsys):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text((trained / "m.json").read_text())
    assert main(["evaluate", "--data", str(trained / "data"), "--subset", "all",
                 "--config", str(cfg_path), "--report", str(tmp_path / "rep")]) == 0
    out = capsys.readouterr().out
    assert "Comparisons: 12 genuine / 18 impostor" in out
    for f in ("scores.csv", "curves.csv", "summary.txt"):
        assert (tmp_path / "rep" / f).exists()
    th = json.loads(cfg_path.read_text())["operating_threshold"]
    assert isinstance(th, float)


def test_verify_needs_calibration(tmp_path, trained):
    cfg = SystemConfig(checkpoint=str(trained / "m.ckpt"))
    cfg.save(tmp_path / "raw.json")
    assert main(["verify", "--id", "x", "--photo", "p.png", "--config",
                 str(tmp_path / "raw.json")]) == 9


def test_preprocess_dumps_stages(tmp_path, trained):
    assert main(["preprocess", "--photo", str(trained / "data" / "f000" / "0.png"),
                 "--out", str(tmp_path / "pp")]) == 0
    names = sorted(p.name for p in (tmp_path / "pp").iterdir())
    assert names == ["gray.png", "minutiae.txt", "orientation.txt", "ridges.pgm", "skeleton.pgm"]


def test_bad_config_exit_code(tmp_path):
    (tmp_path / "c.json").write_text('{"bogus": 1}')
    assert main(["list", "--config", str(tmp_path / "c.json")]) == 3
