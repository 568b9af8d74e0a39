import json

import numpy as np
import pytest

from small_config import SMALL
from wavescope import __version__
from wavescope.cli import build_parser, main
from wavescope.scalogram import load_images
from wavescope.wavegen import load_dataset, read_manifest

SUBCOMMANDS = ("gen", "cwt", "fit-subspace", "fit-ocsvm", "train-cae", "run", "sweep-nu", "report")


def test_no_arguments_is_a_usage_error(capsys):
    assert main([]) == 2
    assert "usage: wavescope" in capsys.readouterr().err


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["gen", "--bogus"]) == 2
    assert main(["gen"]) == 2  # --out missing


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


@pytest.mark.parametrize("cmd", SUBCOMMANDS)
def test_help_lists_every_option(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[methods]\nnu = 1.5\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_stage_failure_exit_code(tmp_path, capsys):
    assert main(["cwt", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "x.bin")]) == 1
    assert "[dataset]" in capsys.readouterr().err


def test_step_by_step_pipeline(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("WAVESCOPE_THREADS", "1")
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    ds, work = tmp_path / "ds", tmp_path / "work"
    work.mkdir()
    assert main(["gen", "--config", str(cfg), "--seed", "3", "--out", str(ds)]) == 0
    assert len(load_dataset(ds).train_baseline) == 12
    assert read_manifest(ds / "run.manifest")["command"] == "gen"

    train, test = work / "train.bin", work / "test.bin"
    assert main(["cwt", "--in", str(ds), "--out", str(train), "--split", "train", "--size", "16", "--n-scales", "16"]) == 0
    assert main(["cwt", "--in", str(ds), "--out", str(test), "--split", "test", "--size", "16", "--n-scales", "16"]) == 0
    imgs, labels = load_images(test)
    assert imgs.shape == (8, 16, 16, 1) and labels.tolist() == [0] * 4 + [1] * 4

    pca = work / "pca.wsub"
    assert main(["fit-subspace", "--kind", "pca", "--components", "3", "--in", str(train), "--out", str(pca)]) == 0
    assert main(["fit-subspace", "--kind", "ica", "--in", str(train), "--out", str(work / "ica.wsub")]) == 0
    assert main(["fit-ocsvm", "--nu", "0.2", "--in", str(train), "--subspace", str(pca), "--out", str(work / "svm.wsub")]) == 0
    feats = work / "f.csv"
    np.savetxt(feats, np.random.default_rng(0).standard_normal((20, 3)), delimiter=",")
    assert main(["fit-ocsvm", "--in", str(feats), "--out", str(work / "svm2.wsub")]) == 0
    assert main(["train-cae", "--in", str(train), "--epochs", "1", "--batch", "4", "--filters", "4", "8",
                 "--out", str(work / "cae.wcae")]) == 0
    sweep = tmp_path / "sweep"
    assert main(["sweep-nu", "--in", str(train), "--test", str(test), "--nus", "0.1", "0.5", "--out", str(sweep)]) == 0
    assert (sweep / "nu_sweep.csv").read_text().count("\n") == 3
    assert (sweep / "run.manifest").exists()
    out = capsys.readouterr().out
    assert "params encoder=" in out and "nu=0.5" in out


def test_run_and_report(tmp_path, capsys):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "cae" in printed and "accuracy" in printed
    manifest = read_manifest(out / "run.manifest")
    assert manifest["command"] == "run" and "time_total" in manifest
    # nothing escapes the output directory
    assert sorted(p.name for p in tmp_path.iterdir()) == ["run", "small.ini"]
    summary = tmp_path / "run" / "summary.csv"
    assert main(["report", "--in", str(out), "--out", str(summary)]) == 0
    lines = summary.read_text().splitlines()
    assert lines[0].startswith("file,method") and len(lines) == 5
    rep = json.loads((out / "report_cae_max.json").read_text())
    assert rep["rule"] == "max"
    assert main(["report", "--in", str(tmp_path / "empty")]) == 1
