import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from dualcast.cli import main

GOLDEN = Path(__file__).parent / "golden"
COMMANDS = ["", "generate", "caption", "train", "evaluate", "ablate", "zero-shot", "export-alignment", "validate-data"]


def _help(cmd, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    argv = ([cmd] if cmd else []) + ["--help"]
    assert main(argv) == 0
    return capsys.readouterr().out


@pytest.mark.parametrize("cmd", COMMANDS)
def test_help_matches_golden(cmd, capsys, monkeypatch):
    text = _help(cmd, capsys, monkeypatch)
    path = GOLDEN / f"help_{cmd or 'main'}.txt"
    if os.environ.get("DUALCAST_UPDATE_GOLDEN"):
        path.write_text(text, encoding="utf-8")
    assert text == path.read_text(encoding="utf-8")


def test_no_command_is_usage_error(capsys):
    assert main([]) == 2
    assert "required" in capsys.readouterr().err


def test_bad_flag_value_is_usage_error(capsys):
    assert main(["generate", "--n", "0", "--out", "x.jsonl"]) == 2


def test_missing_dataset_is_runtime_error(tmp_path, capsys):
    assert main(["train", "--dataset", str(tmp_path / "missing.jsonl"), "--run-dir", str(tmp_path / "r")]) == 1
    err = capsys.readouterr().err
    assert err.startswith("dualcast train: error:") and "missing.jsonl" in err


@pytest.fixture
def toy_dataset(tmp_path):
    out = tmp_path / "toy.jsonl"
    rc = main(["generate", "--n", "20", "--lookback", "16", "--horizon", "4", "--seed", "3", "--out", str(out)])
    assert rc == 0
    return out


def test_generate_writes_count_and_manifest(toy_dataset, capsys):
    assert len(toy_dataset.read_text().splitlines()) == 20
    manifest = json.loads(toy_dataset.with_name("toy.manifest.json").read_text())
    assert (manifest["L"], manifest["h"], manifest["dataset_name"]) == (16, 4, "toy")
    assert main(["validate-data", str(toy_dataset)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary == {"path": str(toy_dataset), "records": 20, "manifest": True, "lookback": 16, "horizon": 4}


def test_validate_data_reports_line(tmp_path, toy_dataset, capsys):
    lines = toy_dataset.read_text().splitlines()
    lines[6] = lines[6].replace('"history":[', '"history":[1.0,', 1)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    assert main(["validate-data", str(bad), "--lookback", "16", "--horizon", "4"]) == 1
    assert "line 7" in capsys.readouterr().err


def test_validate_data_half_spec(toy_dataset, capsys):
    assert main(["validate-data", str(toy_dataset), "--lookback", "16"]) == 2


def test_train_evaluate_zero_shot_export(tmp_path, toy_dataset, capsys):
    run = tmp_path / "run"
    common = ["--preset", "toy", "--epochs", "2", "--seeds", "0", "--val-fraction", "0"]
    assert main(["train", "--dataset", str(toy_dataset), *common, "--run-dir", str(run)]) == 0
    printed = capsys.readouterr().out.split()
    for name in ("config.json", "results.json", "loss_trace.png"):
        assert (run / name).exists() and str(run / name) in printed
    res = json.loads((run / "results.json").read_text())
    assert res["metric_scale"].startswith("raw") and len(res["per_seed"]) == 1
    ck = run / "seed0" / "checkpoint"

    ev = tmp_path / "ev"
    assert main(["evaluate", "--checkpoint", str(ck), "--dataset", str(toy_dataset), "--per-window", "--run-dir", str(ev)]) == 0
    assert (ev / "per_window.csv").read_text().startswith("series_id,mse,mae\n")
    assert json.loads((ev / "results.json").read_text())["mean_mse"] == pytest.approx(res["mean_mse"])

    assert main(["evaluate", "--checkpoint", str(ck), "--dataset", str(toy_dataset), "--ablation", "no_history_text",
                 "--run-dir", str(tmp_path / "ev2"), "--no-plots"]) == 0
    assert main(["evaluate", "--checkpoint", str(ck), "--dataset", str(toy_dataset), "--ablation", "no_any_text",
                 "--run-dir", str(tmp_path / "ev3")]) == 2

    zs = tmp_path / "zs"
    assert main(["zero-shot", "--checkpoint", str(ck), "--target", str(toy_dataset), "--run-dir", str(zs)]) == 0
    assert "toy→toy" in (zs / "zero_shot.csv").read_text(encoding="utf-8")

    al = tmp_path / "al"
    assert main(["export-alignment", "--checkpoint", str(ck), "--dataset", str(toy_dataset), "--n", "4",
                 "--run-dir", str(al)]) == 0
    for name in ("similarity.csv", "attention.csv", "alignment_index.json", "similarity.png", "attention.png"):
        assert (al / name).exists()


def test_ablate_rows(tmp_path, toy_dataset, capsys):
    run = tmp_path / "ab"
    args = ["ablate", "--dataset", str(toy_dataset), "--preset", "toy", "--epochs", "1", "--seeds", "0,1",
            "--rows", "full,no_any_text", "--run-dir", str(run)]
    assert main(args) == 0
    rows = (run / "ablation.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0].startswith("row,flags,mean_mse,std_mse") and len(rows) == 3
    assert rows[2].split(",")[1] == "no_any_text"
    assert (run / "ablation.png").exists()
    assert main(args[:-4] + ["--rows", "nonsense", "--run-dir", str(run)]) == 2


def test_run_dir_autonaming(tmp_path, toy_dataset, capsys):
    assert main(["train", "--dataset", str(toy_dataset), "--preset", "toy", "--epochs", "1", "--seeds", "0",
                 "--runs-root", str(tmp_path / "runs"), "--no-plots"]) == 0
    (d,) = list((tmp_path / "runs").iterdir())
    stamp, digest = d.name.split("_")
    assert len(stamp) == 15 and len(digest) == 12


def test_caption_command(tmp_path, capsys):
    import numpy as np

    t = np.arange(200)
    csv_path = tmp_path / "raw.csv"
    np.savetxt(csv_path, np.c_[np.sin(t / 5), t * 0.1], delimiter=",", header="a,b", comments="")
    out = tmp_path / "cap.jsonl"
    assert main(["caption", "--input", str(csv_path), "--lookback", "48", "--horizon", "16", "--stride", "8",
                 "--out", str(out)]) == 0
    report = json.loads(capsys.readouterr().out.splitlines()[0])
    assert report["n_windows"] == 2 * ((200 - 64) // 8 + 1)
    assert len(out.read_text().splitlines()) == report["n_windows"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dualcast.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "dualcast 0.1.0"
