import json

import pytest

from airfl.cli import main

SMALL = ["--desk", "--T", "3", "--seed", "0"]


def test_simulate_writes_outputs(tmp_path, capsys):
    assert main(["simulate", *SMALL, "--out", str(tmp_path)]) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"traces.csv", "summary.json", "loss_vs_rounds.png"}
    assert "airfl-mem" in capsys.readouterr().out


def test_sweep_writes_csv_and_plot(tmp_path):
    assert main(["sweep-snr", *SMALL, "--out", str(tmp_path), "--snr-db", "-10", "10"]) == 0
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "loss_vs_snr.png").exists()


def test_optimize_thresholds_with_certificate(tmp_path):
    assert main(["optimize-thresholds", *SMALL, "--out", str(tmp_path), "--certify", "--grid", "200"]) == 0
    data = json.loads((tmp_path / "thresholds.json").read_text())
    assert len(data["lambdas"]) == 10 and data["convexity"]["convex"]


def test_eval_bound(tmp_path):
    assert main(["eval-bound", *SMALL, "--out", str(tmp_path), "--sigma-l2", "0.1"]) == 0
    data = json.loads((tmp_path / "bounds.json").read_text())
    assert set(data["bounds"]) == {"airfl-mem", "ota-smem", "ota"}


def test_estimate_constants(tmp_path):
    assert main(["estimate-constants", *SMALL, "--out", str(tmp_path), "--probes", "100"]) == 0
    data = json.loads((tmp_path / "constants.json").read_text())
    assert data["B_hat"] > 0 and data["L_hat"] > 0


def test_validation_failure_exits_nonzero_and_writes_nothing(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"objective": "synthetic-logistic", "K": 0}))
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "K" in capsys.readouterr().err


def test_desk_and_config_exclusive(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{}")
    assert main(["simulate", "--desk", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file(tmp_path):
    assert main(["eval-bound", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["train"])
