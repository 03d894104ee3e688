import json
import shutil
import subprocess

import numpy as np
import pytest

from beacon.cli import main

CONFIG = {"hyper": {"epochs": 3}, "benchmark": {"m_per_source": 40, "corrupt_fraction": 0.3}, "run": {"seeds": 2}}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(CONFIG))
    return path


def write_csv(path, header, rows):
    np.savetxt(path, rows, delimiter=",", header=",".join(header), comments="")


def test_train_writes_metrics_and_checkpoints(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(out), "--log-weights", "full"]) == 0
    assert "final_target_risk" in capsys.readouterr().out
    lines = (out / "metrics.csv").read_text().splitlines()
    assert len(lines) == 4
    ckpt = sorted(p.name for p in (out / "checkpoints").iterdir())
    assert ckpt == ["learner.json", "weights_00001.json", "weights_00002.json", "weights_00003.json"]
    snap = json.loads((out / "checkpoints" / "weights_00003.json").read_text())
    assert len(snap["q"]) == 60


def test_train_rerun_is_byte_identical(tmp_path, config):
    for name in ("a", "b"):
        assert main(["train", "--config", str(config), "--out", str(tmp_path / name)]) == 0
    for name in ("metrics.csv", "weights.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bench(tmp_path, config, capsys):
    assert main(["bench", "--config", str(config), "--seeds", "2", "--out", str(tmp_path / "b")]) == 0
    text = capsys.readouterr().out
    assert "beacon:" in text and "wins:" in text
    summary = json.loads((tmp_path / "b" / "summary.json").read_text())
    assert len(summary["cells"]) == 6


def test_sweep(tmp_path, config):
    grids = tmp_path / "g.json"
    grids.write_text(json.dumps({"lambda_d": [0.1], "alpha": [0.45, 0.9]}))
    code = main(["sweep", "--config", str(config), "--order", "lambda_d,alpha", "--grids", str(grids), "--out", str(tmp_path / "s"), "--seeds", "1"])
    assert code == 0
    report = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert set(report["best"]) == {"lambda_d", "alpha"}


def test_discrepancy_knn_hand_case(tmp_path, capsys):
    write_csv(tmp_path / "s.csv", ["z0"], np.array([[0.5], [3.0]]))
    write_csv(tmp_path / "t.csv", ["z0"], np.array([[0.0], [1.0]]))
    assert main(["discrepancy", "--estimator", "knn", "--k", "1", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv")]) == 0
    assert capsys.readouterr().out.split() == ["d", "0.5", "2.0"]


def test_discrepancy_classifier_reports_auc(tmp_path, capsys):
    rng = np.random.default_rng(0)
    write_csv(tmp_path / "s.csv", ["a", "b"], rng.normal(size=(20, 2)) - 5)
    write_csv(tmp_path / "t.csv", ["a", "b"], rng.normal(size=(20, 2)) + 5)
    assert main(["discrepancy", "--estimator", "classifier", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv")]) == 0
    aux = [line for line in capsys.readouterr().out.splitlines() if line.startswith("aux=")]
    assert float(aux[0][4:]) > 0.99


def test_discrepancy_localized(tmp_path, capsys):
    rng = np.random.default_rng(1)
    rows = np.column_stack([rng.normal(size=(10, 2)), rng.normal(size=10)])
    write_csv(tmp_path / "s.csv", ["x0", "x1", "y0"], rows)
    write_csv(tmp_path / "t.csv", ["x0", "x1", "y0"], rows)
    args = ["discrepancy", "--estimator", "localized", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv")]
    assert main(args) == 1
    assert main(args + ["--radius", "0.5"]) == 0
    aux = [line for line in capsys.readouterr().out.splitlines() if line.startswith("aux=")]
    assert abs(float(aux[0][4:])) <= 1e-9


def test_degenerate_targets_are_runtime_failure(tmp_path):
    write_csv(tmp_path / "s.csv", ["z"], np.array([[1.0]]))
    write_csv(tmp_path / "t.csv", ["z"], np.array([[0.0], [0.0]]))
    assert main(["discrepancy", "--source", str(tmp_path / "s.csv"), "--target", str(tmp_path / "t.csv")]) == 2


@pytest.mark.parametrize("body", ['{"lambda_d": -1}', "{oops", '{"hyper": {"bogus": 1}}'])
def test_config_errors_exit_one(tmp_path, body, capsys):
    path = tmp_path / "bad.json"
    path.write_text(body)
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "config error" in capsys.readouterr().err


def test_usage_errors_exit_one(tmp_path):
    assert main(["nonsense"]) == 1
    assert main(["train"]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 1


def test_check_projections(capsys):
    assert main(["check-projections", "--instances", "10"]) == 0
    assert "box-sum max error" in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("beacon") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["beacon", "check-projections", "--instances", "3"], capture_output=True, text=True)
    assert proc.returncode == 0
