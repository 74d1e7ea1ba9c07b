import json

import pytest

from ffc_insertion.belief import load_matrix
from ffc_insertion.cli import main
from ffc_insertion.harness import read_trials


def test_run_hundred_trial_preset(tmp_path, capsys):
    assert main(["run", "--preset", "paper100", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "memory" in out and "memoryless" in out
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["memory"]["trials"] == 100
    assert len(read_trials(tmp_path / "memoryless" / "trials.jsonl")) == 100


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trials": 7, "master_seed": 4, "controller": {"max_iterations": 9}}))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--trials", "5", "--out", str(out)]) == 0
    echo = json.loads((out / "run_config.json").read_text())
    assert echo["trials"] == 5 and echo["master_seed"] == 4
    assert echo["controller"]["max_iterations"] == 9


def test_same_seed_same_output(tmp_path):
    for name in ("a", "b"):
        assert main(["run", "--trials", "40", "--seed", "9", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "trials.jsonl").read_bytes() == (tmp_path / "b" / "trials.jsonl").read_bytes()


def test_perception_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    model = tmp_path / "model.json"
    matrix = tmp_path / "matrix.json"
    assert main(["synth", "--reps", "4", "--step", "0.1", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--epochs", "150", "--out", str(model)]) == 0
    assert "held-out accuracy" in capsys.readouterr().out
    assert main(["eval-matrix", "--model", str(model), "--data", str(data), "--out", str(matrix)]) == 0
    assert load_matrix(matrix).space.n == 3
    run_dir = tmp_path / "run"
    argv = ["run", "--trials", "20", "--sensor", "trajectory", "--model", str(model), "--matrix", str(matrix)]
    assert main(argv + ["--out", str(run_dir)]) == 0
    assert len(read_trials(run_dir / "trials.jsonl")) == 20


def test_report_recomputes(tmp_path):
    assert main(["run", "--trials", "30", "--out", str(tmp_path / "r")]) == 0
    before = (tmp_path / "r" / "metrics.csv").read_text()
    assert main(["report", str(tmp_path / "r"), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "metrics.csv").read_text() == before


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--matrix", "/nonexistent/matrix.json"],
        ["run", "--trials", "0"],
        ["train", "--data", "/nonexistent", "--out", "m.json"],
        ["report", "/nonexistent/trials.jsonl"],
    ],
)
def test_errors_exit_nonzero(argv, capsys):
    assert main(argv) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_malformed_matrix_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 3, "rows": [[0.5, 0, 0, 0, 0, 0, 0]] * 7}))
    assert main(["run", "--trials", "1", "--matrix", str(bad)]) == 2
