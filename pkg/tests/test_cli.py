import json
import shutil

import pytest

from conftest import small_config
from trajkit.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from trajkit.pipeline import BackboneConfig


def test_help_and_bad_args(capsys):
    assert main(["--help"]) == EXIT_OK
    assert main(["no-such-command"]) == EXIT_VALIDATION
    assert main(["split", "--ratio", "0.5"]) == EXIT_VALIDATION


def test_missing_inputs_are_validation_errors(tmp_path):
    assert main(["ingest", "--manifest", str(tmp_path / "missing.json")]) == EXIT_VALIDATION
    assert main(["run", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
    assert main(["run"]) == EXIT_VALIDATION


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_runtime_failure_exit_code(small_corpus, tmp_path):
    # an infinite learning rate makes the backbone loss diverge inside a stage
    cfg = small_config(small_corpus, tmp_path / "o", backbone=BackboneConfig(epochs=2, learning_rate=float("inf")))
    cfg.save(tmp_path / "c.json")
    assert main(["run", "--config", str(tmp_path / "c.json")]) == EXIT_RUNTIME


def test_missing_trajectory_file_is_validation_error(small_corpus, tmp_path):
    data = tmp_path / "d"
    shutil.copytree(small_corpus, data)
    next(data.glob("trajectories/*.csv")).unlink()
    cfg = small_config(data, tmp_path / "o")
    cfg.save(tmp_path / "c.json")
    assert main(["run", "--config", str(tmp_path / "c.json")]) == EXIT_VALIDATION


def test_synth_and_ingest(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--classes", "1", "--per-class", "3", "--frames", "20"]) == 0
    assert main(["ingest", "--manifest", str(tmp_path / "d" / "manifest.json"), "--out", str(tmp_path / "s.json")]) == 0
    summary = json.loads((tmp_path / "s.json").read_text())
    assert summary["trajectories"] == 6
    assert summary["toolkit"].startswith("trajkit ")


def test_run_from_config(small_corpus, tmp_path, capsys):
    cfg = small_config(small_corpus, tmp_path / "o")
    cfg.save(tmp_path / "c.json")
    assert main(["run", "--config", str(tmp_path / "c.json")]) == EXIT_OK
    text = capsys.readouterr().out
    assert "mean macro accuracy" in text
    assert (tmp_path / "o" / "report" / "metrics.csv").is_file()
    assert main(["run", "--config", str(tmp_path / "c.json")]) == EXIT_OK
    assert "miss" not in capsys.readouterr().out.split("\n")[0]
    assert main(["report", "--run", str(tmp_path / "o" / "run_record.json"), "--out", str(tmp_path / "r")]) == 0
    assert sorted(p.name for p in (tmp_path / "r").iterdir()) == sorted(
        p.name for p in (tmp_path / "o" / "report").iterdir())


def test_bad_config_file(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert main(["run", "--config", str(tmp_path / "c.json")]) == EXIT_VALIDATION
