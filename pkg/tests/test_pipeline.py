import json
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import small_config
from trajkit.evaluation.report import parse_confusion_csv
from trajkit.pipeline import (ExperimentConfig, GridCell, RunRecord, ValidationError, cell_seed, emit_report,
                              header_line, metrics_digest, run_pipeline)


def test_missing_data_dir_writes_nothing(tmp_path):
    out = tmp_path / "out"
    with pytest.raises(ValidationError, match="does not exist"):
        run_pipeline(ExperimentConfig(str(tmp_path / "nope"), str(out)))
    assert not out.exists()


def test_bad_config_rejected(small_corpus, tmp_path):
    cfg = small_config(small_corpus, tmp_path / "o", grid=[GridCell("MPED-C", "A1", "early-agg")])
    with pytest.raises(ValidationError, match="A3"):
        run_pipeline(cfg)
    with pytest.raises(ValidationError, match="unknown config"):
        ExperimentConfig.from_dict({"data_dir": "a", "out_dir": "b", "bogus": 1})


def test_config_round_trip(tmp_path, small_corpus):
    cfg = small_config(small_corpus, tmp_path)
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert replace(cfg, out_dir="elsewhere").config_hash() == cfg.config_hash()
    assert replace(cfg, seed=2).config_hash() != cfg.config_hash()


def test_cell_seed_distinct():
    seeds = {cell_seed(0, n, f) for n in ("a", "b") for f in range(3)}
    assert len(seeds) == 6
    assert cell_seed(0, "a", 1) == cell_seed(0, "a", 1)


def test_run_record_contents(small_run):
    config, run = small_run
    assert set(run.results) == {"MPED-C_A3_early-agg", "decoded_LSTM"}
    for r in run.results.values():
        assert len(r["fold_macro_accuracy"]) == config.train.folds
        assert all(0.0 <= v <= 1.0 for v in r["fold_macro_accuracy"])
    assert len(run.comparisons) == 1
    assert set(run.cache.values()) == {"miss"}
    assert set(run.labeling) >= {"method"}


def test_headers_on_artifacts(small_run):
    config, run = small_run
    out = Path(config.out_dir)
    head = header_line(config.config_hash())
    assert re.fullmatch(r"trajkit \d+\.\d+\.\d+ config=[0-9a-f]{12}", head)
    csvs = list(out.rglob("*.csv"))
    assert csvs
    for p in csvs:
        assert p.read_text().splitlines()[0] == f"# {head}"
    for p in out.rglob("*.json"):
        if p.name in ("cache.json", "config.json", "run_record.json", "manifest.json"):
            continue
        doc = json.loads(p.read_text())
        assert doc["meta"]["config_hash"] == config.config_hash(), p


def test_rerun_hits_cache(small_corpus, tmp_path):
    cfg = small_config(small_corpus, tmp_path / "o", grid=[GridCell("MPED-C", "A3", "early-agg")])
    first = run_pipeline(cfg)
    second = run_pipeline(cfg)
    assert set(second.cache.values()) == {"hit"}
    assert second.metrics_only() == first.metrics_only()
    # a changed training setting reruns only the stages downstream of it
    third = run_pipeline(replace(cfg, train=replace(cfg.train, learning_rate=2e-3)))
    assert third.cache["train-backbone"] == "hit" and third.cache["train-clf"] == "miss"


def test_tampered_artifact_reruns(small_corpus, tmp_path):
    cfg = small_config(small_corpus, tmp_path / "o", grid=[GridCell("MPED-C", "A3", "early-agg")])
    first = run_pipeline(cfg)
    scores = next((tmp_path / "o").rglob("scores.csv"))
    scores.write_text(scores.read_text() + "\n")
    second = run_pipeline(cfg)
    assert second.cache["score"] == "miss"
    assert metrics_digest(second) == metrics_digest(first)


def test_report_svg_matches_csv(small_run, tmp_path):
    config, run = small_run
    files = emit_report(run, tmp_path / "r")
    svgs = sorted(p for p in files if p.suffix == ".svg")
    assert len(svgs) == 2
    assert (tmp_path / "r" / "comparison.txt").read_text().count(" vs ") == 1
    for svg in svgs:
        classes, counts = parse_confusion_csv(svg.with_suffix(".csv").read_text())
        cells = re.findall(r'data-row="(\d+)" data-col="(\d+)" data-value="([0-9.]+)"', svg.read_text())
        assert len(cells) == len(classes) ** 2
        rows = counts.sum(axis=1, keepdims=True)
        norm = np.divide(counts, rows, out=np.zeros(counts.shape), where=rows > 0)
        for i, j, v in cells:
            assert abs(float(v) - norm[int(i), int(j)]) < 5e-7


def test_report_byte_identical(small_run, tmp_path):
    config, run = small_run
    a = emit_report(run, tmp_path / "a")
    b = emit_report(RunRecord.load(Path(config.out_dir) / "run_record.json"), tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
