from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import pytest

from cvqa import cli

TINY = """\
version: 1
seeds: [0]
stream:
  num_tasks: 2
  d: 6
  n: 3
  L: 2
  vocab: 4
  visual_clusters: 2
  query_clusters: 2
  train_per_task: 5
  test_per_task: 4
  novel_per_task: 3
  distractor_regions: 1
  center_rank: 3
model: {d_e: 4, d_att: 4, k: 2, pool_capacity: 4}
ablation: {buffer_capacity: 3}
train: {epochs: 1}
sweep: {memory_sizes: [2, 5], alpha_beta_values: [0.2, 0.4, 0.6, 0.8, 1.0]}
"""

ERROR_LINE = re.compile(r"^cvqa-error\[[a-z]+\] \S.*$")


@pytest.fixture()
def cfg_path(tmp_path: Path) -> Path:
    path = tmp_path / "cfg.yaml"
    path.write_text(TINY)
    return path


def _error_lines(capsys) -> list[str]:
    return [line for line in capsys.readouterr().err.splitlines() if line]


def test_run_writes_complete_reports(cfg_path, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    m = report["per_seed"][0]["accuracy_matrix_standard"]
    assert [len(r) for r in m] == [1, 2]
    rows = list(csv.DictReader((out / "report.csv").open()))
    assert [r["paradigm"] for r in rows] == ["standard", "novel"]


def test_rerun_gives_identical_csv_bytes(cfg_path, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg_path), "--out-dir", str(tmp_path / name),
                         "--format", "csv"]) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    assert not (tmp_path / "a" / "report.json").exists()


def test_seed_flag_and_env_override(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv("CVQA_OUT_DIR", str(tmp_path / "env"))
    assert cli.main(["run", "--config", str(cfg_path), "--seed", "3", "--format", "json"]) == 0
    report = json.loads((tmp_path / "env" / "report.json").read_text())
    assert [e["seed"] for e in report["per_seed"]] == [3]


def test_phi_violation_exits_2_with_field(cfg_path, tmp_path, capsys):
    cfg_path.write_text(TINY.replace("model: {", "model: {phi: [0.5, 0.6, 0.1], "))
    assert cli.main(["run", "--config", str(cfg_path), "--out-dir", str(tmp_path)]) == 2
    (line,) = _error_lines(capsys)
    assert ERROR_LINE.match(line)
    assert line.startswith("cvqa-error[config] model.phi:") and "simplex" in line


def test_missing_config_exits_2(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert ERROR_LINE.match(_error_lines(capsys)[0])


def test_strategy_sweep_writes_two_reports(cfg_path, tmp_path):
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--axis", "strategy", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    reports = sorted(p.name for p in out.glob("strategy_*.json"))
    assert reports == ["strategy_max_similarity.json", "strategy_random.json"]
    merged = list(csv.DictReader((out / "sweep_strategy.csv").open()))
    assert {r["sweep_point"] for r in merged} == {"random", "max_similarity"}


def test_alpha_beta_sweep_has_25_rows_per_seed_and_paradigm(cfg_path, tmp_path):
    out = tmp_path / "ab"
    assert cli.main(["sweep", "--axis", "alpha_beta", "--config", str(cfg_path), "--out-dir", str(out),
                     "--format", "csv"]) == 0
    merged = list(csv.DictReader((out / "sweep_alpha_beta.csv").open()))
    standard = [r for r in merged if r["paradigm"] == "standard" and r["seed"] == "0"]
    assert len(standard) == 25
    assert len({r["sweep_point"] for r in standard}) == 25
    assert len({r["config_hash"] for r in standard}) == 25


def test_memory_sweep_uses_configured_sizes(cfg_path, tmp_path):
    out = tmp_path / "mem"
    assert cli.main(["sweep", "--axis", "memory_size", "--config", str(cfg_path), "--out-dir", str(out),
                     "--format", "json"]) == 0
    assert sorted(p.name for p in out.glob("*.json")) == ["memory_size_mem2.json", "memory_size_mem5.json"]
    rep = json.loads((out / "memory_size_mem5.json").read_text())
    assert rep["config"]["ablation"]["buffer_capacity"] == 5


def test_gradcheck_passes_and_prints_table(capsys):
    assert cli.main(["gradcheck", "--instances", "2"]) == 0
    out = capsys.readouterr().out
    assert "max_abs" in out and "FAIL" not in out


def test_gradcheck_corruption_exits_1_naming_group(capsys):
    assert cli.main(["gradcheck", "--instances", "1", "--corrupt", "encoder"]) == 1
    (line,) = _error_lines(capsys)
    assert ERROR_LINE.match(line)
    failing = [item.strip().split("/") for item in line.split("in:")[1].split(",")]
    assert {group for _, group in failing} == {"encoder"}


def test_gradcheck_rejects_large_dimension(capsys):
    assert cli.main(["gradcheck", "--dim", "32"]) == 2
    assert ERROR_LINE.match(_error_lines(capsys)[0])


def test_gen_data_then_ingest_and_run_from_file(cfg_path, tmp_path, capsys):
    feats = tmp_path / "f.ndjson"
    assert cli.main(["gen-data", "--config", str(cfg_path), "--out", str(feats)]) == 0
    assert cli.main(["ingest", "--features", str(feats)]) == 0
    assert "ok: d=6 n=3 L=2 T=1 vocab=4" in capsys.readouterr().out
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(cfg_path), "--features", str(feats), "--out-dir", str(out)]) == 0
    ref = tmp_path / "ref"
    assert cli.main(["run", "--config", str(cfg_path), "--out-dir", str(ref)]) == 0
    assert (out / "report.csv").read_bytes() == (ref / "report.csv").read_bytes()


def test_ingest_failures_exit_1_with_record(tmp_path, capsys):
    bad = tmp_path / "bad.ndjson"
    bad.write_text('{"version": 1, "d": 2, "n": 1, "L": 1, "T": 1, "vocab": 3}\n{"task": 0,\n')
    assert cli.main(["ingest", "--features", str(bad)]) == 1
    (line,) = _error_lines(capsys)
    assert line.startswith("cvqa-error[parse] record 2:")
    assert cli.main(["ingest", "--features", str(tmp_path / "missing")]) == 1
    assert ERROR_LINE.match(_error_lines(capsys)[0])
