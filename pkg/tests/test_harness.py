"""Harness and CLI tests on a miniature experiment."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_experiment

from driftadapt import harness
from driftadapt.cli import main as cli_main
from driftadapt.config import AdaptConfig, BenchmarkConfig, ExperimentConfig
from driftadapt.errors import CompatibilityError, ConfigError
from driftadapt.model import SourceModel
from driftadapt.selftest import run_selftest


# -- config round trip -----------------------------------------------------


def test_config_json_round_trip(tmp_path):
    cfg = tiny_experiment(tmp_path)
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg


def test_config_unknown_field_rejected():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"adapt": {"momentum": 0.9}})


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        AdaptConfig(k=0).validate()
    with pytest.raises(ConfigError):
        AdaptConfig(gamma=1.0).validate()
    with pytest.raises(ConfigError):
        BenchmarkConfig(preset="weird").validate()
    with pytest.raises(ConfigError):
        BenchmarkConfig(p_hate=[0.5]).validate()
    with pytest.raises(ConfigError):
        ExperimentConfig(variants=["nonsense"]).validate()


# -- pretrain + adapt ------------------------------------------------------


def test_pretrain_writes_checkpoints_and_summary(tmp_path):
    cfg = tiny_experiment(tmp_path)
    summary = harness.cmd_pretrain(cfg, tmp_path)
    assert harness.checkpoint_path(tmp_path, 0).exists()
    assert (tmp_path / "pretrain_summary.json").exists()
    assert "0" in summary["seeds"]
    assert 0.0 <= summary["seeds"]["0"]["holdout_accuracy"] <= 1.0


def test_pretrain_checkpoints_byte_identical(tmp_path):
    cfg = tiny_experiment(tmp_path)
    a_dir, b_dir = tmp_path / "a", tmp_path / "b"
    harness.cmd_pretrain(cfg, a_dir)
    harness.cmd_pretrain(cfg, b_dir)
    a = harness.checkpoint_path(a_dir, 0).read_bytes()
    b = harness.checkpoint_path(b_dir, 0).read_bytes()
    assert a == b


def test_adapt_outputs_and_aggregate(tmp_path):
    cfg = tiny_experiment(tmp_path)
    harness.cmd_pretrain(cfg, tmp_path)
    doc = harness.cmd_adapt(cfg, tmp_path, tmp_path)
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "metrics.csv").exists()
    for variant in cfg.variants:
        assert (tmp_path / "diagnostics" / f"{variant}_seed0.csv").exists()
    assert set(doc["aggregate"]) == set(cfg.variants)
    runs = doc["runs"]
    assert len(runs) == len(cfg.variants) * len(cfg.seeds)
    # aggregate is recomputable from the per-run rows
    src_f1 = [r["final_macro_f1"] for r in runs if r["variant"] == "source"]
    assert doc["aggregate"]["source"]["final_macro_f1"]["mean"] == pytest.approx(
        float(np.mean(src_f1))
    )


def test_metrics_csv_matches_report(tmp_path):
    cfg = tiny_experiment(tmp_path)
    harness.cmd_pretrain(cfg, tmp_path)
    doc = harness.cmd_adapt(cfg, tmp_path, tmp_path)
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    per_seed = [r for r in rows if r["seed"] != "mean"]
    assert len(per_seed) == len(doc["runs"])
    for row, run in zip(per_seed, doc["runs"]):
        assert row["variant"] == run["variant"]
        assert float(row["final_macro_f1"]) == pytest.approx(
            run["final_macro_f1"], abs=1e-6
        )


def test_diagnostics_csv_has_trace_rows(tmp_path):
    cfg = tiny_experiment(tmp_path)
    harness.cmd_pretrain(cfg, tmp_path)
    doc = harness.cmd_adapt(cfg, tmp_path, tmp_path)
    run = next(r for r in doc["runs"] if r["variant"] == "scanner")
    with open(tmp_path / "diagnostics" / "scanner_seed0.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(run["loss_trace"])
    assert "gradient_norm" in rows[0] and "mean_entropy" in rows[0]


def test_adapt_report_deterministic(tmp_path):
    cfg = tiny_experiment(tmp_path)
    harness.cmd_pretrain(cfg, tmp_path)
    out_a, out_b = tmp_path / "ra", tmp_path / "rb"
    harness.cmd_adapt(cfg, tmp_path, out_a)
    harness.cmd_adapt(cfg, tmp_path, out_b)
    assert (out_a / "report.json").read_bytes() == (out_b / "report.json").read_bytes()


def test_load_compatible_rejects_dim_mismatch(tmp_path):
    cfg = tiny_experiment(tmp_path)
    harness.cmd_pretrain(cfg, tmp_path)
    bad = tiny_experiment(tmp_path)
    bad.d_h = 12
    with pytest.raises(CompatibilityError):
        harness.load_compatible(harness.checkpoint_path(tmp_path, 0), bad)


def test_export_embeddings(tmp_path):
    cfg = tiny_experiment(tmp_path)
    harness.cmd_pretrain(cfg, tmp_path)
    out_csv = tmp_path / "emb.csv"
    harness.cmd_export_embeddings(cfg, harness.checkpoint_path(tmp_path, 0), out_csv)
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    n = cfg.benchmark.n_source + cfg.benchmark.n_target
    assert len(rows) == n + 1
    assert rows[0][:3] == ["domain", "label", "core"]
    assert {r[0] for r in rows[1:]} == {"source", "target"}
    assert len(rows[1]) == 3 + cfg.d_h


# -- CLI -------------------------------------------------------------------


def _write_cfg(tmp_path):
    cfg = tiny_experiment(tmp_path)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    return path


def test_cli_pretrain_and_adapt(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path)
    out = str(tmp_path / "out")
    assert cli_main(["pretrain", "--config", str(cfg_path), "--out", out]) == 0
    captured = capsys.readouterr().out
    assert "holdout accuracy" in captured
    assert cli_main(["adapt", "--config", str(cfg_path), "--out", out]) == 0
    captured = capsys.readouterr().out
    assert "scanner: macro-F1" in captured
    assert Path(out, "report.json").exists()


def test_cli_export_embeddings(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path)
    out = str(tmp_path / "out")
    cli_main(["pretrain", "--config", str(cfg_path), "--out", out])
    capsys.readouterr()
    code = cli_main([
        "export-embeddings", "--config", str(cfg_path), "--out", out,
        "--checkpoint", str(harness.checkpoint_path(out, 0)),
    ])
    assert code == 0
    assert Path(out, "embeddings.csv").exists()


def test_cli_missing_config_file(tmp_path, capsys):
    code = cli_main(["pretrain", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)])
    assert code == 2
    assert capsys.readouterr().err.startswith("ERROR io:")


def test_cli_bad_config_contents(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"no_such_field": 1}))
    code = cli_main(["pretrain", "--config", str(path), "--out", str(tmp_path)])
    assert code == 2
    assert capsys.readouterr().err.startswith("ERROR config:")


def test_cli_missing_checkpoint(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path)
    code = cli_main(["adapt", "--config", str(cfg_path),
                     "--out", str(tmp_path / "empty")])
    assert code == 2
    assert capsys.readouterr().err.startswith("ERROR io:")


def test_cli_selftest(capsys):
    assert cli_main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out


def test_selftest_checks_cover_invariants():
    results = run_selftest()
    assert len(results) >= 5
    assert all(ok for _, ok, _ in results)
