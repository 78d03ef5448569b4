"""CLI surface: simulate, replay, report, export-manifest."""

from __future__ import annotations

import csv
import shutil
from pathlib import Path

import pytest
from click.testing import CliRunner

from codesign.cli import main

from golden import GOLDEN_LOG_PATH, GOLDEN_STATE_HASH, run_golden_script


@pytest.fixture(scope="module")
def golden_project(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("golden")
    gateway, pid, log_path = run_golden_script(data_dir)
    return data_dir, pid, log_path


class TestSimulateCommand:
    def test_small_run_emits_bundle(self, tmp_path):
        out = tmp_path / "sim"
        result = CliRunner().invoke(main, [
            "simulate", "--users", "1", "--catalog-size", "20", "--rounds", "2",
            "--seeds", "1", "--strategy", "entropy", "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "metrics.csv").exists()
        assert (out / "rank_correlation.csv").exists()
        assert (out / "learning_curves.png").exists()
        with open(out / "metrics.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:4] == ["seed", "strategy", "user_id", "round_index"]
        assert len(rows) == 3  # header + 2 rounds

    def test_seed_determinism_csv_bytes(self, tmp_path):
        args = ["simulate", "--users", "1", "--catalog-size", "20", "--rounds", "2",
                "--seeds", "3", "--strategy", "entropy"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert CliRunner().invoke(main, args + ["--out", str(a)]).exit_code == 0
        assert CliRunner().invoke(main, args + ["--out", str(b)]).exit_code == 0
        assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
        assert (a / "rank_correlation.csv").read_bytes() == (
            b / "rank_correlation.csv"
        ).read_bytes()

    def test_invalid_config_fails(self, tmp_path):
        result = CliRunner().invoke(main, [
            "simulate", "--catalog-size", "2", "--out", str(tmp_path / "x"),
        ])
        assert result.exit_code != 0


class TestReplayCommand:
    def test_golden_log_replays_to_pinned_hash(self, tmp_path):
        workdir = tmp_path / "p"
        workdir.mkdir()
        shutil.copy(GOLDEN_LOG_PATH, workdir / "events.jsonl")
        result = CliRunner().invoke(main, ["replay", "--log",
                                           str(workdir / "events.jsonl")])
        assert result.exit_code == 0, result.output
        assert f"state hash: {GOLDEN_STATE_HASH}" in result.output

    def test_malformed_log_nonzero_exit_with_seq(self, tmp_path):
        bad = tmp_path / "events.jsonl"
        bad.write_text('{"seq": 1, "ts": 0.0, "kind": "Curated", "payload": {}, '
                       '"dedup_key": null}\n{"oops\n')
        result = CliRunner().invoke(main, ["replay", "--log", str(bad)])
        assert result.exit_code == 2
        assert "corrupt log" in result.output
        assert "seq=2" in result.output

    def test_missing_log_errors(self, tmp_path):
        result = CliRunner().invoke(main, ["replay", "--log",
                                           str(tmp_path / "nope.jsonl")])
        assert result.exit_code == 2


class TestReportCommand:
    def test_report_on_golden_project(self, golden_project, tmp_path):
        data_dir, pid, _ = golden_project
        out = tmp_path / "report"
        result = CliRunner().invoke(main, [
            "report", "--data-dir", str(data_dir), "--project", pid,
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        assert (out / "consensus.csv").exists()
        assert (out / "consensus.json").exists()
        assert (out / "consensus.png").exists()
        assert (out / "interactions.jsonl").exists()
        attributions = list(out.glob("attribution_*.csv"))
        assert attributions, "staged informed item should produce attribution files"
        assert list(out.glob("attribution_*.png"))

    def test_report_on_empty_project_exits_zero(self, tmp_path):
        from conftest import make_client

        data_dir = tmp_path / "data"
        client, _ = make_client(data_dir)
        pid = client.post("/projects", json={}).json()["project_id"]
        out = tmp_path / "report"
        result = CliRunner().invoke(main, [
            "report", "--data-dir", str(data_dir), "--project", pid,
            "--out", str(out),
        ])
        assert result.exit_code == 0, result.output
        with open(out / "consensus.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows == [["dimension", "attribute", "acs_raw", "acs_norm"]]

    def test_report_unknown_project_fails(self, tmp_path):
        result = CliRunner().invoke(main, [
            "report", "--data-dir", str(tmp_path / "no-data"), "--project", "pX",
            "--out", str(tmp_path / "r"),
        ])
        assert result.exit_code == 2


class TestExportManifestCommand:
    def test_exports_files(self, golden_project):
        data_dir, pid, _ = golden_project
        result = CliRunner().invoke(main, [
            "export-manifest", "--data-dir", str(data_dir), "--project", pid,
            "--attribute", "Collar Shape:Round",
        ])
        assert result.exit_code == 0, result.output
        assert "entries:" in result.output
        manifest_paths = list(
            (data_dir / "projects" / pid / "manifests").glob("*/manifest.json")
        )
        assert manifest_paths

    def test_unknown_attribute_fails(self, golden_project):
        data_dir, pid, _ = golden_project
        result = CliRunner().invoke(main, [
            "export-manifest", "--data-dir", str(data_dir), "--project", pid,
            "--attribute", "Nope:Nothing",
        ])
        assert result.exit_code == 2
