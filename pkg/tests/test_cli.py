"""End-to-end tests of the command-line interface."""

import json
import os

import numpy as np
import pytest

from ebgmcr.cli import main
from ebgmcr.datamodel import load_dataset
from ebgmcr.metrics import RunRecord, read_run_records, write_run_records


def _run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def tiny_dataset_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("data") / "tiny")
    code = _run(
        "synth",
        "--components", "4",
        "--samples", "12",
        "--channels", "16",
        "--snr-db", "none",
        "--seed", "11",
        "--out", out,
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def solve_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "solver.json"
    path.write_text(json.dumps({
        "pool_size": 8,
        "batch": 4,
        "max_epochs": 25,
        "lambda_amb": 1e-10,
        "lambda_ramp_epochs": 5,
    }))
    return str(path)


class TestSynth:
    def test_writes_loadable_dataset_and_manifest(self, tiny_dataset_dir):
        ds = load_dataset(tiny_dataset_dir)
        assert ds.m_samples == 12 and ds.d == 16
        assert ds.ground_truth is not None
        with open(os.path.join(tiny_dataset_dir, "manifest.json")) as fh:
            manifest = json.load(fh)
        assert manifest["command"] == "synth"
        assert manifest["seed"] == 11
        assert manifest["config"]["n_components"] == 4
        assert "tool_version" in manifest and "timestamp" in manifest

    def test_noiseless_flag_round_trips(self, tiny_dataset_dir):
        ds = load_dataset(tiny_dataset_dir)
        gt = ds.ground_truth
        assert gt.snr_db is None
        clean = np.stack([
            (gt.selection[i] * gt.concentrations[i]) @ gt.components.vectors
            for i in range(ds.m_samples)
        ])
        # Arrays round-trip bit-exactly; the matrix product may wobble by
        # an ulp depending on the loaded arrays' memory alignment.
        np.testing.assert_allclose(ds.mixtures, clean, rtol=1e-12, atol=1e-12)

    def test_missing_required_flag_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            _run("synth", "--components", "3", "--samples", "9")
        assert excinfo.value.code == 2
        assert "--out" in capsys.readouterr().err

    def test_impossible_pool_reports_failure(self, tmp_path, capsys):
        code = _run(
            "synth",
            "--components", "600",
            "--samples", "10",
            "--out", str(tmp_path / "bad"),
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            _run("--version")
        assert excinfo.value.code == 0


class TestSolve:
    def test_produces_artifacts_and_summary(
        self, tiny_dataset_dir, solve_config_path, tmp_path, capsys
    ):
        out = str(tmp_path / "run")
        code = _run(
            "solve",
            "--data", tiny_dataset_dir,
            "--config", solve_config_path,
            "--seed", "0",
            "--out", out,
        )
        assert code == 0
        captured = capsys.readouterr()
        assert "band [" in captured.out
        assert "stopped:" in captured.out
        for name in ("manifest.json", "report.csv", "result.json"):
            assert os.path.exists(os.path.join(out, name))
        with open(os.path.join(out, "result.json")) as fh:
            result = json.load(fh)
        assert result["stop_reason"] in ("energy", "max_epochs")
        assert result["epochs_run"] == 25
        assert set(result["bands"]) == {
            "0.97-0.975", "0.975-0.98", "0.98-0.985",
            "0.985-0.99", "0.99-0.995", "0.995-1.1",
        }
        with open(os.path.join(out, "report.csv")) as fh:
            header = fh.readline().strip()
        assert header == "epoch,r2,mse,nmse,usage,active_count,mean_sel_energy,lambda,tau_g"

    def test_config_file_overrides_are_recorded(
        self, tiny_dataset_dir, solve_config_path, tmp_path
    ):
        out = str(tmp_path / "run")
        _run(
            "solve", "--data", tiny_dataset_dir,
            "--config", solve_config_path, "--out", out,
        )
        with open(os.path.join(out, "manifest.json")) as fh:
            manifest = json.load(fh)
        assert manifest["config"]["pool_size"] == 8
        assert manifest["config"]["max_epochs"] == 25
        assert manifest["config"]["d"] == 16

    def test_pool_flag_beats_config_file(self, tiny_dataset_dir, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"pool_size": 8, "batch": 4, "max_epochs": 3}))
        out = str(tmp_path / "run")
        _run(
            "solve", "--data", tiny_dataset_dir, "--config", str(cfg_path),
            "--pool", "6", "--out", out,
        )
        with open(os.path.join(out, "manifest.json")) as fh:
            assert json.load(fh)["config"]["pool_size"] == 6

    def test_repeat_run_is_bit_identical(
        self, tiny_dataset_dir, solve_config_path, tmp_path
    ):
        outs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            code = _run(
                "solve", "--data", tiny_dataset_dir,
                "--config", solve_config_path, "--seed", "5", "--out", out,
            )
            assert code == 0
            outs.append(out)
        for name in ("report.csv", "result.json"):
            with open(os.path.join(outs[0], name)) as fh:
                first = fh.read()
            with open(os.path.join(outs[1], name)) as fh:
                second = fh.read()
            assert first == second

    def test_disabling_early_stop_runs_full_budget(
        self, tiny_dataset_dir, solve_config_path, tmp_path
    ):
        out = str(tmp_path / "run")
        code = _run(
            "solve", "--data", tiny_dataset_dir,
            "--config", solve_config_path, "--no-min-energy", "--out", out,
        )
        assert code == 0
        with open(os.path.join(out, "result.json")) as fh:
            result = json.load(fh)
        assert result["stop_reason"] == "max_epochs"
        assert result["epochs_run"] == 25

    def test_missing_dataset_reports_failure(self, tmp_path, capsys):
        code = _run(
            "solve", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "o")
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestBench:
    def test_baseline_bench_writes_records(
        self, tiny_dataset_dir, tmp_path, capsys, monkeypatch
    ):
        monkeypatch.setenv("EBGMCR_THREADS", "2")
        out = str(tmp_path / "runs.csv")
        code = _run(
            "bench",
            "--data", tiny_dataset_dir,
            "--method", "mcr-als",
            "--target-r2", "0.95",
            "--runs", "3",
            "--seed", "100",
            "--out", out,
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "mcr-als: 3 runs, success fraction" in printed
        records = read_run_records(out)
        assert len(records) == 3
        assert [r.seed for r in records] == [100, 101, 102]
        assert all(r.method == "mcr-als" for r in records)
        assert all(r.n_true == 4 for r in records)
        assert all(r.wall_ms > 0 for r in records)

    def test_append_extends_existing_file(self, tiny_dataset_dir, tmp_path):
        out = str(tmp_path / "runs.csv")
        _run(
            "bench", "--data", tiny_dataset_dir, "--method", "nmf",
            "--target-r2", "0.9", "--runs", "1", "--seed", "0", "--out", out,
        )
        _run(
            "bench", "--data", tiny_dataset_dir, "--method", "nmf",
            "--target-r2", "0.9", "--runs", "1", "--seed", "1",
            "--out", out, "--append",
        )
        records = read_run_records(out)
        assert len(records) == 2
        assert [r.seed for r in records] == [0, 1]

    def test_solver_bench_records_run(
        self, tiny_dataset_dir, solve_config_path, tmp_path
    ):
        out = str(tmp_path / "runs.csv")
        code = _run(
            "bench",
            "--data", tiny_dataset_dir,
            "--method", "ebgmcr",
            "--config", solve_config_path,
            "--target-r2", "0.97",
            "--runs", "1",
            "--out", out,
        )
        assert code == 0
        records = read_run_records(out)
        assert len(records) == 1
        assert records[0].method == "ebgmcr"
        assert records[0].r2 <= 1.0

    def test_unknown_method_is_usage_error(self, tiny_dataset_dir, tmp_path, capsys):
        with pytest.raises(SystemExit) as excinfo:
            _run(
                "bench", "--data", tiny_dataset_dir, "--method", "pca",
                "--target-r2", "0.9", "--out", str(tmp_path / "r.csv"),
            )
        assert excinfo.value.code == 2
        assert "invalid choice" in capsys.readouterr().err

    def test_dataset_without_truth_is_rejected(self, tmp_path, capsys):
        from ebgmcr.datamodel import Dataset, save_dataset

        rng = np.random.default_rng(0)
        blind = Dataset(mixtures=np.abs(rng.standard_normal((4, 6))), d=6)
        data_dir = str(tmp_path / "blind")
        save_dataset(blind, data_dir)
        code = _run(
            "bench", "--data", data_dir, "--method", "nmf",
            "--target-r2", "0.9", "--out", str(tmp_path / "r.csv"),
        )
        assert code == 1
        assert "ground truth" in capsys.readouterr().err


def _make_records(path, rows):
    records = [
        RunRecord(
            method="nmf", n_true=n, mult=4, snr_db=30.0, r2=r2,
            estimated_count=ec, success=True, seed=i, wall_ms=1.0,
        )
        for i, (n, r2, ec) in enumerate(rows)
    ]
    write_run_records(str(path), records)


class TestReport:
    def test_csv_aggregation_groups_by_count_and_band(self, tmp_path, capsys):
        src = tmp_path / "runs.csv"
        _make_records(src, [(8, 0.991, 8), (8, 0.992, 10), (16, 0.996, 16)])
        out = str(tmp_path / "agg.csv")
        code = _run("report", "--runs", str(src), "--out", out)
        assert code == 0
        assert "aggregated 3 records" in capsys.readouterr().out
        with open(out) as fh:
            lines = [line.strip() for line in fh if line.strip()]
        assert lines[0] == "n_true,band,mean_ec,sd_ec,n"
        assert len(lines) == 3
        agg = {
            (row.split(",")[0], row.split(",")[1]): row.split(",")[2:]
            for row in lines[1:]
        }
        mean, sd, n = agg[("8", "0.99-0.995")]
        assert float(mean) == 9.0
        assert float(sd) == 1.0
        assert n == "2"

    def test_single_record_group_has_zero_sd(self, tmp_path):
        src = tmp_path / "runs.csv"
        _make_records(src, [(16, 0.996, 17)])
        out = str(tmp_path / "agg.csv")
        _run("report", "--runs", str(src), "--out", out)
        with open(out) as fh:
            lines = fh.read().strip().splitlines()
        parts = lines[1].split(",")
        assert float(parts[3]) == 0.0 and parts[4] == "1"

    def test_directory_input_resolves_runs_csv(self, tmp_path):
        run_dir = tmp_path / "bench_out"
        run_dir.mkdir()
        _make_records(run_dir / "runs.csv", [(8, 0.991, 8)])
        out = str(tmp_path / "agg.csv")
        assert _run("report", "--runs", str(run_dir), "--out", out) == 0

    def test_svg_draws_ribbon_and_identity_line(self, tmp_path):
        src = tmp_path / "runs.csv"
        _make_records(
            src,
            [(8, 0.991, 8), (8, 0.991, 10), (16, 0.991, 15), (16, 0.991, 19)],
        )
        out = str(tmp_path / "chart.svg")
        code = _run("report", "--runs", str(src), "--format", "svg", "--out", out)
        assert code == 0
        with open(out) as fh:
            svg = fh.read()
        assert svg.startswith("<svg")
        assert "stroke-dasharray" in svg
        assert "<polygon" in svg
        assert "<polyline" in svg
        assert "estimated component count" in svg

    def test_empty_input_reports_failure(self, tmp_path, capsys):
        src = tmp_path / "runs.csv"
        _make_records(src, [])
        code = _run("report", "--runs", str(src), "--out", str(tmp_path / "agg.csv"))
        assert code == 1
        assert "no input rows" in capsys.readouterr().err
