import json
import subprocess
import sys

import pytest

from regbench.cli import main

pytestmark = pytest.mark.usefixtures("pipeline")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> climatology artifacts shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = {
        "output_dir": str(root / "runs"),
        "seed": 0,
        "dataset_dir": str(root / "dataset"),
        "synthetic": {
            "n_channels": 1, "height": 6, "width": 6,
            "start_year": 2001, "years": 3, "noise_amplitude": 0.4,
        },
        "coarse_factor": 2,
        "coarse_dir": str(root / "coarse"),
    }
    cfg_path = root / "synth.json"
    cfg_path.write_text(json.dumps(config))
    assert main(["synth", "--config", str(cfg_path), "--force"]) == 0

    clim_config = {
        "output_dir": str(root / "runs"),
        "manifest": str(root / "dataset" / "manifest.json"),
        "split": "test",
        "fit_split": "train",
        "climatology_dir": str(root / "climatology"),
    }
    (root / "climatology.json").write_text(json.dumps(clim_config))
    assert main(["climatology", "--config", str(root / "climatology.json"), "--force"]) == 0
    return root


def eval_config(root, **extra):
    config = {
        "output_dir": str(root / "runs"),
        "manifest": str(root / "dataset" / "manifest.json"),
        "split": "test",
        "adapter": {"type": "builtin", "name": "persistence"},
        "boundary": {"mode": "boundary_forcing", "halo_width": 1},
        "leads": 3,
        "max_inits": 2,
        "init_stride": 50,
        "metrics": ["rmse", "acc"],
        "climatology": str(root / "climatology"),
        "seed": 0,
    }
    config.update(extra)
    return config


def write_config(root, name, config):
    path = root / name
    path.write_text(json.dumps(config))
    return str(path)


class TestPipeline:
    def test_persistence_evaluate_smoke(self, pipeline):
        root = pipeline
        cfg = write_config(root, "eval.json", eval_config(root))
        assert main(["evaluate", "--config", cfg, "--out", str(root / "runs-smoke")]) == 0
        run_dirs = list((root / "runs-smoke").iterdir())
        assert len(run_dirs) == 1
        report = (run_dirs[0] / "report.csv").read_text().splitlines()
        assert report[0] == "variable,lead_hours,metric,value,count"
        assert len(report) > 1
        lead0 = [r for r in report[1:] if r.split(",")[1] == "0" and r.split(",")[2] == "rmse"]
        assert lead0 and all(float(r.split(",")[3]) == 0.0 for r in lead0)
        assert (run_dirs[0] / "config.json").exists()
        resolved = json.loads((run_dirs[0] / "config.json").read_text())
        assert resolved["command"] == "evaluate"
        assert "engine_version" in resolved

    def test_oracle_evaluate_all_zero_rmse(self, pipeline):
        root = pipeline
        cfg = write_config(
            root, "eval_oracle.json",
            eval_config(root, adapter={"type": "builtin", "name": "oracle"}, metrics=["rmse"]),
        )
        assert main(["evaluate", "--config", cfg, "--out", str(root / "runs-oracle")]) == 0
        run_dir = next((root / "runs-oracle").iterdir())
        rows = (run_dir / "report.csv").read_text().splitlines()[1:]
        assert rows
        assert all(float(r.split(",")[3]) == 0.0 for r in rows)

    def test_missing_manifest_exits_2_without_artifacts(self, pipeline, tmp_path):
        root = pipeline
        cfg = write_config(
            root, "eval_missing.json",
            eval_config(root, manifest=str(tmp_path / "nope" / "manifest.json"),
                        output_dir=str(tmp_path / "runs-missing")),
        )
        assert main(["evaluate", "--config", cfg]) == 2
        assert not (tmp_path / "runs-missing").exists()

    def test_worker_count_invariant_reports(self, pipeline):
        root = pipeline
        out_a = root / "det-a"
        out_b = root / "det-b"
        cfg = write_config(root, "eval_det.json", eval_config(root))
        assert main(["evaluate", "--config", cfg, "--out", str(out_a), "--workers", "1"]) == 0
        assert main(["evaluate", "--config", cfg, "--out", str(out_b), "--workers", "3"]) == 0
        a = next(out_a.iterdir()) / "report.csv"
        b = next(out_b.iterdir()) / "report.csv"
        assert a.read_bytes() == b.read_bytes()

    def test_rerun_from_resolved_config_reproduces(self, pipeline):
        root = pipeline
        cfg = write_config(root, "eval_rerun.json", eval_config(root))
        assert main(["evaluate", "--config", cfg, "--out", str(root / "rerun-a")]) == 0
        first = next((root / "rerun-a").iterdir())
        resolved = first / "config.json"
        assert main(["evaluate", "--config", str(resolved), "--out", str(root / "rerun-b")]) == 0
        second = next((root / "rerun-b").iterdir())
        assert (first / "report.csv").read_bytes() == (second / "report.csv").read_bytes()


class TestSampleCommand:
    def test_gaussian_denoiser_sampling(self, pipeline):
        root = pipeline
        config = eval_config(
            root,
            denoiser={"type": "gaussian", "mu": 0.0, "s": 0.5},
            schedule={"num_levels": 6, "ensemble_size": 4, "sampler": "dpmpp2s"},
            metrics=["crps", "spread", "ssr"],
            max_inits=2,
        )
        cfg = write_config(root, "sample.json", config)
        assert main(["sample", "--config", cfg, "--out", str(root / "runs-sample")]) == 0
        run_dir = next((root / "runs-sample").iterdir())
        rows = (run_dir / "report.csv").read_text().splitlines()[1:]
        metrics = {r.split(",")[2] for r in rows}
        assert metrics == {"crps", "spread", "ssr"}

    def test_seed_required(self, pipeline):
        root = pipeline
        config = eval_config(root, denoiser={"type": "gaussian", "mu": 0.0, "s": 0.5})
        del config["seed"]
        cfg = write_config(root, "sample_noseed.json", config)
        assert main(["sample", "--config", cfg]) == 2


class TestExtremeCommand:
    def test_event_series_csv(self, pipeline):
        root = pipeline
        config = eval_config(
            root,
            event={
                "start": "2003-05-25T12:00:00Z",
                "end": "2003-06-01T12:00:00Z",
                "hour": 12,
                "box": {"lat_min": 6.0, "lat_max": 6.7, "lon_min": 66.6, "lon_max": 67.3},
            },
        )
        cfg = write_config(root, "extreme.json", config)
        assert main(["extreme", "--config", cfg, "--out", str(root / "runs-extreme")]) == 0
        run_dir = next((root / "runs-extreme").iterdir())
        lines = (run_dir / "event_series.csv").read_text().splitlines()
        assert lines[0] == "date,variable,forecast,reference"
        assert len(lines) == 1 + 8  # one channel, May 25 .. Jun 1


class TestOverridesAndEntryPoint:
    def test_set_override_changes_leads(self, pipeline):
        root = pipeline
        cfg = write_config(root, "eval_override.json", eval_config(root))
        assert (
            main(
                [
                    "evaluate", "--config", cfg,
                    "--set", "leads=1", "--set", "metrics=[\"rmse\"]",
                    "--out", str(root / "runs-override"),
                ]
            )
            == 0
        )
        run_dir = next((root / "runs-override").iterdir())
        rows = (run_dir / "report.csv").read_text().splitlines()[1:]
        leads = {r.split(",")[1] for r in rows}
        assert leads == {"0", "6"}

    def test_stats_command(self, pipeline):
        root = pipeline
        cfg = write_config(
            root, "stats.json",
            {"output_dir": str(root / "runs"),
             "manifest": str(root / "dataset" / "manifest.json"), "fit_split": "train"},
        )
        assert main(["stats", "--config", cfg, "--force"]) == 0
        doc = json.loads((root / "runs" / "stats" / "stats.json").read_text())
        assert doc["channels"] == ["t2m"]
        assert doc["std"][0] > 0

    def test_console_script_subprocess(self, pipeline):
        root = pipeline
        cfg = write_config(root, "eval_console.json", eval_config(root, metrics=["rmse"]))
        proc = subprocess.run(
            [sys.executable, "-m", "regbench.cli", "evaluate", "--config", cfg,
             "--out", str(root / "runs-console")],
            capture_output=True, text=True, timeout=300,
        )
        assert proc.returncode == 0, proc.stderr
        assert "evaluate: wrote" in proc.stdout

    def test_rollout_writes_frames(self, pipeline):
        root = pipeline
        cfg = write_config(root, "rollout.json", eval_config(root, leads=2, max_inits=1))
        assert main(["rollout", "--config", cfg, "--out", str(root / "runs-rollout")]) == 0
        run_dir = next((root / "runs-rollout").iterdir())
        frames = list((run_dir / "trajectories").rglob("*.rbf"))
        assert len(frames) == 2


class TestIngest:
    def test_npy_ingest_round_trip(self, pipeline, tmp_path):
        import numpy as np

        raw = tmp_path / "raw"
        raw.mkdir()
        rng = np.random.default_rng(0)
        frames = {}
        for stem in ("2005-01-01T00", "2005-01-01T06", "2006-01-01T00"):
            values = rng.normal(size=(2, 3, 4)).astype(np.float32).astype(np.float64)
            np.save(raw / f"{stem}.npy", values)
            frames[stem] = values
        meta = {
            "catalog": [
                {"name": "t2m", "level": None, "units": "K"},
                {"name": "z500", "level": 500, "units": "m"},
            ],
            "lat": [10.0, 11.0, 12.0],
            "lon": [70.0, 71.0, 72.0, 73.0],
        }
        (tmp_path / "meta.json").write_text(json.dumps(meta))
        config = {
            "output_dir": str(tmp_path / "runs"),
            "raw_dir": str(raw),
            "raw_meta": str(tmp_path / "meta.json"),
            "dataset_dir": str(tmp_path / "dataset"),
            "split_years": {"train": [2005, 2005], "val": [2006, 2006]},
        }
        cfg = tmp_path / "ingest.json"
        cfg.write_text(json.dumps(config))
        assert main(["ingest", "--config", str(cfg), "--force"]) == 0

        from regbench.dataset import load_manifest

        manifest = load_manifest(tmp_path / "dataset" / "manifest.json")
        assert len(manifest.frames("train")) == 2
        assert len(manifest.frames("val")) == 1
        frame = manifest.read(manifest.frames("train")[0])
        np.testing.assert_array_equal(frame.values, frames["2005-01-01T00"])

    def test_env_worker_default(self, pipeline, monkeypatch):
        from regbench.cli import _workers

        monkeypatch.setenv("REGBENCH_WORKERS", "7")
        assert _workers({}) == 7
        assert _workers({"workers": 2}) == 2
