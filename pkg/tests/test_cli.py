import json

import numpy as np
import pytest

from mixvi import cli, metrics, presets
from mixvi.cli import main


def write_manifest(tmp_path, name="smoke_gaussian_2d", **overrides):
    manifest = presets.build_manifest(name)
    for key, value in overrides.items():
        section, field = key.split(".")
        manifest[section][field] = value
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(manifest))
    return path


class TestPresets:
    def test_listing(self, capsys):
        assert main(["presets"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert "darcy_k5" in out
        assert "case_a_10d_K20" in out
        assert "funnel_2d" in out

    def test_every_preset_builds_a_loadable_manifest(self):
        for name in presets.preset_names():
            manifest = presets.build_manifest(name)
            cli.config_from_doc(manifest["config"])  # must not raise
            assert "target" in manifest and "init" in manifest

    def test_sensitivity_grid_is_present(self):
        names = presets.preset_names()
        for expected in ("case_a_10d_shift_plus2", "case_a_10d_shift_minus2",
                         "case_a_10d_K10", "case_a_10d_sched_linear",
                         "case_a_10d_sched_exponential", "case_a_10d_anneal_none",
                         "case_a_10d_anneal_a05"):
            assert expected in names


class TestRun:
    def test_missing_manifest_exit_2(self, tmp_path, capsys):
        rc = main(["run", "--manifest", str(tmp_path / "absent.json")])
        assert rc == 2
        assert "absent.json" in capsys.readouterr().err

    def test_invalid_config_exit_2(self, tmp_path):
        path = write_manifest(tmp_path)
        doc = json.loads(path.read_text())
        doc["config"]["dt_max"] = 7.0
        path.write_text(json.dumps(doc))
        assert main(["run", "--manifest", str(path), "--out", str(tmp_path / "o")]) == 2

    def test_smoke_run_outputs(self, tmp_path):
        path = write_manifest(tmp_path)
        out = tmp_path / "out"
        assert main(["run", "--manifest", str(path), "--out", str(out)]) == 0
        assert (out / "trajectory.csv").exists()
        assert (out / "manifest.json").exists()
        assert (out / "state_final.json").exists()
        assert (out / "state_000020.json").exists()
        header = (out / "trajectory.csv").read_text().splitlines()[0].split(",")
        assert header[:4] == ["n", "dt", "eta", "max_grad_norm"]
        assert "w_1" in header and "fbar_2" in header

    def test_rerun_byte_identical(self, tmp_path):
        path = write_manifest(tmp_path)
        outs = []
        for tag, threads in (("a", "1"), ("b", "2")):
            out = tmp_path / tag
            assert main(["run", "--manifest", str(path), "--out", str(out),
                         "--threads", threads]) == 0
            outs.append((out / "trajectory.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_seed_override_changes_result(self, tmp_path):
        path = write_manifest(tmp_path)
        out1, out2 = tmp_path / "s0", tmp_path / "s1"
        assert main(["run", "--manifest", str(path), "--out", str(out1)]) == 0
        assert main(["run", "--manifest", str(path), "--out", str(out2), "--seed", "9"]) == 0
        assert (out1 / "trajectory.csv").read_bytes() != (out2 / "trajectory.csv").read_bytes()
        resolved = json.loads((out2 / "manifest.json").read_text())
        assert resolved["config"]["seed"] == 9

    def test_resolved_manifest_round_trip(self, tmp_path):
        path = write_manifest(tmp_path)
        out1 = tmp_path / "first"
        assert main(["run", "--manifest", str(path), "--out", str(out1)]) == 0
        out2 = tmp_path / "second"
        assert main(["run", "--manifest", str(out1 / "manifest.json"),
                     "--out", str(out2)]) == 0
        assert ((out1 / "trajectory.csv").read_bytes()
                == (out2 / "trajectory.csv").read_bytes())

    def test_metrics_schedule(self, tmp_path):
        manifest = presets.build_manifest("case_b_2d")
        manifest["config"]["n_iterations"] = 30
        manifest["config"]["anneal"]["enabled"] = False
        manifest["init"]["K"] = 4
        manifest["metrics"] = {"which": ["tv"], "every": 10}
        path = tmp_path / "m.json"
        path.write_text(json.dumps(manifest))
        out = tmp_path / "out"
        assert main(["run", "--manifest", str(path), "--out", str(out)]) == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "iteration,tv"
        assert [row.split(",")[0] for row in lines[1:]] == ["10", "20", "30"]


class TestAnalyze:
    def test_noise_free_report(self, tmp_path):
        out = tmp_path / "nf"
        rc = main(["analyze", "noise_free", "--out", str(out),
                   "--sigma0-diag", "1e6,1e-6", "--eps", "1e-4", "1e-6"])
        assert rc == 0
        lines = (out / "noise_free.csv").read_text().splitlines()
        assert lines[0] == "eps,iterations"
        assert len(lines) == 3
        assert (out / "noise_free_trace.csv").exists()

    def test_pathology_report_sections(self, tmp_path):
        out = tmp_path / "pa"
        assert main(["analyze", "pathology", "--out", str(out)]) == 0
        text = (out / "pathology.csv").read_text()
        assert "a_dt_max_only" in text and "b_beta_only" in text

    def test_stochastic_report(self, tmp_path):
        out = tmp_path / "st"
        rc = main(["analyze", "stochastic", "--out", str(out), "--seeds", "3",
                   "--steps", "50", "--sigma0-diag", "4,0.25"])
        assert rc == 0
        lines = (out / "stochastic.csv").read_text().splitlines()
        assert lines[0] == "seed,n,sigma_err,v_norm,dt"
        assert len(lines) == 1 + 3 * 50


class TestPlotdata:
    @pytest.fixture()
    def run_dir(self, tmp_path):
        manifest = presets.build_manifest("case_b_2d")
        manifest["config"]["n_iterations"] = 20
        manifest["config"]["anneal"]["enabled"] = False
        manifest["init"]["K"] = 3
        manifest["metrics"] = {"which": ["tv"], "every": 10}
        path = tmp_path / "m.json"
        path.write_text(json.dumps(manifest))
        out = tmp_path / "run"
        assert main(["run", "--manifest", str(path), "--out", str(out)]) == 0
        return out

    def test_marginal(self, run_dir):
        assert main(["plotdata", "--run", str(run_dir), "--which", "marginal"]) == 0
        grid = metrics.load_grid(run_dir / "marginal_density.tsv")
        assert grid.values.shape == (200, 200)
        ref = metrics.load_grid(run_dir / "reference_density.tsv")
        assert ref.values.shape == (200, 200)
        means = (run_dir / "component_means.csv").read_text().splitlines()
        assert means[0] == "k,weight,mean_1,mean_2"
        assert len(means) == 4

    def test_tv_series(self, run_dir):
        assert main(["plotdata", "--run", str(run_dir), "--which", "tv_series"]) == 0
        lines = (run_dir / "tv_series.csv").read_text().splitlines()
        assert lines[0] == "iteration,tv"
        assert len(lines) == 3

    def test_weights(self, run_dir):
        assert main(["plotdata", "--run", str(run_dir), "--which", "weights"]) == 0
        lines = (run_dir / "weights.csv").read_text().splitlines()
        assert lines[0] == "iteration,w_1,w_2,w_3"
        weights = np.array([[float(x) for x in row.split(",")[1:]] for row in lines[1:]])
        assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_missing_run_dir_exit_4(self, tmp_path):
        rc = main(["plotdata", "--run", str(tmp_path / "ghost"), "--which", "marginal"])
        assert rc == 4


class TestFullPresets:
    def test_case_a_2d_preset_end_to_end(self, tmp_path):
        # the full benchmark preset: annealing plus 500 iterations, with a
        # tv series emitted on the schedule
        path = tmp_path / "case_a_2d.json"
        path.write_text(json.dumps(presets.build_manifest("case_a_2d")))
        out = tmp_path / "out"
        assert main(["run", "--manifest", str(path), "--out", str(out)]) == 0
        rows = (out / "trajectory.csv").read_text().splitlines()
        assert len(rows) == 1 + 500
        header, data = rows[0].split(","), rows[-1].split(",")
        tv_lines = (out / "metrics.csv").read_text().splitlines()
        assert tv_lines[0] == "iteration,tv"
        final_tv = float(tv_lines[-1].split(",")[1])
        assert final_tv <= 0.12

    @pytest.mark.slow
    def test_funnel_2d_preset_end_to_end(self, tmp_path):
        path = tmp_path / "funnel_2d.json"
        path.write_text(json.dumps(presets.build_manifest("funnel_2d")))
        out = tmp_path / "out"
        assert main(["run", "--manifest", str(path), "--out", str(out)]) == 0
        rows = (out / "trajectory.csv").read_text().splitlines()
        assert len(rows) == 1 + 2000
        stats_lines = (out / "metrics.csv").read_text().splitlines()
        assert stats_lines[0] == "iteration,tv,mean_0,var_0"
        final = stats_lines[-1].split(",")
        assert abs(float(final[2])) <= 0.5
        assert 6.0 <= float(final[3]) <= 12.0


class TestDarcyRunAndPlotdata:
    def test_darcy_threads_pool_is_deterministic(self, tmp_path):
        manifest = presets.build_manifest("darcy_desk")
        manifest["target"].update({"n": 20, "dim": 8})
        manifest["config"].update({"n_iterations": 4, "n_samples": 8})
        manifest["init"]["K"] = 2
        manifest["metrics"] = {"which": [], "every": 0}
        path = tmp_path / "d.json"
        path.write_text(json.dumps(manifest))
        payloads = []
        for tag, threads in (("t1", "1"), ("t2", "2")):
            out = tmp_path / tag
            assert main(["run", "--manifest", str(path), "--out", str(out),
                         "--threads", threads]) == 0
            payloads.append((out / "trajectory.csv").read_bytes())
        assert payloads[0] == payloads[1]

    def test_small_darcy_run(self, tmp_path):
        manifest = presets.build_manifest("darcy_desk")
        manifest["target"].update({"n": 20, "dim": 8})
        manifest["config"].update({"n_iterations": 5, "n_samples": 8})
        manifest["init"]["K"] = 3
        manifest["metrics"] = {"which": ["darcy"], "every": 5}
        path = tmp_path / "d.json"
        path.write_text(json.dumps(manifest))
        out = tmp_path / "out"
        assert main(["run", "--manifest", str(path), "--out", str(out)]) == 0
        assert (out / "problem.json").exists()
        assert (out / "metrics.csv").read_text().splitlines()[0] == "iteration,median_misfit"
        assert main(["plotdata", "--run", str(out), "--which", "darcy_fields"]) == 0
        assert (out / "field_truth.tsv").exists()
        assert (out / "field_mirror.tsv").exists()
        assert (out / "mode_groups.csv").exists()
        grid = metrics.load_grid(out / "field_truth.tsv")
        assert grid.values.shape == (21, 21)
