"""
Tests for the command-line interface.
"""
import csv
import json
from unittest.mock import patch

import numpy as np
import pytest

from oscfb.app import EXIT_CONFIG, EXIT_DIVERGED, EXIT_STABLE, EXIT_UNSTABLE, cli
from oscfb.physics.core import k_opt
from oscfb.data.schemas import TrajectoryStats
from oscfb.utils.config import settings


SEPARATED_FLAGS = [
    "--alpha-s", "0.1", "--eta-s", "0.16", "--alpha-f", "0.05", "--eta-f", "0.08",
    "--d-omega-f", "1", "--nu", "10", "--tau", "0.1",
]


def report_json(runner, *args):
    result = runner.invoke(cli, ["report", "--json", *args])
    return result, (json.loads(result.stdout) if result.stdout.strip() else None)


class TestReport:
    """Tests for the report command."""

    def test_default_point_is_stable(self, runner):
        """Test that the default matched point exits 0 with a table."""
        result = runner.invoke(cli, ["report"])
        assert result.exit_code == EXIT_STABLE
        assert "status" in result.stdout
        assert "stable" in result.stdout

    def test_matched_json(self, runner):
        """Test the JSON payload of a matched point."""
        result, payload = report_json(runner)
        assert result.exit_code == EXIT_STABLE
        assert payload["report"]["energy_ratio"] == pytest.approx(1.0, rel=1e-9)
        assert payload["report"]["baseline"] == "system"
        assert payload["rate_vars"]["system"] == pytest.approx(0.0799, rel=1e-3)
        assert payload["zero_mean"]["k_excluded"] is None
        assert payload["phase_lag_deg"] == 0.0
        assert payload["full_delay"] is None

    def test_negative_gain_is_unstable(self, runner):
        """Test that anti-damping exits 1."""
        result, payload = report_json(runner, "--k", "-1")
        assert result.exit_code == EXIT_UNSTABLE
        assert payload["report"]["status"] == "unstable"
        assert payload["convergence_time"] is None

    def test_exact_delay_verdict(self, runner):
        """Test that a delayed point also reports the exact-delay classification."""
        _, payload = report_json(runner, "--alpha", "1", "--eta", "1", "--tau", "1.5")
        assert payload["full_delay"]["status"] == "unstable"
        assert payload["full_delay"]["delay_model"] == "full_delay"
        assert payload["full_delay"]["max_re_lambda"] > 0

    def test_invalid_parameter_exits_2(self, runner):
        """Test that an out-of-range efficiency is a configuration error."""
        result = runner.invoke(cli, ["report", "--eta", "1.5"])
        assert result.exit_code == EXIT_CONFIG
        assert "efficiency out of range" in result.output

    def test_separated_scenario_flags(self, runner):
        """Test the imperfect-filter BEC energy penalty from flags."""
        result, payload = report_json(runner, *SEPARATED_FLAGS)
        assert result.exit_code == EXIT_STABLE
        assert payload["report"]["energy_ratio"] == pytest.approx(4.2, rel=0.15)
        assert payload["report"]["delay_model"] == "first_order"
        assert payload["params"]["k"] == pytest.approx(k_opt(0.05, 0.08, 1.0))

    def test_manifest_reproduces_report(self, runner, tmp_path):
        """Test that a run manifest fed back as --config gives the same report."""
        out = tmp_path / "report.json"
        first = runner.invoke(cli, ["report", "--json", "--output", str(out), *SEPARATED_FLAGS])
        assert first.exit_code == EXIT_STABLE
        manifest = tmp_path / "report.json.manifest.json"
        assert manifest.exists()
        assert json.loads(manifest.read_text())["command"] == "report"

        _, again = report_json(runner, "--config", str(manifest))
        assert again == json.loads(first.stdout)
        assert json.loads(out.read_text()) == again

    def test_flags_override_config(self, runner, tmp_path):
        """Test that a slice flag replaces per-side values from the config file."""
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"params": {"alpha_s": 0.5, "alpha_f": 0.2}}))
        _, payload = report_json(runner, "--config", str(config), "--alpha", "0.3")
        assert payload["params"]["alpha_s"] == payload["params"]["alpha_f"] == 0.3

    @pytest.mark.parametrize("content", ["{", "[1, 2]", '{"params": {"gamma": 1}}'])
    def test_bad_config_exits_2(self, runner, tmp_path, content):
        """Test that malformed or unknown configuration exits 2."""
        config = tmp_path / "config.json"
        config.write_text(content)
        result = runner.invoke(cli, ["report", "--config", str(config)])
        assert result.exit_code == EXIT_CONFIG


class TestSweep:
    """Tests for the sweep command."""

    def test_empty_axes_exit_2(self, runner, tmp_path):
        """Test that a spec without axes is rejected."""
        spec = tmp_path / "empty.json"
        spec.write_text(json.dumps({"axes": []}))
        result = runner.invoke(cli, ["sweep", str(spec), "--out-dir", str(tmp_path)])
        assert result.exit_code == EXIT_CONFIG

    def test_writes_csv_json_and_manifest(self, runner, tmp_path):
        """Test the sweep outputs."""
        spec = tmp_path / "nu.json"
        spec.write_text(json.dumps({
            "axes": [{"name": "nu", "min": 0, "max": 10, "n_points": 3}],
            "fixed": {"alpha": 1.0, "eta": 1.0},
        }))
        result = runner.invoke(cli, ["sweep", str(spec), "--out-dir", str(tmp_path / "out"), "--workers", "1"])
        assert result.exit_code == EXIT_STABLE

        with (tmp_path / "out" / "nu.csv").open() as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["nu", "stable", "energy_ratio", "rate_ratio", "max_re_lambda", "final_ratio", "error"]
        assert len(rows) == 4
        assert all(row[1] == "true" for row in rows[1:])
        assert (tmp_path / "out" / "nu.json").exists()
        manifest = json.loads((tmp_path / "out" / "nu.csv.manifest.json").read_text())
        assert manifest["method"] == "analytic"
        assert manifest["config"]["axes"][0]["name"] == "nu"

    def test_boundary(self, runner, tmp_path):
        """Test that --boundary brackets the gain transition."""
        spec = tmp_path / "k.json"
        spec.write_text(json.dumps({
            "axes": [{"name": "k", "min": -1, "max": 1, "n_points": 11}],
            "fixed": {"alpha": 1.0, "eta": 1.0},
        }))
        result = runner.invoke(cli, ["sweep", str(spec), "--out-dir", str(tmp_path), "--boundary", "0.01"])
        assert result.exit_code == EXIT_STABLE
        edge = json.loads((tmp_path / "k.boundary.json").read_text())
        assert edge["lower"] == pytest.approx(0.0, abs=1e-12)
        assert edge["upper"] <= 0.01

    def test_manifest_reruns_sweep(self, runner, tmp_path):
        """Test that a sweep manifest is accepted as the spec file of a new run."""
        spec = tmp_path / "nu.json"
        spec.write_text(json.dumps({
            "axes": [{"name": "nu", "min": 0, "max": 10, "n_points": 3}],
            "fixed": {"alpha": 1.0, "eta": 1.0},
        }))
        assert runner.invoke(cli, ["sweep", str(spec), "--out-dir", str(tmp_path / "a")]).exit_code == EXIT_STABLE
        manifest = tmp_path / "a" / "nu.csv.manifest.json"
        result = runner.invoke(cli, ["sweep", str(manifest), "--out-dir", str(tmp_path / "b")])
        assert result.exit_code == EXIT_STABLE
        first = (tmp_path / "a" / "nu.csv").read_text()
        [again] = (tmp_path / "b").glob("*.csv")
        assert again.read_text() == first

    def test_unclassifiable_boundary_point_exits_2(self, runner, tmp_path):
        """Test that a grid the simulation rejects fails the boundary search."""
        spec = tmp_path / "tau.json"
        spec.write_text(json.dumps({
            "axes": [{"name": "tau", "min": 0.105, "max": 0.205, "n_points": 2}],
            "fixed": {"alpha": 1.0, "eta": 1.0},
            "method": "numeric",
            "sim": {"dt": 0.01, "t_final": 1.0, "n_paths": 4},
        }))
        result = runner.invoke(cli, ["sweep", str(spec), "--out-dir", str(tmp_path), "--boundary", "0.01"])
        assert result.exit_code == EXIT_CONFIG
        assert "not a multiple of dt" in result.stderr
        manifest = json.loads((tmp_path / "tau.csv.manifest.json").read_text())
        assert "tau=0.105" in manifest["metadata"]["boundary_error"]
        assert not (tmp_path / "tau.boundary.json").exists()

    def test_boundary_without_transition_exits_1(self, runner, tmp_path):
        """Test that a uniformly stable axis exits 1 under --boundary."""
        spec = tmp_path / "nu.json"
        spec.write_text(json.dumps({"axes": [{"name": "nu", "min": 0, "max": 1, "n_points": 2}]}))
        result = runner.invoke(cli, ["sweep", str(spec), "--out-dir", str(tmp_path), "--boundary", "0.01"])
        assert result.exit_code == EXIT_UNSTABLE


class TestSimulate:
    """Tests for the simulate command."""

    def args(self, out, *extra):
        return [
            "simulate", "--alpha", "1", "--eta", "1", "--dt", "0.01", "--t-final", "2",
            "--paths", "32", "--record-stride", "20", "--workers", "1", "--out", str(out), *extra,
        ]

    def test_same_seed_same_csv(self, runner, tmp_path):
        """Test that a fixed seed reproduces the output byte for byte."""
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert runner.invoke(cli, self.args(a, "--seed", "5")).exit_code == 0
        assert runner.invoke(cli, self.args(b, "--seed", "5")).exit_code == 0
        assert a.read_text() == b.read_text()
        header = a.read_text().splitlines()[0]
        assert header == "t,mean_energy,std_error"

    def test_manifest_metadata(self, runner, tmp_path):
        """Test that the manifest records the analytic comparison."""
        out = tmp_path / "sim.csv"
        result = runner.invoke(cli, self.args(out, "--x0", "1,0,1,0"))
        assert result.exit_code == 0
        manifest = json.loads((tmp_path / "sim.csv.manifest.json").read_text())
        assert manifest["metadata"]["n_diverged"] == 0
        assert manifest["metadata"]["n_paths"] == 32
        assert manifest["metadata"]["final_energy"] > 0
        assert manifest["metadata"]["e_inf_analytic"] > 0
        assert manifest["config"]["x0"]["x_rho"] == 1.0
        assert manifest["seed"] == 0

    def test_bad_initial_means_exit_2(self, runner, tmp_path):
        """Test that --x0 needs four numbers."""
        result = runner.invoke(cli, self.args(tmp_path / "x.csv", "--x0", "1,2"))
        assert result.exit_code == EXIT_CONFIG

    def test_misaligned_delay_exits_2(self, runner, tmp_path):
        """Test that a delay off the time grid is a configuration error."""
        result = runner.invoke(cli, self.args(tmp_path / "x.csv", "--tau", "0.015"))
        assert result.exit_code == EXIT_CONFIG

    def test_divergence_exits_3(self, runner, tmp_path):
        """Test that --assert-stable reports diverged paths."""
        args = self.args(tmp_path / "d.csv", "--k", "-1", "--assert-stable")
        args[args.index("--t-final") + 1] = "60"
        result = runner.invoke(cli, args)
        assert result.exit_code == EXIT_DIVERGED


class TestScenario:
    """Tests for the scenario command."""

    def test_dark_cavity_exits_2(self, runner, tmp_path):
        """Test that a zero photon number gives no measurement."""
        result = runner.invoke(cli, ["scenario", "--nbar", "0", "--paths", "0", "--out-dir", str(tmp_path)])
        assert result.exit_code == EXIT_CONFIG

    def test_analytic_summary(self, runner, tmp_path):
        """Test the analytic comparison of identical and separated cases."""
        result = runner.invoke(cli, ["scenario", "--paths", "0", "--out-dir", str(tmp_path)])
        assert result.exit_code == EXIT_STABLE
        assert "separated" in result.stdout
        summary = json.loads((tmp_path / "scenario.json").read_text())
        assert summary["alpha_s_physical"] == pytest.approx(0.53, rel=0.03)
        separated = summary["cases"]["separated"]["report"]
        assert separated["energy_ratio"] == pytest.approx(4.2, rel=0.15)
        assert summary["cases"]["identical"]["report"]["energy_ratio"] == pytest.approx(1.0)
        assert (tmp_path / "scenario.json.manifest.json").exists()

    def test_matched_filter(self, runner, tmp_path):
        """Test that --matched-filter removes the penalty."""
        result = runner.invoke(cli, ["scenario", "--paths", "0", "--matched-filter", "--out-dir", str(tmp_path)])
        assert result.exit_code == EXIT_STABLE
        summary = json.loads((tmp_path / "scenario.json").read_text())
        assert summary["cases"]["separated"]["report"]["energy_ratio"] == pytest.approx(1.0)

    def test_physical_alpha(self, runner, tmp_path):
        """Test that --alpha-s-source physical uses the computed strength."""
        result = runner.invoke(cli, ["scenario", "--paths", "0", "--alpha-s-source", "physical", "--out-dir", str(tmp_path)])
        summary = json.loads((tmp_path / "scenario.json").read_text())
        assert result.exit_code in (EXIT_STABLE, EXIT_UNSTABLE)
        assert summary["cases"]["separated"]["params"]["alpha_s"] == pytest.approx(summary["alpha_s_physical"])

    def test_diverged_simulation_exits_3(self, runner, tmp_path):
        """Test that --assert-stable turns a diverged run into exit 3."""
        times = np.array([0.0, 1.0])
        fake = TrajectoryStats(
            times=times,
            mean_energy=np.array([1.0, 1e12]),
            std_error=np.zeros(2),
            second_moments=np.zeros((2, 10)),
            mean_state=np.zeros((2, 4)),
            mean_state_se=np.zeros((2, 4)),
            variance_energy=np.ones(2),
            n_paths=10,
            n_diverged=1,
        )
        with patch("oscfb.app.simulate_means", return_value=fake) as sim:
            result = runner.invoke(cli, [
                "scenario", "--paths", "10", "--assert-stable", "--out-dir", str(tmp_path),
            ])
        assert sim.call_count == 2
        assert result.exit_code == EXIT_DIVERGED
        assert (tmp_path / "scenario_separated.csv").exists()


def test_version(runner):
    """Test the version flag."""
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert settings.VERSION in result.stdout
