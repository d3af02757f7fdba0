"""
End-to-end tests for the kitsim command line, driven through subprocess
like a user would run it
"""

import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from kitsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, dispatch, main
from kitsim.config import RunManifest
from kitsim.experiments import relaxation_config

PROJECT_ROOT = Path(__file__).parent.parent

SMALL_RUN = """\
model.rho = 0.4
sim.n_particles = 300
sim.tau_end = 0.3
sim.seed = 11
"""


def run_kitsim(*args, timeout=120):
    env = dict(os.environ)
    env["PYTHONPATH"] = str(PROJECT_ROOT) + os.pathsep + env.get("PYTHONPATH", "")
    return subprocess.run(
        [sys.executable, "-m", "kitsim", *map(str, args)],
        cwd=PROJECT_ROOT,
        env=env,
        capture_output=True,
        text=True,
        timeout=timeout,
    )


@pytest.fixture
def config(tmp_path):
    def write(text: str = SMALL_RUN, name: str = "run.cfg") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path
    return write


def data_lines(path: Path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


class TestSimulate:
    def test_writes_moments_and_manifest(self, config, tmp_path):
        out = tmp_path / "out"
        result = run_kitsim("simulate", "--config", config(), "--out", out)
        assert result.returncode == EXIT_OK, result.stderr
        lines = data_lines(out / "moments.csv")
        assert lines[0] == "tau,V,E,variance"
        assert len(lines) == 1 + 4  # steps 0, 10, 20, 30
        assert (out / "manifest.cfg").exists()
        assert RunManifest.load(out / "manifest.cfg").seed == 11

    def test_provenance_header(self, config, tmp_path):
        out = tmp_path / "out"
        run_kitsim("simulate", "--config", config(), "--out", out)
        header = [line for line in (out / "moments.csv").read_text().splitlines() if line.startswith("#")]
        assert "# sim.seed = 11" in header
        assert "# model.rho = 0.4" in header
        assert any(line.startswith("# kitsim.version = ") for line in header)

    def test_seed_override(self, config, tmp_path):
        run_kitsim("simulate", "--config", config(), "--out", tmp_path / "a", "--seed", 12)
        run_kitsim("simulate", "--config", config(), "--out", tmp_path / "b")
        a = (tmp_path / "a" / "moments.csv").read_text()
        assert "# sim.seed = 12" in a
        assert data_lines(tmp_path / "a" / "moments.csv") != data_lines(tmp_path / "b" / "moments.csv")

    def test_reruns_are_byte_identical(self, config, tmp_path):
        for name in ("first", "second"):
            result = run_kitsim("simulate", "--config", config(), "--out", tmp_path / name)
            assert result.returncode == EXIT_OK, result.stderr
        first = (tmp_path / "first" / "moments.csv").read_bytes()
        assert first == (tmp_path / "second" / "moments.csv").read_bytes()

    def test_json_format(self, config, tmp_path):
        out = tmp_path / "out"
        result = run_kitsim("simulate", "--config", config(), "--out", out, "--format", "json")
        assert result.returncode == EXIT_OK, result.stderr
        document = json.loads((out / "moments.json").read_text())
        assert document["columns"] == ["tau", "V", "E", "variance"]
        assert document["metadata"]["sim.seed"] == "11"


class TestOtherCommands:
    def test_compare_writes_one_file_per_leg(self, config, tmp_path):
        out = tmp_path / "out"
        cfg = config(SMALL_RUN + "compare.nu0 = 0.1, 10\n")
        result = run_kitsim("compare", "--config", cfg, "--out", out)
        assert result.returncode == EXIT_OK, result.stderr
        names = sorted(p.name for p in out.glob("moments_*.csv"))
        assert names == ["moments_none.csv", "moments_variance_nu0=0.1.csv", "moments_variance_nu0=10.0.csv"]

    def test_compare_uses_configured_desired_speed(self, config, tmp_path):
        out = tmp_path / "out"
        cfg = config(
            "model.rho = 0.6\ncontrol.kind = none\ncontrol.vd_mode = constant\ncontrol.vd = 0.9\n"
            "compare.kind = desired\ncompare.nu0 = 0.01\n"
            "sim.n_particles = 2000\nsim.tau_end = 0.5\nsim.seed = 11\n"
        )
        result = run_kitsim("compare", "--config", cfg, "--out", out)
        assert result.returncode == EXIT_OK, result.stderr
        path = out / "moments_desired_nu0=0.01.csv"
        assert "# control.vd = 0.9" in path.read_text().splitlines()
        final_V = float(data_lines(path)[-1].split(",")[1])
        assert abs(final_V - 0.9) < 0.03

    def test_sweep(self, config, tmp_path):
        out = tmp_path / "out"
        cfg = config(SMALL_RUN + "sweep.rho = 0, 0.5\nsweep.tau_end = 0.2\nsweep.strategies = none, variance:0.1\n")
        result = run_kitsim("sweep", "--config", cfg, "--out", out)
        assert result.returncode == EXIT_OK, result.stderr
        lines = data_lines(out / "diagram.csv")
        assert lines[0] == "rho,strategy,nu0,V,flux,variance"
        assert [line.split(",")[:2] for line in lines[1:]] == [
            ["0", "none"], ["0", "variance"], ["0.5", "none"], ["0.5", "variance"],
        ]

    def test_contours(self, config, tmp_path):
        out = tmp_path / "out"
        cfg = config(SMALL_RUN + "contours.n_bins = 5\ncontours.tau_grid = 0, 0.1, 0.2\n")
        result = run_kitsim("contours", "--config", cfg, "--out", out)
        assert result.returncode == EXIT_OK, result.stderr
        lines = data_lines(out / "contours.csv")
        assert lines[0] == "tau,bin_center,density"
        assert len(lines) == 1 + 3 * 5

    def test_relax_check_passes(self, config, tmp_path):
        out = tmp_path / "out"
        cfg = config(
            "model.rho = 0.6\ncontrol.kind = desired\ncontrol.nu0 = 0.1\ncontrol.vd_mode = constant\n"
            "control.vd = 0.4\ninit.kind = dirac\ninit.v0 = 1.0\nscaling.epsilon = 0.001\n"
            "sim.n_particles = 100\nsim.tau_end = 5\n"
        )
        result = run_kitsim("relax-check", "--config", cfg, "--out", out)
        assert result.returncode == EXIT_OK, result.stderr
        assert data_lines(out / "relax.csv")[0] == "tau,V_measured,V_closed_form,V_ode,rel_error"
        effective = relaxation_config(v0=1.0, vd=0.4, rho=0.6, nu0=0.1, epsilon=0.001, tau_end=5.0)
        header = [line for line in (out / "relax.csv").read_text().splitlines() if line.startswith("#")]
        assert f"# scaling.dtau = {effective.scaling.dtau!r}" in header
        assert f"# sim.sample_stride = {effective.sample_stride}" in header

    def test_relax_check_needs_desired_dirac_setup(self, config, tmp_path):
        result = run_kitsim("relax-check", "--config", config(), "--out", tmp_path / "out")
        assert result.returncode == EXIT_CONFIG
        assert "relax-check needs" in result.stderr


class TestErrors:
    def test_unknown_command(self, config, tmp_path):
        result = run_kitsim("teleport", "--config", config(), "--out", tmp_path)
        assert result.returncode == EXIT_CONFIG
        assert "usage:" in result.stderr

    def test_missing_config_flag(self):
        result = run_kitsim("simulate")
        assert result.returncode == EXIT_CONFIG
        assert "--config" in result.stderr

    def test_schema_error_names_key(self, config, tmp_path):
        cfg = config("model.rho = 0.3\ncontrol.kind = variance\n")
        result = run_kitsim("simulate", "--config", cfg, "--out", tmp_path / "out")
        assert result.returncode == EXIT_CONFIG
        assert "control.nu0" in result.stderr

    def test_missing_config_file(self, tmp_path):
        result = run_kitsim("simulate", "--config", tmp_path / "absent.cfg")
        assert result.returncode == EXIT_CONFIG
        assert "cannot read" in result.stderr


class TestInProcess:
    def test_main_returns_exit_code(self, config, tmp_path):
        assert main(["simulate", "--config", str(config()), "--out", str(tmp_path / "out")]) == EXIT_OK
        assert main(["bogus", "--config", str(config())]) == EXIT_CONFIG

    def test_failing_sweep_point_exits_two(self, config, tmp_path, monkeypatch, capsys):
        manifest = RunManifest.load(config(SMALL_RUN + "sweep.rho = 0.2, 0.5\nsweep.tau_end = 0.1\n"))

        def explode(cfg, snapshot_taus=None):
            if cfg.rho == 0.5:
                raise FloatingPointError("overflow")
            from kitsim.engine import run
            return run(cfg, snapshot_taus)

        monkeypatch.setattr("kitsim.experiments.run", explode)
        assert dispatch("sweep", manifest, tmp_path / "out") == EXIT_RUNTIME
        assert "rho=0.5" in capsys.readouterr().err

    def test_bad_sweep_strategy_is_a_config_error(self, config, tmp_path, capsys):
        cfg = config(SMALL_RUN + "sweep.strategies = none:abc\n")
        assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        assert "sweep.strategies" in capsys.readouterr().err

    def test_unknown_command_in_dispatch(self, config, tmp_path, capsys):
        manifest = RunManifest.load(config())
        assert dispatch("teleport", manifest, tmp_path / "out") == EXIT_CONFIG
        assert "usage:" in capsys.readouterr().err
