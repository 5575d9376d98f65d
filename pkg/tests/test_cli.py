import json
import subprocess
import sys

import pytest

from plgs.cli import main, run

LIMIT = {"command": "limit-solve", "params": {"p": 1.5, "n": 2}, "checks": {"refinement": False}}
MINIMIZE = {
    "command": "minimize",
    "params": {"p": 1.5, "n": 2, "a-over-a-star": 0.5},
    "potential": {"kind": "radial_power", "q": 2},
    "grid": {"kind": "radial", "r-max": 6.0, "h": 0.02},
}


def write(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


class TestExitCodes:
    def test_limit_solve_succeeds(self, tmp_path):
        out = tmp_path / "out"
        assert main(["run", str(write(tmp_path, LIMIT)), "--out", str(out)]) == 0
        m = manifest(out)
        assert m["exit_status"] == 0
        assert m["scalars"]["a_star"] == pytest.approx(10.13997978380916, rel=1e-9)
        assert all(c["passed"] for c in m["checks"].values())
        assert sorted(m["files"]) == ["Q.csv", "plots/Q.svg"]
        assert (out / "Q.csv").read_text().startswith("r,Q\n")

    def test_unknown_key_is_named(self, tmp_path, capsys):
        cfg = {**LIMIT, "params": {"p": 1.5, "n": 2, "alpah": 1}}
        assert run(write(tmp_path, cfg), tmp_path / "o") == 1
        assert "alpah" in capsys.readouterr().err

    def test_unknown_nested_key(self, tmp_path, capsys):
        cfg = {**MINIMIZE, "grid": {**MINIMIZE["grid"], "r_max": 5}}
        assert run(write(tmp_path, cfg), tmp_path / "o") == 1
        assert "r_max" in capsys.readouterr().err

    def test_supercritical_exponent(self, tmp_path, capsys):
        cfg = {**LIMIT, "params": {"p": 3, "n": 2}}
        assert run(write(tmp_path, cfg), tmp_path / "o") == 1
        assert "p must be < n" in capsys.readouterr().err

    def test_missing_and_malformed_files(self, tmp_path):
        assert run(tmp_path / "nope.json", tmp_path / "o") == 1
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert run(bad, tmp_path / "o") == 1

    def test_conflicting_couplings(self, tmp_path, capsys):
        cfg = {**MINIMIZE, "params": {**MINIMIZE["params"], "a": 1.0}}
        assert run(write(tmp_path, cfg), tmp_path / "o") == 1
        assert "either" in capsys.readouterr().err

    def test_failed_check_exits_2(self, tmp_path, capsys):
        cfg = {**LIMIT, "checks": {"refinement": False, "tol-pohozaev": 1e-12}}
        out = tmp_path / "o"
        assert run(write(tmp_path, cfg), out) == 2
        assert "pohozaev" in capsys.readouterr().err
        m = manifest(out)
        assert m["exit_status"] == 2 and not m["checks"]["pohozaev"]["passed"]

    def test_numerical_failure_exits_2(self, tmp_path):
        cfg = {**MINIMIZE, "solver": {"max-iters": 2, "newton": False}}
        out = tmp_path / "o"
        assert run(write(tmp_path, cfg), out) == 2
        assert not manifest(out)["checks"]["converged"]["passed"]

    def test_bad_divergence_probe(self, tmp_path):
        cfg = {**MINIMIZE, "command": "sweep", "params": {"p": 1.5, "n": 2},
               "schedule": {"a-over-a-star": [0.5], "divergence-probe": [0.5]}}
        assert run(write(tmp_path, cfg), tmp_path / "o") == 1


class TestOutputs:
    def test_output_root_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PLGS_OUTPUT_ROOT", str(tmp_path / "root"))
        assert run(write(tmp_path, LIMIT, "myrun.json")) == 0
        assert (tmp_path / "root" / "myrun" / "manifest.json").exists()

    def test_minimize_and_determinism(self, tmp_path):
        cfg = write(tmp_path, MINIMIZE)
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(cfg, a) == 0 and run(cfg, b) == 0
        for name in ("u_a.csv", "plots/u_a.svg"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert manifest(a)["scalars"] == manifest(b)["scalars"]
        assert b"\r" not in (a / "u_a.csv").read_bytes()
        assert set(manifest(a)["checks"]) == {"converged", "lower_bound", "multiplier_routes"}

    def test_divergence_above_a_star(self, tmp_path):
        cfg = {**MINIMIZE, "params": {"p": 1.5, "n": 2, "a-over-a-star": 1.05}}
        out = tmp_path / "o"
        assert run(write(tmp_path, cfg), out) == 0
        assert manifest(out)["scalars"]["diverged"] is True

    def test_sweep_with_probe(self, tmp_path):
        cfg = {**MINIMIZE, "command": "sweep", "params": {"p": 1.5, "n": 2},
               "schedule": {"a-over-a-star": [0.3, 0.6], "divergence-probe": [1.1]}}
        out = tmp_path / "o"
        assert run(write(tmp_path, cfg), out) == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0].startswith("a,gap,e_a,eps_a,mu_a")
        assert len(lines) == 3
        assert manifest(out)["checks"]["divergence_probe_0"]["passed"]

    def test_gn_ensemble_is_seeded(self, tmp_path):
        cfg = {**LIMIT, "gn": {"count": 4}}
        path = write(tmp_path, cfg)
        assert run(path, tmp_path / "a", seed=5) == 0
        assert run(path, tmp_path / "b", seed=5, threads=2) == 0
        assert run(path, tmp_path / "c", seed=6) == 0
        rep = [(tmp_path / d / "gn_report.csv").read_bytes() for d in "abc"]
        assert rep[0] == rep[1] != rep[2]
        assert manifest(tmp_path / "a")["seed"] == 5

    def test_console_script(self, tmp_path):
        out = tmp_path / "o"
        proc = subprocess.run([sys.executable, "-m", "plgs.cli", "run", str(write(tmp_path, LIMIT)),
                               "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (out / "manifest.json").exists()

    def test_unresolved_planar_sweep_fails_cleanly(self, tmp_path):
        # eps_a is ~7h on this grid, below the 10h resolution rule, so no record is usable
        cfg = {**MINIMIZE, "command": "verify-asymptotics", "params": {"p": 1.5, "n": 2},
               "potential": {"kind": "multi_well", "wells": [{"x": [-1, 0], "q": 2}, {"x": [1, 0], "q": 4}]},
               "grid": {"kind": "cartesian", "half-width": 3.0, "nodes": 61, "center": [0, 0]},
               "schedule": {"a-over-a-star": [0.5, 0.6]}, "checks": {"laws": False}}
        out = tmp_path / "o"
        assert run(write(tmp_path, cfg), out) == 2
        m = manifest(out)
        assert m["scalars"]["Z"] == [1] and m["scalars"]["sweep_usable"] == 0
        assert "usable" in m["checks"]["site_selection"]["value"]
        assert not (out / "fits.csv").exists()
