"""Tests for the command-line driver."""

from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from nlmaxwell import __version__
from nlmaxwell.cli import (
    EXIT_CERTIFICATE,
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    THREADS_ENV,
    _threads,
    main,
    run,
)
from nlmaxwell.errors import ConfigError
from nlmaxwell.mesh import BoxGrid, read_field

CONFIGS = {
    "eig": "[domain]\nextents = pi pi pi\nresolution = 8 8 8\n[materials]\nV = 1\n[solver]\nn_eigs = 6\n",
    "cube": ("[domain]\nextents = pi pi pi\nresolution = 6 6 6\n[materials]\nV = 0.5\n"
             "[nonlinearity]\nkind = kerr\nchi3 = 1\n[solver]\nstarts = 2\n"),
    "none": ("[domain]\nextents = pi pi pi\nresolution = 6 6 6\n[materials]\nV = 0.5\n"
             "[nonlinearity]\nkind = none\n[solver]\nstarts = 1\n"),
    "cq": "[nonlinearity]\nkind = cubic_quintic\nchi3 = 1\nchi5 = 1\n",
    "kerr": "[nonlinearity]\nkind = kerr\nchi3 = 1\n",
    "red": ("[nonlinearity]\nkind = kerr\nchi3 = 1\n[reduced]\nnr = 12\nnz = 16\nlambda = 0.5\n"
            "[solver]\nstarts = 2\n"),
    "orc": "[oracle]\nV = 2\nGamma = 1\np = 4\nresolutions = 16 32\n",
    "orc_bad": "[oracle]\nV = -2\nGamma = 1\np = 4\nresolutions = 8\n",
    "sweep": ("[nonlinearity]\nkind = kerr\nchi3 = 1\n[reduced]\nnr = 8\nnz = 8\n[solver]\nstarts = 1\n"
              "[sweep]\nparameter = lambda\nvalues = -1 0 0.5\ncommand = reduce-solve\n"),
    "s2": ("[domain]\nextents = 2 2 2\nresolution = 6 6 6\n[materials]\nV = 0.5\n"
           "[nonlinearity]\nkind = kerr\nchi3 = 1\n[solver]\nsymmetry = S2\n"),
}


@pytest.fixture
def cfg(tmp_path):
    def make(name):
        p = tmp_path / f"{name}.ini"
        p.write_text(CONFIGS[name])
        return p
    return make


def _csv_rows(path):
    with open(path) as fh:
        first = fh.readline()
        assert first.startswith("# config_hash=")
        return list(csv.DictReader(fh))


class TestCommands:
    def test_eigs(self, cfg, tmp_path):
        code, man = run("eigs", cfg("eig"), str(tmp_path / "o"))
        assert code == EXIT_OK and man["outcome"] == "ok"
        rows = _csv_rows(tmp_path / "o" / "eigs.csv")
        lam = np.array([float(r["eigenvalue"]) for r in rows])
        np.testing.assert_allclose(lam[:3], 1.97443, atol=1e-4)
        np.testing.assert_allclose(lam[3:5], 2.96164, atol=1e-4)
        clusters = man["stages"][0]["clusters"]
        assert clusters[0]["multiplicity"] == 3

    def test_solve_and_field_dump(self, cfg, tmp_path):
        out = tmp_path / "o"
        code, man = run("solve", cfg("cube"), str(out))
        assert code == EXIT_OK
        for f in ("energies.csv", "energy_trace.csv", "field.edge", "manifest.json"):
            assert (out / f).exists()
        header, u = read_field(out / "field.edge")
        grid = BoxGrid((np.pi,) * 3, (6, 6, 6))
        assert u.shape == (grid.n_edges,)
        rows = _csv_rows(out / "energies.csv")
        assert all(float(r["residual_norm"]) <= 1e-7 for r in rows if r["converged"] == "1")

    def test_solve_rerun_deterministic(self, cfg, tmp_path):
        p = cfg("cube")
        _, m1 = run("solve", p, str(tmp_path / "a"))
        _, m2 = run("solve", p, str(tmp_path / "b"))
        e1 = [s for s in m1["stages"] if s["stage"] == "ground_state"][0]["energies"]
        e2 = [s for s in m2["stages"] if s["stage"] == "ground_state"][0]["energies"]
        assert e1 == e2
        assert m1["config_hash"] == m2["config_hash"]

    def test_reduce_solve(self, cfg, tmp_path):
        code, man = run("reduce-solve", cfg("red"), str(tmp_path / "o"))
        assert code == EXIT_OK
        rows = _csv_rows(tmp_path / "o" / "alpha_slice.csv")
        assert len(rows) == 13 * 17

    def test_oracle_check(self, cfg, tmp_path):
        code, _ = run("oracle-check", cfg("orc"), str(tmp_path / "o"))
        assert code == EXIT_OK
        res = json.loads((tmp_path / "o" / "oracle.json").read_text())
        assert res["identity_ok"] and res["curl_orders"][-1] >= 1.8

    def test_check_model_pass(self, cfg, tmp_path):
        code, man = run("check-model", cfg("kerr"), str(tmp_path / "o"))
        assert code == EXIT_OK

    def test_check_model_cubic_quintic_fails(self, cfg, tmp_path):
        code, man = run("check-model", cfg("cq"), str(tmp_path / "o"))
        assert code == EXIT_CERTIFICATE
        assert "F6" in man["message"]
        rep = json.loads((tmp_path / "o" / "check_model.json").read_text())
        assert not rep["checks"]["F6"]["passed"]
        assert rep["checks"]["F6"]["witness"] is not None

    def test_sweep(self, cfg, tmp_path):
        code, man = run("sweep", cfg("sweep"), str(tmp_path / "o"), threads=2)
        assert code == EXIT_OK
        rows = _csv_rows(tmp_path / "o" / "sweep.csv")
        vals = [float(r["value"]) for r in rows]
        assert vals[0] > vals[1] > vals[2]
        for i in range(3):
            assert (tmp_path / "o" / f"point_{i:03d}" / "manifest.json").exists()

    def test_sweep_threads_agree(self, cfg, tmp_path):
        p = cfg("sweep")
        run("sweep", p, str(tmp_path / "a"), threads=1)
        run("sweep", p, str(tmp_path / "b"), threads=3)
        a = [r["value"] for r in _csv_rows(tmp_path / "a" / "sweep.csv")]
        b = [r["value"] for r in _csv_rows(tmp_path / "b" / "sweep.csv")]
        assert a == b


class TestExitCodes:
    def test_missing_file(self, tmp_path):
        assert run("eigs", tmp_path / "none.ini")[0] == EXIT_CONFIG

    def test_unknown_command(self, cfg):
        assert run("explode", cfg("eig"))[0] == EXIT_CONFIG

    def test_missing_section(self, cfg, tmp_path):
        code, man = run("solve", cfg("eig"), str(tmp_path / "o"))
        assert code == EXIT_CONFIG and "nonlinearity" in man["message"]

    def test_s2_refused(self, cfg, tmp_path):
        assert run("solve", cfg("s2"), str(tmp_path / "o"))[0] == EXIT_CONFIG

    def test_oracle_sign(self, cfg, tmp_path):
        assert run("oracle-check", cfg("orc_bad"), str(tmp_path / "o"))[0] == EXIT_CONFIG

    def test_solver_failure(self, cfg, tmp_path):
        code, man = run("solve", cfg("none"), str(tmp_path / "o"))
        assert code == EXIT_SOLVER
        assert man["outcome"] == "solver_failure"

    def test_manifest_fields(self, cfg, tmp_path):
        _, man = run("eigs", cfg("eig"), str(tmp_path / "o"), seed=7)
        disk = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert disk["rng_seed"] == 7
        for key in ("config_hash", "tool_version", "command", "wall_time", "stages", "files"):
            assert key in disk
        assert disk["tool_version"] == __version__


class TestThreads:
    def test_env(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "3")
        assert _threads(None) == 3
        assert _threads(2) == 2

    def test_default(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert _threads(None) == 1

    def test_bad_env(self, monkeypatch, cfg):
        monkeypatch.setenv(THREADS_ENV, "many")
        with pytest.raises(ConfigError):
            _threads(None)
        assert run("eigs", cfg("eig"))[0] == EXIT_CONFIG


class TestMain:
    def test_main_prints_summary(self, cfg, tmp_path, capsys):
        code = main(["eigs", str(cfg("eig")), "-o", str(tmp_path / "o")])
        assert code == EXIT_OK
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["outcome"] == "ok"

    def test_version(self):
        out = subprocess.run([sys.executable, "-m", "nlmaxwell", "--version"], capture_output=True, text=True)
        assert out.returncode == 0 and __version__ in out.stdout

    def test_bad_argument(self):
        with pytest.raises(SystemExit) as exc:
            main(["eigs"])
        assert exc.value.code == 2
