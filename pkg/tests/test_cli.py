import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from confbend.cli import main
from confbend.io import read_field


def report(out: Path, command: str) -> dict:
    return json.loads((out / f"{command}_report.json").read_text())


def write_cfg(tmp_path, data) -> str:
    p = tmp_path / "job.json"
    p.write_text(json.dumps(data))
    return str(p)


def test_cones_command(tmp_path):
    assert main(["cones", "--n", "3", "--k", "2", "--out", str(tmp_path)]) == 0
    rep = report(tmp_path, "cones")
    assert rep["results"]["cone"]["kappa"] == 1
    assert rep["status"] == "ok"
    assert "numpy" in rep["versions"]
    assert rep["outputs"] == []


def test_malformed_config_exits_2_without_outputs(tmp_path):
    out = tmp_path / "out"
    cfg = write_cfg(tmp_path, {"command": "background", "grid": [8, 8, 8], "bogus": 1})
    assert main(["background", "--config", cfg, "--out", str(out)]) == 2
    assert not out.exists()
    cfg = write_cfg(tmp_path, {"command": "seed", "grid": [8, 8, 8], "params": {"k": 2, "alpha": 3}})
    assert main(["seed", "--config", cfg, "--out", str(out)]) == 2
    assert main(["cones", "--n", "3", "--k", "5", "--out", str(out)]) == 2
    assert main(["verify", "lemma23", "--samples", "5", "--out", str(out)]) == 2
    assert main(["frobnicate"]) == 2
    assert not out.exists()


def test_command_mismatch_is_schema_error(tmp_path):
    cfg = write_cfg(tmp_path, {"command": "solve"})
    assert main(["seed", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_background_writes_metric(tmp_path):
    cfg = write_cfg(tmp_path, {
        "command": "background", "grid": [8, 8, 8],
        "background": {"kind": "conformally_flat", "phi": "sin(x1)/10"},
        "params": {"k": 1},
    })
    assert main(["background", "--config", cfg, "--out", str(tmp_path)]) == 0
    rep = report(tmp_path, "background")
    assert rep["results"]["classification"]["class"] in ("inadmissible", "weak_with_strict_point", "strict")
    field = read_field(tmp_path / "metric.nfld")
    assert field.values.shape == (8, 8, 8, 6)
    assert np.allclose(field.values[0, 0, 0, 0], 1.0)


def test_curvature_report(tmp_path):
    cfg = write_cfg(tmp_path, {"command": "curvature", "grid": [32, 8, 8],
                                "background": {"kind": "warped", "K": 3.0}})
    assert main(["curvature", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert report(tmp_path, "curvature")["results"]["scalar_curvature"]["max"] < 0


def test_seed_numeric_failure_exit_3(tmp_path):
    cfg = write_cfg(tmp_path, {
        "command": "seed", "grid": [8, 8, 8], "params": {"k": 2},
        "A": {"kind": "scaled", "expr": "2"},
        "seed_cfg": {"p0": [math.pi / 2] * 3, "r0": 3.1, "N_schedule": [1.0], "delta": 1e6},
    })
    out = tmp_path / "o"
    assert main(["seed", "--config", cfg, "--out", str(out)]) == 3
    rep = report(out, "seed")
    assert rep["outputs"] == []
    assert "worst" in rep["results"]["diagnostics"]
    assert not (out / "seed.nfld").exists()


def test_seed_success_writes_field(tmp_path):
    cfg = write_cfg(tmp_path, {
        "command": "seed", "grid": [8, 8, 8], "params": {"k": 2},
        "A": {"kind": "scaled", "expr": "2"},
        "seed_cfg": {"p0": [math.pi / 2] * 3, "r0": 3.1},
    })
    assert main(["seed", "--config", cfg, "--out", str(tmp_path)]) == 0
    u = read_field(tmp_path / "seed.nfld").values
    assert np.all(u > 0)


def test_verify_suites(tmp_path):
    assert main(["verify", "theorem21", "--samples", "200", "--out", str(tmp_path)]) == 0
    assert report(tmp_path, "verify")["results"]["passed"]
    assert main(["verify", "lemma23", "--out", str(tmp_path)]) == 0
    assert report(tmp_path, "verify")["results"]["combinations"] == 20


def test_solve_from_config(tmp_path):
    cfg = Path(__file__).resolve().parents[1] / "configs" / "manufactured_solve.json"
    out = tmp_path / "solve"
    assert main(["solve", "--config", str(cfg), "--out", str(out), "--deterministic"]) == 0
    rep = report(out, "solve")
    assert all(rep["results"]["checks"].values())
    assert rep["deterministic"] is True
    trace = (out / "solve_trace.csv").read_text().splitlines()
    assert trace[0].startswith("newton_iter,residual")
    assert read_field(out / "solution.nfld").values.shape == (16, 16, 16)


def test_console_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "confbend.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "usage: confbend" in res.stdout
