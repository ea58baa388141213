import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from vortexliouville.cli import main
from vortexliouville.io import ConfigError, RunConfig, config_from_manifest, manifest, to_jsonable


def run_cli(tmp_path, *args):
    return main([*args, "--out", str(tmp_path / "out")])


def read_manifest(tmp_path):
    return json.loads((tmp_path / "out" / "manifest.json").read_text())


def test_config_round_trip():
    cfg = RunConfig("simulate", geometry="sphere", intensities=[1.0, -1.0],
                    positions=[[0, 0, 1], [1, 0, 0]], seed=7)
    again = config_from_manifest(json.loads(json.dumps(manifest(cfg, {}, []))))
    assert again == cfg


def test_unknown_field_named():
    with pytest.raises(ConfigError) as err:
        RunConfig.from_dict({"subcommand": "simulate", "temperature": 1})
    assert err.value.field == "temperature"


def test_to_jsonable_handles_numpy_and_complex():
    d = to_jsonable({"a": np.arange(2), "b": 1 + 2j, "c": np.bool_(True), "d": np.float32(0.5)})
    assert d == {"a": [0, 1], "b": {"re": 1.0, "im": 2.0}, "c": True, "d": 0.5}


def test_selftest_exit_zero(tmp_path, capsys):
    assert run_cli(tmp_path, "kernels-selftest") == 0
    assert all(read_manifest(tmp_path)["results"]["checks"].values())


@pytest.mark.parametrize("args, field", [
    (["collision-tail", "--intensities", "[1, -1]"], "seed"),
    (["simulate", "--intensities", "[1, 1]", "--positions", "[[0, 0]]"], "positions"),
    (["simulate", "--intensities", "[1, 1]", "--positions", "[[0, 0], [1, 0]]", "--t", "-1"], "t"),
    (["simulate", "--geometry", "klein", "--intensities", "[1]"], "geometry"),
    (["simulate", "--intensities", "[1]", "--positions", "[[0, 0]]", "--rel-tol", "1"], "rel_tol"),
])
def test_config_errors_exit_one(tmp_path, capsys, args, field):
    assert run_cli(tmp_path, *args) == 1
    assert field in capsys.readouterr().err


def test_bad_config_file(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"geometry": "torus", "shots": 3}))
    assert run_cli(tmp_path, "simulate", "--config", str(path)) == 1
    assert "shots" in capsys.readouterr().err


def test_flags_override_config(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"geometry": "plane", "intensities": [1.0, 1.0],
                                "positions": [[0.5, 0.0], [-0.5, 0.0]], "t": 5.0}))
    assert run_cli(tmp_path, "simulate", "--config", str(path), "--t", "0.25") == 0
    m = read_manifest(tmp_path)
    assert m["config"]["t"] == 0.25 and m["results"]["t_end"] == 0.25


def test_simulate_csv_matches_rotation(tmp_path, capsys):
    period = 2 * np.pi**2
    assert run_cli(tmp_path, "simulate", "--geometry", "plane", "--intensities", "[1, 1]",
                   "--positions", "[[0.5, 0], [-0.5, 0]]", "--t", str(period)) == 0
    with open(tmp_path / "out" / "trajectory.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0])[:5] == ["t", "x_1_1", "x_1_2", "x_2_1", "x_2_2"]
    assert list(rows[0])[-3:] == ["min_dist", "H", "jac_det"]
    for r in rows:
        theta = float(r["t"]) / np.pi
        assert float(r["x_1_1"]) == pytest.approx(0.5 * np.cos(theta), abs=1e-8)
        assert float(r["x_1_2"]) == pytest.approx(0.5 * np.sin(theta), abs=1e-8)
        assert float(r["min_dist"]) == pytest.approx(1.0, abs=1e-9)
        assert float(r["jac_det"]) == pytest.approx(1.0, abs=1e-8)
    assert float(rows[-1]["t"]) == pytest.approx(period)


def test_variance_identity_cli(tmp_path, capsys):
    assert run_cli(tmp_path, "variance-identity", "--n-vortices", "3", "--n-samples", "20000",
                   "--seed", "5") == 0
    res = read_manifest(tmp_path)["results"]
    assert res["passed"] and res["hphi_norm2"] > 0


def test_measure_preservation_cli(tmp_path, capsys):
    assert run_cli(tmp_path, "measure-preservation", "--intensities", "[1, -1, 1]", "--t", "0.5",
                   "--epsilon", "0.05", "--seed", "3") == 0
    assert read_manifest(tmp_path)["files"] == ["manifest.json"]


def test_same_seed_same_manifest(tmp_path, capsys):
    args = ["collision-tail", "--intensities", "[1, -1, 1]", "--n-samples", "200", "--t", "0.5",
            "--seed", "11"]
    run_cli(tmp_path / "a", *args)
    run_cli(tmp_path / "b", *args)
    a = json.loads((tmp_path / "a" / "out" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "out" / "manifest.json").read_text())
    assert a["results"] == b["results"]
    assert (tmp_path / "a" / "out" / "collision_tail.csv").read_text() == \
        (tmp_path / "b" / "out" / "collision_tail.csv").read_text()


def test_console_script_writes_only_into_out(tmp_path):
    env = dict(os.environ)
    before = set(os.listdir(tmp_path))
    proc = subprocess.run([sys.executable, "-m", "vortexliouville.cli", "gibbs-sample",
                           "--geometry", "sphere", "--intensities", "[1, -1]", "--beta", "1",
                           "--n-samples", "50", "--burn-in-sweeps", "100", "--seed", "2",
                           "--out", "run"], cwd=tmp_path, env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert set(os.listdir(tmp_path)) - before == {"run"}
    assert sorted(os.listdir(tmp_path / "run")) == ["gibbs_samples.csv", "manifest.json"]
