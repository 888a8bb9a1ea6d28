import math

import numpy as np
import pandas as pd
import pytest

from channel.geometry import SPEED_OF_LIGHT
from channel.scenes import SLICE_GMT, SLICE_POINT, SLICE_UAV
from slam.io import read_dataset, read_ply
from slam.main import EXIT_NUMERICAL, EXIT_USAGE, main


def cli(*args: str) -> int:
    return main(["--no-telemetry", *args])


def vec(p) -> str:
    return ",".join(repr(float(v)) for v in p)


def slice_args():
    uav, gmt, p = np.array(SLICE_UAV), np.array(SLICE_GMT), np.array(SLICE_POINT)
    tau = (np.linalg.norm(gmt - p) + np.linalg.norm(p - uav)) / SPEED_OF_LIGHT
    phi = math.atan2(p[1] - uav[1], p[0] - uav[0])
    return ["--uav", vec(uav), "--gmt", vec(gmt), "--tau", repr(float(tau)), "--theta", repr(math.pi / 2), "--phi", repr(phi)]


@pytest.mark.parametrize("method", ["parametric", "closed-form"])
def test_solve_prints_the_reflection_point(capsys, method):
    assert cli("solve", *slice_args(), "--method", method) == 0
    assert capsys.readouterr().out.strip() == "41.59 39.09 2.00"


def test_solve_failures(capsys):
    assert cli("solve", "--uav", "0,0,1", "--gmt", "4,0,1", "--tau", "1e-9", "--theta", "1.0", "--phi", "0.5") == EXIT_NUMERICAL
    assert "InfeasibleDelay" in capsys.readouterr().err

    tau = repr(2 * math.sqrt(5) / SPEED_OF_LIGHT)
    along_y = ["--uav", "0,0,1", "--gmt", "0,4,1", "--tau", tau, "--theta", repr(math.pi / 2 + math.atan(0.5)), "--phi", repr(math.pi / 2)]
    assert cli("solve", *along_y, "--method", "closed-form") == EXIT_NUMERICAL
    assert "SingularGeometry" in capsys.readouterr().err
    assert cli("solve", *along_y) == 0

    assert cli("solve", "--uav", "0,0", "--gmt", "4,0,1", "--tau", "1e-7", "--theta", "1", "--phi", "0") == EXIT_USAGE


def test_usage_errors(tmp_path):
    assert cli() == EXIT_USAGE
    assert cli("run", "--scene", "moon-base", "--oracle") == EXIT_USAGE
    assert cli("run", "--scenario", str(tmp_path / "absent.json"), "--oracle") == EXIT_USAGE
    assert cli("validate", "--scene", "box-room", "--T-c", "0") == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x"}')
    assert cli("validate", "--scenario", str(bad)) == EXIT_USAGE


def test_validate_reflector_slice(capsys):
    assert cli("validate", "--scene", "reflector-slice", "--T", "2") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines
    assert all(line.startswith("[ok  ]") for line in lines)


def test_dataset_generation_is_reproducible(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli("gen-dataset", "--scene", "open-field", "--out", str(a)) == 0
    assert cli("gen-dataset", "--scene", "open-field", "--out", str(b)) == 0
    assert a.read_bytes() == b.read_bytes()
    data = read_dataset(a)
    assert len(data) == 72
    assert set(data.labels.tolist()) == {0}


def test_dataset_needs_a_dataset_section(tmp_path):
    doc = tmp_path / "s.json"
    doc.write_text(
        '{"scene": {"builtin": "open-field"},'
        ' "trajectories": {"uav": {"corners": [[0, 0, 10]]}, "gmt": {"corners": [[5, 0, 1.5]]}},'
        ' "run": {"T": 4, "T_c": 2}}'
    )
    assert cli("gen-dataset", "--scenario", str(doc), "--out", str(tmp_path / "d.csv")) == EXIT_USAGE


@pytest.mark.slow
def test_train_then_run(tmp_path):
    data, model, history = tmp_path / "d.csv", tmp_path / "m.json", tmp_path / "h.csv"
    assert cli("gen-dataset", "--scene", "open-field", "--out", str(data)) == 0
    assert cli("train", "--dataset", str(data), "--out", str(model), "--history", str(history), "--epochs", "2") == 0
    assert len(pd.read_csv(history)) == 2

    ply = tmp_path / "map.ply"
    metrics = tmp_path / "metrics.csv"
    assert cli("run", "--scene", "open-field", "--T", "6", "--model", str(model), "--ply", str(ply), "--metrics-csv", str(metrics)) == 0
    assert read_ply(ply).shape[1] == 4
    assert pd.read_csv(metrics).set_index("metric")["value"]["steps"] == 7


@pytest.mark.slow
def test_sweep_k(tmp_path):
    data, out = tmp_path / "d.csv", tmp_path / "sweep.csv"
    assert cli("gen-dataset", "--scene", "open-field", "--out", str(data)) == 0
    assert cli("sweep-k", "--dataset", str(data), "--k", "1,3", "--epochs", "2", "--out", str(out)) == 0
    assert pd.read_csv(out)["K"].tolist() == [1, 3]


def test_train_rejects_an_empty_dataset(tmp_path):
    data = tmp_path / "empty.csv"
    data.write_text("# cslam-dataset v1 K=1\ntau_1,theta_1,phi_1,label\n")
    assert cli("train", "--dataset", str(data), "--out", str(tmp_path / "m.json")) == EXIT_USAGE


def test_run_with_the_oracle_writes_every_output(tmp_path):
    out = {name: tmp_path / name for name in ("map.ply", "truth.ply", "metrics.csv", "confusion.csv", "steps.csv", "paths.csv", "run.prom")}
    code = cli(
        "run", "--scene", "box-room", "--T", "10", "--oracle",
        "--ply", str(out["map.ply"]),
        "--truth-ply", str(out["truth.ply"]),
        "--metrics-csv", str(out["metrics.csv"]),
        "--confusion-csv", str(out["confusion.csv"]),
        "--steps-csv", str(out["steps.csv"]),
        "--paths-csv", str(out["paths.csv"]),
        "--paths-step", "3",
        "--prom-textfile", str(out["run.prom"]),
    )
    assert code == 0
    assert all(p.exists() for p in out.values())
    assert len(pd.read_csv(out["steps.csv"])) == 11
    assert "cslam_steps_total 11.0" in out["run.prom"].read_text()


def test_sweep_noise(tmp_path, capsys):
    out = tmp_path / "noise.csv"
    assert cli("sweep-noise", "--scene", "reflector-slice", "--T", "5", "--scales", "0,1", "--out", str(out)) == 0
    rows = pd.read_csv(out)
    assert rows["scale"].tolist() == [0.0, 1.0]
    assert rows["mean_error_m"][0] < 1e-9
    assert "scale=0" in capsys.readouterr().out
