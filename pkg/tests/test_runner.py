import json
import math

import numpy as np
import pytest

from channel.estimation import LinkState, NoiseConfig
from common.errors import EmptyMap, ShapeMismatch
from common.metrics import RunMetrics
from common.telemetry import TelemetryLogger
from mapping.lscn import Architecture, init_model
from slam.config import builtin_scenario_file
from slam.runner import (
    MapPoint,
    PointCloudMap,
    SurfaceStats,
    evaluate_map,
    mapping_error_experiment,
    oracle_classifier,
    run,
)


@pytest.mark.parametrize("name", ["box-room", "two-buildings"])
def test_noiseless_oracle_run_maps_onto_the_mesh(name, noiseless):
    scenario = noiseless(name).resolve()
    report = run(scenario, oracle_classifier)
    assert len(report.map) == len(report.truth_points)
    assert len(report.map) > 0
    assert all(p.truth is not None for p in report.map)
    assert report.point_mse < 1e-6
    assert report.surface_stats.max < 1e-6
    mesh = scenario.mesh
    assert all(mesh.nearest_facet_distance(p.mapped) < 1e-6 for p in report.map)
    assert max(report.pose_errors) < 1e-9
    assert report.classification_accuracy == 1.0


def test_box_room_trajectory_has_single_bounce_steps(noiseless):
    report = run(noiseless("box-room").resolve(), oracle_classifier)
    assert len(report.map) > 0
    assert LinkState.FIRST_ORDER_NLOS in report.truth_states


def test_open_field_maps_nothing(noiseless):
    report = run(noiseless("open-field", T=10).resolve(), oracle_classifier)
    assert len(report.map) == 0
    assert math.isnan(report.point_mse)
    assert set(report.truth_states) == {int(LinkState.LOS)}
    assert report.surface_stats.count == 0


def test_runs_are_reproducible():
    scenario = builtin_scenario_file("box-room", T=20, T_c=5, master_seed=4).resolve()
    a = run(scenario, oracle_classifier)
    b = run(scenario, oracle_classifier)
    assert a.pose_errors == b.pose_errors
    np.testing.assert_array_equal(a.map.coordinates(), b.map.coordinates())
    c = run(builtin_scenario_file("box-room", T=20, T_c=5, master_seed=5).resolve(), oracle_classifier)
    assert a.pose_errors != c.pose_errors


def test_mapping_uses_the_estimated_pose(noiseless):
    sf = noiseless("box-room")
    sf = sf.model_copy(update={"imu": sf.imu.model_copy(update={"sigma_step": 0.05})})
    scenario = sf.resolve()
    report = run(scenario, oracle_classifier)
    assert len(report.map) > 0
    for p in report.map:
        true_pose = scenario.uav_waypoints[p.time_step]
        assert np.linalg.norm(p.used_pose - true_pose) == pytest.approx(report.pose_errors[p.time_step], abs=1e-12)
        if p.time_step % scenario.T_c == 0:
            assert p.error_m < 1e-6
    drifted = [p for p in report.map if p.time_step % scenario.T_c != 0]
    if drifted:
        assert max(p.error_m for p in drifted) > 1e-6


def test_classifier_sees_every_step(noiseless):
    scenario = noiseless("box-room", T=15).resolve()
    seen = []

    def always_los(snap):
        seen.append(snap.time_step)
        return LinkState.LOS

    report = run(scenario, always_los)
    assert len(report.map) == 0
    assert seen == [t for t in range(16) if report.truth_states[t] is not None]


def test_model_k_must_match_scenario():
    scenario = builtin_scenario_file("open-field", T=2).resolve()
    model = init_model(3, Architecture(stage1=[4], stage2=[4]), seed=0)
    with pytest.raises(ShapeMismatch):
        run(scenario, model)


def test_model_driven_run():
    scenario = builtin_scenario_file("single-wall", T=10).resolve()
    model = init_model(scenario.K, Architecture(stage1=[4], stage2=[4]), seed=0)
    report = run(scenario, model)
    assert len(report.pose_errors) == 11
    assert int(report.confusion.sum()) == sum(s is not None for s in report.truth_states)


def test_metrics_and_telemetry(tmp_path):
    scenario = builtin_scenario_file("box-room", T=20, T_c=10).resolve()
    metrics = RunMetrics(prefix="cslam")
    log = tmp_path / "runner.log"
    telemetry = TelemetryLogger("runner", log_file=str(log), scenario=scenario.name, enabled=True)
    report = run(scenario, oracle_classifier, metrics=metrics, telemetry=telemetry)

    reg = metrics.registry
    assert reg.get_sample_value("cslam_steps_total") == 21
    assert reg.get_sample_value("cslam_position_fixes_total") == 3
    assert reg.get_sample_value("cslam_pose_error_meters_count") == 21

    events = [json.loads(line) for line in log.read_text().splitlines()]
    assert [e["step"] for e in events] == list(range(21))
    assert {e["event_type"] for e in events} == {"step"}
    assert all(e["scenario"] == "box-room" for e in events)
    assert len({e["run_id"] for e in events}) == 1
    assert report.summary()["steps"] == 21

    out = tmp_path / "metrics.prom"
    metrics.write(str(out))
    assert "cslam_steps_total 21.0" in out.read_text()


def test_paths_snapshot_is_kept():
    scenario = builtin_scenario_file("box-room", T=5).resolve()
    report = run(scenario, oracle_classifier, keep_paths_at=3)
    assert report.paths_snapshot is not None
    assert report.paths_snapshot.time_step == 3


def test_evaluate_map():
    with pytest.raises(EmptyMap):
        evaluate_map(PointCloudMap(), builtin_scenario_file("box-room").resolve().mesh)
    mesh = builtin_scenario_file("box-room").resolve().mesh
    cloud = PointCloudMap()
    cloud.append(MapPoint(np.array([7.5, 4.0, 0.5]), None, 0, np.zeros(3)))
    mse, surface = evaluate_map(cloud, mesh)
    assert math.isnan(mse)
    assert surface.count == 1
    assert surface.max == pytest.approx(0.5)


def test_surface_stats():
    stats = SurfaceStats.of([0.0, 1.0, 2.0, 3.0, 4.0])
    assert (stats.count, stats.mean, stats.max, stats.p50) == (5, 2.0, 4.0, 2.0)
    assert SurfaceStats.of([]).count == 0


def test_mapping_error_grows_with_noise():
    scenario = builtin_scenario_file("reflector-slice", T=30).resolve()
    rows = mapping_error_experiment(scenario, [0.0, 0.5, 1.0, 2.0], NoiseConfig())
    assert [r.scale for r in rows] == [0.0, 0.5, 1.0, 2.0]
    assert all(r.points == 31 for r in rows)
    assert rows[0].mean_error_m < 1e-9
    means = [r.mean_error_m for r in rows]
    assert means == sorted(means)
    assert rows[2].mean_error_m < 1.0
