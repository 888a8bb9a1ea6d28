import math

import numpy as np
import pytest

from channel.geometry import SPEED_OF_LIGHT, AoA, aoa_from_points, as_vec3
from channel.raytracer import ChannelConfig, trace_first_order, trace_second_order
from channel.scenes import SLICE_POINT, box_room, builtin_scene, parallel_walls
from common.errors import DegenerateSegment, InfeasibleDelay, NotApplicable, SingularGeometry
from mapping.reflector import (
    FirstOrderObservation,
    MultiBounceCandidate,
    candidate_from_path,
    max_abs_residual,
    parallel_plane_family,
    residuals_first,
    residuals_multi,
    solve_closed_form,
    solve_parametric,
)

CFG = ChannelConfig()


def parallel_double_bounce():
    mesh = parallel_walls()
    gmt, uav = as_vec3((1, -5, 2)), as_vec3((3, 5, 2))
    path = next(p for p in trace_second_order(gmt, uav, mesh, CFG) if p.facet_ids == (0, 1))
    return candidate_from_path(path, mesh, gmt, uav)


def test_slice_closed_form_takes_the_minus_branch(slice_obs):
    p = solve_closed_form(slice_obs)
    np.testing.assert_allclose(p, SLICE_POINT, atol=1e-6)
    assert math.cos(slice_obs.aoa.phi) < 0
    assert p[0] < slice_obs.uav[0]


def test_slice_parametric(slice_obs):
    np.testing.assert_allclose(solve_parametric(slice_obs), SLICE_POINT, atol=1e-9)


@pytest.mark.parametrize("solver", [solve_closed_form, solve_parametric])
def test_mirror_case(solver, mirror_setup):
    gmt, uav, length = mirror_setup
    obs = FirstOrderObservation(uav=uav, gmt=gmt, tau=length / SPEED_OF_LIGHT, aoa=AoA(3 * math.pi / 4, math.pi))
    np.testing.assert_allclose(solver(obs), (1, 0, 0), atol=1e-9)


def test_closed_form_is_singular_along_y():
    uav, gmt, p = as_vec3((0, 0, 1)), as_vec3((0, 4, 1)), as_vec3((0, 2, 0))
    tau = 2 * math.sqrt(5) / SPEED_OF_LIGHT
    obs = FirstOrderObservation(uav=uav, gmt=gmt, tau=tau, aoa=aoa_from_points(uav, p))
    with pytest.raises(SingularGeometry):
        solve_closed_form(obs)
    np.testing.assert_allclose(solve_parametric(obs), p, atol=1e-9)


def test_closed_form_is_singular_at_the_pole():
    uav, gmt = as_vec3((0, 0, 1)), as_vec3((3, 0, 1))
    obs = FirstOrderObservation(uav=uav, gmt=gmt, tau=10 / SPEED_OF_LIGHT, aoa=AoA(0.0, 0.0))
    with pytest.raises(SingularGeometry):
        solve_closed_form(obs)


@pytest.mark.parametrize("solver", [solve_closed_form, solve_parametric])
def test_infeasible_delay(solver, slice_obs):
    baseline = float(np.linalg.norm(slice_obs.uav - slice_obs.gmt))
    obs = FirstOrderObservation(slice_obs.uav, slice_obs.gmt, baseline / SPEED_OF_LIGHT * 0.99, slice_obs.aoa)
    with pytest.raises(InfeasibleDelay):
        solver(obs)


# (gmt box, uav box) per scene for the traced first-order corpus
CORPUS_BOXES = {
    "box-room": (((0.5, 0.5, 0.3), (9.5, 7.5, 2.7)), ((0.5, 0.5, 0.3), (9.5, 7.5, 2.7))),
    "two-buildings": (((1.0, 1.0, 1.5), (59.0, 59.0, 1.5)), ((1.0, 1.0, 2.0), (59.0, 59.0, 25.0))),
    "single-wall": (((-25.0, -12.0, 0.5), (-1.0, 12.0, 3.0)), ((-25.0, -12.0, 1.0), (-1.0, 12.0, 8.0))),
}


@pytest.mark.slow
def test_solvers_agree_with_traced_points():
    rng = np.random.default_rng(1)
    cases = 0
    for name, (gmt_box, uav_box) in CORPUS_BOXES.items():
        mesh = builtin_scene(name)
        scene_cases = 0
        while scene_cases < 3400:
            gmt, uav = rng.uniform(*gmt_box), rng.uniform(*uav_box)
            if not (mesh.is_free(gmt) and mesh.is_free(uav)):
                continue
            for path in trace_first_order(gmt, uav, mesh, CFG):
                obs = FirstOrderObservation.from_path(path, gmt, uav)
                truth = path.reflection_points[0]
                parametric = solve_parametric(obs)
                np.testing.assert_allclose(parametric, truth, atol=1e-6)
                assert (truth[0] >= uav[0]) == (math.cos(path.aoa.phi) >= 0)
                if abs(math.cos(path.aoa.phi)) < 1e-6 or math.sin(path.aoa.theta) < 1e-6:
                    continue
                closed = solve_closed_form(obs)
                np.testing.assert_allclose(closed, truth, atol=1e-6)
                np.testing.assert_allclose(closed, parametric, atol=1e-6)
                assert (closed[0] < uav[0]) == (math.cos(path.aoa.phi) < 0)
                scene_cases += 1
        cases += scene_cases
    assert cases >= 10_000


@pytest.mark.parametrize("solver", [solve_closed_form, solve_parametric])
def test_point_error_is_locally_linear_in_the_inputs(solver, slice_obs):
    """Ten times the input error gives ten times the point error, within a factor 1.5."""
    base = solver(slice_obs)
    # per-unit perturbation of (tau [s], theta [rad], phi [rad])
    directions = {"tau": (1e-8, 0.0, 0.0), "theta": (0.0, 1.0, 0.0), "phi": (0.0, 0.0, 1.0)}
    for name, (d_tau, d_theta, d_phi) in directions.items():
        def error(delta):
            obs = FirstOrderObservation(
                slice_obs.uav,
                slice_obs.gmt,
                slice_obs.tau + delta * d_tau,
                AoA(slice_obs.aoa.theta + delta * d_theta, slice_obs.aoa.phi + delta * d_phi),
            )
            return float(np.linalg.norm(solver(obs) - base))

        small, large = error(1e-4), error(1e-3)
        assert small > 0.0, name
        assert 10.0 / 1.5 <= large / small <= 10.0 * 1.5, name


def test_first_order_residuals(slice_obs):
    r = residuals_first(slice_obs, as_vec3(SLICE_POINT))
    assert max(abs(v) for v in r) < 1e-9
    moved = residuals_first(slice_obs, as_vec3(SLICE_POINT) + (0.5, 0.0, 0.0))
    assert abs(moved.azimuth) > 0.1
    assert moved.delay != pytest.approx(0.0)


def test_first_order_elevation_undefined_above_receiver(slice_obs):
    r = residuals_first(slice_obs, slice_obs.uav + (0.0, 0.0, 3.0))
    assert math.isnan(r.elevation)


def test_multi_residuals_match_first_order_form(slice_obs):
    p = as_vec3(SLICE_POINT) + (0.3, -0.2, 0.1)
    m = as_vec3((0.0, 0.0, 1.0))
    cand = MultiBounceCandidate(slice_obs.gmt, slice_obs.uav, (p,), (m,), slice_obs.tau, slice_obs.aoa)
    multi = residuals_multi(cand)
    first = residuals_first(slice_obs, p)
    assert multi.shape == (6,)
    assert multi[0] == pytest.approx(first.delay, abs=1e-12)
    assert multi[4] == pytest.approx(math.cos(slice_obs.aoa.phi) * first.azimuth, abs=1e-12)
    assert multi[3] == pytest.approx(0.0, abs=1e-15)


def test_traced_paths_satisfy_the_constraint_system():
    mesh = box_room()
    rng = np.random.default_rng(2)
    checked = 0
    for _ in range(30):
        gmt = rng.uniform((0.5, 0.5, 0.3), (4.5, 7.5, 2.7))
        uav = rng.uniform((0.5, 0.5, 0.3), (9.5, 7.5, 2.7))
        paths = trace_first_order(gmt, uav, mesh, CFG) + trace_second_order(gmt, uav, mesh, CFG)
        for path in paths:
            cand = candidate_from_path(path, mesh, gmt, uav)
            assert max_abs_residual(residuals_multi(cand)) < 1e-9
            checked += 1
    assert checked > 100


def test_degenerate_segment(slice_obs):
    cand = MultiBounceCandidate(
        slice_obs.gmt, slice_obs.uav, (slice_obs.uav.copy(),), (as_vec3((0, 0, 1)),), slice_obs.tau, slice_obs.aoa
    )
    with pytest.raises(DegenerateSegment):
        residuals_multi(cand)


def test_parallel_family_keeps_every_residual():
    base = parallel_double_bounce()
    reach = float(np.linalg.norm(base.points[0] - base.gmt))
    assert max_abs_residual(residuals_multi(base)) < 1e-9
    for d in np.linspace(0.01, 0.98 * reach, 100):
        moved = parallel_plane_family(base, float(d))
        assert max_abs_residual(residuals_multi(moved)) < 1e-9
        assert np.linalg.norm(moved.points[0] - base.points[0]) == pytest.approx(d)
        assert not np.allclose(moved.points[1], base.points[1])


def test_parallel_family_edges():
    base = parallel_double_bounce()
    reach = float(np.linalg.norm(base.points[0] - base.gmt))
    assert parallel_plane_family(base, 0.0) is base
    with pytest.raises(ValueError):
        parallel_plane_family(base, -0.1)
    with pytest.raises(NotApplicable):
        parallel_plane_family(base, reach)


def test_parallel_family_needs_parallel_double_bounce(slice_obs):
    single = MultiBounceCandidate(
        slice_obs.gmt, slice_obs.uav, (as_vec3(SLICE_POINT),), (as_vec3((0, 1, 0)),), slice_obs.tau, slice_obs.aoa
    )
    with pytest.raises(NotApplicable):
        parallel_plane_family(single, 0.5)

    corner = MultiBounceCandidate(
        as_vec3((2, 1, 1)),
        as_vec3((1, 2, 1)),
        (as_vec3((1, 0, 1)), as_vec3((0, 1, 1))),
        (as_vec3((0, 1, 0)), as_vec3((1, 0, 0))),
        2 * math.sqrt(2) / SPEED_OF_LIGHT,
        aoa_from_points(as_vec3((1, 2, 1)), as_vec3((0, 1, 1))),
    )
    with pytest.raises(NotApplicable):
        parallel_plane_family(corner, 0.5)
