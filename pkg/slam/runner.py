"""
Simultaneous localization and mapping loop.

Per time step t = 0..T:

    1. the GMT transmits its true position (it moves every T_c steps)
    2. the channel is traced and the top-K paths are estimated
    3. the classifier predicts the link state of the strongest path
    4. on a first-order prediction the reflection point is solved from the
       *estimated* UAV pose and appended to the map
    5. the UAV pose estimate advances (IMU step or position fix)

Everything random is seeded from the scenario's master seed, so a scenario
run twice gives the same report.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from channel.estimation import LinkState, NoiseConfig, Snapshot, estimate
from channel.geometry import AoA, SceneMesh, Vec3
from channel.raytracer import ChannelSnapshot, snapshot
from common.errors import EmptyMap, InfeasibleDelay, ShapeMismatch
from common.metrics import RunMetrics
from common.seeding import STREAM_BSM, STREAM_ESTIMATION, STREAM_IMU, derive_seed
from common.telemetry import TelemetryLogger, start_run
from common.tracing import span_to_metadata, stage_span
from localization.hpc import bsm_fix, hpc_init, advance, is_fix_step
from mapping.lscn import LscnModel, predict_state
from mapping.reflector import FirstOrderObservation, solve_parametric
from slam.config import Scenario

logger = logging.getLogger(__name__)

Classifier = Callable[[Snapshot], LinkState]


@dataclass(frozen=True, eq=False)
class MapPoint:
    mapped: Vec3
    truth: Optional[Vec3]
    time_step: int
    used_pose: Vec3

    @property
    def error_m(self) -> float:
        if self.truth is None:
            return float("nan")
        return float(np.linalg.norm(self.mapped - self.truth))


@dataclass
class PointCloudMap:
    points: List[MapPoint] = field(default_factory=list)

    def append(self, point: MapPoint) -> None:
        self.points.append(point)

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def coordinates(self) -> np.ndarray:
        if not self.points:
            return np.zeros((0, 3))
        return np.stack([p.mapped for p in self.points])


@dataclass(frozen=True)
class SurfaceStats:
    count: int
    mean: float
    max: float
    p50: float
    p95: float

    @classmethod
    def of(cls, distances: Sequence[float]) -> "SurfaceStats":
        d = np.asarray(distances, dtype=np.float64)
        if d.size == 0:
            nan = float("nan")
            return cls(0, nan, nan, nan, nan)
        return cls(
            count=int(d.size),
            mean=float(d.mean()),
            max=float(d.max()),
            p50=float(np.percentile(d, 50)),
            p95=float(np.percentile(d, 95)),
        )


@dataclass
class RunReport:
    map: PointCloudMap
    pose_errors: List[float]
    point_mse: float
    point_mse_squared: float
    surface_stats: SurfaceStats
    confusion: np.ndarray
    skipped_infeasible: int = 0
    skipped_no_paths: int = 0
    predictions: List[Optional[int]] = field(default_factory=list)
    truth_states: List[Optional[int]] = field(default_factory=list)
    truth_points: List[Tuple[int, Vec3]] = field(default_factory=list)
    paths_snapshot: Optional[ChannelSnapshot] = None
    trace: dict = field(default_factory=dict)

    @property
    def classification_accuracy(self) -> float:
        total = int(self.confusion.sum())
        return float(np.trace(self.confusion)) / total if total else float("nan")

    def summary(self) -> dict:
        s = self.surface_stats
        return {
            "steps": len(self.pose_errors),
            "mapped_points": len(self.map),
            "paired_points": sum(1 for p in self.map if p.truth is not None),
            "point_mse_m": self.point_mse,
            "point_mse_squared_m2": self.point_mse_squared,
            "surface_count": s.count,
            "surface_mean_m": s.mean,
            "surface_max_m": s.max,
            "surface_p50_m": s.p50,
            "surface_p95_m": s.p95,
            "pose_error_mean_m": float(np.mean(self.pose_errors)) if self.pose_errors else float("nan"),
            "pose_error_max_m": float(np.max(self.pose_errors)) if self.pose_errors else float("nan"),
            "classification_accuracy": self.classification_accuracy,
            "skipped_infeasible": self.skipped_infeasible,
            "skipped_no_paths": self.skipped_no_paths,
        }


def oracle_classifier(snap: Snapshot) -> LinkState:
    """Perfect classifier: returns the true link state."""
    return snap.true_link_state


def model_classifier(model: LscnModel) -> Classifier:
    return lambda snap: predict_state(model, snap)


def evaluate_map(cloud: PointCloudMap, mesh: SceneMesh) -> Tuple[float, SurfaceStats]:
    """Mean distance between paired mapped/true points, and the distribution
    of mapped-point distances to the nearest facet.

    The mean is NaN when no mapped point has a true counterpart.
    """
    if len(cloud) == 0:
        raise EmptyMap("cannot evaluate an empty map")
    errors = [p.error_m for p in cloud if p.truth is not None]
    point_mse = float(np.mean(errors)) if errors else float("nan")
    surface = SurfaceStats.of([mesh.nearest_facet_distance(p.mapped) for p in cloud])
    return point_mse, surface


def _seeded_sensors(scenario: Scenario):
    imu = scenario.imu.model_copy(
        update={"rng_seed": derive_seed(scenario.master_seed, STREAM_IMU, scenario.imu.rng_seed)}
    )
    bsm = scenario.bsm.model_copy(
        update={"rng_seed": derive_seed(scenario.master_seed, STREAM_BSM, scenario.bsm.rng_seed)}
    )
    return imu, bsm


def run(
    scenario: Scenario,
    model: Union[LscnModel, Classifier],
    metrics: Optional[RunMetrics] = None,
    telemetry: Optional[TelemetryLogger] = None,
    keep_paths_at: Optional[int] = None,
) -> RunReport:
    scenario.check()
    if isinstance(model, LscnModel):
        if model.K != scenario.K:
            raise ShapeMismatch(f"model K={model.K} does not match scenario K={scenario.K}")
        classify = model_classifier(model)
    else:
        classify = model

    mesh = scenario.mesh
    imu, bsm = _seeded_sensors(scenario)
    cloud = PointCloudMap()
    confusion = np.zeros((3, 3), dtype=np.int64)
    pose_errors: List[float] = []
    predictions: List[Optional[int]] = []
    truth_states: List[Optional[int]] = []
    truth_points: List[Tuple[int, Vec3]] = []
    paths_kept: Optional[ChannelSnapshot] = None
    skipped_infeasible = skipped_no_paths = 0
    events = start_run(telemetry)

    attrs = {"scenario.name": scenario.name, "scenario.T": scenario.T, "scenario.T_c": scenario.T_c}
    with stage_span("slam.run", **attrs) as span:
        state = hpc_init(bsm_fix(bsm, scenario.uav_waypoints[0], 0))
        if metrics:
            metrics.position_fixes.inc()
        for t in range(scenario.T + 1):
            gmt = scenario.gmt_at(t)
            uav_true = scenario.uav_waypoints[t]
            pose_error = float(np.linalg.norm(state.estimate - uav_true))
            pose_errors.append(pose_error)

            snap = snapshot(gmt, uav_true, mesh, scenario.channel, time_step=t)
            if keep_paths_at == t:
                paths_kept = snap
            predicted: Optional[LinkState] = None
            truth_state: Optional[LinkState] = None
            mapped: Optional[MapPoint] = None
            if not snap.paths:
                skipped_no_paths += 1
                logger.debug("t=%d: no propagation path", t)
            else:
                est = estimate(snap, scenario.K, scenario.noise, derive_seed(scenario.master_seed, STREAM_ESTIMATION, t))
                truth_state = est.true_link_state
                if est.true_first_reflection is not None:
                    truth_points.append((t, est.true_first_reflection))
                predicted = classify(est)
                confusion[int(truth_state), int(predicted)] += 1
                if metrics:
                    metrics.predictions.labels(predicted=predicted.name, truth=truth_state.name).inc()

                if predicted == LinkState.FIRST_ORDER_NLOS:
                    top = est.estimates[0]
                    obs = FirstOrderObservation(
                        uav=state.estimate.copy(),
                        gmt=np.asarray(gmt, dtype=np.float64),
                        tau=top.tau_hat,
                        aoa=AoA(top.theta_hat, top.phi_hat),
                    )
                    try:
                        point = solve_parametric(obs)
                    except InfeasibleDelay as exc:
                        skipped_infeasible += 1
                        logger.warning("t=%d: reflection point skipped: %s", t, exc)
                        if metrics:
                            metrics.solver_fallbacks.inc()
                    else:
                        mapped = MapPoint(point, est.true_first_reflection, t, state.estimate.copy())
                        cloud.append(mapped)
                        if metrics:
                            metrics.mapped_points.labels(paired=str(mapped.truth is not None).lower()).inc()
                            if mapped.truth is not None:
                                metrics.point_error.observe(mapped.error_m)

            predictions.append(None if predicted is None else int(predicted))
            truth_states.append(None if truth_state is None else int(truth_state))
            if metrics:
                metrics.steps.inc()
                metrics.pose_error.observe(pose_error)
            if events:
                events.event(
                    "step",
                    f"t={t} truth={getattr(truth_state, 'name', None)} predicted={getattr(predicted, 'name', None)}",
                    step=t,
                    pose_error_m=pose_error,
                    mapped=None if mapped is None else mapped.mapped,
                    point_error_m=None if mapped is None else mapped.error_m,
                )

            if t < scenario.T:
                state = advance(state, scenario.T_c, imu, bsm, uav_true, scenario.uav_waypoints[t + 1])
                if metrics and is_fix_step(state.t, scenario.T_c):
                    metrics.position_fixes.inc()

        if len(cloud):
            point_mse, surface = evaluate_map(cloud, mesh)
            paired = [p.error_m for p in cloud if p.truth is not None]
            point_mse_sq = float(np.mean(np.square(paired))) if paired else float("nan")
        else:
            point_mse, point_mse_sq, surface = float("nan"), float("nan"), SurfaceStats.of([])
        span.set_attribute("run.mapped_points", len(cloud))
        if not math.isnan(point_mse):
            span.set_attribute("run.point_mse_m", point_mse)
        trace_meta = span_to_metadata(span)

    if metrics and not math.isnan(point_mse):
        metrics.point_mse.set(point_mse)
    if skipped_infeasible:
        logger.warning("%d first-order predictions had infeasible delays and were skipped", skipped_infeasible)

    return RunReport(
        map=cloud,
        pose_errors=pose_errors,
        point_mse=point_mse,
        point_mse_squared=point_mse_sq,
        surface_stats=surface,
        confusion=confusion,
        skipped_infeasible=skipped_infeasible,
        skipped_no_paths=skipped_no_paths,
        predictions=predictions,
        truth_states=truth_states,
        truth_points=truth_points,
        paths_snapshot=paths_kept,
        trace=trace_meta,
    )


@dataclass(frozen=True)
class NoiseSweepRow:
    scale: float
    sigma_tau_s: float
    sigma_theta_rad: float
    sigma_phi_rad: float
    points: int
    mean_error_m: float
    max_error_m: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mapping_error_experiment(
    scenario: Scenario,
    scales: Sequence[float] = (0.0, 0.25, 0.5, 1.0, 2.0),
    base_noise: Optional[NoiseConfig] = None,
) -> List[NoiseSweepRow]:
    """Reflection-point error against estimation noise.

    Every step whose strongest true path is a single bounce is solved from
    the true UAV pose, once per noise scale. The Gaussian draws are shared
    across scales so only their magnitude changes; scale 0 is the
    ground-truth-parameter case.
    """
    scenario.check()
    base = base_noise or scenario.noise
    cases = []
    for t in range(scenario.T + 1):
        gmt = scenario.gmt_at(t)
        uav = scenario.uav_waypoints[t]
        snap = snapshot(gmt, uav, scenario.mesh, scenario.channel, time_step=t)
        if snap.paths and snap.paths[0].order == 1:
            cases.append((t, gmt, uav, snap))

    rows: List[NoiseSweepRow] = []
    for scale in scales:
        noise = base.scaled(scale)
        errors = []
        for t, gmt, uav, snap in cases:
            est = estimate(snap, scenario.K, noise, derive_seed(scenario.master_seed, STREAM_ESTIMATION, t))
            top = est.estimates[0]
            obs = FirstOrderObservation(uav=np.asarray(uav), gmt=np.asarray(gmt), tau=top.tau_hat, aoa=AoA(top.theta_hat, top.phi_hat))
            try:
                point = solve_parametric(obs)
            except InfeasibleDelay:
                continue
            errors.append(float(np.linalg.norm(point - est.true_first_reflection)))
        nan = float("nan")
        rows.append(
            NoiseSweepRow(
                scale=float(scale),
                sigma_tau_s=noise.sigma_tau,
                sigma_theta_rad=noise.sigma_theta,
                sigma_phi_rad=noise.sigma_phi,
                points=len(errors),
                mean_error_m=float(np.mean(errors)) if errors else nan,
                max_error_m=float(np.max(errors)) if errors else nan,
            )
        )
    return rows
