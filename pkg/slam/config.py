"""
Scenario files.

A scenario is a JSON document validated by the pydantic models below and
resolved into a ``Scenario`` the runner consumes. Sections:

    scene          builtin scene name, or an explicit facet list
    trajectories   UAV and GMT paths as explicit waypoints or polyline corners
    channel        ray tracer / link budget
    noise          path-estimation noise
    imu, bsm       dead-reckoning and position-fix surrogates
    lscn           K, network architecture, training hyper-parameters
    run            T, T_c, master seed, GMT height
    dataset        receiver grid and transmitter positions for training data

``model_dump_json(indent=2)`` is the canonical form; loading it again yields
the same model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from channel.estimation import NoiseConfig
from channel.geometry import Facet, Obstacle, SceneMesh, Vec3, as_vec3
from channel.raytracer import ChannelConfig
from channel.scenes import SLICE_GMT, SLICE_UAV, builtin_scene
from common.errors import InvalidScenario, IoError
from localization.hpc import BsmModel, ImuModel
from mapping.lscn import Architecture, TrainConfig

Point = Tuple[float, float, float]


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class FacetSpec(_Section):
    id: int
    vertices: List[Point] = Field(min_length=3)
    material: Optional[str] = None


class ObstacleSpec(_Section):
    lo: Point
    hi: Point


class SceneSection(_Section):
    builtin: Optional[str] = None
    facets: List[FacetSpec] = Field(default_factory=list)
    obstacles: List[ObstacleSpec] = Field(default_factory=list)

    @model_validator(mode="after")
    def _one_source(self) -> "SceneSection":
        if self.builtin is not None and (self.facets or self.obstacles):
            raise ValueError("scene takes either 'builtin' or 'facets', not both")
        return self

    def build(self) -> SceneMesh:
        if self.builtin is not None:
            return builtin_scene(self.builtin)
        facets = [Facet.from_vertices(f.id, f.vertices, f.material) for f in self.facets]
        return SceneMesh(facets, obstacles=[Obstacle(o.lo, o.hi) for o in self.obstacles])


class TrajectorySpec(_Section):
    """Either explicit per-step ``waypoints`` or ``corners`` of a polyline
    sampled at equal arc length."""

    waypoints: Optional[List[Point]] = None
    corners: Optional[List[Point]] = None

    @model_validator(mode="after")
    def _one_form(self) -> "TrajectorySpec":
        if (self.waypoints is None) == (self.corners is None):
            raise ValueError("trajectory takes exactly one of 'waypoints' or 'corners'")
        if self.corners is not None and not self.corners:
            raise ValueError("corners must not be empty")
        return self

    def sample(self, count: int) -> List[Vec3]:
        if self.waypoints is not None:
            return [as_vec3(p) for p in self.waypoints]
        return polyline_samples(self.corners or [], count)


class TrajectoriesSection(_Section):
    uav: TrajectorySpec
    gmt: TrajectorySpec


class LscnSection(_Section):
    K: int = Field(default=9, ge=1)
    architecture: Architecture = Field(default_factory=Architecture)
    train: TrainConfig = Field(default_factory=TrainConfig)


class RunSection(_Section):
    T: int = Field(default=50, ge=0)
    T_c: int = Field(default=10, ge=1)
    master_seed: int = 0
    h_G: Optional[float] = None


class RxGrid(_Section):
    x_range: Tuple[float, float]
    y_range: Tuple[float, float]
    nx: int = Field(default=20, ge=1)
    ny: int = Field(default=20, ge=1)
    z_levels: List[float] = Field(default_factory=lambda: [2.0, 6.0, 10.0, 14.0], min_length=1)

    def points(self) -> np.ndarray:
        xs = np.linspace(*self.x_range, self.nx)
        ys = np.linspace(*self.y_range, self.ny)
        zs = np.asarray(self.z_levels, dtype=np.float64)
        gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    @property
    def size(self) -> int:
        return self.nx * self.ny * len(self.z_levels)


class DatasetSection(_Section):
    rx_grid: RxGrid
    tx_positions: List[Point] = Field(min_length=1)
    val_tx_positions: List[Point] = Field(default_factory=list)


class ScenarioFile(_Section):
    name: str = "scenario"
    scene: SceneSection
    trajectories: TrajectoriesSection
    channel: ChannelConfig = Field(default_factory=ChannelConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    imu: ImuModel = Field(default_factory=ImuModel)
    bsm: BsmModel = Field(default_factory=BsmModel)
    lscn: LscnSection = Field(default_factory=LscnSection)
    run: RunSection = Field(default_factory=RunSection)
    dataset: Optional[DatasetSection] = None

    def canonical(self) -> str:
        return self.model_dump_json(indent=2)

    def resolve(self) -> "Scenario":
        T, T_c = self.run.T, self.run.T_c
        scenario = Scenario(
            name=self.name,
            mesh=self.scene.build(),
            uav_waypoints=self.trajectories.uav.sample(T + 1),
            gmt_waypoints=self.trajectories.gmt.sample(gmt_waypoint_count(T, T_c)),
            T=T,
            T_c=T_c,
            channel=self.channel,
            noise=self.noise,
            imu=self.imu,
            bsm=self.bsm,
            K=self.lscn.K,
            master_seed=self.run.master_seed,
            h_G=self.run.h_G,
            lscn=self.lscn,
            dataset=self.dataset,
        )
        scenario.check()
        return scenario


def gmt_waypoint_count(T: int, T_c: int) -> int:
    """The GMT moves every T_c steps, so T+1 steps need this many stops."""
    return math.ceil((T + 1) / T_c)


def polyline_samples(corners: List[Point], count: int) -> List[Vec3]:
    pts = np.asarray(corners, dtype=np.float64)
    if count < 1:
        raise InvalidScenario(f"cannot sample {count} points")
    if len(pts) == 1 or count == 1:
        return [pts[0].copy() for _ in range(count)]
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    if cum[-1] == 0.0:
        return [pts[0].copy() for _ in range(count)]
    s = np.linspace(0.0, cum[-1], count)
    return [np.array([np.interp(si, cum, pts[:, k]) for k in range(3)]) for si in s]


@dataclass(eq=False)
class Scenario:
    mesh: SceneMesh
    uav_waypoints: List[Vec3]
    gmt_waypoints: List[Vec3]
    T: int
    T_c: int
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    imu: ImuModel = field(default_factory=ImuModel)
    bsm: BsmModel = field(default_factory=BsmModel)
    K: int = 9
    master_seed: int = 0
    h_G: Optional[float] = None
    name: str = "scenario"
    lscn: LscnSection = field(default_factory=LscnSection)
    dataset: Optional[DatasetSection] = None

    def check(self) -> None:
        if self.K < 1:
            raise InvalidScenario(f"K must be >= 1, got {self.K}")
        if self.T_c < 1:
            raise InvalidScenario(f"T_c must be >= 1, got {self.T_c}")
        if self.T < 0:
            raise InvalidScenario(f"T must be >= 0, got {self.T}")
        if len(self.uav_waypoints) != self.T + 1:
            raise InvalidScenario(
                f"need T+1 = {self.T + 1} UAV waypoints, got {len(self.uav_waypoints)}"
            )
        need = gmt_waypoint_count(self.T, self.T_c)
        if len(self.gmt_waypoints) < need:
            raise InvalidScenario(f"need {need} GMT waypoints for T={self.T}, T_c={self.T_c}, got {len(self.gmt_waypoints)}")
        heights = {float(p[2]) for p in self.gmt_waypoints}
        if len(heights) > 1:
            raise InvalidScenario(f"GMT waypoints must share one height, got {sorted(heights)}")
        if self.h_G is not None and heights and heights != {float(self.h_G)}:
            raise InvalidScenario(f"GMT height {heights.pop()} != h_G {self.h_G}")

    def gmt_at(self, t: int) -> Vec3:
        return self.gmt_waypoints[t // self.T_c]


def parse_scenario(text: str, source: str = "<string>") -> ScenarioFile:
    try:
        return ScenarioFile.model_validate_json(text)
    except ValidationError as exc:
        raise InvalidScenario(f"{source}: {exc}") from exc


def load_scenario_file(path: Union[str, Path]) -> ScenarioFile:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text, str(path))


def save_scenario_file(scenario: ScenarioFile, path: Union[str, Path]) -> None:
    try:
        Path(path).write_text(scenario.canonical() + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write scenario {path}: {exc}") from exc


# Default trajectories and training grids for the builtin scenes.
_BUILTIN_DEFAULTS = {
    "open-field": dict(
        uav=[(0.0, 0.0, 10.0), (20.0, 0.0, 10.0)],
        gmt=[(-10.0, 0.0, 1.5), (-10.0, 10.0, 1.5)],
        grid=dict(x_range=(-20.0, 20.0), y_range=(-20.0, 20.0), nx=6, ny=6, z_levels=[2.0, 6.0]),
        tx=[(-10.0, 0.0, 1.5)],
    ),
    "single-wall": dict(
        uav=[(10.0, -8.0, 4.0), (10.0, 8.0, 4.0), (20.0, 8.0, 6.0)],
        gmt=[(-5.0, -4.0, 1.0), (-5.0, 4.0, 1.0)],
        grid=dict(x_range=(-25.0, 25.0), y_range=(-25.0, 25.0), nx=20, ny=20, z_levels=[1.0, 3.0, 6.0, 10.0]),
        tx=[(-5.0, 0.0, 1.0), (-8.0, 5.0, 1.0)],
    ),
    "parallel-walls": dict(
        uav=[(3.0, 5.0, 2.0), (3.0, 15.0, 2.0)],
        gmt=[(1.0, -5.0, 2.0)],
        grid=dict(x_range=(0.5, 3.5), y_range=(-15.0, 15.0), nx=6, ny=20, z_levels=[1.0, 3.0, 5.0]),
        tx=[(1.0, -5.0, 2.0)],
    ),
    "box-room": dict(
        uav=[(7.0, 1.0, 2.0), (7.0, 7.0, 2.0), (9.0, 7.0, 2.5)],
        gmt=[(2.0, 2.0, 1.0), (2.0, 6.0, 1.0)],
        grid=dict(x_range=(0.5, 9.5), y_range=(0.5, 7.5), nx=20, ny=16, z_levels=[0.5, 1.5, 2.5]),
        tx=[(2.0, 2.0, 1.0), (8.0, 2.0, 1.0)],
    ),
    "two-buildings": dict(
        uav=[(5.0, 5.0, 20.0), (55.0, 5.0, 20.0), (55.0, 55.0, 20.0), (5.0, 55.0, 20.0)],
        gmt=[(30.0, 45.0, 1.5), (50.0, 45.0, 1.5), (50.0, 5.0, 1.5), (5.0, 5.0, 1.5)],
        grid=dict(x_range=(1.0, 59.0), y_range=(1.0, 59.0), nx=22, ny=22, z_levels=[2.0, 6.0, 10.0, 14.0]),
        # The last three transmitters sit in the canyon and beside each building, so the
        # buildings shadow part of the grid.
        tx=[
            (30.0, 45.0, 1.5), (50.0, 50.0, 1.5), (8.0, 8.0, 1.5), (30.0, 5.0, 1.5),
            (30.0, 25.0, 1.5), (10.0, 30.0, 1.5), (50.0, 20.0, 1.5),
        ],
        val_tx=[(5.0, 50.0, 1.5), (52.0, 8.0, 1.5), (20.0, 45.0, 1.5)],
    ),
    "reflector-slice": dict(
        uav=[SLICE_UAV],
        gmt=[SLICE_GMT],
        grid=dict(x_range=(21.0, 61.0), y_range=(11.0, 49.0), nx=20, ny=20, z_levels=[2.0, 5.0, 12.0]),
        tx=[SLICE_GMT],
    ),
}


def builtin_scenario_file(name: str, T: int = 50, T_c: int = 10, master_seed: int = 0) -> ScenarioFile:
    if name not in _BUILTIN_DEFAULTS:
        raise InvalidScenario(f"no builtin scenario for scene {name!r}; choose from {sorted(_BUILTIN_DEFAULTS)}")
    d = _BUILTIN_DEFAULTS[name]
    gmt_corners = d["gmt"]
    return ScenarioFile(
        name=name,
        scene=SceneSection(builtin=name),
        trajectories=TrajectoriesSection(
            uav=TrajectorySpec(corners=d["uav"]),
            gmt=TrajectorySpec(corners=gmt_corners),
        ),
        run=RunSection(T=T, T_c=T_c, master_seed=master_seed, h_G=gmt_corners[0][2]),
        dataset=DatasetSection(
            rx_grid=RxGrid(**d["grid"]),
            tx_positions=d["tx"],
            val_tx_positions=d.get("val_tx", []),
        ),
    )
