"""
Image-method ray tracer for the GMT -> UAV multipath channel.

Paths up to second order are built by mirroring the GMT across the reflecting
planes and back-tracing from the UAV. Every emitted path is checked for
occlusion segment by segment. Per-path SNR follows free-space loss plus a
fixed loss per bounce, which is all the downstream ordering needs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from channel.geometry import (
    SPEED_OF_LIGHT,
    AoA,
    Facet,
    SceneMesh,
    Vec3,
    aoa_from_points,
    mirror_point,
    segment_occluded,
)
from common.errors import InvalidPath

logger = logging.getLogger(__name__)

# Sidedness tolerance: endpoints closer than this to a plane do not reflect off it.
SIDE_EPS_M = 1e-9


class ChannelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    tx_power_dbm: float = 30.0
    carrier_hz: float = Field(default=30e9, gt=0)
    reflection_loss_db: float = Field(default=10.0, gt=0)
    noise_floor_dbm: float = -90.0
    max_order: int = Field(default=2, ge=0, le=2)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz


@dataclass(frozen=True, eq=False)
class PropagationPath:
    order: int
    reflection_points: Tuple[Vec3, ...]
    facet_ids: Tuple[int, ...]
    delay: float
    aoa: AoA
    aod: AoA
    snr_db: float
    path_length: float

    def sort_key(self) -> tuple:
        return (-self.snr_db, self.delay, self.facet_ids)


@dataclass(frozen=True, eq=False)
class ChannelSnapshot:
    paths: Tuple[PropagationPath, ...]
    gmt_pos: Vec3
    uav_pos: Vec3
    time_step: int = 0

    @property
    def strongest(self) -> Optional[PropagationPath]:
        return self.paths[0] if self.paths else None


def snr_model(path_length: float, order: int, cfg: ChannelConfig) -> float:
    if not path_length > 0:
        raise InvalidPath(f"path length must be positive, got {path_length}")
    fspl_db = 20.0 * math.log10(4.0 * math.pi * path_length / cfg.wavelength)
    return cfg.tx_power_dbm - fspl_db - order * cfg.reflection_loss_db - cfg.noise_floor_dbm


def _make_path(
    gmt: Vec3,
    uav: Vec3,
    points: Sequence[Vec3],
    facet_ids: Sequence[int],
    cfg: Optional[ChannelConfig],
) -> PropagationPath:
    chain = [gmt, *points, uav]
    length = float(sum(np.linalg.norm(chain[i + 1] - chain[i]) for i in range(len(chain) - 1)))
    order = len(points)
    snr = snr_model(length, order, cfg) if cfg is not None else float("nan")
    return PropagationPath(
        order=order,
        reflection_points=tuple(np.array(p, dtype=np.float64) for p in points),
        facet_ids=tuple(int(f) for f in facet_ids),
        delay=length / SPEED_OF_LIGHT,
        aoa=aoa_from_points(uav, chain[-2]),
        aod=aoa_from_points(gmt, chain[1]),
        snr_db=snr,
        path_length=length,
    )


def _plane_crossing(a: Vec3, b: Vec3, facet: Facet) -> Optional[Vec3]:
    """Point where segment a->b crosses the facet plane, if a and b straddle it."""
    sa = facet.signed_distance(a)
    sb = facet.signed_distance(b)
    if sa * sb >= 0.0:
        return None
    return a + (sa / (sa - sb)) * (b - a)


def trace_los(gmt: Vec3, uav: Vec3, mesh: SceneMesh, cfg: Optional[ChannelConfig] = None) -> Optional[PropagationPath]:
    if segment_occluded(gmt, uav, mesh):
        return None
    return _make_path(gmt, uav, [], [], cfg)


def trace_first_order(gmt: Vec3, uav: Vec3, mesh: SceneMesh, cfg: Optional[ChannelConfig] = None) -> List[PropagationPath]:
    if not mesh.facets:
        return []
    side_g = mesh.normals @ gmt - mesh.offsets
    side_u = mesh.normals @ uav - mesh.offsets
    same_side = (side_g * side_u > 0.0) & (np.abs(side_g) > SIDE_EPS_M) & (np.abs(side_u) > SIDE_EPS_M)

    paths: List[PropagationPath] = []
    for idx in np.flatnonzero(same_side):
        facet = mesh.facets[idx]
        image = mirror_point(gmt, facet)
        point = _plane_crossing(uav, image, facet)
        if point is None or not facet.contains(point):
            continue
        ignore = {facet.facet_id}
        if segment_occluded(gmt, point, mesh, ignore) or segment_occluded(point, uav, mesh, ignore):
            continue
        paths.append(_make_path(gmt, uav, [point], [facet.facet_id], cfg))
    return paths


def trace_second_order(gmt: Vec3, uav: Vec3, mesh: SceneMesh, cfg: Optional[ChannelConfig] = None) -> List[PropagationPath]:
    if len(mesh.facets) < 2:
        return []
    side_g = mesh.normals @ gmt - mesh.offsets
    # First images of the GMT across every plane, shape (F, 3).
    images = gmt[None, :] - 2.0 * side_g[:, None] * mesh.normals

    paths: List[PropagationPath] = []
    for i, f1 in enumerate(mesh.facets):
        if abs(side_g[i]) <= SIDE_EPS_M:
            continue
        img1 = images[i]
        for j, f2 in enumerate(mesh.facets):
            if i == j:
                continue
            img2 = mirror_point(img1, f2)
            p2 = _plane_crossing(uav, img2, f2)
            if p2 is None or not f2.contains(p2):
                continue
            p1 = _plane_crossing(p2, img1, f1)
            if p1 is None or not f1.contains(p1):
                continue
            if abs(f1.signed_distance(p2)) <= SIDE_EPS_M:
                continue
            if (
                segment_occluded(gmt, p1, mesh, {f1.facet_id})
                or segment_occluded(p1, p2, mesh, {f1.facet_id, f2.facet_id})
                or segment_occluded(p2, uav, mesh, {f2.facet_id})
            ):
                continue
            paths.append(_make_path(gmt, uav, [p1, p2], [f1.facet_id, f2.facet_id], cfg))
    return paths


def sort_paths(paths: Iterable[PropagationPath]) -> Tuple[PropagationPath, ...]:
    """SNR descending, then shorter delay, then smaller facet-id tuple."""
    return tuple(sorted(paths, key=PropagationPath.sort_key))


def snapshot(gmt: Vec3, uav: Vec3, mesh: SceneMesh, cfg: ChannelConfig, time_step: int = 0) -> ChannelSnapshot:
    gmt = np.asarray(gmt, dtype=np.float64)
    uav = np.asarray(uav, dtype=np.float64)
    found: List[PropagationPath] = []
    los = trace_los(gmt, uav, mesh, cfg)
    if los is not None:
        found.append(los)
    if cfg.max_order >= 1:
        found.extend(trace_first_order(gmt, uav, mesh, cfg))
    if cfg.max_order >= 2:
        found.extend(trace_second_order(gmt, uav, mesh, cfg))
    logger.debug("snapshot t=%d: %d paths", time_step, len(found))
    return ChannelSnapshot(paths=sort_paths(found), gmt_pos=gmt, uav_pos=uav, time_step=time_step)
