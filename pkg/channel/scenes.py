"""
Builtin scenes shipped in code.

    open-field       no facets at all
    single-wall      ground plus one raised wall panel (hoarding); links that
                     the panel blocks can still bounce off the ground beneath it
    parallel-walls   two facing walls, used for the non-uniqueness witness
    box-room         indoor room with a partition wall
    two-buildings    reduced-scale outdoor block: ground and two buildings
    reflector-slice  street slice around one specular wall with a building
                     blocking the direct link (UAV (53.97, 23.24, 2),
                     GMT (28.20, 23.04, 2), reflection point (41.59, 39.09, 2))
"""

from __future__ import annotations

from typing import Callable, Dict, List

import numpy as np

from channel.geometry import (
    Facet,
    Obstacle,
    SceneMesh,
    Vec3,
    as_vec3,
    box_facets,
    normalize,
    rectangle,
)
from common.errors import InvalidScenario

GROUND_MATERIAL = "dielectric"

# Worked configuration of the reflector-slice scene.
SLICE_UAV = (53.97, 23.24, 2.0)
SLICE_GMT = (28.20, 23.04, 2.0)
SLICE_POINT = (41.59, 39.09, 2.0)


def ground(facet_id: int, x0: float, y0: float, x1: float, y1: float) -> Facet:
    return rectangle(facet_id, (x0, y0, 0.0), (x1 - x0, 0.0, 0.0), (0.0, y1 - y0, 0.0), GROUND_MATERIAL)


def specular_wall(
    facet_id: int,
    gmt: Vec3,
    uav: Vec3,
    point: Vec3,
    width: float,
    z_range: tuple,
) -> Facet:
    """Vertical wall through ``point`` oriented so ``point`` is the specular
    reflection point between ``gmt`` and ``uav``."""
    to_g = normalize(gmt - point)
    to_r = normalize(uav - point)
    n = normalize(to_g + to_r)
    if abs(n[2]) > 1e-12:
        raise InvalidScenario("specular wall needs gmt and uav at the height of the point")
    along = np.array([-n[1], n[0], 0.0])
    z0, z1 = z_range
    corner = point - 0.5 * width * along
    corner[2] = z0
    return rectangle(facet_id, corner, width * along, (0.0, 0.0, z1 - z0), GROUND_MATERIAL)


def open_field() -> SceneMesh:
    return SceneMesh([], name="open-field")


def single_wall() -> SceneMesh:
    facets = [
        ground(0, -30.0, -30.0, 30.0, 30.0),
        rectangle(1, (0.0, -15.0, 1.5), (0.0, 30.0, 0.0), (0.0, 0.0, 6.5), GROUND_MATERIAL),
    ]
    return SceneMesh(facets, name="single-wall")


def parallel_walls() -> SceneMesh:
    facets = [
        rectangle(0, (0.0, -20.0, 0.0), (0.0, 40.0, 0.0), (0.0, 0.0, 8.0), GROUND_MATERIAL),
        rectangle(1, (4.0, -20.0, 0.0), (0.0, 0.0, 8.0), (0.0, 40.0, 0.0), GROUND_MATERIAL),
    ]
    return SceneMesh(facets, name="parallel-walls")


def box_room() -> SceneMesh:
    lo, hi = (0.0, 0.0, 0.0), (10.0, 8.0, 3.0)
    room = box_facets(0, lo, hi, include_floor=True, material=GROUND_MATERIAL)
    partition = rectangle(10, (5.0, 0.0, 0.0), (0.0, 5.0, 0.0), (0.0, 0.0, 3.0), GROUND_MATERIAL)
    return SceneMesh(list(room) + [partition], name="box-room")


def two_buildings() -> SceneMesh:
    facets: List[Facet] = [ground(0, 0.0, 0.0, 60.0, 60.0)]
    facets += box_facets(10, (15.0, 20.0, 0.0), (25.0, 40.0, 12.0))
    facets += box_facets(20, (35.0, 10.0, 0.0), (45.0, 30.0, 18.0))
    obstacles = [
        Obstacle((15.0, 20.0, 0.0), (25.0, 40.0, 12.0)),
        Obstacle((35.0, 10.0, 0.0), (45.0, 30.0, 18.0)),
    ]
    return SceneMesh(facets, name="two-buildings", obstacles=obstacles)


def reflector_slice() -> SceneMesh:
    gmt, uav, point = as_vec3(SLICE_GMT), as_vec3(SLICE_UAV), as_vec3(SLICE_POINT)
    facets: List[Facet] = [ground(0, 20.0, 10.0, 62.0, 50.0)]
    facets.append(specular_wall(1, gmt, uav, point, width=20.0, z_range=(0.0, 15.0)))
    facets += box_facets(10, (38.0, 18.0, 0.0), (44.0, 30.0, 10.0))
    obstacles = [Obstacle((38.0, 18.0, 0.0), (44.0, 30.0, 10.0))]
    return SceneMesh(facets, name="reflector-slice", obstacles=obstacles)


BUILTIN_SCENES: Dict[str, Callable[[], SceneMesh]] = {
    "open-field": open_field,
    "single-wall": single_wall,
    "parallel-walls": parallel_walls,
    "box-room": box_room,
    "two-buildings": two_buildings,
    "reflector-slice": reflector_slice,
}


def builtin_scene(name: str) -> SceneMesh:
    try:
        factory = BUILTIN_SCENES[name]
    except KeyError:
        raise InvalidScenario(
            f"unknown builtin scene {name!r}; choose from {sorted(BUILTIN_SCENES)}"
        ) from None
    return factory()
