"""
Geometric primitives in the world frame.

Conventions:
    - lengths in meters, angles in radians, time in seconds
    - theta is the polar angle from +Z, phi the azimuth from +X in (-pi, pi]
    - u(theta, phi) = (sin(theta)cos(phi), sin(theta)sin(phi), cos(theta))

Vectors are plain ``numpy`` float64 arrays of shape (3,).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import AbstractSet, Iterable, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from common.errors import DegenerateDirection, InvalidScenario

Vec3 = npt.NDArray[np.float64]

SPEED_OF_LIGHT = 299_792_458.0

COPLANAR_TOL_M = 1e-6
OCCLUSION_EPS = 1e-6
RAY_MIN_DISTANCE = 1e-9
POLE_TOL = 1e-12


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=np.float64)


def as_vec3(value: Sequence[float]) -> Vec3:
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (3,):
        raise ValueError(f"expected 3 coordinates, got shape {arr.shape}")
    return arr


def normalize(v: Vec3) -> Vec3:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise DegenerateDirection("cannot normalize a zero vector")
    return v / n


def wrap_angle(phi: float) -> float:
    """Wrap an azimuth into (-pi, pi]."""
    wrapped = math.remainder(phi, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class AoA:
    """Arrival (or departure) direction: polar angle theta, azimuth phi."""

    theta: float
    phi: float


def unit_direction(aoa: AoA) -> Vec3:
    st = math.sin(aoa.theta)
    return np.array(
        [st * math.cos(aoa.phi), st * math.sin(aoa.phi), math.cos(aoa.theta)],
        dtype=np.float64,
    )


def aoa_from_points(src: Vec3, dst: Vec3) -> AoA:
    """Direction from ``src`` towards ``dst``.

    Straight up/down yields theta 0/pi with phi 0.
    """
    d = np.asarray(dst, dtype=np.float64) - np.asarray(src, dtype=np.float64)
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        raise DegenerateDirection(f"coincident points {tuple(src)} and {tuple(dst)}")
    horiz = math.hypot(d[0], d[1])
    theta = math.atan2(horiz, d[2])
    if horiz <= POLE_TOL * norm:
        return AoA(theta=0.0 if d[2] > 0 else math.pi, phi=0.0)
    return AoA(theta=theta, phi=wrap_angle(math.atan2(d[1], d[0])))


def _newell_normal(vertices: np.ndarray) -> Vec3:
    nxt = np.roll(vertices, -1, axis=0)
    n = np.array(
        [
            np.sum((vertices[:, 1] - nxt[:, 1]) * (vertices[:, 2] + nxt[:, 2])),
            np.sum((vertices[:, 2] - nxt[:, 2]) * (vertices[:, 0] + nxt[:, 0])),
            np.sum((vertices[:, 0] - nxt[:, 0]) * (vertices[:, 1] + nxt[:, 1])),
        ]
    )
    return n


@dataclass(frozen=True, eq=False)
class Facet:
    """Planar polygonal reflector.

    ``unit_normal`` follows the vertex winding (right-hand rule). Reflection
    and occlusion are two-sided, so orientation only matters to callers that
    build multi-bounce candidates.
    """

    facet_id: int
    vertices: np.ndarray
    unit_normal: Vec3
    material: Optional[str] = None
    offset: float = field(init=False)
    _axis: int = field(init=False, repr=False)
    _poly2d: np.ndarray = field(init=False, repr=False)
    _lo: np.ndarray = field(init=False, repr=False)
    _hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] < 3:
            raise InvalidScenario(f"facet {self.facet_id}: need at least 3 vertices in 3D")
        normal = np.asarray(self.unit_normal, dtype=np.float64)
        if abs(float(np.linalg.norm(normal)) - 1.0) > 1e-9:
            raise InvalidScenario(f"facet {self.facet_id}: normal is not unit length")
        offset = float(normal @ verts[0])
        if np.max(np.abs(verts @ normal - offset)) > COPLANAR_TOL_M:
            raise InvalidScenario(f"facet {self.facet_id}: vertices are not coplanar")
        axis = int(np.argmax(np.abs(normal)))
        keep = [i for i in range(3) if i != axis]
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "unit_normal", normal)
        object.__setattr__(self, "offset", offset)
        object.__setattr__(self, "_axis", axis)
        object.__setattr__(self, "_poly2d", verts[:, keep])
        object.__setattr__(self, "_lo", verts.min(axis=0) - COPLANAR_TOL_M)
        object.__setattr__(self, "_hi", verts.max(axis=0) + COPLANAR_TOL_M)

    @classmethod
    def from_vertices(
        cls,
        facet_id: int,
        vertices: Iterable[Sequence[float]],
        material: Optional[str] = None,
    ) -> "Facet":
        verts = np.asarray(list(vertices), dtype=np.float64)
        if verts.ndim != 2 or verts.shape[0] < 3:
            raise InvalidScenario(f"facet {facet_id}: need at least 3 vertices")
        n = _newell_normal(verts)
        norm = float(np.linalg.norm(n))
        if norm < 1e-12:
            raise InvalidScenario(f"facet {facet_id}: degenerate polygon")
        return cls(facet_id=facet_id, vertices=verts, unit_normal=n / norm, material=material)

    def signed_distance(self, p: Vec3) -> float:
        return float(self.unit_normal @ p - self.offset)

    def contains(self, p: Vec3) -> bool:
        """Even-odd test of a point already on the supporting plane."""
        if np.any(p < self._lo) or np.any(p > self._hi):
            return False
        keep = [i for i in range(3) if i != self._axis]
        x, y = float(p[keep[0]]), float(p[keep[1]])
        xi, yi = self._poly2d[:, 0], self._poly2d[:, 1]
        xj, yj = np.roll(xi, 1), np.roll(yi, 1)
        straddles = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_cross = (xj - xi) * (y - yi) / (yj - yi) + xi
        return bool(np.count_nonzero(straddles & (x < x_cross)) % 2 == 1)

    def distance_to(self, p: Vec3) -> float:
        """Euclidean distance from ``p`` to the polygon (not just its plane)."""
        h = self.signed_distance(p)
        foot = p - h * self.unit_normal
        if self.contains(foot):
            return abs(h)
        a = self.vertices
        b = np.roll(a, -1, axis=0)
        ab = b - a
        t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        closest = a + t[:, None] * ab
        return float(np.min(np.linalg.norm(closest - p, axis=1)))


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned solid volume; receivers are never placed inside one."""

    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]

    def contains(self, p: Vec3) -> bool:
        return bool(np.all(p > np.asarray(self.lo)) and np.all(p < np.asarray(self.hi)))


class SceneMesh:
    """Collection of facets with batched plane data for occlusion tests.

    An empty mesh is allowed and models an open field.
    """

    def __init__(
        self,
        facets: Sequence[Facet],
        name: str = "custom",
        obstacles: Sequence[Obstacle] = (),
    ) -> None:
        ids = [f.facet_id for f in facets]
        if len(set(ids)) != len(ids):
            raise InvalidScenario(f"scene {name}: duplicate facet ids")
        self.name = name
        self.facets: Tuple[Facet, ...] = tuple(facets)
        self.obstacles: Tuple[Obstacle, ...] = tuple(obstacles)
        self._by_id = {f.facet_id: f for f in self.facets}
        if self.facets:
            self.normals = np.stack([f.unit_normal for f in self.facets])
            self.offsets = np.array([f.offset for f in self.facets])
            all_verts = np.concatenate([f.vertices for f in self.facets])
            self.bounding_box: Tuple[Vec3, Vec3] = (all_verts.min(axis=0), all_verts.max(axis=0))
        else:
            self.normals = np.zeros((0, 3))
            self.offsets = np.zeros(0)
            self.bounding_box = (np.zeros(3), np.zeros(3))
        self.facet_ids = np.array(ids, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.facets)

    def facet(self, facet_id: int) -> Facet:
        return self._by_id[facet_id]

    def is_free(self, p: Vec3) -> bool:
        return not any(ob.contains(p) for ob in self.obstacles)

    def nearest_facet_distance(self, p: Vec3) -> float:
        if not self.facets:
            return math.inf
        return min(f.distance_to(p) for f in self.facets)


def mirror_point(p: Vec3, facet: Facet) -> Vec3:
    return p - 2.0 * facet.signed_distance(p) * facet.unit_normal


def ray_facet_intersect(origin: Vec3, direction: Vec3, facet: Facet) -> Optional[Tuple[Vec3, float]]:
    denom = float(facet.unit_normal @ direction)
    if abs(denom) < 1e-12:
        return None
    dist = (facet.offset - float(facet.unit_normal @ origin)) / denom
    if dist <= RAY_MIN_DISTANCE:
        return None
    point = origin + dist * direction
    if not facet.contains(point):
        return None
    return point, dist


def segment_occluded(a: Vec3, b: Vec3, mesh: SceneMesh, ignore: AbstractSet[int] = frozenset()) -> bool:
    """True iff a facet outside ``ignore`` cuts the open segment (a, b)."""
    if not mesh.facets:
        return False
    d = b - a
    denom = mesh.normals @ d
    num = mesh.offsets - mesh.normals @ a
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    hits = (np.abs(denom) > 1e-15) & (t > OCCLUSION_EPS) & (t < 1.0 - OCCLUSION_EPS)
    for idx in np.flatnonzero(hits):
        facet = mesh.facets[idx]
        if facet.facet_id in ignore:
            continue
        if facet.contains(a + t[idx] * d):
            return True
    return False


def rectangle(facet_id: int, corner: Sequence[float], edge_u: Sequence[float], edge_v: Sequence[float], material: Optional[str] = None) -> Facet:
    """Parallelogram facet spanned by two edges from ``corner``."""
    c = as_vec3(corner)
    u = as_vec3(edge_u)
    v = as_vec3(edge_v)
    return Facet.from_vertices(facet_id, [c, c + u, c + u + v, c + v], material=material)


def box_facets(first_id: int, lo: Sequence[float], hi: Sequence[float], include_floor: bool = False, material: Optional[str] = None) -> Tuple[Facet, ...]:
    """Walls and roof of an axis-aligned box, normals pointing outward."""
    x0, y0, z0 = lo
    x1, y1, z1 = hi
    dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
    faces = [
        rectangle(first_id, (x0, y0, z0), (0, 0, dz), (0, dy, 0), material),      # -X
        rectangle(first_id + 1, (x1, y0, z0), (0, dy, 0), (0, 0, dz), material),  # +X
        rectangle(first_id + 2, (x0, y0, z0), (dx, 0, 0), (0, 0, dz), material),  # -Y
        rectangle(first_id + 3, (x0, y1, z0), (0, 0, dz), (dx, 0, 0), material),  # +Y
        rectangle(first_id + 4, (x0, y0, z1), (dx, 0, 0), (0, dy, 0), material),  # roof
    ]
    if include_floor:
        faces.append(rectangle(first_id + 5, (x0, y0, z0), (0, dy, 0), (dx, 0, 0), material))
    return tuple(faces)
