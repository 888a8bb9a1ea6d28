"""
First-order reflection-point solvers and multi-bounce constraint residuals.

Given the UAV position R, the GMT position G, the path delay tau and the
arrival direction (theta, phi), a single-bounce reflection point P lies on the
arrival ray from R and on the prolate spheroid |P - R| + |P - G| = c * tau.

Two solvers are provided:

    solve_closed_form   explicit x/y/z expressions in tan(phi) and cot(theta),
                        with the plus/minus branch picked from the sign of
                        cos(phi); undefined at phi = +-pi/2 and at the poles
    solve_parametric    distance along the arrival ray, defined everywhere;
                        this is what the mapping loop uses

Residual evaluators check candidate points against the single-bounce
constraints and against the full N-bounce constraint system. The N = 2
parallel-plane family shows that the multi-bounce system has infinitely many
solutions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

from channel.geometry import SPEED_OF_LIGHT, AoA, SceneMesh, Vec3, as_vec3, unit_direction
from channel.raytracer import PropagationPath
from common.errors import DegenerateSegment, InfeasibleDelay, NotApplicable, SingularGeometry

logger = logging.getLogger(__name__)

SINGULAR_TOL = 1e-9
HORIZ_TOL = 1e-12
SEGMENT_TOL = 1e-12
PARALLEL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FirstOrderObservation:
    uav: Vec3
    gmt: Vec3
    tau: float
    aoa: AoA

    @classmethod
    def from_path(cls, path: PropagationPath, gmt: Vec3, uav: Vec3) -> "FirstOrderObservation":
        return cls(uav=as_vec3(uav), gmt=as_vec3(gmt), tau=path.delay, aoa=path.aoa)

    @property
    def range_m(self) -> float:
        return SPEED_OF_LIGHT * self.tau

    def check_feasible(self) -> None:
        baseline = float(np.linalg.norm(self.uav - self.gmt))
        if not self.range_m > baseline:
            raise InfeasibleDelay(
                f"c*tau = {self.range_m:.6f} m does not exceed |uav - gmt| = {baseline:.6f} m"
            )


@dataclass(frozen=True, eq=False)
class MultiBounceCandidate:
    gmt: Vec3
    uav: Vec3
    points: Tuple[Vec3, ...]
    normals: Tuple[Vec3, ...]
    tau: float
    aoa: AoA

    @property
    def order(self) -> int:
        return len(self.points)

    def chain(self) -> List[Vec3]:
        return [self.gmt, *self.points, self.uav]

    def path_length(self) -> float:
        c = self.chain()
        return float(sum(np.linalg.norm(c[i + 1] - c[i]) for i in range(len(c) - 1)))


class FirstOrderResiduals(NamedTuple):
    azimuth: float
    elevation: float
    delay: float


def solve_closed_form(obs: FirstOrderObservation) -> Vec3:
    obs.check_feasible()
    theta, phi = obs.aoa.theta, obs.aoa.phi
    cos_phi = math.cos(phi)
    sin_theta = math.sin(theta)
    if abs(cos_phi) <= SINGULAR_TOL or sin_theta <= SINGULAR_TOL:
        raise SingularGeometry(
            f"closed form undefined at theta={theta:.12g}, phi={phi:.12g}"
        )

    xr, yr, zr = obs.uav
    xg, yg, zg = obs.gmt
    ct = obs.range_m
    tan_phi = math.tan(phi)
    cot_theta = math.cos(theta) / sin_theta
    sec = math.sqrt(1.0 + tan_phi * tan_phi)
    big_a = math.sqrt((1.0 + tan_phi * tan_phi) * (1.0 + cot_theta * cot_theta))
    # Plus branch for phi in [-pi/2, pi/2], minus branch otherwise.
    s = 1.0 if cos_phi >= 0.0 else -1.0

    dy = yr - yg
    dz = zr - zg
    slope_z = s * cot_theta * sec
    numerator = (
        ct * ct
        + xr * xr
        - xg * xg
        - dy * dy
        - dz * dz
        + 2.0 * (dy * tan_phi + dz * slope_z + s * ct * big_a) * xr
    )
    denominator = 2.0 * (s * ct * big_a + xr - xg + dz * slope_z + dy * tan_phi)
    if abs(denominator) <= SINGULAR_TOL:
        raise SingularGeometry(f"closed form denominator vanishes ({denominator:.3e})")

    xp = numerator / denominator
    yp = yr + tan_phi * (xp - xr)
    zp = zr + slope_z * (xp - xr)
    return np.array([xp, yp, zp], dtype=np.float64)


def solve_parametric(obs: FirstOrderObservation) -> Vec3:
    obs.check_feasible()
    u = unit_direction(obs.aoa)
    gr = obs.gmt - obs.uav
    ct = obs.range_m
    d1 = (ct * ct - float(gr @ gr)) / (2.0 * (ct - float(u @ gr)))
    return obs.uav + d1 * u


SOLVERS: Dict[str, Callable[[FirstOrderObservation], Vec3]] = {
    "parametric": solve_parametric,
    "closed-form": solve_closed_form,
}


def residuals_first(obs: FirstOrderObservation, p: Vec3) -> FirstOrderResiduals:
    """Azimuth, elevation and delay residuals of a single-bounce point.

    The elevation residual is NaN when P sits straight above or below R.
    """
    p = as_vec3(p)
    dx, dy, dz = p - obs.uav
    azimuth = dy - math.tan(obs.aoa.phi) * dx
    horiz = math.hypot(dx, dy)
    if horiz < HORIZ_TOL:
        elevation = float("nan")
    else:
        elevation = dz / horiz - math.tan(math.pi / 2.0 - obs.aoa.theta)
    delay = float(np.linalg.norm(p - obs.uav) + np.linalg.norm(p - obs.gmt)) - obs.range_m
    return FirstOrderResiduals(float(azimuth), float(elevation), delay)


def _unit(v: Vec3) -> Vec3:
    n = float(np.linalg.norm(v))
    if n < SEGMENT_TOL:
        raise DegenerateSegment("zero-length segment in bounce chain")
    return v / n


def residuals_multi(cand: MultiBounceCandidate) -> np.ndarray:
    """Residuals of the N-bounce constraint system, 3N + 3 entries in order:

        [0]                 total length - c * tau
        [1 .. N]            equal-angle: <u(P_i - P_i-1), m_i> - <u(P_i - P_i+1), m_i>
        [N+1 .. 2N]         half-vector: 1 - <h_i, m_i>, h_i the normalized bisector
        [2N+1 .. 3N]        |m_i| - 1
        [3N+1], [3N+2]      arrival azimuth and elevation of the last hop

    The two arrival residuals are cross-multiplied (cos(phi) dy - sin(phi) dx
    and sin(theta) dz - cos(theta) horiz) so they stay finite at phi = +-pi/2
    and at the poles.
    """
    chain = cand.chain()
    n = cand.order
    if len(cand.normals) != n:
        raise ValueError(f"{n} points but {len(cand.normals)} normals")
    for i in range(len(chain) - 1):
        if float(np.linalg.norm(chain[i + 1] - chain[i])) < SEGMENT_TOL:
            raise DegenerateSegment(f"segment {i} -> {i + 1} has zero length")

    out = np.empty(3 * n + 3, dtype=np.float64)
    out[0] = cand.path_length() - SPEED_OF_LIGHT * cand.tau
    for i in range(1, n + 1):
        m = np.asarray(cand.normals[i - 1], dtype=np.float64)
        back = _unit(chain[i - 1] - chain[i])
        fwd = _unit(chain[i + 1] - chain[i])
        out[i] = float(-back @ m) - float(-fwd @ m)
        out[n + i] = 1.0 - float(_unit(back + fwd) @ m)
        out[2 * n + i] = float(np.linalg.norm(m)) - 1.0

    dx, dy, dz = chain[-2] - cand.uav
    theta, phi = cand.aoa.theta, cand.aoa.phi
    out[3 * n + 1] = math.cos(phi) * dy - math.sin(phi) * dx
    out[3 * n + 2] = math.sin(theta) * dz - math.cos(theta) * math.hypot(dx, dy)
    return out


def candidate_from_path(path: PropagationPath, mesh: SceneMesh, gmt: Vec3, uav: Vec3) -> MultiBounceCandidate:
    """Wrap a traced path as a candidate, facet normals turned toward the path."""
    gmt, uav = as_vec3(gmt), as_vec3(uav)
    chain = [gmt, *path.reflection_points]
    normals = []
    for prev, fid in zip(chain, path.facet_ids):
        facet = mesh.facet(fid)
        m = facet.unit_normal
        normals.append(m.copy() if facet.signed_distance(prev) > 0.0 else -m)
    return MultiBounceCandidate(
        gmt=gmt,
        uav=uav,
        points=tuple(np.array(p, dtype=np.float64) for p in path.reflection_points),
        normals=tuple(normals),
        tau=path.delay,
        aoa=path.aoa,
    )


def parallel_plane_family(base: MultiBounceCandidate, d: float) -> MultiBounceCandidate:
    """Slide both bounce points of a parallel-plane double bounce back along
    the incoming ray by ``d``.

    Two reflections off parallel planes leave the travel direction unchanged,
    so the last hop stays on the arrival ray and the total length is kept.
    The result satisfies every residual of ``residuals_multi`` while the
    reflection points differ from ``base``.
    """
    if base.order != 2:
        raise NotApplicable(f"needs a double bounce, got order {base.order}")
    m1, m2 = (np.asarray(m, dtype=np.float64) for m in base.normals)
    if float(np.linalg.norm(np.cross(m1, m2))) > PARALLEL_TOL:
        raise NotApplicable("bounce planes are not parallel")
    if d < 0.0:
        raise ValueError(f"d must be non-negative, got {d}")
    if d == 0.0:
        return base

    p1, p2 = base.points
    first_leg = p1 - base.gmt
    reach = float(np.linalg.norm(first_leg))
    if d >= reach:
        raise NotApplicable(f"d = {d} would move the first bounce past the GMT ({reach:.6f} m)")
    a = first_leg / reach
    return replace(base, points=(p1 - d * a, p2 - d * a))


def max_abs_residual(values: Sequence[float]) -> float:
    return float(np.max(np.abs(np.asarray(values, dtype=np.float64))))
