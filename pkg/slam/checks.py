"""
Invariant suite run by ``python -m slam.main validate``.

Each check traces the scenario's own trajectory (every step, GMT and UAV at
their true positions) and asserts a geometric property of the traced paths.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from channel.geometry import unit_direction
from channel.raytracer import ChannelSnapshot, snapshot
from common.errors import CslamError, SingularGeometry
from mapping.reflector import (
    FirstOrderObservation,
    candidate_from_path,
    max_abs_residual,
    residuals_multi,
    solve_closed_form,
    solve_parametric,
)
from slam.config import Scenario

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8
SOLVER_TOL_M = 1e-6
RECIPROCITY_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    cases: int
    worst: float
    detail: str = ""


def _snapshots(scenario: Scenario):
    for t in range(scenario.T + 1):
        gmt, uav = scenario.gmt_at(t), scenario.uav_waypoints[t]
        yield t, gmt, uav, snapshot(gmt, uav, scenario.mesh, scenario.channel, time_step=t)


def check_consistency(scenario: Scenario) -> CheckResult:
    try:
        scenario.check()
    except CslamError as exc:
        return CheckResult("scenario-consistency", False, 1, math.nan, str(exc))
    return CheckResult("scenario-consistency", True, 1, 0.0)


def check_first_order_solvers(scenario: Scenario) -> CheckResult:
    """Parametric and closed-form solvers recover the traced reflection point,
    and the branch follows the sign of cos(phi)."""
    worst, cases, singular, branch_errors = 0.0, 0, 0, 0
    for _, gmt, uav, snap in _snapshots(scenario):
        for path in snap.paths:
            if path.order != 1:
                continue
            cases += 1
            obs = FirstOrderObservation.from_path(path, gmt, uav)
            truth = path.reflection_points[0]
            worst = max(worst, float(np.linalg.norm(solve_parametric(obs) - truth)))
            try:
                closed = solve_closed_form(obs)
            except SingularGeometry:
                singular += 1
                continue
            worst = max(worst, float(np.linalg.norm(closed - truth)))
            if (closed[0] >= uav[0]) != (math.cos(path.aoa.phi) >= 0.0):
                branch_errors += 1
    passed = worst < SOLVER_TOL_M and branch_errors == 0
    return CheckResult(
        "first-order-solvers", passed, cases, worst,
        f"{singular} singular (parametric only), {branch_errors} branch mismatches",
    )


def check_residuals(scenario: Scenario) -> CheckResult:
    """Every traced bounce path satisfies the N-bounce constraint system."""
    worst, cases = 0.0, 0
    for _, gmt, uav, snap in _snapshots(scenario):
        for path in snap.paths:
            if path.order == 0:
                continue
            cases += 1
            cand = candidate_from_path(path, scenario.mesh, gmt, uav)
            worst = max(worst, max_abs_residual(residuals_multi(cand)))
    return CheckResult("constraint-residuals", worst < RESIDUAL_TOL, cases, worst)


def reciprocity_gap(forward: ChannelSnapshot, reverse: ChannelSnapshot) -> Tuple[float, str]:
    """Largest mismatch (m, or unit-vector distance for angles) between a
    snapshot and the one traced with the endpoints swapped.

    Paths are paired by their facet sequence, reversed. An unpaired path
    gives an infinite gap.
    """
    by_facets = {tuple(reversed(p.facet_ids)): p for p in reverse.paths}
    if len(by_facets) != len(forward.paths) or len(reverse.paths) != len(forward.paths):
        return math.inf, f"path count {len(forward.paths)} vs {len(reverse.paths)}"
    worst = 0.0
    for path in forward.paths:
        back = by_facets.get(path.facet_ids)
        if back is None:
            return math.inf, f"no reverse path over facets {path.facet_ids}"
        points = zip(path.reflection_points, reversed(back.reflection_points))
        worst = max(
            worst,
            abs(path.path_length - back.path_length),
            max((float(np.linalg.norm(a - b)) for a, b in points), default=0.0),
            float(np.linalg.norm(unit_direction(path.aoa) - unit_direction(back.aod))),
            float(np.linalg.norm(unit_direction(path.aod) - unit_direction(back.aoa))),
        )
    return worst, ""


def check_reciprocity(scenario: Scenario) -> CheckResult:
    """Swapping transmitter and receiver keeps path lengths and reflection points
    and swaps arrival with departure directions."""
    worst, cases = 0.0, 0
    for t, gmt, uav, snap in _snapshots(scenario):
        cases += 1
        gap, detail = reciprocity_gap(snap, snapshot(uav, gmt, scenario.mesh, scenario.channel, time_step=t))
        if math.isinf(gap):
            return CheckResult("reciprocity", False, cases, gap, f"t={t}: {detail}")
        worst = max(worst, gap)
    return CheckResult("reciprocity", worst < RECIPROCITY_TOL, cases, worst)


def check_los_dominance(scenario: Scenario) -> CheckResult:
    """Whenever the direct path exists it is the strongest."""
    violations, cases = 0, 0
    for _, _, _, snap in _snapshots(scenario):
        if any(p.order == 0 for p in snap.paths):
            cases += 1
            if snap.paths[0].order != 0:
                violations += 1
    return CheckResult("los-dominance", violations == 0, cases, float(violations))


CHECKS: List[Callable[[Scenario], CheckResult]] = [
    check_consistency,
    check_first_order_solvers,
    check_residuals,
    check_reciprocity,
    check_los_dominance,
]


def validate_scenario(scenario: Scenario) -> List[CheckResult]:
    results = []
    for check in CHECKS:
        result = check(scenario)
        logger.info("%s: %s (%d cases, worst %.3g)", result.name, "ok" if result.passed else "FAIL", result.cases, result.worst)
        results.append(result)
        if check is check_consistency and not result.passed:
            break
    return results
