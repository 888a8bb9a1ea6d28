"""
Hybrid periodic position calibration.

The UAV dead-reckons with IMU displacements and snaps to an absolute position
fix every T_c steps:

    t % T_c == 0    estimate = latest fix
    otherwise       estimate = latest fix + sum of IMU displacements since it

The IMU and the fix source are surrogates: true displacement plus constant
bias plus Gaussian noise, and true position plus isotropic Gaussian noise.
Noise is drawn from per-step (IMU) and per-fix (fix source) seeded streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from channel.geometry import Vec3, as_vec3
from common.seeding import STREAM_BSM, STREAM_IMU, rng_for


class ImuModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_step: float = Field(default=0.05, ge=0)
    bias: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rng_seed: int = 0


class BsmModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_fix: float = Field(default=0.1, ge=0)
    rng_seed: int = 0


@dataclass(frozen=True)
class PositionFix:
    position: Vec3


@dataclass(frozen=True)
class Displacement:
    delta: Vec3


HpcEvent = Union[PositionFix, Displacement]


@dataclass(frozen=True, eq=False)
class HpcState:
    t: int
    n: int
    last_fix: Vec3
    imu_track: Vec3
    estimate: Vec3


def imu_step(model: ImuModel, true_prev: Vec3, true_next: Vec3, t: int) -> Vec3:
    rng = rng_for(model.rng_seed, STREAM_IMU, t)
    noise = rng.standard_normal(3) * model.sigma_step
    return (as_vec3(true_next) - as_vec3(true_prev)) + np.asarray(model.bias, dtype=np.float64) + noise


def bsm_fix(model: BsmModel, true_pos: Vec3, n: int) -> Vec3:
    rng = rng_for(model.rng_seed, STREAM_BSM, n)
    return as_vec3(true_pos) + rng.standard_normal(3) * model.sigma_fix


def hpc_init(fix: Vec3) -> HpcState:
    fix = as_vec3(fix).copy()
    return HpcState(t=0, n=0, last_fix=fix, imu_track=np.zeros(3), estimate=fix.copy())


def is_fix_step(t: int, T_c: int) -> bool:
    return t % T_c == 0


def hpc_update(state: HpcState, T_c: int, event: HpcEvent) -> HpcState:
    """Advance from step ``state.t`` to ``state.t + 1``.

    The event must be a ``PositionFix`` when the new step is a fix step and a
    ``Displacement`` otherwise.
    """
    if T_c < 1:
        raise ValueError(f"T_c must be >= 1, got {T_c}")
    t = state.t + 1
    if is_fix_step(t, T_c):
        if not isinstance(event, PositionFix):
            raise ValueError(f"step {t} is a fix step and needs a PositionFix")
        fix = as_vec3(event.position).copy()
        return HpcState(t=t, n=state.n + 1, last_fix=fix, imu_track=np.zeros(3), estimate=fix.copy())
    if not isinstance(event, Displacement):
        raise ValueError(f"step {t} is a dead-reckoning step and needs a Displacement")
    track = state.imu_track + as_vec3(event.delta)
    return HpcState(t=t, n=state.n, last_fix=state.last_fix, imu_track=track, estimate=state.last_fix + track)


def advance(
    state: HpcState,
    T_c: int,
    imu: ImuModel,
    bsm: BsmModel,
    true_prev: Vec3,
    true_next: Vec3,
) -> HpcState:
    """Draw the sensor reading the next step calls for and apply it."""
    t = state.t + 1
    if is_fix_step(t, T_c):
        event: HpcEvent = PositionFix(bsm_fix(bsm, true_next, state.n + 1))
    else:
        event = Displacement(imu_step(imu, true_prev, true_next, state.t))
    return hpc_update(state, T_c, event)


def dead_reckoning_sum(last_fix: Vec3, displacements: Iterable[Vec3]) -> Vec3:
    """The explicit sum form of the between-fix estimate."""
    total = np.zeros(3)
    for d in displacements:
        total = total + as_vec3(d)
    return as_vec3(last_fix) + total


def simulate_hpc(
    trajectory: Sequence[Vec3],
    T_c: int,
    imu: ImuModel,
    bsm: BsmModel,
    initial_fix: Optional[Vec3] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Run the calibration loop along ``trajectory`` (one position per step).

    Returns the (T+1, 3) estimates and the per-step error norms.
    """
    if not trajectory:
        raise ValueError("trajectory must contain at least the initial position")
    truth = np.asarray([as_vec3(p) for p in trajectory])
    state = hpc_init(bsm_fix(bsm, truth[0], 0) if initial_fix is None else initial_fix)
    estimates = [state.estimate]
    for t in range(1, len(truth)):
        state = advance(state, T_c, imu, bsm, truth[t - 1], truth[t])
        estimates.append(state.estimate)
    est = np.asarray(estimates)
    return est, np.linalg.norm(est - truth, axis=1)
