"""
Path-parameter estimation surrogate and feature scaling.

The channel estimator is replaced by zero-mean Gaussian perturbation of the
true delay and arrival angles of the K strongest paths. Snapshots with fewer
than K paths are padded with flagged rows so the classifier always sees 3K
features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from channel.geometry import Vec3, wrap_angle
from channel.raytracer import ChannelSnapshot, PropagationPath
from common.errors import NoPaths

THETA_MARGIN = 1e-12
PADDING_SNR_DB = 0.0


class LinkState(IntEnum):
    LOS = 0
    FIRST_ORDER_NLOS = 1
    HIGHER_ORDER_NLOS = 2

    @classmethod
    def of_order(cls, order: int) -> "LinkState":
        if order <= 0:
            return cls.LOS
        if order == 1:
            return cls.FIRST_ORDER_NLOS
        return cls.HIGHER_ORDER_NLOS


class NoiseConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma_tau: float = Field(default=0.1e-9, ge=0)
    sigma_theta: float = Field(default=math.radians(0.2), ge=0)
    sigma_phi: float = Field(default=math.radians(0.2), ge=0)

    def scaled(self, factor: float) -> "NoiseConfig":
        return NoiseConfig(
            sigma_tau=self.sigma_tau * factor,
            sigma_theta=self.sigma_theta * factor,
            sigma_phi=self.sigma_phi * factor,
        )


ZERO_NOISE = NoiseConfig(sigma_tau=0.0, sigma_theta=0.0, sigma_phi=0.0)


@dataclass(frozen=True)
class PathEstimate:
    tau_hat: float
    theta_hat: float
    phi_hat: float
    snr_db: float
    padded: bool = False


@dataclass(frozen=True, eq=False)
class Snapshot:
    estimates: Tuple[PathEstimate, ...]
    true_link_state: LinkState
    true_first_reflection: Optional[Vec3] = None
    time_step: int = 0

    @property
    def K(self) -> int:
        return len(self.estimates)

    def features(self) -> np.ndarray:
        """Raw 3K feature row: (tau, theta, phi) per path, strongest first."""
        return np.array(
            [v for e in self.estimates for v in (e.tau_hat, e.theta_hat, e.phi_hat)],
            dtype=np.float64,
        )


def _fold_angles(theta: float, phi: float) -> Tuple[float, float]:
    """Map a perturbed (theta, phi) back onto the sphere's canonical ranges."""
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta < 0.0:
        theta = -theta
        phi += math.pi
    if theta > math.pi:
        theta = 2.0 * math.pi - theta
        phi += math.pi
    theta = min(max(theta, THETA_MARGIN), math.pi - THETA_MARGIN)
    return theta, wrap_angle(phi)


def _padding_row(max_delay: float) -> PathEstimate:
    return PathEstimate(
        tau_hat=2.0 * max_delay,
        theta_hat=math.pi / 2.0,
        phi_hat=0.0,
        snr_db=PADDING_SNR_DB,
        padded=True,
    )


def estimate(snapshot: ChannelSnapshot, K: int, noise: NoiseConfig, rng_seed: int) -> Snapshot:
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if not snapshot.paths:
        raise NoPaths(f"no propagation paths at t={snapshot.time_step}")
    rng = np.random.default_rng(rng_seed)
    top: Sequence[PropagationPath] = snapshot.paths[:K]
    # One (tau, theta, phi) triple of standard normals per kept path, drawn
    # before scaling so different noise levels share the same draws.
    z = rng.standard_normal((len(top), 3))

    rows: List[PathEstimate] = []
    for path, (zt, zth, zph) in zip(top, z):
        tau_hat = path.delay + noise.sigma_tau * zt
        if tau_hat <= 0.0:
            tau_hat = np.finfo(np.float64).tiny
        theta_hat, phi_hat = _fold_angles(
            path.aoa.theta + noise.sigma_theta * zth,
            path.aoa.phi + noise.sigma_phi * zph,
        )
        if noise.sigma_theta == 0.0 and noise.sigma_phi == 0.0:
            theta_hat, phi_hat = path.aoa.theta, path.aoa.phi
        rows.append(PathEstimate(float(tau_hat), theta_hat, phi_hat, path.snr_db))

    max_delay = max(p.delay for p in top)
    while len(rows) < K:
        rows.append(_padding_row(max_delay))

    strongest = snapshot.paths[0]
    first_reflection = strongest.reflection_points[0] if strongest.order == 1 else None
    return Snapshot(
        estimates=tuple(rows),
        true_link_state=LinkState.of_order(strongest.order),
        true_first_reflection=first_reflection,
        time_step=snapshot.time_step,
    )


@dataclass
class FeatureScaler:
    """Per-feature affine min-max map onto [-1, 1]."""

    mins: np.ndarray
    maxs: np.ndarray
    _span: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.mins = np.asarray(self.mins, dtype=np.float64)
        self.maxs = np.asarray(self.maxs, dtype=np.float64)
        self._span = self.maxs - self.mins

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureScaler":
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return cls(mins=x.min(axis=0), maxs=x.max(axis=0))

    @property
    def width(self) -> int:
        return int(self.mins.shape[0])

    def transform(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        constant = self._span == 0.0
        safe = np.where(constant, 1.0, self._span)
        out = 2.0 * (x - self.mins) / safe - 1.0
        return np.where(constant, 0.0, out)

    def inverse_transform(self, scaled: np.ndarray) -> np.ndarray:
        s = np.asarray(scaled, dtype=np.float64)
        return (s + 1.0) * 0.5 * self._span + self.mins

    def truncated(self, width: int) -> "FeatureScaler":
        return FeatureScaler(mins=self.mins[:width].copy(), maxs=self.maxs[:width].copy())


def normalize_features(snapshots: Sequence[Snapshot]) -> Tuple[np.ndarray, FeatureScaler]:
    if not snapshots:
        raise ValueError("normalize_features needs at least one snapshot")
    raw = np.stack([s.features() for s in snapshots])
    scaler = FeatureScaler.fit(raw)
    return scaler.transform(raw), scaler
