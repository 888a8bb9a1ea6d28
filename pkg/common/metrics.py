"""Prometheus metrics for one simulation run.

Each run owns a private ``CollectorRegistry`` so repeated runs in one process
(sweeps, tests) never collide on metric names. The CLI dumps the registry in
the text exposition format with ``--prom-textfile``.
"""

from __future__ import annotations

import os

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

METRICS_PREFIX = os.environ.get("CSLAM_METRICS_PREFIX", "cslam")

_ERROR_BUCKETS_M = [0.001, 0.005, 0.01, 0.025, 0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 5.0]


class RunMetrics:
    def __init__(self, prefix: str = METRICS_PREFIX) -> None:
        self.registry = CollectorRegistry()
        self.steps = Counter(
            f"{prefix}_steps_total",
            "Simulated time steps",
            registry=self.registry,
        )
        self.predictions = Counter(
            f"{prefix}_link_state_predictions_total",
            "Link-state predictions by predicted and true state",
            ["predicted", "truth"],
            registry=self.registry,
        )
        self.mapped_points = Counter(
            f"{prefix}_mapped_points_total",
            "Points appended to the map",
            ["paired"],
            registry=self.registry,
        )
        self.position_fixes = Counter(
            f"{prefix}_position_fixes_total",
            "Absolute position fixes applied",
            registry=self.registry,
        )
        self.solver_fallbacks = Counter(
            f"{prefix}_solver_failures_total",
            "Mapping steps skipped because the reflection point was infeasible",
            registry=self.registry,
        )
        self.pose_error = Histogram(
            f"{prefix}_pose_error_meters",
            "Distance between estimated and true UAV position",
            buckets=_ERROR_BUCKETS_M,
            registry=self.registry,
        )
        self.point_error = Histogram(
            f"{prefix}_point_error_meters",
            "Distance between mapped and true reflection point",
            buckets=_ERROR_BUCKETS_M,
            registry=self.registry,
        )
        self.point_mse = Gauge(
            f"{prefix}_point_mse_meters",
            "Mean point error of the finished map",
            registry=self.registry,
        )

    def write(self, path: str) -> None:
        write_to_textfile(path, self.registry)
