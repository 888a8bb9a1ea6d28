"""
JSONL event log for simulation runs, dataset builds and training jobs.

Every process writes to logs/<node>_<component>.log, one JSON object per
line. A record is tied to a run through ``run_id``; the step index is the
simulation time step for the runner and the epoch for the trainer.

Wall-clock timestamps are recorded but never read back, so two runs of the
same scenario differ only in ``timestamp_ms`` and ``run_id``.
"""

import json
import math
import os
import socket
import sys
import time
import uuid
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

import numpy as np


LOG_DIR = os.environ.get("CSLAM_LOG_DIR", "logs")
TELEMETRY_ENABLED = os.environ.get("CSLAM_TELEMETRY", "1").lower() in ("1", "true", "yes", "on")


def _node_id() -> str:
    return os.environ.get("NODE_NAME", socket.gethostname())


def _jsonable(value: Any) -> Any:
    """Plain-JSON view of numpy scalars/arrays; NaN and inf become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class TelemetryEvent:
    run_id: str
    component: str
    event_type: str
    message: str
    step: Optional[int] = None
    scenario: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)
    timestamp_ms: int = field(default_factory=lambda: int(time.time() * 1000))


class TelemetryLogger:
    def __init__(
        self,
        component: str,
        log_file: Optional[str] = None,
        scenario: Optional[str] = None,
        enabled: Optional[bool] = None,
    ) -> None:
        self.component = component
        self.scenario = scenario
        self.node_id = _node_id()
        self.enabled = TELEMETRY_ENABLED if enabled is None else enabled
        self.log_file = log_file or os.path.join(LOG_DIR, f"{self.node_id}_{component}.log")
        if self.enabled:
            os.makedirs(os.path.dirname(self.log_file) or ".", exist_ok=True)

    def start_run(self) -> "TelemetryRun":
        return TelemetryRun(self, str(uuid.uuid4()))

    def write(self, event: TelemetryEvent) -> None:
        if not self.enabled:
            return
        record = _jsonable(asdict(event))
        record["node_id"] = self.node_id
        line = json.dumps(record, sort_keys=True)
        try:
            with open(self.log_file, "a", encoding="utf-8") as f:
                f.write(line + "\n")
        except OSError as exc:
            print(f"[telemetry-error] {exc}: {line}", file=sys.stderr)


class TelemetryRun:
    """Events of one run, sharing a run id."""

    def __init__(self, logger: TelemetryLogger, run_id: str) -> None:
        self.logger = logger
        self.run_id = run_id

    def event(self, event_type: str, message: str, step: Optional[int] = None, **extra: Any) -> None:
        self.logger.write(
            TelemetryEvent(
                run_id=self.run_id,
                component=self.logger.component,
                event_type=event_type,
                message=message,
                step=step,
                scenario=self.logger.scenario,
                extra=extra,
            )
        )


def start_run(telemetry: Optional[TelemetryLogger]) -> Optional[TelemetryRun]:
    return telemetry.start_run() if telemetry is not None else None
