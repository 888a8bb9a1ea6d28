"""
Labelled snapshot generation for classifier training.

Every (transmitter, receiver) pair of a receiver grid yields one snapshot
labelled with the bounce order of its strongest path. Receivers inside an
obstacle or without any path are skipped. Work is split per transmitter and
can run on a process pool (CSLAM_WORKERS); the estimation seed of each pair
depends only on its (tx, rx) indices, so the output is the same for any
worker count.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from channel.estimation import NoiseConfig, estimate
from channel.geometry import SceneMesh, as_vec3
from channel.raytracer import ChannelConfig, snapshot
from common.errors import EmptyDataset
from common.seeding import STREAM_ESTIMATION, derive_seed
from common.telemetry import TelemetryLogger, start_run
from common.tracing import stage_span
from mapping.lscn import LscnDataset
from slam.config import RxGrid

logger = logging.getLogger(__name__)

WORKERS = int(os.environ.get("CSLAM_WORKERS", "1"))

# Grid used for the full-scale construction: 120 x 120 receivers on 20 levels.
FULL_SCALE_GRID = (120, 120, 20)


def _rows_for_tx(
    mesh: SceneMesh,
    rx_points: np.ndarray,
    tx_idx: int,
    tx,
    channel: ChannelConfig,
    noise: NoiseConfig,
    K: int,
    master_seed: int,
) -> Tuple[List[np.ndarray], List[int], int]:
    feats: List[np.ndarray] = []
    labels: List[int] = []
    skipped = 0
    tx = as_vec3(tx)
    for rx_idx, rx in enumerate(rx_points):
        if not mesh.is_free(rx) or np.allclose(rx, tx):
            skipped += 1
            continue
        snap = snapshot(tx, rx, mesh, channel, time_step=rx_idx)
        if not snap.paths:
            skipped += 1
            continue
        est = estimate(snap, K, noise, derive_seed(master_seed, STREAM_ESTIMATION, tx_idx, rx_idx))
        feats.append(est.features())
        labels.append(int(est.true_link_state))
    return feats, labels, skipped


def generate_lscn_dataset(
    mesh: SceneMesh,
    rx_grid: RxGrid,
    tx_positions: Sequence,
    channel: ChannelConfig,
    noise: NoiseConfig,
    K: int,
    master_seed: int = 0,
    workers: Optional[int] = None,
    telemetry: Optional[TelemetryLogger] = None,
) -> LscnDataset:
    workers = WORKERS if workers is None else workers
    rx_points = rx_grid.points()
    attrs = {"dataset.scene": mesh.name, "dataset.rx_count": len(rx_points), "dataset.tx_count": len(tx_positions)}
    with stage_span("generate_lscn_dataset", **attrs) as span:
        jobs = [
            (mesh, rx_points, i, tx, channel, noise, K, master_seed)
            for i, tx in enumerate(tx_positions)
        ]
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as executor:
                futures = [executor.submit(_rows_for_tx, *job) for job in jobs]
                results = [f.result() for f in futures]
        else:
            results = [_rows_for_tx(*job) for job in jobs]

        feats: List[np.ndarray] = []
        labels: List[int] = []
        skipped = 0
        for f, l, s in results:
            feats.extend(f)
            labels.extend(l)
            skipped += s
        span.set_attribute("dataset.rows", len(labels))
        span.set_attribute("dataset.skipped", skipped)

    if skipped:
        logger.info("skipped %d receiver positions (inside obstacles or no path)", skipped)
    events = start_run(telemetry)
    if events:
        events.event(
            "dataset",
            f"{len(labels)} snapshots from {len(tx_positions)} transmitters",
            rows=len(labels),
            skipped=skipped,
            scene=mesh.name,
            K=K,
        )
    if not labels:
        return LscnDataset.empty(K)
    return LscnDataset(np.stack(feats), np.asarray(labels, dtype=np.int64))


def require_rows(dataset: LscnDataset, what: str) -> LscnDataset:
    if len(dataset) == 0:
        raise EmptyDataset(f"{what}: no snapshot had a propagation path")
    return dataset
