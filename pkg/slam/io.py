"""
File formats.

    point cloud   ASCII PLY 1.0, vertex properties x y z error_m
    dataset       CSV preceded by one "# cslam-dataset v1 K=<K>" line;
                  3K features written with 17 significant digits, then label
    model         JSON with format/version, K, architecture, weights, scaler
    reports       CSV through pandas (history, K sweep, metrics, confusion,
                  top-K paths, noise sweep, per-step poses)

Writers are deterministic. Readers raise FormatError with the offending line
instead of guessing.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from channel.estimation import FeatureScaler, LinkState
from channel.raytracer import ChannelSnapshot
from common.errors import FormatError, IoError
from mapping.lscn import DenseLayer, EpochRecord, LscnDataset, LscnModel, SweepRow
from slam.runner import NoiseSweepRow, PointCloudMap, RunReport

PathLike = Union[str, Path]

DATASET_VERSION = 1
MODEL_FORMAT = "cslam-lscn"
MODEL_VERSION = 1
UNPAIRED_ERROR = -1.0

_DATASET_MAGIC = re.compile(r"^# cslam-dataset v(\d+) K=(\d+)$")


def _open_for_write(path: PathLike):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_text(path: PathLike) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


# -- point cloud -------------------------------------------------------------

def export_ply(cloud: PointCloudMap, path: PathLike) -> None:
    """Write ``cloud`` as ASCII PLY; unpaired points carry error_m = -1."""
    rows = []
    for p in cloud:
        if not np.all(np.isfinite(p.mapped)):
            raise ValueError(f"non-finite mapped point at t={p.time_step}")
        err = UNPAIRED_ERROR if p.truth is None else p.error_m
        rows.append((*p.mapped, err))
    write_ply_points(rows, path)


def write_ply_points(rows: Sequence[Tuple[float, float, float, float]], path: PathLike) -> None:
    try:
        with _open_for_write(path) as f:
            f.write("ply\n")
            f.write("format ascii 1.0\n")
            f.write(f"element vertex {len(rows)}\n")
            f.write("property double x\n")
            f.write("property double y\n")
            f.write("property double z\n")
            f.write("property double error_m\n")
            f.write("end_header\n")
            for x, y, z, err in rows:
                f.write(f"{x:.17g} {y:.17g} {z:.17g} {err:.17g}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def export_truth_ply(points: Iterable[Tuple[int, np.ndarray]], path: PathLike) -> None:
    write_ply_points([(*p, 0.0) for _, p in points], path)


def read_ply(path: PathLike) -> np.ndarray:
    """Vertices of an ASCII PLY written by ``write_ply_points``, shape (N, 4)."""
    lines = _read_text(path).splitlines()
    if not lines or lines[0] != "ply":
        raise FormatError("missing 'ply' magic", line=1, path=str(path))
    if len(lines) < 2 or lines[1] != "format ascii 1.0":
        raise FormatError("only 'format ascii 1.0' is supported", line=2, path=str(path))
    count: Optional[int] = None
    props: List[str] = []
    end = None
    for i, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if line == "end_header":
            end = i
            break
        if parts[:2] == ["element", "vertex"] and len(parts) == 3:
            count = int(parts[2])
        elif parts[:1] == ["property"] and len(parts) == 3:
            props.append(parts[2])
        elif parts[:1] != ["comment"]:
            raise FormatError(f"unexpected header line {line!r}", line=i, path=str(path))
    if end is None or count is None:
        raise FormatError("incomplete header", line=len(lines), path=str(path))
    body = lines[end:]
    if len(body) != count:
        raise FormatError(f"header declares {count} vertices, found {len(body)}", line=end + len(body), path=str(path))
    out = np.zeros((count, len(props)))
    for j, line in enumerate(body):
        parts = line.split()
        if len(parts) != len(props):
            raise FormatError(f"expected {len(props)} values", line=end + j + 1, path=str(path))
        out[j] = [float(v) for v in parts]
    return out


# -- dataset -----------------------------------------------------------------

def dataset_columns(K: int) -> List[str]:
    cols = []
    for k in range(1, K + 1):
        cols += [f"tau_{k}", f"theta_{k}", f"phi_{k}"]
    return cols + ["label"]


def write_dataset(dataset: LscnDataset, path: PathLike) -> None:
    with _open_for_write(path) as f:
        f.write(f"# cslam-dataset v{DATASET_VERSION} K={dataset.K}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(dataset_columns(dataset.K))
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([f"{v:.17g}" for v in row] + [int(label)])


def read_dataset(path: PathLike) -> LscnDataset:
    text = _read_text(path)
    lines = text.splitlines()
    src = str(path)
    if not lines:
        raise FormatError("empty file", line=1, path=src)
    m = _DATASET_MAGIC.match(lines[0])
    if not m:
        raise FormatError("missing '# cslam-dataset v<version> K=<K>' line", line=1, path=src)
    version, K = int(m.group(1)), int(m.group(2))
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", line=1, path=src)
    if K < 1:
        raise FormatError(f"K must be >= 1, got {K}", line=1, path=src)
    expected = dataset_columns(K)
    reader = csv.reader(lines[1:])
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("missing column header", line=2, path=src) from None
    if header != expected:
        raise FormatError(f"column header does not match K={K}", line=2, path=src)

    feats: List[List[float]] = []
    labels: List[int] = []
    for lineno, row in enumerate(reader, start=3):
        if len(row) != len(expected):
            raise FormatError(f"expected {len(expected)} fields, got {len(row)}", line=lineno, path=src)
        try:
            values = [float(v) for v in row[:-1]]
            label = int(row[-1])
        except ValueError as exc:
            raise FormatError(f"unparsable value: {exc}", line=lineno, path=src) from exc
        if label not in (0, 1, 2):
            raise FormatError(f"label {label} is not a link state", line=lineno, path=src)
        feats.append(values)
        labels.append(label)
    if not feats:
        return LscnDataset.empty(K)
    return LscnDataset(np.asarray(feats), np.asarray(labels, dtype=np.int64))


# -- model -------------------------------------------------------------------

def _layer_dict(layer: DenseLayer) -> dict:
    return {
        "activation": layer.activation,
        "weights": layer.weights.tolist(),
        "bias": layer.bias.tolist(),
    }


def model_to_dict(model: LscnModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "K": model.K,
        "architecture": model.architecture.model_dump(),
        "stage1": [_layer_dict(l) for l in model.stage1],
        "stage2": [_layer_dict(l) for l in model.stage2],
        "scaler": None
        if model.scaler is None
        else {"mins": model.scaler.mins.tolist(), "maxs": model.scaler.maxs.tolist()},
    }


def model_from_dict(data: dict, source: str = "<model>") -> LscnModel:
    if data.get("format") != MODEL_FORMAT:
        raise FormatError(f"not a {MODEL_FORMAT} model", path=source)
    if data.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {data.get('version')}", path=source)
    try:
        def layers(key: str) -> List[DenseLayer]:
            return [
                DenseLayer(
                    np.asarray(l["weights"], dtype=np.float64),
                    np.asarray(l["bias"], dtype=np.float64),
                    l["activation"],
                )
                for l in data[key]
            ]

        scaler = None
        if data.get("scaler") is not None:
            scaler = FeatureScaler(np.asarray(data["scaler"]["mins"]), np.asarray(data["scaler"]["maxs"]))
        return LscnModel(layers("stage1"), layers("stage2"), int(data["K"]), scaler)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model: {exc}", path=source) from exc


def save_model(model: LscnModel, path: PathLike) -> None:
    with _open_for_write(path) as f:
        json.dump(model_to_dict(model), f, indent=1)
        f.write("\n")


def load_model(path: PathLike) -> LscnModel:
    text = _read_text(path)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from exc
    return model_from_dict(data, str(path))


# -- reports -----------------------------------------------------------------

def _to_csv(df: pd.DataFrame, path: PathLike) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(path, index=False, lineterminator="\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_history_csv(history: Sequence[EpochRecord], path: PathLike) -> None:
    _to_csv(pd.DataFrame([r.to_dict() for r in history]), path)


def write_sweep_csv(rows: Sequence[SweepRow], path: PathLike) -> None:
    _to_csv(pd.DataFrame([r.to_dict() for r in rows]), path)


def write_noise_sweep_csv(rows: Sequence[NoiseSweepRow], path: PathLike) -> None:
    _to_csv(pd.DataFrame([r.to_dict() for r in rows]), path)


def write_metrics_csv(report: RunReport, path: PathLike) -> None:
    summary = report.summary()
    _to_csv(pd.DataFrame({"metric": list(summary), "value": list(summary.values())}), path)


def write_confusion_csv(report: RunReport, path: PathLike) -> None:
    names = [s.name for s in LinkState]
    df = pd.DataFrame(report.confusion, columns=[f"pred_{n}" for n in names])
    df.insert(0, "truth", names)
    _to_csv(df, path)


def write_steps_csv(report: RunReport, path: PathLike) -> None:
    def state_name(v: Optional[int]) -> str:
        return "" if v is None else LinkState(v).name

    _to_csv(
        pd.DataFrame(
            {
                "t": range(len(report.pose_errors)),
                "truth": [state_name(v) for v in report.truth_states],
                "predicted": [state_name(v) for v in report.predictions],
                "pose_error_m": report.pose_errors,
            }
        ),
        path,
    )


def write_paths_csv(snap: ChannelSnapshot, path: PathLike, K: Optional[int] = None) -> None:
    rows = []
    for rank, p in enumerate(snap.paths[:K] if K else snap.paths, start=1):
        rows.append(
            {
                "rank": rank,
                "order": p.order,
                "delay_s": p.delay,
                "path_length_m": p.path_length,
                "theta_rad": p.aoa.theta,
                "phi_rad": p.aoa.phi,
                "snr_db": p.snr_db,
                "facet_ids": " ".join(str(f) for f in p.facet_ids),
                "reflection_points": ";".join(" ".join(f"{v:.6f}" for v in pt) for pt in p.reflection_points),
            }
        )
    columns = ["rank", "order", "delay_s", "path_length_m", "theta_rad", "phi_rad", "snr_db", "facet_ids", "reflection_points"]
    _to_csv(pd.DataFrame(rows, columns=columns), path)
