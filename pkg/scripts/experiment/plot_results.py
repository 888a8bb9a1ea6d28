#!/usr/bin/env python3
"""
plot_results.py
===============
Generate matplotlib plots from the CSV / PLY outputs of one experiment run.

Reads (whichever exist) from <experiment-dir>/:
  - history.csv        per-epoch classifier loss / accuracy
  - sweep_k.csv        validation accuracy against the number of input paths K
  - noise_sweep.csv    reflection-point error against estimation noise scale
  - steps.csv          per-step link states and UAV pose error
  - confusion.csv      link-state confusion matrix
  - map.ply            mapped reflection points (error_m = -1 when unpaired)
  - truth.ply          true single-bounce reflection points

Outputs (all under <experiment-dir>/plots/):
  - training_history.png
  - k_sweep.png
  - noise_sweep.png
  - pose_error.png
  - confusion.png
  - point_cloud.png

Dependencies:
  pip install matplotlib pandas numpy
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

# ---------------------------------------------------------------------------
# Guard: friendly error if matplotlib / pandas not installed
# ---------------------------------------------------------------------------
try:
    import matplotlib
    matplotlib.use("Agg")          # non-interactive backend
    import matplotlib.pyplot as plt
    import numpy as np
    import pandas as pd
except ImportError as exc:
    print(f"ERROR: missing dependency – {exc}\n"
          "Install with:  pip install matplotlib pandas numpy",
          file=sys.stderr)
    sys.exit(1)

ROOT_DIR = Path(__file__).resolve().parents[2]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from common.errors import CslamError  # noqa: E402
from slam.io import read_ply  # noqa: E402

STYLE = {
    "bg": "white",
    "panel": "#f7f7f7",
    "grid": "#cccccc",
    "text": "#222222",
}
BG = STYLE["bg"]
TEXT_COL = STYLE["text"]
PALETTE = list(plt.get_cmap("tab10").colors)

plt.rcParams.update({
    "figure.facecolor": BG,
    "figure.dpi": 120,
    "axes.facecolor": STYLE["panel"],
    "axes.edgecolor": STYLE["grid"],
    "axes.titlesize": 9,
    "grid.color": STYLE["grid"],
    "grid.linestyle": "--",
    "grid.alpha": 0.6,
    "legend.fontsize": 7,
    "font.size": 9,
})


def _save(fig: plt.Figure, out_path: Path) -> None:
    fig.tight_layout()
    fig.savefig(out_path, bbox_inches="tight", facecolor=BG)
    plt.close(fig)
    print(f"  saved  {out_path}")


def _load_csv(path: Path) -> pd.DataFrame | None:
    if not path.exists():
        print(f"  WARN  {path.name} not found – skipping")
        return None
    df = pd.read_csv(path)
    if df.empty:
        print(f"  WARN  {path.name} is empty – skipping")
        return None
    return df


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------

def plot_training_history(df: pd.DataFrame, out_dir: Path) -> None:
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(10, 3.5))
    ax_loss.plot(df["epoch"], df["train_loss"], label="train")
    ax_loss.plot(df["epoch"], df["val_loss"], label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("cross-entropy")
    ax_loss.set_title("Loss")

    ax_acc.plot(df["epoch"], df["train_acc"], label="train")
    ax_acc.plot(df["epoch"], df["val_acc"], label="validation")
    for col, name in (("recall_los", "LOS recall"), ("recall_first_order", "1st-order recall")):
        if col in df and df[col].notna().any():
            ax_acc.plot(df["epoch"], df[col], linestyle=":", label=name)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.set_title("Accuracy")
    for ax in (ax_loss, ax_acc):
        ax.grid(True)
        ax.legend()
    _save(fig, out_dir / "training_history.png")


def plot_k_sweep(df: pd.DataFrame, out_dir: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(df["K"], df["train_acc"], marker="o", label="train")
    ax.plot(df["K"], df["val_acc"], marker="s", label="validation")
    ax.set_xticks(df["K"])
    ax.set_xlabel("input paths K")
    ax.set_ylabel("accuracy")
    ax.set_title("Link-state accuracy vs K")
    ax.grid(True)
    ax.legend()
    _save(fig, out_dir / "k_sweep.png")


def plot_confusion(df: pd.DataFrame, out_dir: Path) -> None:
    counts = df.drop(columns="truth").to_numpy(dtype=float)
    totals = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)

    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(frac, cmap="Blues", vmin=0.0, vmax=1.0)
    labels = ["LOS", "1st", "higher"]
    ax.set_xticks(range(3), labels)
    ax.set_yticks(range(3), labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(3):
        for j in range(3):
            ax.text(j, i, f"{int(counts[i, j])}", ha="center", va="center",
                    color="white" if frac[i, j] > 0.5 else TEXT_COL, fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046, label="row fraction")
    ax.set_title("Link-state confusion")
    _save(fig, out_dir / "confusion.png")


# ---------------------------------------------------------------------------
# Localization / mapping
# ---------------------------------------------------------------------------

def plot_pose_error(df: pd.DataFrame, out_dir: Path) -> None:
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(df["t"], df["pose_error_m"], linewidth=1.0)
    first = df[df["truth"] == "FIRST_ORDER_NLOS"]
    if not first.empty:
        ax.scatter(first["t"], first["pose_error_m"], s=8, color=PALETTE[3],
                   label="single-bounce steps", zorder=3)
        ax.legend()
    ax.set_xlabel("time step")
    ax.set_ylabel("UAV position error (m)")
    ax.set_title("Localization error")
    ax.grid(True)
    _save(fig, out_dir / "pose_error.png")


def plot_noise_sweep(df: pd.DataFrame, out_dir: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(df["scale"], df["mean_error_m"], marker="o", label="mean")
    ax.plot(df["scale"], df["max_error_m"], marker="^", linestyle="--", label="max")
    ax.set_xlabel("noise scale (x default sigma)")
    ax.set_ylabel("reflection-point error (m)")
    ax.set_title("Mapping error vs estimation noise")
    ax.grid(True)
    ax.legend()
    _save(fig, out_dir / "noise_sweep.png")


def plot_point_cloud(mapped: np.ndarray, truth: np.ndarray | None, out_dir: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    if truth is not None and len(truth):
        ax.scatter(truth[:, 0], truth[:, 1], s=30, facecolors="none",
                   edgecolors=PALETTE[7], label="true")
    paired = mapped[mapped[:, 3] >= 0.0]
    unpaired = mapped[mapped[:, 3] < 0.0]
    if len(paired):
        sc = ax.scatter(paired[:, 0], paired[:, 1], c=paired[:, 3], s=10, cmap="viridis", label="mapped")
        fig.colorbar(sc, ax=ax, label="point error (m)")
    if len(unpaired):
        ax.scatter(unpaired[:, 0], unpaired[:, 1], s=10, marker="x", color=PALETTE[3], label="mapped (unpaired)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"Point cloud, top view ({len(mapped)} points)")
    ax.grid(True)
    ax.legend()
    _save(fig, out_dir / "point_cloud.png")


def _load_ply(path: Path) -> np.ndarray | None:
    if not path.exists():
        return None
    try:
        return read_ply(path)
    except CslamError as exc:
        print(f"  WARN  cannot read {path.name}: {exc}")
        return None


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        description="Plot classifier, localization and mapping results of one experiment.")
    p.add_argument("--experiment-dir", required=True,
                   help="Directory written by run_acceptance.sh (or by hand)")
    return p


def main() -> None:
    args = build_parser().parse_args()
    experiment_dir = Path(args.experiment_dir)
    if not experiment_dir.is_dir():
        print(f"ERROR: experiment-dir does not exist: {experiment_dir}", file=sys.stderr)
        sys.exit(1)
    plots_dir = experiment_dir / "plots"
    plots_dir.mkdir(exist_ok=True)

    for name, plot in (
        ("history.csv", plot_training_history),
        ("sweep_k.csv", plot_k_sweep),
        ("confusion.csv", plot_confusion),
        ("steps.csv", plot_pose_error),
        ("noise_sweep.csv", plot_noise_sweep),
    ):
        df = _load_csv(experiment_dir / name)
        if df is not None:
            plot(df, plots_dir)

    mapped = _load_ply(experiment_dir / "map.ply")
    if mapped is None or not len(mapped):
        print("  WARN  no mapped points – skipping point cloud plot")
    else:
        plot_point_cloud(mapped, _load_ply(experiment_dir / "truth.ply"), plots_dir)

    print(f"\n  all plots saved to {plots_dir}/")


if __name__ == "__main__":
    main()
