"""Figure rendering for run outputs: per-seed curves and cross-run overlays.

Figures are written as SVG next to the CSV/JSON outputs.  Rendering is
byte-deterministic for fixed inputs: the SVG id hash salt is pinned and the
date metadata is suppressed, so reruns produce identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

matplotlib.rcParams["svg.hashsalt"] = "gapweight"

_SAVE_KWARGS = {"format": "svg", "metadata": {"Date": None}}


def read_curve(csv_path) -> tuple[list[float], list[float]]:
    """Pull (t, cumulative value) out of a rounds.csv or trace.csv file."""
    ts, values = [], []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        column = "cum_regret" if "cum_regret" in (reader.fieldnames or []) else "cum_loss"
        for row in reader:
            ts.append(float(row["t"]))
            values.append(float(row[column]))
    return ts, values


def render_curve(csv_path, out_path, label: str) -> Path:
    """One cumulative-regret (or cumulative-loss) curve."""
    ts, values = read_curve(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ts, values, lw=1.2)
    ax.set_xlabel("round t")
    ax.set_ylabel("cumulative regret")
    ax.set_title(label)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return Path(out_path)


def render_overlay(curves: dict[str, tuple[list[float], list[float]]], out_path) -> Path:
    """All runs on one axis, labelled by run name."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label in sorted(curves):
        ts, values = curves[label]
        ax.plot(ts, values, lw=1.2, label=label)
    ax.set_xlabel("round t")
    ax.set_ylabel("cumulative regret")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return Path(out_path)


def plot_result_dirs(result_dirs, out_dir) -> list[Path]:
    """Render per-seed SVGs for every run directory plus one overlay.

    A run directory is any directory containing seed*/rounds.csv or
    seed*/trace.csv (the layouts written by run-bandit and run-regression).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    overlay: dict[str, tuple[list[float], list[float]]] = {}
    for result_dir in result_dirs:
        result_dir = Path(result_dir)
        seed_csvs = sorted(result_dir.glob("seed*/rounds.csv")) + sorted(
            result_dir.glob("seed*/trace.csv")
        )
        if not seed_csvs:
            raise FileNotFoundError(f"no seed*/rounds.csv or seed*/trace.csv under {result_dir}")
        for csv_path in seed_csvs:
            label = f"{result_dir.name}/{csv_path.parent.name}"
            out_path = out_dir / f"{result_dir.name}_{csv_path.parent.name}.svg"
            written.append(render_curve(csv_path, out_path, label))
            overlay[label] = read_curve(csv_path)
    written.append(render_overlay(overlay, out_dir / "overlay.svg"))
    return written
