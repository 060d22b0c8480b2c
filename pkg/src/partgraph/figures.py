"""Matplotlib figures written next to the report outputs.

Every function takes data plus an output path, renders with the Agg
backend, and strips volatile metadata so repeated runs give identical
bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KWARGS = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def plot_trace(traces: Mapping[int, Sequence[float]], path: str | Path) -> None:
    """Per-layer learning curves of the data log-likelihood."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for layer_index in sorted(traces):
        values = traces[layer_index]
        ax.plot(range(len(values)), values, marker="o", markersize=3,
                label=f"layer {layer_index}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("log-likelihood")
    ax.legend()
    _finish(fig, path)


def plot_instability(
    rows: Sequence[tuple[str, float]], baseline: Mapping[int, float] | None,
    path: str | Path,
) -> None:
    """Per-node instability bars, with optional per-channel baseline lines."""
    fig, ax = plt.subplots(figsize=(max(6, 0.35 * len(rows)), 4))
    labels = [r[0] for r in rows]
    values = [r[1] for r in rows]
    ax.bar(range(len(rows)), values, color="#4878d0")
    if baseline:
        mean_baseline = float(np.mean(list(baseline.values())))
        ax.axhline(mean_baseline, color="#d65f5f", linestyle="--",
                   label="raw filter peak (mean)")
        ax.legend()
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=90, fontsize=7)
    ax.set_ylabel("location instability")
    _finish(fig, path)


def plot_heatmap(canvas: np.ndarray, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(canvas, cmap="magma", origin="upper")
    ax.set_xticks([])
    ax.set_yticks([])
    _finish(fig, path)


def plot_patch_scores(
    rows: Sequence[tuple[str, float]], path: str | Path
) -> None:
    """Score profile of the images selected for patch extraction."""
    fig, ax = plt.subplots(figsize=(max(5, 0.3 * len(rows)), 3.5))
    ax.bar(range(len(rows)), [r[1] for r in rows], color="#6acc64")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels([r[0] for r in rows], rotation=90, fontsize=7)
    ax.set_ylabel("inference score")
    _finish(fig, path)


def plot_distance_histogram(distances: Sequence[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.hist(distances, bins=min(25, max(5, len(distances) // 2)), color="#4878d0")
    ax.axvline(float(np.median(distances)), color="#d65f5f", linestyle="--",
               label=f"median {np.median(distances):.4f}")
    ax.set_xlabel("normalized distance")
    ax.set_ylabel("images")
    ax.legend()
    _finish(fig, path)
