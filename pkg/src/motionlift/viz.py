"""Matplotlib figure output for the CLI report paths.

Figures are rendered with the Agg backend and written without volatile
metadata so identical runs produce byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import METRIC_FIELDS, MetricsReport  # noqa: E402
from .motion import KeypointSeq2D, Seq3D  # noqa: E402

_SAVEFIG = dict(dpi=110, metadata={"Software": None})


def save_loss_curve_png(losses, path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(np.arange(len(losses)), losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_metrics_png(report: MetricsReport, path) -> None:
    labels = []
    values = []
    for f in METRIC_FIELDS:
        v = getattr(report.aggregate, f)
        if v is not None:
            labels.append(f)
            values.append(v)
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    if values:
        ax.bar(np.arange(len(values)), values, color="tab:blue")
        ax.set_xticks(np.arange(len(values)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        for i, v in enumerate(values):
            ax.text(i, v, f"{v:.3g}", ha="center", va="bottom", fontsize=7)
    ax.set_title(f"aggregate metrics ({len(report.sequences)} sequences)")
    ax.set_ylabel("px / mm / score")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_views_png(views: list[KeypointSeq2D], path, width: int, height: int,
                   labels: list[str] | None = None) -> None:
    """One panel per view: all joint trajectories over time."""
    n = len(views)
    fig, axes = plt.subplots(1, n, figsize=(3.0 * n, 3.2), squeeze=False)
    for v, seq in enumerate(views):
        ax = axes[0][v]
        for k in range(seq.K):
            vis = seq.visibility[:, k]
            ax.plot(seq.coords[vis, k, 0], seq.coords[vis, k, 1], lw=0.6)
        ax.set_xlim(0, width)
        ax.set_ylim(height, 0)
        ax.set_aspect("equal")
        ax.set_title(labels[v] if labels else f"view {v}", fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_topdown_png(tracks: list[tuple[Seq3D, str]], path) -> None:
    """Top-down (x-z) root trajectories of 3D motions."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for seq, label in tracks:
        root = seq.coords.mean(axis=1)
        ax.plot(root[:, 0], root[:, 2], marker=".", ms=3, lw=0.8, label=label)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal")
    ax.grid(alpha=0.3)
    if tracks:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_residual_png(residual_px: np.ndarray, path) -> None:
    """Per-frame mean reprojection residual of a triangulation."""
    fig, ax = plt.subplots(figsize=(6, 3))
    with np.errstate(invalid="ignore"):
        per_frame = np.nanmean(residual_px, axis=1)
    ax.plot(per_frame, lw=1.0)
    ax.set_xlabel("frame")
    ax.set_ylabel("rms reprojection [px]")
    ax.set_title("triangulation residual")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)
