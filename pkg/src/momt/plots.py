"""Matplotlib figures rendered next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Ellipse  # noqa: E402

from . import blocks as bk  # noqa: E402
from .frames import FrameSet, frame_rgb  # noqa: E402


def save_convergence_figure(trace, path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if trace:
        iters = [r.iteration for r in trace]
        ax.semilogy(iters, [r.merit for r in trace], "o-", label="KKT residual")
        ax.semilogy(iters, [max(r.cost, 1e-300) for r in trace], "s--", label="cost")
        ax.legend(loc="best")
    ax.set_xlabel("SQP iteration")
    ax.set_ylabel("value")
    ax.set_title("Convergence")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_bench_figure(rows, path, title: str) -> Path:
    """Bar chart of SQP iteration counts per benchmark row."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    labels = [r["label"] for r in rows]
    iters = [r.get("sqp_iters", 0) if r.get("status") == "ok" else 0 for r in rows]
    bars = ax.bar(range(len(rows)), iters, color="tab:blue")
    ax.set_ylim(0, 1.2 * max(iters + [1]))
    for i, r in enumerate(rows):
        if r.get("status") != "ok":
            ax.text(i, 0.1, r.get("status", "error"), ha="center", rotation=90,
                    color="tab:red", clip_on=True)
    ax.bar_label(bars)
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right")
    ax.set_ylabel("SQP iterations")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _montage_axes(n_frames: int):
    cols = min(n_frames, 4)
    rows = (n_frames + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.0 * cols, 3.0 * rows),
                             squeeze=False)
    return fig, [ax for row in axes for ax in row]


def save_frame_montage(frames: FrameSet, path, max_frames: int = 8) -> Path:
    """Overview figure: RGB images (vector) or eigen-ellipse glyphs (matrix)."""
    path = Path(path)
    sel = np.unique(np.linspace(0, frames.n_frames - 1, max_frames).astype(int))
    fig, axes = _montage_axes(len(sel))
    for ax in axes[len(sel):]:
        ax.axis("off")
    if frames.kind == "vector":
        rgb = frame_rgb(frames)
        peak = float(rgb.max()) or 1.0
        for ax, frame in zip(axes, sel):
            ax.imshow(np.clip(rgb[frame].transpose(1, 0, 2) / peak, 0, 1),
                      origin="lower")
            ax.set_title(f"t = {frames.times[frame]:.2f}")
            ax.axis("off")
    else:
        for ax, frame in zip(axes, sel):
            _draw_glyphs(ax, frames, frame)
            ax.set_title(f"t = {frames.times[frame]:.2f}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _draw_glyphs(ax, frames: FrameSet, frame: int, max_glyphs: int = 24) -> None:
    field = frames.fields[frame]
    if frames.grid.dim == 3:
        field = field[:, :, field.shape[2] // 2]  # middle z slice
    elif frames.grid.dim == 1:
        field = field[:, None]
    nx, ny = field.shape[:2]
    full = bk.unpack(field)
    evals, evecs = np.linalg.eigh(full)
    scale = 0.9 / (max(nx, ny) * max(float(evals.max()), 1e-30))
    step = max(1, max(nx, ny) // max_glyphs)
    for i in range(0, nx, step):
        for j in range(0, ny, step):
            lam = evals[i, j]
            v = evecs[i, j][:, -1]
            angle = np.degrees(np.arctan2(v[1] if len(v) > 1 else 0.0, v[0]))
            ax.add_patch(Ellipse(
                (((i + 0.5) / nx), ((j + 0.5) / ny)),
                width=lam[-1] * scale * step, height=lam[0] * scale * step,
                angle=angle, facecolor="tab:blue", alpha=0.8, edgecolor="none",
            ))
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
