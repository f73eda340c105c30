"""Static figures for run outputs (PNG, no display needed)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .evaluation import EvalReport
from .geometry import SuperQuadricState, box_corners

_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple", "tab:brown", "tab:pink", "tab:olive")


def _save(fig: Figure, path: Path, config_hash: str | None = None) -> None:
    FigureCanvasAgg(fig)
    meta = {"Software": None}
    if config_hash:
        meta["Description"] = f"config_hash={config_hash}"
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=meta)


def _footprint(q: SuperQuadricState) -> np.ndarray:
    """Top-down outline of the enclosing box (closed polygon in world x, y)."""
    c = q.pose.transform(box_corners(q.alpha))[[0, 2, 6, 4, 0], :2]
    return c


def plot_topdown(path: Path, estimates: Sequence[tuple[SuperQuadricState, int]],
                 ground_truth: Sequence[tuple[SuperQuadricState, int]] = (),
                 class_names: Mapping[int, str] | None = None, camera_xy: np.ndarray | None = None,
                 config_hash: str | None = None) -> None:
    """Map footprints (solid) over ground-truth footprints (dashed)."""
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    names = dict(class_names or {})
    seen = set()
    for q, cid in ground_truth:
        c = _footprint(q)
        ax.plot(c[:, 0], c[:, 1], "--", color="0.5", lw=1)
    for q, cid in estimates:
        c = _footprint(q)
        label = names.get(cid, str(cid)) if cid not in seen else None
        seen.add(cid)
        ax.plot(c[:, 0], c[:, 1], "-", color=_COLORS[cid % len(_COLORS)], lw=1.5, label=label)
    if camera_xy is not None and len(camera_xy):
        ax.plot(camera_xy[:, 0], camera_xy[:, 1], ".", color="k", ms=3, label="cameras")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("map (solid) vs ground truth (dashed)")
    if seen or camera_xy is not None:
        ax.legend(loc="upper right", fontsize=8)
    _save(fig, path, config_hash)


def plot_report(path: Path, report: EvalReport, config_hash: str | None = None) -> None:
    """Per-class F1 bars at each threshold."""
    thresholds = sorted({r["threshold"] for r in report.rows})
    classes = [r["class"] for r in report.rows if r["threshold"] == thresholds[0]]
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot()
    x = np.arange(len(classes))
    width = 0.8 / len(thresholds)
    for k, thr in enumerate(thresholds):
        f1 = [report.row(c, thr)["f1"] for c in classes]
        ax.bar(x + (k - (len(thresholds) - 1) / 2) * width, f1, width, label=f"IoU {thr:g}")
    ax.set_xticks(x)
    ax.set_xticklabels(classes)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    title = "F1 per class"
    if report.matching_accuracy is not None:
        title += f" (matching accuracy {report.matching_accuracy:.3f})"
    ax.set_title(title)
    ax.legend(fontsize=8)
    _save(fig, path, config_hash)


def plot_curves(path: Path, x: Sequence[float], series: Mapping[str, Sequence[float]],
                xlabel: str, ylabel: str, title: str = "") -> None:
    """Line plot of named series over a shared x axis."""
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for name, ys in series.items():
        ax.plot(x, ys, "o-", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)
