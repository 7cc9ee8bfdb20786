"""Matplotlib renderings of the report artifacts; every CLI report path
writes these PNGs next to its CSV/JSON output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import LocalityReport, MetricsReport
from .train import TrainHistory


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_training_figure(history: TrainHistory, path) -> Path:
    rec = history.records
    epochs = [r.epoch for r in rec]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6))

    ax = axes[0, 0]
    ax.plot(epochs, [r.l_seg for r in rec], label="segmentation")
    ax.plot(epochs, [r.l_local for r in rec], label="locality")
    ax.plot(epochs, [r.l_dist for r in rec], label="distribution")
    ax.plot(epochs, [r.l_total for r in rec], label="total", ls="--", c="k")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)

    ax = axes[0, 1]
    ax.plot(epochs, [r.lr for r in rec], c="tab:purple")
    ax.set_xlabel("epoch")
    ax.set_ylabel("learning rate")

    ax = axes[1, 0]
    ax.plot(epochs, [r.score_std for r in rec], c="tab:green")
    ax.set_xlabel("epoch")
    ax.set_ylabel("score std")

    ax = axes[1, 1]
    ax.plot(epochs, [r.retention for r in rec], c="tab:orange")
    warm = [r.epoch for r in rec if r.serialization.startswith("static:")]
    if warm and len(warm) < len(rec):
        ax.axvline(max(warm) + 0.5, c="gray", ls=":", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("neighbor retention")

    return _finish(fig, path)


def save_locality_figure(report: LocalityReport, path) -> Path:
    methods = [r.method for r in report.rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3 + 0.3 * len(methods)))
    y = range(len(methods))
    ax1.barh(y, [r.retention for r in report.rows], color="tab:blue")
    ax1.set_yticks(y, methods)
    ax1.set_xlabel(f"neighbor retention (k={report.k}, w={report.window_size})")
    ax1.invert_yaxis()
    ax2.barh(y, [r.mean_extent for r in report.rows], color="tab:red")
    ax2.set_yticks(y, methods)
    ax2.set_xlabel("mean window extent (m)")
    ax2.invert_yaxis()
    return _finish(fig, path)


def save_metrics_figure(report: MetricsReport, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 3.5))
    x = range(len(report.class_names))
    width = 0.38
    ax.bar([i - width / 2 for i in x], report.iou, width, label="IoU")
    ax.bar([i + width / 2 for i in x], report.class_accuracy, width, label="accuracy")
    ax.set_xticks(x, report.class_names, rotation=20)
    ax.set_ylim(0, 1.02)
    ax.axhline(report.miou, c="tab:blue", ls=":", lw=1)
    ax.set_title(f"mIoU {100 * report.miou:.1f}  mAcc {100 * report.macc:.1f}  OA {100 * report.oa:.1f} (%)")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_ablation_figure(rows: list[dict], path) -> Path:
    good = [r for r in rows if not r.get("error")]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ks = [r["k"] for r in good]
    for key, label in (("miou", "mIoU"), ("macc", "mAcc"), ("oa", "OA")):
        ax1.plot(ks, [100 * r[key] for r in good], marker="o", label=label)
    ax1.set_xlabel("neighbor count k")
    ax1.set_ylabel("%")
    ax1.legend(fontsize=8)
    ax2.plot(ks, [r["retention"] for r in good], marker="s", c="tab:orange")
    ax2.set_xlabel("neighbor count k")
    ax2.set_ylabel("neighbor retention")
    return _finish(fig, path)
