"""Segmentation quality (confusion matrix, IoU/accuracy summaries) and
serialization quality (neighbor retention, window spatial extent)."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .curves import check_permutation, inverse_permutation
from .geometry import NeighborTable, PointCloud, validate_neighbors


def new_confusion(class_count: int) -> np.ndarray:
    if class_count < 1:
        raise ValueError("class_count must be positive")
    return np.zeros((class_count, class_count), dtype=np.int64)


def accumulate_confusion(
    matrix: np.ndarray, predictions: np.ndarray, labels: np.ndarray
) -> np.ndarray:
    """Add one batch of (truth row, prediction column) counts; associative."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    c = matrix.shape[0]
    if matrix.shape != (c, c):
        raise ValueError("confusion matrix must be square")
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have equal length")
    for name, arr in (("predictions", predictions), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= c):
            raise ValueError(f"{name} contain classes outside [0, {c})")
    matrix += np.bincount(labels * c + predictions, minlength=c * c).reshape(c, c)
    return matrix


@dataclass
class MetricsReport:
    class_names: tuple[str, ...]
    iou: np.ndarray
    class_accuracy: np.ndarray
    miou: float
    macc: float
    oa: float
    degenerate_classes: tuple[int, ...]
    truth_absent_classes: tuple[int, ...]
    total_points: int

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "iou": [float(v) for v in self.iou],
            "class_accuracy": [float(v) for v in self.class_accuracy],
            "miou": self.miou,
            "macc": self.macc,
            "oa": self.oa,
            "degenerate_classes": list(self.degenerate_classes),
            "truth_absent_classes": list(self.truth_absent_classes),
            "total_points": self.total_points,
        }


def compute_metrics(matrix: np.ndarray, class_names=None) -> MetricsReport:
    """Per-class IoU = TP/(TP+FP+FN), class accuracy = TP/(TP+FN), OA = trace/total.

    mIoU averages over every class; a class absent from both truth and
    prediction scores IoU 0 and is flagged as degenerate. mAcc averages only
    over classes present in the ground truth.
    """
    matrix = np.asarray(matrix)
    c = matrix.shape[0]
    if matrix.ndim != 2 or matrix.shape != (c, c) or c < 1:
        raise ValueError("confusion matrix must be square and nonempty")
    if np.any(matrix < 0):
        raise ValueError("confusion counts must be nonnegative")
    total = int(matrix.sum())
    if total == 0:
        raise ValueError("confusion matrix holds no observations")
    if class_names is None:
        class_names = tuple(f"class_{i}" for i in range(c))
    class_names = tuple(class_names)
    if len(class_names) != c:
        raise ValueError("class_names length must match the matrix")

    tp = np.diag(matrix).astype(np.float64)
    fp = matrix.sum(axis=0) - tp
    fn = matrix.sum(axis=1) - tp

    union = tp + fp + fn
    degenerate = union == 0
    iou = np.where(degenerate, 0.0, tp / np.where(degenerate, 1.0, union))

    truth_present = matrix.sum(axis=1) > 0
    denom = np.where(truth_present, tp + fn, 1.0)
    class_accuracy = np.where(truth_present, tp / denom, 0.0)

    return MetricsReport(
        class_names=class_names,
        iou=iou,
        class_accuracy=class_accuracy,
        miou=float(iou.mean()),
        macc=float(class_accuracy[truth_present].mean()),
        oa=float(tp.sum() / total),
        degenerate_classes=tuple(int(i) for i in np.flatnonzero(degenerate)),
        truth_absent_classes=tuple(int(i) for i in np.flatnonzero(~truth_present)),
        total_points=total,
    )


def neighbor_retention(
    perm: np.ndarray, neighbors: NeighborTable, window_size: int
) -> float:
    """Fraction of (point, spatial-neighbor) pairs landing in the same
    contiguous window of the serialized sequence."""
    n = neighbors.n
    perm = check_permutation(perm, n)
    validate_neighbors(neighbors, n)
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    slot = inverse_permutation(perm) // window_size
    centers = np.repeat(np.arange(n), neighbors.k)
    return float(np.mean(slot[centers] == slot[neighbors.indices.ravel()]))


def window_extent(perm: np.ndarray, cloud: PointCloud, window_size: int) -> float:
    """Mean over windows of the RMS distance of members to the window centroid."""
    perm = check_permutation(perm, cloud.n)
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    extents = []
    for s in range(0, cloud.n, window_size):
        pts = cloud.positions[perm[s : s + window_size]]
        centered = pts - pts.mean(axis=0)
        extents.append(np.sqrt(np.mean(np.sum(centered**2, axis=1))))
    return float(np.mean(extents))


@dataclass
class LocalityRow:
    method: str
    retention: float
    mean_extent: float


@dataclass
class LocalityReport:
    k: int
    window_size: int
    rows: list[LocalityRow]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "window_size": self.window_size,
            "rows": [
                {"method": r.method, "retention": r.retention, "mean_extent": r.mean_extent}
                for r in self.rows
            ],
        }


def iou_csv(rows: list[tuple[str, MetricsReport]]) -> str:
    """Per-method IoU table; column order follows the class-name order."""
    if not rows:
        raise ValueError("no report rows")
    names = rows[0][1].class_names
    lines = ["method,mIoU," + ",".join(names)]
    for label, rep in rows:
        cells = [label, _pct(rep.miou)] + [_pct(v) for v in rep.iou]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def acc_csv(rows: list[tuple[str, MetricsReport]]) -> str:
    if not rows:
        raise ValueError("no report rows")
    names = rows[0][1].class_names
    lines = ["method,mAcc,OA," + ",".join(names)]
    for label, rep in rows:
        cells = [label, _pct(rep.macc), _pct(rep.oa)] + [_pct(v) for v in rep.class_accuracy]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def locality_csv(report: LocalityReport) -> str:
    lines = ["method,retention,mean_extent"]
    for r in report.rows:
        lines.append(f"{r.method},{r.retention:.6f},{r.mean_extent:.6f}")
    return "\n".join(lines) + "\n"


def metrics_text_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned human-readable rendering of the IoU and accuracy tables."""
    names = rows[0][1].class_names
    widths = [max(18, *(len(label) for label, _ in rows))] + [
        max(8, len(n) + 2) for n in ("mIoU", "mAcc", "OA", *names)
    ]
    header = ["method", "mIoU", "mAcc", "OA", *names]
    out = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for label, rep in rows:
        cells = [label, _pct(rep.miou), _pct(rep.macc), _pct(rep.oa)]
        cells += [_pct(v) for v in rep.iou]
        out.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(out) + "\n"


def locality_text_table(report: LocalityReport) -> str:
    out = [f"neighbor retention (k={report.k}) and window extent (w={report.window_size})"]
    width = max(18, *(len(r.method) for r in report.rows))
    out.append(f"{'method'.ljust(width)}  retention  mean_extent")
    for r in report.rows:
        out.append(f"{r.method.ljust(width)}  {r.retention:9.4f}  {r.mean_extent:11.4f}")
    return "\n".join(out) + "\n"


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pct(v: float) -> str:
    return f"{100.0 * v:.2f}"
