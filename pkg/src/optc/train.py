"""Training orchestration: sorter pretraining, static-curve warmup, joint
training with the combined segmentation + ordering objective, evaluation,
and the neighbor-count ablation sweep. Fixed seeds give bit-identical runs."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import backbone, nn, sorter as sorter_mod
from .curves import (
    CurveVariant,
    DEFAULT_WARMUP_VARIANTS,
    pick_warmup_variant,
    static_order,
)
from .geometry import NeighborTable, PointCloud, knn
from .metrics import (
    LocalityReport,
    LocalityRow,
    MetricsReport,
    accumulate_confusion,
    compute_metrics,
    neighbor_retention,
    new_confusion,
    window_extent,
)

STATIC_VARIANTS = {
    "z": CurveVariant("z_order"),
    "z-rev": CurveVariant("z_order", reversed=True),
    "hilbert": CurveVariant("hilbert"),
    "hilbert-rev": CurveVariant("hilbert", reversed=True),
}

SERIALIZATION_MODES = ("learned", "shuffle", *STATIC_VARIANTS)


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


@dataclass
class TrainConfig:
    epochs: int = 200
    warmup_epochs: int = 5
    ordering_weight: float = 1.0  # weight of the ordering term in the joint loss
    seg_weight: float = 1.0
    seed: int = 0
    max_lr: float = 0.006
    weight_decay: float = 0.01
    # the sorter optimizes a different objective at a different scale; decay
    # fights the full-range score target, so it defaults to zero
    sorter_max_lr: float | None = None  # None: follow max_lr
    sorter_weight_decay: float = 0.0
    lr_warmup_fraction: float = 0.1
    div_factor: float = 25.0
    final_div_factor: float = 1000.0
    bits_per_axis: int = 10
    serialization: str = "learned"
    checkpoint_every: int = 0  # epochs; 0 writes only the final checkpoint
    sorter: sorter_mod.SorterConfig = field(default_factory=sorter_mod.SorterConfig)
    model: backbone.ModelConfig = field(default_factory=backbone.ModelConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("train.epochs must be >= 1")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError("train.warmup_epochs must lie in [0, epochs]")
        if self.ordering_weight < 0:
            raise ValueError("train.ordering_weight must be >= 0")
        if self.seg_weight < 0:
            raise ValueError("train.seg_weight must be >= 0")
        if self.max_lr <= 0:
            raise ValueError("train.max_lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("train.weight_decay must be >= 0")
        if self.sorter_max_lr is not None and self.sorter_max_lr <= 0:
            raise ValueError("train.sorter_max_lr must be positive")
        if self.sorter_weight_decay < 0:
            raise ValueError("train.sorter_weight_decay must be >= 0")
        if self.serialization not in SERIALIZATION_MODES:
            raise ValueError(
                f"train.serialization must be one of {SERIALIZATION_MODES}"
            )
        if self.checkpoint_every < 0:
            raise ValueError("train.checkpoint_every must be >= 0")
        if not 1 <= self.bits_per_axis <= 20:
            raise ValueError("train.bits_per_axis must lie in [1, 20]")


@dataclass
class EpochRecord:
    epoch: int
    l_seg: float
    l_local: float
    l_dist: float
    l_total: float
    lr: float
    score_std: float
    retention: float
    serialization: str
    wall_time: float

    def to_dict(self, include_wall_time: bool = False) -> dict:
        out = {
            "epoch": self.epoch,
            "l_seg": self.l_seg,
            "l_local": self.l_local,
            "l_dist": self.l_dist,
            "l_total": self.l_total,
            "lr": self.lr,
            "score_std": self.score_std,
            "retention": self.retention,
            "serialization": self.serialization,
        }
        if include_wall_time:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_jsonl(self) -> str:
        # wall time is measurement, not state: keeping it out of the emitted
        # records is what makes identical runs byte-identical
        return "".join(
            json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records
        )

    def write_jsonl(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def _check_clouds(clouds: list[PointCloud], k: int, need_labels: bool) -> None:
    if not clouds:
        raise ValueError("need at least one point cloud")
    if min(c.n for c in clouds) <= k:
        raise ValueError("sorter.k must be smaller than every cloud")
    widths = {c.feature_count for c in clouds}
    if len(widths) != 1:
        raise ValueError("clouds disagree on feature width")
    if need_labels:
        if any(c.labels is None for c in clouds):
            raise ValueError("training clouds must carry labels")
        if len({c.class_count for c in clouds}) != 1:
            raise ValueError("clouds disagree on class count")


def _neighbor_tables(clouds: list[PointCloud], k: int) -> list[NeighborTable]:
    return [knn(c, k) for c in clouds]


def _scene_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng((int(seed), int(epoch), 1)).permutation(n)


def _require_finite(value: float, what: str, epoch: int) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite {what} at epoch {epoch}")


def train_sorter(
    clouds: list[PointCloud], config: TrainConfig
) -> tuple[nn.MlpParams, TrainHistory]:
    """Optimize the ordering loss alone over the sorter parameters."""
    _check_clouds(clouds, config.sorter.k, need_labels=False)
    rng = np.random.default_rng(config.seed)
    params = sorter_mod.init_sorter(clouds[0].feature_count, config.sorter, rng)
    opt = nn.init_adam(params.named_params(), weight_decay=config.sorter_weight_decay)
    tables = _neighbor_tables(clouds, config.sorter.k)
    total_steps = config.epochs * len(clouds)
    window = config.model.window_size
    sorter_lr = config.sorter_max_lr if config.sorter_max_lr is not None else config.max_lr

    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = _scene_order(config.seed, epoch, len(clouds))
        locals_, dists, stds, retains = [], [], [], []
        lr0 = None
        for ci in order:
            lr = nn.one_cycle_lr(
                step,
                total_steps,
                sorter_lr,
                config.lr_warmup_fraction,
                config.div_factor,
                config.final_div_factor,
            )
            lr0 = lr if lr0 is None else lr0
            scores, cache = sorter_mod.score_points(params, clouds[ci], mode="train")
            loss, grad_scores, parts = sorter_mod.ordering_loss(
                scores, tables[ci], config.sorter
            )
            _require_finite(loss, "ordering loss", epoch)
            grads = sorter_mod.score_backward(params, cache, grad_scores)
            nn.adamw_step(params.named_params(), grads, opt, lr)
            step += 1
            locals_.append(parts["local"])
            dists.append(parts["dist"])
            stds.append(float(scores.std()))
            retains.append(
                neighbor_retention(
                    sorter_mod.scores_to_permutation(scores), tables[ci], window
                )
            )
        l_local = float(np.mean(locals_))
        l_dist = float(np.mean(dists))
        l_ord = config.sorter.local_weight * l_local + config.sorter.dist_weight * l_dist
        history.records.append(
            EpochRecord(
                epoch=epoch,
                l_seg=0.0,
                l_local=l_local,
                l_dist=l_dist,
                l_total=l_ord,
                lr=float(lr0),
                score_std=float(np.mean(stds)),
                retention=float(np.mean(retains)),
                serialization="sorter-only",
                wall_time=time.perf_counter() - t0,
            )
        )
    return params, history


def _epoch_serialization(config: TrainConfig, epoch: int) -> tuple[str, CurveVariant | None]:
    """Which ordering feeds the backbone this epoch: a static variant or the
    learned permutation."""
    if config.serialization == "learned":
        if epoch < config.warmup_epochs:
            variant = pick_warmup_variant(epoch, config.seed, DEFAULT_WARMUP_VARIANTS)
            return f"static:{variant.label}", variant
        return "learned", None
    if config.serialization == "shuffle":
        variant = pick_warmup_variant(epoch, config.seed, DEFAULT_WARMUP_VARIANTS)
        return f"static:{variant.label}", variant
    variant = STATIC_VARIANTS[config.serialization]
    return f"static:{variant.label}", variant


def train_joint(
    clouds: list[PointCloud],
    config: TrainConfig,
    checkpoint_dir: str | Path | None = None,
) -> tuple[backbone.ModelParams, nn.MlpParams, TrainHistory]:
    """Warmup epochs serialize with shuffled static curves while the sorter
    learns from the ordering loss; afterwards the backbone consumes the
    learned permutation. The backbone is driven by the segmentation loss
    only, the sorter by the weighted ordering loss only; no gradient flows
    through the argsort."""
    _check_clouds(clouds, config.sorter.k, need_labels=True)
    rng = np.random.default_rng(config.seed)
    feature_count = clouds[0].feature_count
    class_count = clouds[0].class_count
    sorter_params = sorter_mod.init_sorter(feature_count, config.sorter, rng)
    model = backbone.init_model(feature_count, class_count, config.model, rng)

    sorter_opt = nn.init_adam(sorter_params.named_params(), config.sorter_weight_decay)
    model_opt = nn.init_adam(model.named_params(), config.weight_decay)
    tables = _neighbor_tables(clouds, config.sorter.k)
    total_steps = config.epochs * len(clouds)
    window = config.model.window_size
    sorter_lr = config.sorter_max_lr if config.sorter_max_lr is not None else config.max_lr

    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        source, variant = _epoch_serialization(config, epoch)
        # one permutation per cloud per epoch, from the parameters at epoch start
        perms = []
        for cloud in clouds:
            if variant is not None:
                perms.append(static_order(cloud, variant, config.bits_per_axis))
            else:
                scores, _ = sorter_mod.score_points(sorter_params, cloud, mode="eval")
                perms.append(sorter_mod.scores_to_permutation(scores))

        ord_scale = 1.0 if epoch < config.warmup_epochs else config.ordering_weight
        segs, locals_, dists, stds = [], [], [], []
        lr0 = None
        for ci in _scene_order(config.seed, epoch, len(clouds)):
            cloud = clouds[ci]
            lr = nn.one_cycle_lr(
                step,
                total_steps,
                config.max_lr,
                config.lr_warmup_fraction,
                config.div_factor,
                config.final_div_factor,
            )
            lr0 = lr if lr0 is None else lr0

            # sorter step: weighted ordering loss only
            if ord_scale > 0:
                lr_sorter = nn.one_cycle_lr(
                    step,
                    total_steps,
                    sorter_lr,
                    config.lr_warmup_fraction,
                    config.div_factor,
                    config.final_div_factor,
                )
                scores, scache = sorter_mod.score_points(
                    sorter_params, cloud, mode="train"
                )
                l_ord, grad_scores, parts = sorter_mod.ordering_loss(
                    scores, tables[ci], config.sorter
                )
                _require_finite(l_ord, "ordering loss", epoch)
                grads = sorter_mod.score_backward(
                    sorter_params, scache, ord_scale * grad_scores
                )
                nn.adamw_step(sorter_params.named_params(), grads, sorter_opt, lr_sorter)
            else:
                scores, _ = sorter_mod.score_points(sorter_params, cloud, mode="eval")
                _, _, parts = sorter_mod.ordering_loss(scores, tables[ci], config.sorter)

            # backbone step: segmentation loss only
            logits, cache = backbone.segmentation_forward(
                model, cloud, perms[ci], mode="train"
            )
            l_seg, dlogits = backbone.segmentation_loss(logits, cloud.labels)
            _require_finite(l_seg, "segmentation loss", epoch)
            if config.seg_weight > 0:
                grads, _ = backbone.segmentation_backward(
                    model, cache, config.seg_weight * dlogits
                )
                nn.adamw_step(model.named_params(), grads, model_opt, lr)

            step += 1
            segs.append(l_seg)
            locals_.append(parts["local"])
            dists.append(parts["dist"])
            stds.append(float(scores.std()))

        l_seg = float(np.mean(segs))
        l_local = float(np.mean(locals_))
        l_dist = float(np.mean(dists))
        l_ord = config.sorter.local_weight * l_local + config.sorter.dist_weight * l_dist
        retention = float(
            np.mean(
                [neighbor_retention(p, t, window) for p, t in zip(perms, tables)]
            )
        )
        history.records.append(
            EpochRecord(
                epoch=epoch,
                l_seg=l_seg,
                l_local=l_local,
                l_dist=l_dist,
                l_total=l_seg + config.ordering_weight * l_ord,
                lr=float(lr0),
                score_std=float(np.mean(stds)),
                retention=retention,
                serialization=source,
                wall_time=time.perf_counter() - t0,
            )
        )
        if (
            checkpoint_dir is not None
            and config.checkpoint_every > 0
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            _write_checkpoints(checkpoint_dir, model, sorter_params, config)

    if checkpoint_dir is not None:
        _write_checkpoints(checkpoint_dir, model, sorter_params, config)
    return model, sorter_params, history


def _write_checkpoints(directory, model, sorter_params, config) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    backbone.save_model(directory / "model.ckpt", model)
    sorter_mod.save_sorter(directory / "sorter.ckpt", sorter_params, config.sorter)


def evaluate(
    model: backbone.ModelParams,
    sorter_params: nn.MlpParams,
    clouds: list[PointCloud],
    neighbor_k: int = 8,
) -> tuple[MetricsReport, LocalityReport]:
    """Eval-mode forward with the learned serialization; the confusion matrix
    is accumulated across clouds and reduced once."""
    if not clouds:
        raise ValueError("need at least one point cloud")
    if any(c.labels is None for c in clouds):
        raise ValueError("evaluation clouds must carry labels")
    if any(c.class_count != model.class_count for c in clouds):
        raise ValueError("cloud class count does not match the model")
    confusion = new_confusion(model.class_count)
    retains, extents = [], []
    for cloud in clouds:
        scores, _ = sorter_mod.score_points(sorter_params, cloud, mode="eval")
        perm = sorter_mod.scores_to_permutation(scores)
        logits, _ = backbone.segmentation_forward(model, cloud, perm, mode="eval")
        accumulate_confusion(confusion, logits.argmax(axis=1), cloud.labels)
        table = knn(cloud, neighbor_k)
        retains.append(neighbor_retention(perm, table, model.window_size))
        extents.append(window_extent(perm, cloud, model.window_size))
    report = compute_metrics(confusion, clouds[0].class_names)
    locality = LocalityReport(
        k=neighbor_k,
        window_size=model.window_size,
        rows=[
            LocalityRow(
                method="learned",
                retention=float(np.mean(retains)),
                mean_extent=float(np.mean(extents)),
            )
        ],
    )
    return report, locality


def ablation_sweep(
    train_clouds: list[PointCloud],
    eval_clouds: list[PointCloud],
    base_config: TrainConfig,
    k_values: list[int],
) -> list[dict]:
    """One full train_joint + evaluate per neighbor count, identical seeds.

    Failed runs are recorded with their error message; the sweep continues.
    """
    if not k_values:
        raise ValueError("k_values must be nonempty")
    rows = []
    for k in k_values:
        config = replace(base_config, sorter=replace(base_config.sorter, k=int(k)))
        try:
            model, sorter_params, history = train_joint(train_clouds, config)
            report, locality = evaluate(model, sorter_params, eval_clouds)
            rows.append(
                {
                    "k": int(k),
                    "miou": report.miou,
                    "macc": report.macc,
                    "oa": report.oa,
                    "iou": [float(v) for v in report.iou],
                    "retention": locality.rows[0].retention,
                    "final_l_total": history.records[-1].l_total,
                    "error": None,
                }
            )
        except (TrainingDiverged, ValueError) as exc:
            rows.append({"k": int(k), "error": str(exc)})
    return rows


def ablation_csv(rows: list[dict], class_names: tuple[str, ...] | None = None) -> str:
    header = "k,mIoU,mAcc,OA,retention"
    if class_names:
        header += "," + ",".join(class_names)
    lines = [header]
    for row in rows:
        if row.get("error"):
            lines.append(f"{row['k']},error: {row['error']},,,")
            continue
        cells = [
            str(row["k"]),
            f"{100 * row['miou']:.2f}",
            f"{100 * row['macc']:.2f}",
            f"{100 * row['oa']:.2f}",
            f"{row['retention']:.4f}",
        ]
        if class_names:
            cells += [f"{100 * v:.2f}" for v in row["iou"]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
