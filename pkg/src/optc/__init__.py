"""Learnable point-cloud serialization: a score-predicting sorter trained
with self-supervised locality and distribution losses drives contiguous
windowed attention for semantic segmentation, benchmarked against static
space-filling curves."""

from .geometry import (
    CLASS_NAMES,
    NeighborTable,
    PointCloud,
    SceneConfig,
    generate_scene,
    grid_sample,
    knn,
)
from .curves import (
    CurveVariant,
    DEFAULT_WARMUP_VARIANTS,
    hilbert_decode,
    hilbert_encode,
    morton_decode,
    morton_encode,
    pick_warmup_variant,
    quantize,
    static_order,
)
from .sorter import (
    SorterConfig,
    distribution_loss,
    locality_loss,
    ordering_loss,
    score_points,
    scores_to_permutation,
)
from .backbone import (
    ModelConfig,
    ModelParams,
    partition_windows,
    segmentation_forward,
    segmentation_loss,
    window_attention_forward,
)
from .metrics import (
    LocalityReport,
    MetricsReport,
    accumulate_confusion,
    compute_metrics,
    neighbor_retention,
    window_extent,
)
from .train import TrainConfig, TrainHistory, ablation_sweep, evaluate, train_joint, train_sorter

__version__ = "0.1.0"

__all__ = [
    "CLASS_NAMES",
    "CurveVariant",
    "DEFAULT_WARMUP_VARIANTS",
    "LocalityReport",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "NeighborTable",
    "PointCloud",
    "SceneConfig",
    "SorterConfig",
    "TrainConfig",
    "TrainHistory",
    "ablation_sweep",
    "accumulate_confusion",
    "compute_metrics",
    "distribution_loss",
    "evaluate",
    "generate_scene",
    "grid_sample",
    "hilbert_decode",
    "hilbert_encode",
    "knn",
    "locality_loss",
    "morton_decode",
    "morton_encode",
    "neighbor_retention",
    "ordering_loss",
    "partition_windows",
    "pick_warmup_variant",
    "quantize",
    "score_points",
    "scores_to_permutation",
    "segmentation_forward",
    "segmentation_loss",
    "static_order",
    "train_joint",
    "train_sorter",
    "window_attention_forward",
    "window_extent",
]
