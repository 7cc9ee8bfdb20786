"""Learnable point sorter: per-point scores in [0, 1], score-based
permutations, and the self-supervised locality / distribution losses with
analytical gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .geometry import NeighborTable, PointCloud, normalized_positions, validate_neighbors


@dataclass
class SorterConfig:
    hidden: tuple[int, int] = (64, 64)
    k: int = 24
    local_weight: float = 1.0
    dist_weight: float = 1.0
    zero_based_ramp: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.k < 1:
            raise ValueError("sorter.k must be >= 1")
        if self.local_weight < 0 or self.dist_weight < 0:
            raise ValueError("loss weights must be nonnegative")


def init_sorter(feature_count: int, config: SorterConfig, rng: np.random.Generator) -> nn.MlpParams:
    """Scoring MLP over concatenated normalized coordinates and raw features."""
    dims = (3 + feature_count, *config.hidden, 1)
    return nn.init_mlp(dims, rng)


@dataclass
class ScoreCache:
    mlp_cache: nn.MlpCache
    scores: np.ndarray


def sorter_inputs(cloud: PointCloud) -> np.ndarray:
    return np.hstack([normalized_positions(cloud), cloud.features])


def score_points(
    params: nn.MlpParams,
    cloud: PointCloud,
    mode: str = "eval",
    update_running: bool = True,
) -> tuple[np.ndarray, ScoreCache]:
    """Per-point score sigmoid(MLP(concat(coords, features))), each in [0, 1]."""
    inputs = sorter_inputs(cloud)
    if inputs.shape[1] != params.layer_dims[0]:
        raise ValueError(
            f"sorter expects input width {params.layer_dims[0]}, cloud has {inputs.shape[1]}"
        )
    raw, cache = nn.mlp_forward(params, inputs, mode=mode, update_running=update_running)
    scores = nn.sigmoid(raw[:, 0])
    return scores, ScoreCache(mlp_cache=cache, scores=scores)


def score_backward(
    params: nn.MlpParams, cache: ScoreCache, grad_scores: np.ndarray
) -> dict[str, np.ndarray]:
    """Parameter gradients of a scalar loss given its gradient w.r.t. scores."""
    s = cache.scores
    grad_raw = (np.asarray(grad_scores) * s * (1.0 - s))[:, None]
    grads, _ = nn.mlp_backward(params, cache.mlp_cache, grad_raw)
    return grads


def scores_to_permutation(scores: np.ndarray) -> np.ndarray:
    """Stable ascending argsort; equal scores keep their original order."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    return np.argsort(scores, kind="stable")


def locality_loss(
    scores: np.ndarray, neighbors: NeighborTable
) -> tuple[float, np.ndarray]:
    """Mean (over points) of the summed squared score gaps to the k neighbors.

    The normalizer is 1/N only, so the magnitude grows with k. The gradient
    accounts for every point's appearances on both sides of a pair.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if n < 2:
        raise ValueError("locality loss needs at least two points")
    validate_neighbors(neighbors, n)
    centers = np.repeat(np.arange(n), neighbors.k)
    others = neighbors.indices.ravel()
    diffs = scores[centers] - scores[others]
    loss = float(diffs @ diffs) / n
    grad = np.zeros(n)
    np.add.at(grad, centers, 2.0 * diffs / n)
    np.add.at(grad, others, -2.0 * diffs / n)
    return loss, grad


def uniform_ramp(n: int, zero_based: bool = False) -> np.ndarray:
    """Target score ladder; one-based puts the top rung at exactly 1."""
    if zero_based:
        return np.arange(n, dtype=np.float64) / n
    return np.arange(1, n + 1, dtype=np.float64) / n


def distribution_loss(
    scores: np.ndarray, zero_based_ramp: bool = False
) -> tuple[float, np.ndarray]:
    """Mean squared deviation of the sorted scores from the uniform ramp.

    The sort is treated as a fixed permutation at the evaluation point, so
    the gradient at original index j is (2/N) * (s_j - ramp[rank(j)]).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores contain non-finite values")
    n = scores.shape[0]
    if n < 1:
        raise ValueError("need at least one score")
    order = np.argsort(scores, kind="stable")
    resid = scores[order] - uniform_ramp(n, zero_based_ramp)
    loss = float(resid @ resid) / n
    grad = np.zeros(n)
    grad[order] = 2.0 * resid / n
    return loss, grad


def ordering_loss(
    scores: np.ndarray,
    neighbors: NeighborTable,
    config: SorterConfig | None = None,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """Weighted sum of the locality and distribution terms (defaults 1.0 each).

    Returns (loss, grad_scores, {"local": ..., "dist": ...}).
    """
    config = config or SorterConfig()
    l_local, g_local = locality_loss(scores, neighbors)
    l_dist, g_dist = distribution_loss(scores, config.zero_based_ramp)
    loss = config.local_weight * l_local + config.dist_weight * l_dist
    grad = config.local_weight * g_local + config.dist_weight * g_dist
    return loss, grad, {"local": l_local, "dist": l_dist}


def sorter_checkpoint_tensors(params: nn.MlpParams) -> dict[str, np.ndarray]:
    return {**params.named_params(), **params.named_buffers()}


def save_sorter(path, params: nn.MlpParams, config: SorterConfig) -> None:
    meta = {
        "kind": "sorter",
        "layer_dims": list(params.layer_dims),
        "k": config.k,
        "local_weight": config.local_weight,
        "dist_weight": config.dist_weight,
        "zero_based_ramp": config.zero_based_ramp,
    }
    nn.save_checkpoint(path, sorter_checkpoint_tensors(params), meta)


def load_sorter(path) -> tuple[nn.MlpParams, SorterConfig]:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "sorter":
        raise ValueError(f"{path}: not a sorter checkpoint")
    dims = meta["layer_dims"]
    params = nn.init_mlp(dims, np.random.default_rng(0))
    for i in range(len(dims) - 1):
        params.weights[i][...] = tensors[f"layers.{i}.weight"]
    params.biases[-1][...] = tensors[f"layers.{len(dims) - 2}.bias"]
    for i in range(len(dims) - 2):
        params.norms[i].gain[...] = tensors[f"norms.{i}.gain"]
        params.norms[i].shift[...] = tensors[f"norms.{i}.shift"]
        params.norms[i].running_mean[...] = tensors[f"norms.{i}.running_mean"]
        params.norms[i].running_var[...] = tensors[f"norms.{i}.running_var"]
    config = SorterConfig(
        hidden=tuple(dims[1:-1]),
        k=int(meta.get("k", 24)),
        local_weight=float(meta.get("local_weight", 1.0)),
        dist_weight=float(meta.get("dist_weight", 1.0)),
        zero_based_ramp=bool(meta.get("zero_based_ramp", False)),
    )
    return params, config
