"""Serialized windowed-attention backbone: input embedding, contiguous window
partitioning over a permutation, multi-head self-attention with exact
backward, interleaved feed-forward layers, and a per-point classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .curves import check_permutation
from .geometry import PointCloud
from .sorter import sorter_inputs


@dataclass
class WindowPartition:
    """Contiguous, disjoint index ranges covering [0, n); the last may be ragged."""

    window_size: int
    boundaries: list[tuple[int, int]]

    @property
    def n(self) -> int:
        return self.boundaries[-1][1] if self.boundaries else 0


def partition_windows(n: int, window_size: int) -> WindowPartition:
    if n < 1 or window_size < 1:
        raise ValueError("n and window_size must be >= 1")
    bounds = [(s, min(s + window_size, n)) for s in range(0, n, window_size)]
    return WindowPartition(window_size=window_size, boundaries=bounds)


def attention_pair_count(partition: WindowPartition) -> int:
    """Number of (query, key) pairs attention touches: sum of window sizes squared."""
    return sum((e - s) ** 2 for s, e in partition.boundaries)


@dataclass
class AttentionParams:
    """Per-window multi-head attention weights.

    The key bias is pinned at zero and not trained: softmax is invariant to
    a constant added across one query row, which makes bk's gradient
    identically zero and unverifiable by finite differences."""

    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    n_heads: int

    def __post_init__(self):
        d = self.wq.shape[0]
        for w in (self.wq, self.wk, self.wv, self.wo):
            if w.shape != (d, d):
                raise ValueError("projection matrices must be square and equal-sized")
        if d % self.n_heads != 0:
            raise ValueError(f"width {d} not divisible by {self.n_heads} heads")

    @property
    def width(self) -> int:
        return self.wq.shape[0]


@dataclass
class TransformerBlock:
    attn: AttentionParams
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray


@dataclass
class ModelConfig:
    width: int = 32
    heads: int = 4
    blocks: int = 2
    window_size: int = 16

    def __post_init__(self):
        if self.width < 1 or self.heads < 1 or self.blocks < 0 or self.window_size < 1:
            raise ValueError("model config values out of range")
        if self.width % self.heads != 0:
            raise ValueError("model.width must be divisible by model.heads")


@dataclass
class ModelParams:
    embed: nn.MlpParams
    blocks: list[TransformerBlock]
    head: nn.MlpParams
    window_size: int
    class_count: int

    def named_params(self) -> dict[str, np.ndarray]:
        out = self.embed.named_params("embed.")
        for i, blk in enumerate(self.blocks):
            a = blk.attn
            out.update(
                {
                    f"blocks.{i}.attn.wq": a.wq,
                    f"blocks.{i}.attn.bq": a.bq,
                    f"blocks.{i}.attn.wk": a.wk,
                    f"blocks.{i}.attn.wv": a.wv,
                    f"blocks.{i}.attn.bv": a.bv,
                    f"blocks.{i}.attn.wo": a.wo,
                    f"blocks.{i}.attn.bo": a.bo,
                    f"blocks.{i}.ffn.w1": blk.ffn_w1,
                    f"blocks.{i}.ffn.b1": blk.ffn_b1,
                    f"blocks.{i}.ffn.w2": blk.ffn_w2,
                    f"blocks.{i}.ffn.b2": blk.ffn_b2,
                }
            )
        out.update(self.head.named_params("head."))
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {**self.embed.named_buffers("embed."), **self.head.named_buffers("head.")}


def init_model(
    feature_count: int,
    class_count: int,
    config: ModelConfig,
    rng: np.random.Generator,
    residual_zero_init: bool = True,
) -> ModelParams:
    """Fresh backbone. Residual branches (attention output projection and the
    second feed-forward matrix) start at zero so every block begins as the
    identity map; pass residual_zero_init=False for fully random weights."""
    d = config.width
    embed = nn.init_mlp((3 + feature_count, d, d), rng)
    blocks = []
    for _ in range(config.blocks):
        scale = 1.0 / np.sqrt(d)
        attn = AttentionParams(
            wq=rng.normal(scale=scale, size=(d, d)),
            bq=np.zeros(d),
            wk=rng.normal(scale=scale, size=(d, d)),
            bk=np.zeros(d),
            wv=rng.normal(scale=scale, size=(d, d)),
            bv=np.zeros(d),
            wo=np.zeros((d, d)) if residual_zero_init else rng.normal(scale=scale, size=(d, d)),
            bo=np.zeros(d),
            n_heads=config.heads,
        )
        w1 = rng.normal(scale=np.sqrt(2.0 / d), size=(d, 2 * d))
        w2 = (
            np.zeros((2 * d, d))
            if residual_zero_init
            else rng.normal(scale=np.sqrt(1.0 / (2 * d)), size=(2 * d, d))
        )
        blocks.append(
            TransformerBlock(attn=attn, ffn_w1=w1, ffn_b1=np.zeros(2 * d), ffn_w2=w2, ffn_b2=np.zeros(d))
        )
    head = nn.init_mlp((d, class_count), rng)
    return ModelParams(
        embed=embed,
        blocks=blocks,
        head=head,
        window_size=config.window_size,
        class_count=class_count,
    )


@dataclass
class _AttnGroupCache:
    rows: np.ndarray  # serialized row indices covered by this group, flattened
    x: np.ndarray  # (G, m, d)
    q: np.ndarray  # (G, H, m, dh)
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray  # (G, H, m, m)
    ctx: np.ndarray  # (G, m, d)


@dataclass
class AttentionCache:
    partition: WindowPartition
    width: int
    groups: list[_AttnGroupCache] = field(default_factory=list)


def _to_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    g, m, d = x.shape
    return x.reshape(g, m, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _from_heads(x: np.ndarray) -> np.ndarray:
    g, h, m, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(g, m, h * dh)


def window_attention_forward(
    params: AttentionParams, features: np.ndarray, partition: WindowPartition
) -> tuple[np.ndarray, AttentionCache]:
    """Scaled dot-product multi-head attention inside each window, output
    projection, residual add. No information crosses window boundaries.

    Windows of equal size are processed as one batch; a ragged final window
    is handled separately with identical math.
    """
    features = np.asarray(features, dtype=np.float64)
    d = params.width
    if features.ndim != 2 or features.shape[1] != d:
        raise ValueError(f"features must be (N, {d}), got {features.shape}")
    if partition.n != features.shape[0]:
        raise ValueError("partition does not cover the feature rows")

    out = np.empty_like(features)
    cache = AttentionCache(partition=partition, width=d)
    dh = d // params.n_heads
    scale = 1.0 / np.sqrt(dh)

    for size, rows in _window_groups(partition):
        x = features[rows].reshape(-1, size, d)
        q = _to_heads(x @ params.wq + params.bq, params.n_heads)
        k = _to_heads(x @ params.wk + params.bk, params.n_heads)
        v = _to_heads(x @ params.wv + params.bv, params.n_heads)
        logits = np.einsum("ghmd,ghnd->ghmn", q, k) * scale
        logits -= logits.max(axis=-1, keepdims=True)
        attn = np.exp(logits)
        attn /= attn.sum(axis=-1, keepdims=True)
        ctx = _from_heads(np.einsum("ghmn,ghnd->ghmd", attn, v))
        y = x + (ctx @ params.wo + params.bo)
        out[rows] = y.reshape(-1, d)
        cache.groups.append(_AttnGroupCache(rows=rows, x=x, q=q, k=k, v=v, attn=attn, ctx=ctx))
    return out, cache


def window_attention_backward(
    params: AttentionParams, cache: AttentionCache, grad_outputs: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients through softmax, projections and the residual path."""
    dout = np.asarray(grad_outputs, dtype=np.float64)
    if dout.shape != (cache.partition.n, cache.width):
        raise ValueError("grad_outputs shape does not match the cached forward")
    d = params.width
    dh = d // params.n_heads
    scale = 1.0 / np.sqrt(dh)

    grads = {
        name: np.zeros_like(arr)
        for name, arr in (
            ("wq", params.wq), ("bq", params.bq),
            ("wk", params.wk),
            ("wv", params.wv), ("bv", params.bv),
            ("wo", params.wo), ("bo", params.bo),
        )
    }
    dfeat = np.empty((cache.partition.n, d))

    for g in cache.groups:
        size = g.x.shape[1]
        dy = dout[g.rows].reshape(-1, size, d)
        dx = dy.copy()  # residual path
        grads["bo"] += dy.sum(axis=(0, 1))
        grads["wo"] += np.einsum("gmd,gme->de", g.ctx, dy)
        dctx = _to_heads(dy @ params.wo.T, params.n_heads)
        dattn = np.einsum("ghmd,ghnd->ghmn", dctx, g.v)
        dv = np.einsum("ghmn,ghmd->ghnd", g.attn, dctx)
        dlogits = g.attn * (dattn - (dattn * g.attn).sum(axis=-1, keepdims=True))
        dlogits *= scale
        dq = np.einsum("ghmn,ghnd->ghmd", dlogits, g.k)
        dk = np.einsum("ghmn,ghmd->ghnd", dlogits, g.q)
        for dz, w, bname, wname in (
            (dq, params.wq, "bq", "wq"),
            (dk, params.wk, None, "wk"),  # key bias is untrained, see class docstring
            (dv, params.wv, "bv", "wv"),
        ):
            dz_flat = _from_heads(dz)
            if bname is not None:
                grads[bname] += dz_flat.sum(axis=(0, 1))
            grads[wname] += np.einsum("gmd,gme->de", g.x, dz_flat)
            dx += dz_flat @ w.T
        dfeat[g.rows] = dx.reshape(-1, d)
    return grads, dfeat


def _window_groups(partition: WindowPartition):
    """Yield (window size, flattened row indices) for equal-size window batches."""
    by_size: dict[int, list[np.ndarray]] = {}
    for s, e in partition.boundaries:
        by_size.setdefault(e - s, []).append(np.arange(s, e))
    for size in sorted(by_size, reverse=True):
        yield size, np.concatenate(by_size[size])


def _ffn_forward(blk: TransformerBlock, x: np.ndarray):
    u = x @ blk.ffn_w1 + blk.ffn_b1
    a = nn.gelu(u)
    return x + a @ blk.ffn_w2 + blk.ffn_b2, (x, u, a)


def _ffn_backward(blk: TransformerBlock, cache, dout: np.ndarray):
    x, u, a = cache
    grads = {
        "w2": a.T @ dout,
        "b2": dout.sum(axis=0),
    }
    du = (dout @ blk.ffn_w2.T) * nn.gelu_grad(u)
    grads["w1"] = x.T @ du
    grads["b1"] = du.sum(axis=0)
    return grads, dout + du @ blk.ffn_w1.T


@dataclass
class SegCache:
    perm: np.ndarray
    partition: WindowPartition
    embed_cache: nn.MlpCache
    block_caches: list[tuple]
    head_cache: nn.MlpCache
    n: int


def segmentation_forward(
    model: ModelParams,
    cloud: PointCloud,
    perm: np.ndarray,
    mode: str = "eval",
    update_running: bool = True,
) -> tuple[np.ndarray, SegCache]:
    """Gather by the permutation, embed, run attention + feed-forward blocks,
    classify, scatter logits back so row i always describes input point i."""
    perm = check_permutation(perm, cloud.n)
    inputs = sorter_inputs(cloud)[perm]
    x, embed_cache = nn.mlp_forward(model.embed, inputs, mode=mode, update_running=update_running)
    partition = partition_windows(cloud.n, model.window_size)
    block_caches = []
    for blk in model.blocks:
        x, attn_cache = window_attention_forward(blk.attn, x, partition)
        x, ffn_cache = _ffn_forward(blk, x)
        block_caches.append((attn_cache, ffn_cache))
    logits_serial, head_cache = nn.mlp_forward(
        model.head, x, mode=mode, update_running=update_running
    )
    logits = np.empty_like(logits_serial)
    logits[perm] = logits_serial
    return logits, SegCache(
        perm=perm,
        partition=partition,
        embed_cache=embed_cache,
        block_caches=block_caches,
        head_cache=head_cache,
        n=cloud.n,
    )


def segmentation_backward(
    model: ModelParams, cache: SegCache, grad_logits: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Gradients of the full backbone; grad_logits and the returned input
    gradient are both in original point order."""
    dlogits_serial = np.asarray(grad_logits, dtype=np.float64)[cache.perm]
    head_grads, dx = nn.mlp_backward(model.head, cache.head_cache, dlogits_serial)
    grads = {f"head.{k}": v for k, v in head_grads.items()}
    for i in range(len(model.blocks) - 1, -1, -1):
        blk = model.blocks[i]
        attn_cache, ffn_cache = cache.block_caches[i]
        ffn_grads, dx = _ffn_backward(blk, ffn_cache, dx)
        for k, v in ffn_grads.items():
            grads[f"blocks.{i}.ffn.{k}"] = v
        attn_grads, dx = window_attention_backward(blk.attn, attn_cache, dx)
        for k, v in attn_grads.items():
            grads[f"blocks.{i}.attn.{k}"] = v
    embed_grads, dinputs_serial = nn.mlp_backward(model.embed, cache.embed_cache, dx)
    grads.update({f"embed.{k}": v for k, v in embed_grads.items()})
    dinputs = np.empty_like(dinputs_serial)
    dinputs[cache.perm] = dinputs_serial
    return grads, dinputs


def segmentation_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    return nn.softmax_cross_entropy(logits, labels)


def save_model(path, model: ModelParams) -> None:
    tensors = {**model.named_params(), **model.named_buffers()}
    meta = {
        "kind": "model",
        "embed_dims": list(model.embed.layer_dims),
        "head_dims": list(model.head.layer_dims),
        "blocks": len(model.blocks),
        "heads": model.blocks[0].attn.n_heads if model.blocks else 1,
        "window_size": model.window_size,
        "class_count": model.class_count,
    }
    nn.save_checkpoint(path, tensors, meta)


def load_model(path) -> ModelParams:
    tensors, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "model":
        raise ValueError(f"{path}: not a model checkpoint")
    width = meta["embed_dims"][-1]
    config = ModelConfig(
        width=width,
        heads=int(meta["heads"]),
        blocks=int(meta["blocks"]),
        window_size=int(meta["window_size"]),
    )
    model = init_model(
        feature_count=meta["embed_dims"][0] - 3,
        class_count=int(meta["class_count"]),
        config=config,
        rng=np.random.default_rng(0),
    )
    for name, arr in {**model.named_params(), **model.named_buffers()}.items():
        arr[...] = tensors[name]
    return model
