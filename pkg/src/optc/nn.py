"""Dense neural kernels with analytical backward passes.

Linear layers, batch normalization, tanh-approximation GELU, softmax
cross-entropy, AdamW, a one-cycle learning-rate schedule, a central
finite-difference gradient checker, and the checkpoint file format.
All math is float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715

CHECKPOINT_FORMAT = "optc-checkpoint"
CHECKPOINT_VERSION = 1


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x**2)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class BatchNormParams:
    gain: np.ndarray
    shift: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5


@dataclass
class MlpParams:
    """Stack of linear layers; every hidden layer is followed by batch norm
    and GELU, the final layer is linear only.

    Hidden-layer biases are pinned at zero and not trained: batch norm's
    mean subtraction cancels them exactly, and a parameter with an
    identically-zero gradient cannot pass finite-difference verification.
    The batch-norm shift plays their role."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    norms: list[BatchNormParams]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must pair up")
        if len(self.norms) != len(self.weights) - 1:
            raise ValueError("need one batch norm per hidden layer")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError("consecutive layer shapes do not compose")
            if np.any(self.norms[i].running_var <= 0):
                raise ValueError("running_var must stay positive")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return tuple(w.shape[0] for w in self.weights) + (self.weights[-1].shape[1],)

    def named_params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        last = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            out[f"{prefix}layers.{i}.weight"] = w
        out[f"{prefix}layers.{last}.bias"] = self.biases[last]
        for i, bn in enumerate(self.norms):
            out[f"{prefix}norms.{i}.gain"] = bn.gain
            out[f"{prefix}norms.{i}.shift"] = bn.shift
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, bn in enumerate(self.norms):
            out[f"{prefix}norms.{i}.running_mean"] = bn.running_mean
            out[f"{prefix}norms.{i}.running_var"] = bn.running_var
        return out


def init_mlp(dims: list[int] | tuple[int, ...], rng: np.random.Generator) -> MlpParams:
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer dims {dims}")
    weights = [
        rng.normal(scale=np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
        for i in range(len(dims) - 1)
    ]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    norms = [
        BatchNormParams(
            gain=np.ones(dims[i + 1]),
            shift=np.zeros(dims[i + 1]),
            running_mean=np.zeros(dims[i + 1]),
            running_var=np.ones(dims[i + 1]),
        )
        for i in range(len(dims) - 2)
    ]
    return MlpParams(weights=weights, biases=biases, norms=norms)


@dataclass
class MlpCache:
    mode: str
    layer_dims: tuple[int, ...]
    hidden: list[dict] = field(default_factory=list)
    final_input: np.ndarray | None = None


def mlp_forward(
    params: MlpParams,
    inputs: np.ndarray,
    mode: str = "eval",
    update_running: bool = True,
) -> tuple[np.ndarray, MlpCache]:
    """[linear -> batch norm -> GELU] per hidden layer, then a bare linear.

    Train mode normalizes with batch statistics (batch size >= 2) and, unless
    update_running is False, folds them into the running statistics. Eval mode
    reads the running statistics and leaves them untouched.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.layer_dims[0]:
        raise ValueError(
            f"inputs must be (B, {params.layer_dims[0]}), got {x.shape}"
        )
    if mode == "train" and x.shape[0] < 2:
        raise ValueError("train mode needs batch size >= 2 for batch statistics")

    cache = MlpCache(mode=mode, layer_dims=params.layer_dims)
    for w, b, bn in zip(params.weights[:-1], params.biases[:-1], params.norms):
        z = x @ w + b
        if mode == "train":
            mean = z.mean(axis=0)
            var = z.var(axis=0)
            if update_running:
                bn.running_mean += bn.momentum * (mean - bn.running_mean)
                bn.running_var += bn.momentum * (var - bn.running_var)
        else:
            mean = bn.running_mean
            var = bn.running_var
        inv_std = 1.0 / np.sqrt(var + bn.eps)
        zhat = (z - mean) * inv_std
        u = bn.gain * zhat + bn.shift
        cache.hidden.append(
            {"x": x, "z": z, "inv_std": inv_std, "zhat": zhat, "u": u}
        )
        x = gelu(u)
    cache.final_input = x
    out = x @ params.weights[-1] + params.biases[-1]
    return out, cache


def mlp_backward(
    params: MlpParams, cache: MlpCache, grad_outputs: np.ndarray
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Exact gradients of mlp_forward, including the batch-statistics terms."""
    if cache.mode != "train":
        raise ValueError("backward requires a cache from a train-mode forward")
    if cache.layer_dims != params.layer_dims:
        raise ValueError("cache does not match these parameters")
    dout = np.asarray(grad_outputs, dtype=np.float64)
    if dout.shape != (cache.final_input.shape[0], params.layer_dims[-1]):
        raise ValueError(f"grad_outputs has wrong shape {dout.shape}")

    grads: dict[str, np.ndarray] = {}
    last = len(params.weights) - 1
    grads[f"layers.{last}.weight"] = cache.final_input.T @ dout
    grads[f"layers.{last}.bias"] = dout.sum(axis=0)
    dx = dout @ params.weights[last].T

    for i in range(last - 1, -1, -1):
        bn = params.norms[i]
        c = cache.hidden[i]
        du = dx * gelu_grad(c["u"])
        grads[f"norms.{i}.gain"] = (du * c["zhat"]).sum(axis=0)
        grads[f"norms.{i}.shift"] = du.sum(axis=0)
        dzhat = du * bn.gain
        batch = c["z"].shape[0]
        dz = (
            c["inv_std"]
            / batch
            * (
                batch * dzhat
                - dzhat.sum(axis=0)
                - c["zhat"] * (dzhat * c["zhat"]).sum(axis=0)
            )
        )
        # no bias gradient here: hidden biases are inert under batch norm
        grads[f"layers.{i}.weight"] = c["x"].T @ dz
        dx = dz @ params.weights[i].T
    return grads, dx


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def init_adam(params: dict[str, np.ndarray], weight_decay: float = 0.01) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
        weight_decay=weight_decay,
    )


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Adam with decoupled weight decay and bias correction; updates in place."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p -= lr * ((m / bc1) / (np.sqrt(v / bc2) + state.eps) + state.weight_decay * p)
    return params, state


def one_cycle_lr(
    step: float,
    total_steps: int,
    max_lr: float,
    warmup_fraction: float = 0.1,
    div_factor: float = 25.0,
    final_div_factor: float = 1000.0,
) -> float:
    """Cosine ramp to max_lr over the warmup fraction, cosine decay after.

    Continuous, peaks at exactly max_lr, never exceeds it.
    """
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 < warmup_fraction < 1:
        raise ValueError("warmup_fraction must lie in (0, 1)")
    if div_factor <= 1 or final_div_factor <= 1:
        raise ValueError("divisors must exceed 1")
    if max_lr <= 0:
        raise ValueError("max_lr must be positive")
    warmup = warmup_fraction * total_steps
    if step <= warmup:
        t = step / warmup
        start = max_lr / div_factor
        return start + (max_lr - start) * 0.5 * (1.0 - np.cos(np.pi * t))
    t = (step - warmup) / (total_steps - warmup)
    floor = max_lr / final_div_factor
    return floor + (max_lr - floor) * 0.5 * (1.0 + np.cos(np.pi * t))


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log softmax probability of the true class.

    Returns (loss, grad_logits) with grad = (softmax - onehot) / batch.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("logits must be (B, C) with one label per row")
    batch, classes = logits.shape
    if labels.min() < 0 or labels.max() >= classes:
        raise ValueError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(lse - shifted[np.arange(batch), labels]))
    probs = np.exp(shifted - lse[:, None])
    probs[np.arange(batch), labels] -= 1.0
    return loss, probs / batch


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    point: np.ndarray,
    h: float = 1e-5,
    loss_fn: Callable[[np.ndarray], float] | None = None,
) -> float:
    """Max relative disagreement between f's gradient and central differences.

    Relative error per coordinate is |a - n| / max(1e-12, |a| + |n|).
    loss_fn, when given, evaluates the objective without its gradient and is
    used for the difference quotients.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=np.float64)
    _, analytic = f(point)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != point.shape:
        raise ValueError("gradient shape does not match the point")
    evaluate = loss_fn if loss_fn is not None else (lambda x: f(x)[0])
    numeric = np.empty_like(point)
    flat = point.ravel()
    num_flat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = evaluate(point)
        flat[i] = orig - h
        lo = evaluate(point)
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2.0 * h)
    if not (np.all(np.isfinite(analytic)) and np.all(np.isfinite(numeric))):
        raise ValueError("non-finite values encountered during gradient check")
    denom = np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def flatten_tensors(tensors: dict[str, np.ndarray]) -> tuple[np.ndarray, list]:
    spec = [(k, v.shape) for k, v in tensors.items()]
    vec = np.concatenate([v.ravel() for v in tensors.values()]) if tensors else np.zeros(0)
    return vec, spec


def unflatten_tensors(vec: np.ndarray, spec: list) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, shape in spec:
        size = int(np.prod(shape)) if shape else 1
        out[name] = vec[offset : offset + size].reshape(shape)
        offset += size
    return out


def check_param_gradients(
    f: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    loss_fn: Callable[[dict[str, np.ndarray]], float] | None = None,
) -> float:
    """grad_check over a whole named-parameter dict."""
    vec0, spec = flatten_tensors(params)

    def wrapped(vec: np.ndarray) -> tuple[float, np.ndarray]:
        loss, grads = f(unflatten_tensors(vec, spec))
        gvec, _ = flatten_tensors({k: np.asarray(grads[k]) for k, _ in spec})
        return loss, gvec

    wrapped_loss = None
    if loss_fn is not None:
        wrapped_loss = lambda vec: loss_fn(unflatten_tensors(vec, spec))  # noqa: E731

    return grad_check(wrapped, vec0.copy(), h=h, loss_fn=wrapped_loss)


def save_checkpoint(
    path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None
) -> None:
    """Named float64 tensors as little-endian binary behind a JSON header line."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not a checkpoint file")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        blob = fh.read()
    tensors = {}
    offset = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        chunk = blob[offset * 8 : (offset + size) * 8]
        if len(chunk) != size * 8:
            raise ValueError(f"{path}: truncated tensor data")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        offset += size
    return tensors, header.get("meta", {})
