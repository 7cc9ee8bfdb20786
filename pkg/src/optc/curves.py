"""Static space-filling-curve serialization: Morton (Z-order) and Hilbert keys
over quantized coordinates, axis/reversal variants, and the warmup shuffle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud

MAX_BITS = 20

_Z_FAMILY = "z_order"
_HILBERT_FAMILY = "hilbert"


@dataclass(frozen=True)
class CurveVariant:
    """One member of the static serialization pool.

    family: "z_order" or "hilbert". axis_order permutes the coordinate
    columns before encoding; reversed flips the resulting sequence.
    """

    family: str
    axis_order: tuple[int, int, int] = (0, 1, 2)
    reversed: bool = False

    def __post_init__(self):
        if self.family not in (_Z_FAMILY, _HILBERT_FAMILY):
            raise ValueError(f"unknown curve family {self.family!r}")
        if sorted(self.axis_order) != [0, 1, 2]:
            raise ValueError(f"axis_order must permute (0, 1, 2), got {self.axis_order}")

    @property
    def label(self) -> str:
        name = "z-order" if self.family == _Z_FAMILY else "hilbert"
        if self.axis_order != (0, 1, 2):
            name += "[" + "".join("xyz"[a] for a in self.axis_order) + "]"
        if self.reversed:
            name += "-rev"
        return name


DEFAULT_WARMUP_VARIANTS = (
    CurveVariant(_Z_FAMILY),
    CurveVariant(_Z_FAMILY, reversed=True),
    CurveVariant(_HILBERT_FAMILY),
    CurveVariant(_HILBERT_FAMILY, reversed=True),
)


def check_permutation(order: np.ndarray, n: int) -> np.ndarray:
    """Validate that `order` is a bijection on [0, n)."""
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,):
        raise ValueError(f"permutation must have shape ({n},), got {order.shape}")
    seen = np.zeros(n, dtype=bool)
    if order.min() < 0 or order.max() >= n:
        raise ValueError("permutation entry out of range")
    seen[order] = True
    if not seen.all():
        raise ValueError("permutation is not a bijection")
    return order


def inverse_permutation(order: np.ndarray) -> np.ndarray:
    """positions[p] = serialized slot of original point p."""
    inv = np.empty_like(order)
    inv[order] = np.arange(order.shape[0])
    return inv


def quantize(cloud: PointCloud, bits_per_axis: int) -> np.ndarray:
    """Map the cloud's bounding box onto the [0, 2^b - 1]^3 integer grid.

    Affine map scaled by (2^b - 1), floored, clamped; a degenerate axis
    (zero extent) maps to cell 0. Returns (N, 3) int64 cell coordinates.
    """
    if not 1 <= bits_per_axis <= MAX_BITS:
        raise ValueError(f"bits_per_axis must be in [1, {MAX_BITS}]")
    top = (1 << bits_per_axis) - 1
    mins = cloud.positions.min(axis=0)
    extent = cloud.positions.max(axis=0) - mins
    scale = np.where(extent > 0, top / np.where(extent > 0, extent, 1.0), 0.0)
    cells = np.floor((cloud.positions - mins) * scale)
    return np.clip(cells, 0, top).astype(np.int64)


def _spread_bits(v: np.ndarray) -> np.ndarray:
    # 21 bits -> one bit every third position (fits int64 for b <= 20)
    v = v & 0x1FFFFF
    v = (v | (v << 32)) & 0x1F00000000FFFF
    v = (v | (v << 16)) & 0x1F0000FF0000FF
    v = (v | (v << 8)) & 0x100F00F00F00F00F
    v = (v | (v << 4)) & 0x10C30C30C30C30C3
    v = (v | (v << 2)) & 0x1249249249249249
    return v


def _compact_bits(v: np.ndarray) -> np.ndarray:
    v = v & 0x1249249249249249
    v = (v | (v >> 2)) & 0x10C30C30C30C30C3
    v = (v | (v >> 4)) & 0x100F00F00F00F00F
    v = (v | (v >> 8)) & 0x1F0000FF0000FF
    v = (v | (v >> 16)) & 0x1F00000000FFFF
    v = (v | (v >> 32)) & 0x1FFFFF
    return v


def morton_encode(coords: np.ndarray, bits_per_axis: int) -> np.ndarray:
    """Interleave bits, x least significant: key bit 3j+i is axis i's bit j."""
    coords = _check_coords(coords, bits_per_axis)
    x, y, z = coords[..., 0], coords[..., 1], coords[..., 2]
    return _spread_bits(x) | (_spread_bits(y) << 1) | (_spread_bits(z) << 2)


def morton_decode(keys: np.ndarray, bits_per_axis: int) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return np.stack(
        [_compact_bits(keys), _compact_bits(keys >> 1), _compact_bits(keys >> 2)],
        axis=-1,
    )


def hilbert_encode(coords: np.ndarray, bits_per_axis: int) -> np.ndarray:
    """3D Hilbert index via the iterative transpose/Gray-code construction.

    Bijective over the b-bit grid; consecutive keys visit cells one unit
    apart. The origin (0,0,0) maps to key 0.
    """
    coords = _check_coords(coords, bits_per_axis)
    x = [coords[..., i].astype(np.int64).copy() for i in range(3)]

    q = 1 << (bits_per_axis - 1)
    while q > 1:
        p = q - 1
        for i in range(3):
            high = (x[i] & q) != 0
            t = np.where(high, 0, (x[0] ^ x[i]) & p)
            x[0] = np.where(high, x[0] ^ p, x[0] ^ t)
            x[i] ^= t
        q >>= 1
    # Gray-encode across axes
    x[1] ^= x[0]
    x[2] ^= x[1]
    t = np.zeros_like(x[0])
    q = 1 << (bits_per_axis - 1)
    while q > 1:
        t = np.where((x[2] & q) != 0, t ^ (q - 1), t)
        q >>= 1
    for i in range(3):
        x[i] ^= t
    # gather the transposed bit planes, most significant first
    key = np.zeros_like(x[0])
    for j in range(bits_per_axis - 1, -1, -1):
        for i in range(3):
            key = (key << 1) | ((x[i] >> j) & 1)
    return key


def hilbert_decode(keys: np.ndarray, bits_per_axis: int) -> np.ndarray:
    """Inverse of hilbert_encode; returns (..., 3) cell coordinates."""
    keys = np.asarray(keys, dtype=np.int64)
    x = [np.zeros_like(keys) for _ in range(3)]
    for j in range(bits_per_axis):  # scatter key bits back to the transpose
        for i in range(3):
            shift = 3 * j + (2 - i)
            x[i] |= ((keys >> shift) & 1) << j

    n = 1 << bits_per_axis
    t = x[2] >> 1
    for i in range(2, 0, -1):
        x[i] ^= x[i - 1]
    x[0] ^= t
    q = 2
    while q != n:
        p = q - 1
        for i in range(2, -1, -1):
            high = (x[i] & q) != 0
            t = np.where(high, 0, (x[0] ^ x[i]) & p)
            x[0] = np.where(high, x[0] ^ p, x[0] ^ t)
            x[i] ^= t
        q <<= 1
    return np.stack(x, axis=-1)


def _check_coords(coords: np.ndarray, bits_per_axis: int) -> np.ndarray:
    if not 1 <= bits_per_axis <= MAX_BITS:
        raise ValueError(f"bits_per_axis must be in [1, {MAX_BITS}]")
    coords = np.asarray(coords, dtype=np.int64)
    if coords.shape[-1] != 3:
        raise ValueError("grid coordinates must have a trailing axis of size 3")
    if coords.min() < 0 or coords.max() >= (1 << bits_per_axis):
        raise ValueError(f"grid coordinate out of range for {bits_per_axis} bits")
    return coords


def curve_keys(coords: np.ndarray, variant: CurveVariant, bits_per_axis: int) -> np.ndarray:
    """Serialization keys for quantized coordinates under one curve variant."""
    permuted = coords[..., list(variant.axis_order)]
    if variant.family == _Z_FAMILY:
        return morton_encode(permuted, bits_per_axis)
    return hilbert_encode(permuted, bits_per_axis)


def static_order(
    cloud: PointCloud, variant: CurveVariant, bits_per_axis: int = 10
) -> np.ndarray:
    """Serialize by curve key, ascending; key ties keep the smaller index first.

    The reversed flag flips the finished sequence.
    """
    coords = quantize(cloud, bits_per_axis)
    keys = curve_keys(coords, variant, bits_per_axis)
    order = np.argsort(keys, kind="stable")
    if variant.reversed:
        order = order[::-1].copy()
    return check_permutation(order, cloud.n)


def pick_warmup_variant(
    epoch: int, seed: int, variants: tuple[CurveVariant, ...] = DEFAULT_WARMUP_VARIANTS
) -> CurveVariant:
    """Deterministic per-epoch choice, uniform over the pool across epochs."""
    if len(variants) == 0:
        raise ValueError("variant list must be nonempty")
    rng = np.random.default_rng((int(seed), int(epoch)))
    return variants[int(rng.integers(len(variants)))]
