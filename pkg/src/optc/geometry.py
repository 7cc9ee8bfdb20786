"""Point clouds, exact k-NN search, grid downsampling, synthetic labeled scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Class ids follow the report column order: Background, damaged building,
# intact building, road, tree.
CLASS_NAMES = ("Background", "Bldg-Dmg", "Bldg-No-Dmg", "Road", "Tree")
BACKGROUND, BLDG_DMG, BLDG_NO_DMG, ROAD, TREE = range(5)

_CLASS_COLORS = np.array(
    [
        [0.45, 0.38, 0.28],  # background: bare ground
        [0.62, 0.31, 0.22],  # damaged building: rubble
        [0.72, 0.72, 0.76],  # intact building: concrete
        [0.20, 0.20, 0.23],  # road: asphalt
        [0.14, 0.46, 0.19],  # tree: canopy
    ]
)


@dataclass
class PointCloud:
    """N points with coordinates, per-point features and optional class labels.

    positions: (N, 3) float64, finite. features: (N, F) float64, F >= 0.
    labels: (N,) int64 in [0, class_count) or None.
    """

    positions: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None
    class_count: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        n = self.positions.shape[0]
        if n < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions contain non-finite values")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValueError(f"features must be (N, F) with N={n}, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError(f"labels must be (N,) with N={n}, got {self.labels.shape}")
            if self.labels.min() < 0 or self.labels.max() >= self.class_count:
                raise ValueError("labels out of range [0, class_count)")
        if self.class_names is not None:
            self.class_names = tuple(self.class_names)
            if len(self.class_names) != self.class_count:
                raise ValueError("class_names length must equal class_count")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]


@dataclass
class NeighborTable:
    """Exact k-nearest-neighbor indices, (N, k) int64, never containing self."""

    indices: np.ndarray
    k: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 2 or self.indices.shape[1] != self.k:
            raise ValueError(f"indices must be (N, {self.k}), got {self.indices.shape}")

    @property
    def n(self) -> int:
        return self.indices.shape[0]


def validate_neighbors(table: NeighborTable, n: int) -> None:
    """Reject tables with out-of-range entries or self-neighbors."""
    if table.n != n:
        raise ValueError(f"neighbor table has {table.n} rows, expected {n}")
    if table.indices.min() < 0 or table.indices.max() >= n:
        raise ValueError("neighbor index out of range")
    if np.any(table.indices == np.arange(n)[:, None]):
        raise ValueError("neighbor table contains self-neighbors")


def knn(cloud: PointCloud, k: int, method: str = "auto") -> NeighborTable:
    """Exact Euclidean k-NN; equal distances are broken toward the lower index.

    method: "brute" (chunked O(N^2) scan), "grid" (uniform-grid accelerated,
    identical output), or "auto".
    """
    n = cloud.n
    if k <= 0 or k >= n:
        raise ValueError(f"k must satisfy 1 <= k < N, got k={k}, N={n}")
    if not np.all(np.isfinite(cloud.positions)):
        raise ValueError("positions contain non-finite values")
    if method == "auto":
        method = "grid" if n > 4096 else "brute"
    if method == "brute":
        indices = _knn_brute(cloud.positions, k)
    elif method == "grid":
        indices = _knn_grid(cloud.positions, k)
    else:
        raise ValueError(f"unknown knn method {method!r}")
    return NeighborTable(indices=indices, k=k)


def _knn_brute(positions: np.ndarray, k: int, chunk: int = 512) -> np.ndarray:
    n = positions.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        rows = positions[start : start + chunk]
        d2 = np.sum((rows[:, None, :] - positions[None, :, :]) ** 2, axis=2)
        d2[np.arange(rows.shape[0]), np.arange(start, start + rows.shape[0])] = np.inf
        # stable sort on distance keeps index order within ties
        out[start : start + rows.shape[0]] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def _knn_grid(positions: np.ndarray, k: int) -> np.ndarray:
    """Uniform-grid accelerated exact k-NN.

    Candidate cells are expanded in Chebyshev rings until the k-th best
    distance is provably inside the searched region.
    """
    n = positions.shape[0]
    mins = positions.min(axis=0)
    extent = positions.max(axis=0) - mins
    cells_per_axis = max(1, int(round((n / max(k, 8)) ** (1.0 / 3.0))))
    dims = np.where(extent > 0, cells_per_axis, 1).astype(np.int64)
    cell_size = np.where(extent > 0, extent / dims, 1.0)
    coords = np.minimum((positions - mins) // cell_size, dims - 1).astype(np.int64)
    flat = (coords[:, 0] * dims[1] + coords[:, 1]) * dims[2] + coords[:, 2]

    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    n_cells = int(dims.prod())
    starts = np.searchsorted(sorted_flat, np.arange(n_cells + 1))
    min_cell = float(cell_size.min())

    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        ci = coords[i]
        radius = 1
        best: np.ndarray | None = None
        while True:
            lo = np.maximum(ci - radius, 0)
            hi = np.minimum(ci + radius, dims - 1)
            cand: list[np.ndarray] = []
            for cx in range(lo[0], hi[0] + 1):
                for cy in range(lo[1], hi[1] + 1):
                    base = (cx * dims[1] + cy) * dims[2]
                    s, e = starts[base + lo[2]], starts[base + hi[2] + 1]
                    if e > s:
                        cand.append(order[s:e])
            candidates = np.concatenate(cand) if cand else np.empty(0, dtype=np.int64)
            candidates = candidates[candidates != i]
            covered_all = lo.min() == 0 and np.all(hi == dims - 1)
            if candidates.size >= k:
                d2 = np.sum((positions[candidates] - positions[i]) ** 2, axis=1)
                pick = np.lexsort((candidates, d2))[:k]
                kth = d2[pick[-1]]
                # any unexplored point is at least radius * min_cell away
                if covered_all or kth <= (radius * min_cell) ** 2:
                    best = candidates[pick]
                    break
            elif covered_all:
                raise AssertionError("grid search exhausted with < k candidates")
            radius += 1
        out[i] = best
    return out


def grid_sample(cloud: PointCloud, cell_size: float) -> PointCloud:
    """Merge points per occupied grid cell: mean position/features, majority label.

    The grid is anchored at the coordinate origin, which makes the operation
    idempotent at fixed cell_size. Label ties go to the smallest class id.
    Output points are ordered by cell index.
    """
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    coords = np.floor(cloud.positions / cell_size).astype(np.int64)
    _, first_idx, inverse = np.unique(
        coords, axis=0, return_index=True, return_inverse=True
    )
    n_cells = first_idx.shape[0]
    counts = np.bincount(inverse, minlength=n_cells).astype(np.float64)

    positions = np.zeros((n_cells, 3))
    np.add.at(positions, inverse, cloud.positions)
    positions /= counts[:, None]

    features = np.zeros((n_cells, cloud.feature_count))
    np.add.at(features, inverse, cloud.features)
    features /= counts[:, None]

    # exact passthrough for singleton cells keeps resampling bit-stable
    single = counts == 1
    positions[single] = cloud.positions[first_idx[single]]
    features[single] = cloud.features[first_idx[single]]

    labels = None
    if cloud.labels is not None:
        votes = np.bincount(
            inverse * cloud.class_count + cloud.labels,
            minlength=n_cells * cloud.class_count,
        ).reshape(n_cells, cloud.class_count)
        labels = votes.argmax(axis=1)  # argmax resolves ties to the smaller id

    return PointCloud(
        positions=positions,
        features=features,
        labels=labels,
        class_count=cloud.class_count,
        class_names=cloud.class_names,
    )


def normalized_positions(cloud: PointCloud) -> np.ndarray:
    """Coordinates shifted to zero mean and scaled by the largest axis extent."""
    pos = cloud.positions - cloud.positions.mean(axis=0)
    extent = cloud.positions.max(axis=0) - cloud.positions.min(axis=0)
    scale = extent.max()
    if scale > 0:
        pos = pos / scale
    return pos


@dataclass
class SceneConfig:
    """Synthetic five-class scene: ground, damaged/intact boxes, roads, trees."""

    extent: float = 20.0
    ground_planes: int = 1
    intact_boxes: int = 2
    collapsed_boxes: int = 2
    road_strips: int = 1
    tree_blobs: int = 3
    points_per_primitive: int = 256
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        counts = (
            self.ground_planes,
            self.intact_boxes,
            self.collapsed_boxes,
            self.road_strips,
            self.tree_blobs,
        )
        if any(c < 0 for c in counts):
            raise ValueError("primitive counts must be nonnegative")
        if self.points_per_primitive < 0:
            raise ValueError("points_per_primitive must be nonnegative")
        if not self.extent > 0:
            raise ValueError("extent must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def total_points(self) -> int:
        return self.points_per_primitive * (
            self.ground_planes
            + self.intact_boxes
            + self.collapsed_boxes
            + self.road_strips
            + self.tree_blobs
        )


def generate_scene(config: SceneConfig) -> PointCloud:
    """Deterministic labeled scene; identical seeds give bit-identical clouds."""
    if config.total_points == 0:
        raise ValueError("scene config produces zero points")
    rng = np.random.default_rng(config.seed)
    m = config.points_per_primitive
    parts: list[np.ndarray] = []
    labels: list[np.ndarray] = []

    for _ in range(config.ground_planes):
        parts.append(_ground_plane(rng, config.extent, m))
        labels.append(np.full(m, BACKGROUND))
    for _ in range(config.collapsed_boxes):
        parts.append(_collapsed_box(rng, config.extent, m))
        labels.append(np.full(m, BLDG_DMG))
    for _ in range(config.intact_boxes):
        parts.append(_intact_box(rng, config.extent, m))
        labels.append(np.full(m, BLDG_NO_DMG))
    for _ in range(config.road_strips):
        parts.append(_road_strip(rng, config.extent, m))
        labels.append(np.full(m, ROAD))
    for _ in range(config.tree_blobs):
        parts.append(_tree_blob(rng, config.extent, m))
        labels.append(np.full(m, TREE))

    positions = np.concatenate(parts)
    label_arr = np.concatenate(labels)
    positions += rng.normal(scale=config.noise_sigma, size=positions.shape)
    colors = _CLASS_COLORS[label_arr] + rng.normal(scale=0.06, size=(len(label_arr), 3))
    colors = np.clip(colors, 0.0, 1.0)

    shuffle = rng.permutation(len(label_arr))
    return PointCloud(
        positions=positions[shuffle],
        features=colors[shuffle],
        labels=label_arr[shuffle],
        class_count=len(CLASS_NAMES),
        class_names=CLASS_NAMES,
    )


def _ground_plane(rng, extent, m):
    xy = rng.uniform(0.0, extent, size=(m, 2))
    z = np.zeros((m, 1))
    return np.hstack([xy, z])


def _intact_box(rng, extent, m):
    cx, cy = rng.uniform(0.15 * extent, 0.85 * extent, size=2)
    ax, ay = rng.uniform(1.5, 3.0, size=2)
    h = rng.uniform(3.0, 6.0)
    # sample roof and the four walls proportionally to surface area
    areas = np.array([4 * ax * ay, 2 * ay * h, 2 * ay * h, 2 * ax * h, 2 * ax * h])
    face = rng.choice(5, size=m, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=m)
    v = rng.uniform(0.0, 1.0, size=m)
    w = rng.uniform(-1.0, 1.0, size=m)
    pts = np.empty((m, 3))
    roof = face == 0
    pts[roof] = np.column_stack([cx + u[roof] * ax, cy + w[roof] * ay, np.full(roof.sum(), h)])
    for f, (dx, dy) in enumerate([(-1, 0), (1, 0), (0, -1), (0, 1)], start=1):
        sel = face == f
        if dx != 0:
            x = np.full(sel.sum(), cx + dx * ax)
            y = cy + u[sel] * ay
        else:
            x = cx + u[sel] * ax
            y = np.full(sel.sum(), cy + dy * ay)
        pts[sel] = np.column_stack([x, y, v[sel] * h])
    return pts


def _collapsed_box(rng, extent, m):
    cx, cy = rng.uniform(0.15 * extent, 0.85 * extent, size=2)
    ax, ay = rng.uniform(1.8, 3.5, size=2)
    # pancaked rubble: flattened footprint with spiky low-height debris
    xy = np.column_stack(
        [cx + rng.uniform(-1.3, 1.3, m) * ax, cy + rng.uniform(-1.3, 1.3, m) * ay]
    )
    z = np.abs(rng.normal(scale=0.35, size=m)) + rng.uniform(0.0, 0.4, size=m)
    return np.column_stack([xy, np.minimum(z, 1.4)])


def _road_strip(rng, extent, m):
    # aspect ratio >= 10:1 by construction: length 0.9*extent, width extent/24
    width = extent / 24.0
    length = 0.9 * extent
    theta = rng.uniform(0.0, np.pi)
    cx, cy = rng.uniform(0.4 * extent, 0.6 * extent, size=2)
    u = rng.uniform(-0.5, 0.5, size=m) * length
    v = rng.uniform(-0.5, 0.5, size=m) * width
    x = cx + u * np.cos(theta) - v * np.sin(theta)
    y = cy + u * np.sin(theta) + v * np.cos(theta)
    x = np.clip(x, 0.0, extent)
    y = np.clip(y, 0.0, extent)
    z = np.full(m, 0.03)
    return np.column_stack([x, y, z])


def _tree_blob(rng, extent, m):
    cx, cy = rng.uniform(0.1 * extent, 0.9 * extent, size=2)
    cz = rng.uniform(2.5, 4.0)
    sigma = rng.uniform(0.8, 1.5)
    pts = rng.normal(size=(m, 3)) * np.array([sigma, sigma, 1.2 * sigma])
    pts += np.array([cx, cy, cz])
    pts[:, 2] = np.maximum(pts[:, 2], 0.3)
    return pts
