"""Fixed-layout scene families for regression tests.

A family shares one neighborhood layout (primitive placements drawn from the
layout seed); each scene resamples points, jitter and colors. Held-out
scenes are new samplings of the same neighborhood, the analogue of testing
on an unseen area of one survey region. A pointwise scorer can only learn a
spatial field, so transfer requires layout-stable scene distributions.
"""

from __future__ import annotations

import numpy as np

from optc.geometry import CLASS_NAMES, PointCloud

EXTENT = 20.0

_COLORS = np.array(
    [
        [0.45, 0.38, 0.28],
        [0.62, 0.31, 0.22],
        [0.72, 0.72, 0.76],
        [0.20, 0.20, 0.23],
        [0.14, 0.46, 0.19],
    ]
)


def strip_family_scene(layout_seed: int, sample_seed: int) -> PointCloud:
    """Roads + a couple of trees; strips share the layout's dominant direction.

    Strip aspect ratio is length/width = 0.9*24 = 21.6, well above 10:1.
    """
    lay = np.random.default_rng((layout_seed, 0xA11))
    theta0 = lay.uniform(0.5, 1.0)
    blob_centers = [lay.uniform(3, 17, size=2) for _ in range(2)]
    rng = np.random.default_rng((layout_seed, sample_seed))

    parts, labels = [], []
    for off in (-4.5, 0.0, 4.5):
        m = 160
        width, length = EXTENT / 24.0, 0.9 * EXTENT
        theta = theta0 + rng.uniform(-0.04, 0.04)
        cx = EXTENT / 2 - off * np.sin(theta0) + rng.uniform(-0.4, 0.4)
        cy = EXTENT / 2 + off * np.cos(theta0) + rng.uniform(-0.4, 0.4)
        u = rng.uniform(-0.5, 0.5, size=m) * length
        v = rng.uniform(-0.5, 0.5, size=m) * width
        x = np.clip(cx + u * np.cos(theta) - v * np.sin(theta), 0, EXTENT)
        y = np.clip(cy + u * np.sin(theta) + v * np.cos(theta), 0, EXTENT)
        parts.append(np.column_stack([x, y, np.full(m, 0.03)]))
        labels.append(np.full(m, 3))
    for bc in blob_centers:
        m = 64
        center = bc + rng.uniform(-0.4, 0.4, size=2)
        pts = rng.normal(size=(m, 3)) * 0.7 + np.array([center[0], center[1], 3.0])
        parts.append(pts)
        labels.append(np.full(m, 4))
    return _assemble(parts, labels, rng)


def town_family_scene(layout_seed: int, sample_seed: int) -> PointCloud:
    """A ~2000-point post-disaster block: diagonal roads, small intact and
    collapsed buildings, trees, and scattered bare-ground debris clusters.

    Every structure is either elongated (roads) or compact (a few meters),
    the regime where a learned per-point score field can order the scene."""
    lay = np.random.default_rng((layout_seed, 0xB22))
    theta0 = lay.uniform(0.5, 1.0)
    road_offsets = (-4.5, 0.0, 4.5)
    intact = [(lay.uniform(3, 17, size=2), lay.uniform(0.9, 1.3, size=2), lay.uniform(2.5, 3.5)) for _ in range(1)]
    collapsed = [(lay.uniform(3, 17, size=2), lay.uniform(1.0, 1.5, size=2)) for _ in range(1)]
    trees = [lay.uniform(2, 18, size=2) for _ in range(1)]
    patches = [lay.uniform(1.5, 18.5, size=2) for _ in range(2)]

    rng = np.random.default_rng((layout_seed, sample_seed))
    parts, labels = [], []

    for off in road_offsets:
        m = 480
        width, length = EXTENT / 24.0, 0.9 * EXTENT
        theta = theta0 + rng.uniform(-0.04, 0.04)
        cx = EXTENT / 2 - off * np.sin(theta0) + rng.uniform(-0.3, 0.3)
        cy = EXTENT / 2 + off * np.cos(theta0) + rng.uniform(-0.3, 0.3)
        u = rng.uniform(-0.5, 0.5, size=m) * length
        v = rng.uniform(-0.5, 0.5, size=m) * width
        x = np.clip(cx + u * np.cos(theta) - v * np.sin(theta), 0, EXTENT)
        y = np.clip(cy + u * np.sin(theta) + v * np.cos(theta), 0, EXTENT)
        parts.append(np.column_stack([x, y, np.full(m, 0.03)]))
        labels.append(np.full(m, 3))

    for center, half, height in intact:
        m = 192
        c = center + rng.uniform(-0.3, 0.3, size=2)
        areas = np.array(
            [4 * half[0] * half[1], 2 * half[1] * height, 2 * half[1] * height,
             2 * half[0] * height, 2 * half[0] * height]
        )
        face = rng.choice(5, size=m, p=areas / areas.sum())
        uu = rng.uniform(-1, 1, size=m)
        ww = rng.uniform(-1, 1, size=m)
        vv = rng.uniform(0, 1, size=m)
        pts = np.empty((m, 3))
        roof = face == 0
        pts[roof] = np.column_stack(
            [c[0] + uu[roof] * half[0], c[1] + ww[roof] * half[1], np.full(roof.sum(), height)]
        )
        for f, (dx, dy) in enumerate([(-1, 0), (1, 0), (0, -1), (0, 1)], start=1):
            sel = face == f
            if dx != 0:
                xs = np.full(sel.sum(), c[0] + dx * half[0])
                ys = c[1] + uu[sel] * half[1]
            else:
                xs = c[0] + uu[sel] * half[0]
                ys = np.full(sel.sum(), c[1] + dy * half[1])
            pts[sel] = np.column_stack([xs, ys, vv[sel] * height])
        parts.append(pts)
        labels.append(np.full(m, 2))

    for center, half in collapsed:
        m = 160
        c = center + rng.uniform(-0.3, 0.3, size=2)
        xy = np.column_stack(
            [c[0] + rng.uniform(-1.2, 1.2, m) * half[0], c[1] + rng.uniform(-1.2, 1.2, m) * half[1]]
        )
        z = np.minimum(np.abs(rng.normal(scale=0.35, size=m)) + rng.uniform(0, 0.4, m), 1.4)
        parts.append(np.column_stack([xy, z]))
        labels.append(np.full(m, 1))

    for center in trees:
        m = 96
        c = center + rng.uniform(-0.3, 0.3, size=2)
        pts = rng.normal(size=(m, 3)) * 0.6 + np.array([c[0], c[1], 3.0])
        pts[:, 2] = np.maximum(pts[:, 2], 0.3)
        parts.append(pts)
        labels.append(np.full(m, 4))

    for center in patches:
        m = 48
        c = center + rng.uniform(-0.3, 0.3, size=2)
        xy = rng.normal(scale=0.55, size=(m, 2)) + c
        parts.append(np.column_stack([np.clip(xy, 0, EXTENT), np.zeros(m)]))
        labels.append(np.full(m, 0))

    return _assemble(parts, labels, rng)


def _assemble(parts, labels, rng) -> PointCloud:
    pos = np.concatenate(parts)
    lab = np.concatenate(labels)
    pos = pos + rng.normal(scale=0.05, size=pos.shape)
    colors = np.clip(_COLORS[lab] + rng.normal(scale=0.06, size=(len(lab), 3)), 0, 1)
    order = rng.permutation(len(lab))
    return PointCloud(
        positions=pos[order],
        features=colors[order],
        labels=lab[order],
        class_count=len(CLASS_NAMES),
        class_names=CLASS_NAMES,
    )
