"""Procedural depth/intensity scenes for training and tests.

Scenes are a slanted background plane with a few occluding shapes
(rectangles, ellipses, triangles), each with its own depth gradient and
albedo. Some shapes carry intensity texture that has no depth edge, so the
intensity guide is informative but not a copy of the depth.
"""

from __future__ import annotations

import numpy as np

from .core import DepthMap, IntensityMap
from .simulator import ScenePair

DEPTH_RANGE = (0.15, 0.85)


def _shape_mask(rng, yy, xx, h, w):
    kind = rng.integers(3)
    cy, cx = rng.uniform(0, h), rng.uniform(0, w)
    sy, sx = rng.uniform(0.1, 0.35) * h, rng.uniform(0.1, 0.35) * w
    if kind == 0:
        return (np.abs(yy - cy) < sy) & (np.abs(xx - cx) < sx)
    if kind == 1:
        return ((yy - cy) / sy) ** 2 + ((xx - cx) / sx) ** 2 < 1.0
    pts = np.stack([cy + rng.uniform(-1, 1, 3) * sy * 1.5, cx + rng.uniform(-1, 1, 3) * sx * 1.5], 1)
    inside = np.ones(yy.shape, bool)
    sign = None
    for k in range(3):
        (y0, x0), (y1, x1) = pts[k], pts[(k + 1) % 3]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        if sign is None:
            sign = np.sign((x1 - x0) * (pts[(k + 2) % 3][0] - y0) - (y1 - y0) * (pts[(k + 2) % 3][1] - x0))
        inside &= cross * sign >= 0
    return inside


def random_scene(shape=(64, 64), seed=0, n_objects=(3, 7)) -> ScenePair:
    rng = np.random.default_rng(seed)
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    lo, hi = DEPTH_RANGE

    def plane(base, slope):
        gy, gx = rng.uniform(-slope, slope, 2)
        return base + gy * (yy - h / 2) / h + gx * (xx - w / 2) / w

    depth = plane(rng.uniform(0.6, hi), 0.2)
    albedo = np.full(shape, rng.uniform(0.3, 0.9))
    for _ in range(rng.integers(*n_objects, endpoint=True)):
        mask = _shape_mask(rng, yy, xx, h, w)
        obj_depth = plane(rng.uniform(lo, 0.75), 0.15)
        front = mask & (obj_depth < depth)
        depth = np.where(front, obj_depth, depth)
        a = rng.uniform(0.2, 1.0)
        if rng.random() < 0.3:
            period = rng.uniform(4, 12)
            a = a * (0.75 + 0.25 * np.sign(np.sin(2 * np.pi * (xx + yy) / period)))
        albedo = np.where(front, a, albedo)
    depth = np.clip(depth, lo, hi)
    # closer surfaces return more light
    intensity = albedo * (1.2 - 0.5 * depth)
    intensity = intensity / intensity.max()
    return ScenePair(DepthMap(depth), IntensityMap(intensity))


def scene_set(n, shape=(64, 64), seed=0):
    return [random_scene(shape, seed=seed * 100003 + k) for k in range(n)]
