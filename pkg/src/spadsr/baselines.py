"""Classical reconstruction baselines: nearest-neighbour up-sampling and
the guided image filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DepthMap, IntensityMap


@dataclass(frozen=True)
class GuidedFilterParams:
    radius: int = 8
    eps: float = 1e-4

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")


def upsample_nearest(depth: DepthMap, s: int) -> DepthMap:
    """Replicate every pixel (and its mask bit) into an ``s x s`` block."""
    if s < 1:
        raise ValueError("factor must be >= 1")
    rep = lambda a: np.repeat(np.repeat(a, s, axis=0), s, axis=1)
    return DepthMap(rep(depth.values), rep(depth.valid_mask))


def box_mean(img, radius: int) -> np.ndarray:
    """Mean over ``(2r+1)^2`` windows, edges replicated."""
    return kernels.box_sum(img, radius) / float((2 * radius + 1) ** 2)


def guided_filter_values(p, guide, radius=8, eps=1e-4) -> np.ndarray:
    """Guided filter on raw arrays (He et al.'s local linear model)."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(guide, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"input {p.shape} and guide {g.shape} dims differ")
    mean_g = box_mean(g, radius)
    mean_p = box_mean(p, radius)
    cov_gp = box_mean(g * p, radius) - mean_g * mean_p
    var_g = box_mean(g * g, radius) - mean_g * mean_g
    a = cov_gp / (var_g + eps) if eps > 0 else np.divide(
        cov_gp, var_g, out=np.zeros_like(cov_gp), where=var_g > 0)
    b = mean_p - a * mean_g
    return box_mean(a, radius) * g + box_mean(b, radius)


def guided_filter(depth: DepthMap, guide: IntensityMap,
                  params: GuidedFilterParams = GuidedFilterParams()) -> DepthMap:
    """Guided-filter a depth map with the intensity image; output is clipped
    to ``[0, 1]`` and keeps the input's valid mask."""
    if depth.shape != guide.shape:
        raise ValueError(f"depth {depth.shape} and guide {guide.shape} dims differ")
    q = guided_filter_values(depth.values, guide.values, params.radius, params.eps)
    return DepthMap(np.clip(q, 0.0, 1.0), depth.valid_mask)
