"""Reconstruction error metrics and histogram noise levels."""

from __future__ import annotations

import warnings

import numpy as np

from .core import DepthMap, HistogramCube


def _pair(pred, gt):
    p = pred if isinstance(pred, DepthMap) else DepthMap(np.clip(pred, 0, 1))
    g = gt if isinstance(gt, DepthMap) else DepthMap(np.clip(gt, 0, 1))
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} dims differ")
    mask = p.valid_mask & g.valid_mask
    return p.values, g.values, mask


def rmse(pred, gt) -> float:
    """Root mean squared error over pixels valid in both maps."""
    p, g, m = _pair(pred, gt)
    if not m.any():
        return float("nan")
    return float(np.sqrt(np.mean((p[m] - g[m]) ** 2)))


def ade(pred, gt):
    """Per-pixel absolute depth error map (0 where invalid) and its mean."""
    p, g, m = _pair(pred, gt)
    err = np.where(m, np.abs(p - g), 0.0)
    return err, (float(err[m].mean()) if m.any() else float("nan"))


def pixel_noise(cube, background, peaks):
    """Per-pixel ``(sbr, ppp)`` from the 3-bin window around each peak.

    ``ppp`` is the background-subtracted window sum. ``sbr`` divides it by
    ``b`` times the number of bins in the window; it is ``inf`` where
    ``b = 0`` and the pixel holds signal, and 0 for a signal-free pixel.
    """
    c = np.asarray(cube.counts if isinstance(cube, HistogramCube) else cube, dtype=np.float64)
    t = c.shape[-1]
    shape = c.shape[:-1]
    b = np.broadcast_to(np.asarray(background, dtype=np.float64), shape)
    pk = np.broadcast_to(np.asarray(getattr(peaks, "d_max", peaks), dtype=np.int64), shape)
    lo, hi = np.maximum(1, pk - 1), np.minimum(t, pk + 1)
    ppp = np.zeros(shape)
    for off in (-1, 0, 1):
        tt = pk + off
        inside = (tt >= 1) & (tt <= t)
        h = np.take_along_axis(c, np.clip(tt, 1, t)[..., None] - 1, axis=-1)[..., 0]
        ppp += np.where(inside, h - b, 0.0)
    width = hi - lo + 1
    with np.errstate(divide="ignore", invalid="ignore"):
        sbr = np.where(ppp == 0, 0.0, ppp / (b * width))
    return sbr, ppp


def measure_noise(cube, background, peaks):
    """Image-average ``(sbr, ppp)``.

    Pixels with infinite SBR (zero background) are left out of the SBR
    average with a warning; the result is ``inf`` if no finite pixel is left.
    """
    sbr, ppp = pixel_noise(cube, background, peaks)
    finite = np.isfinite(sbr)
    if not finite.all():
        warnings.warn(f"{int((~finite).sum())} pixel(s) with zero background excluded from SBR",
                      RuntimeWarning, stacklevel=2)
    mean_sbr = float(sbr[finite].mean()) if finite.any() else float("inf")
    return mean_sbr, float(ppp.mean())
