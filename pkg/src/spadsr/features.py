"""Histogram pre-processing: background, peaks, depth maps, multi-scale
depth features and temporal cropping.

Time bins are 1-indexed throughout (bin ``t`` in ``1..T``). Depths are
returned normalized by the (cropped) number of bins.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import kernels
from .baselines import upsample_nearest
from .core import DEFAULT_IRF_SIGMA, DepthMap, FeatureSet, HistogramCube, IntensityMap
from .simulator import Measurement, block_sum, irf_kernel

PEAK_METHODS = ("argmax", "matched_filter")


@dataclass(frozen=True)
class PeakEstimate:
    d_max: np.ndarray
    method: str


@dataclass(frozen=True)
class PipelineConfig:
    """Feature-extraction settings.

    ``None`` fields take the per-factor default: for ``s = 4`` argmax peaks,
    second depth on, no crop; for ``s = 8`` matched-filter peaks, second
    depth off, temporal crop on.
    """

    upsample_factor: int = 4
    level: float = 12.0
    second_depth_enabled: bool | None = None
    peak_method: str | None = None
    crop_enabled: bool | None = None
    median_window: int = 3
    irf_sigma: float = DEFAULT_IRF_SIGMA

    def __post_init__(self):
        if self.upsample_factor not in (4, 8):
            raise ValueError("upsample_factor must be 4 or 8")
        if not self.level > 0:
            raise ValueError("level must be positive")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError("median_window must be a positive odd integer")
        if self.peak_method is not None and self.peak_method not in PEAK_METHODS:
            raise ValueError(f"unknown peak method {self.peak_method!r}")

    def resolved(self) -> "PipelineConfig":
        four = self.upsample_factor == 4
        return replace(
            self,
            second_depth_enabled=four and (True if self.second_depth_enabled is None
                                           else self.second_depth_enabled),
            peak_method=self.peak_method or ("argmax" if four else "matched_filter"),
            crop_enabled=(not four) if self.crop_enabled is None else self.crop_enabled,
        )


def _counts(cube) -> np.ndarray:
    arr = cube.counts if isinstance(cube, HistogramCube) else np.asarray(cube)
    return np.asarray(arr, dtype=np.float64)


def estimate_background(cube) -> np.ndarray:
    """Per-pixel lower median over time bins."""
    c = _counts(cube)
    k = (c.shape[-1] - 1) // 2
    return np.partition(c, k, axis=-1)[..., k]


def matched_filter_kernel(sigma: float = DEFAULT_IRF_SIGMA) -> np.ndarray:
    """Unit-sum Gaussian truncated at ``+-ceil(3 sigma)`` (at least 3 taps)."""
    if not sigma > 0:
        raise ValueError("irf sigma must be positive")
    return irf_kernel(sigma)


def find_peak(cube, background=None, method="argmax", irf_sigma=DEFAULT_IRF_SIGMA) -> PeakEstimate:
    c = _counts(cube)
    flat = c.reshape(-1, c.shape[-1])
    if method == "argmax":
        peaks = kernels.argmax_peaks(flat)
    elif method == "matched_filter":
        peaks = kernels.matched_filter_peaks(flat, matched_filter_kernel(irf_sigma))
    else:
        raise ValueError(f"unknown peak method {method!r}")
    return PeakEstimate(peaks.reshape(c.shape[:-1]), method)


def _peaks_array(peaks) -> np.ndarray:
    return np.asarray(peaks.d_max if isinstance(peaks, PeakEstimate) else peaks, dtype=np.int64)


def center_of_mass_bins(cube, background, peaks):
    """Windowed center of mass in bin units; returns ``(depth, valid)``."""
    c = _counts(cube)
    shape = c.shape[:-1]
    b = np.broadcast_to(np.asarray(background, dtype=np.float64), shape).ravel()
    d, v = kernels.center_of_mass(c.reshape(-1, c.shape[-1]), b, _peaks_array(peaks).ravel())
    return d.reshape(shape), v.reshape(shape).astype(bool)


def center_of_mass_depth(cube, background, peaks) -> DepthMap:
    """Center-of-mass depth divided by the number of bins."""
    d, valid = center_of_mass_bins(cube, background, peaks)
    return DepthMap(d / _counts(cube).shape[-1], valid)


def second_depth(cube, background, first_peaks, level=12.0) -> DepthMap:
    """Depth of the strongest bin outside the first peak's window, kept only
    where it exceeds ``b + level * sqrt(b)``."""
    c = _counts(cube)
    shape = c.shape[:-1]
    b = np.broadcast_to(np.asarray(background, dtype=np.float64), shape).ravel()
    flat = c.reshape(-1, c.shape[-1])
    p2 = kernels.second_peaks(flat, b, _peaks_array(first_peaks).ravel(), float(level))
    d, v = kernels.center_of_mass(flat, b, np.maximum(p2, 1))
    found = p2 > 0
    valid = found & (v > 0)
    d = np.where(valid, d / c.shape[-1], 0.0)
    return DepthMap(d.reshape(shape), valid.reshape(shape))


def crop_mask(cube, level=12.0, median_window=3) -> np.ndarray:
    """Bins of the aggregate histogram passing the peak criterion, with
    isolated detections removed by a 1-D median filter."""
    c = _counts(cube)
    agg = c.reshape(-1, c.shape[-1]).sum(axis=0)
    k = (agg.size - 1) // 2
    b = np.partition(agg, k)[k]
    mask = (agg > b + level * np.sqrt(b)).astype(np.uint8)
    return ndimage.median_filter(mask, size=median_window, mode="constant", cval=0) > 0


def temporal_crop(cube, level=12.0, median_window=3) -> tuple[int, int]:
    """1-indexed inclusive bin range holding signal; ``(1, T)`` if none."""
    mask = crop_mask(cube, level, median_window)
    hits = np.flatnonzero(mask)
    if hits.size == 0:
        return 1, mask.size
    return int(hits[0]) + 1, int(hits[-1]) + 1


def _eq1_map(cube, method, sigma) -> DepthMap:
    b = estimate_background(cube)
    return center_of_mass_depth(cube, b, find_peak(cube, b, method, sigma))


def _pad_spatial(arr, mult_h, mult_w):
    ph, pw = (-arr.shape[0]) % mult_h, (-arr.shape[1]) % mult_w
    if ph == 0 and pw == 0:
        return arr
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (arr.ndim - 2)
    return np.pad(arr, pad, mode="symmetric")


def _pick(depth: DepthMap, k: int) -> DepthMap:
    return DepthMap(depth.values[::k, ::k], depth.valid_mask[::k, ::k])


def build_features(meas: Measurement, cfg: PipelineConfig | None = None) -> FeatureSet:
    """Assemble the network input bundle from a measurement.

    LR dims that do not divide the coarsest feature scale are padded by
    mirroring; ``target_shape`` keeps the unpadded HR size.
    """
    cfg = (cfg or PipelineConfig(upsample_factor=meas.spatial_factor)).resolved()
    s = cfg.upsample_factor
    if s != meas.spatial_factor:
        raise ValueError(f"config factor {s} does not match measurement factor {meas.spatial_factor}")
    counts = _counts(meas.histogram)
    h, w, t_full = counts.shape
    target = (h * s, w * s)
    crop = (1, t_full)
    if cfg.crop_enabled:
        crop = temporal_crop(counts, cfg.level, cfg.median_window)
        counts = counts[..., crop[0] - 1 : crop[1]]
    mult = 16 // s
    counts = _pad_spatial(counts, mult, mult)
    intensity = _pad_spatial(meas.intensity.values, mult * s, mult * s)

    b = estimate_background(counts)
    peaks = find_peak(counts, b, cfg.peak_method, cfg.irf_sigma)
    first_lr = center_of_mass_depth(counts, b, peaks)
    first = upsample_nearest(first_lr, s)
    if cfg.second_depth_enabled:
        second = upsample_nearest(second_depth(counts, b, peaks, cfg.level), s)
    else:
        second = DepthMap(np.zeros(first.shape), np.zeros(first.shape, bool))

    if s == 4:
        d1, d2 = _pick(first, 2), first_lr
        d3 = _eq1_map(block_sum(counts, 2), cfg.peak_method, cfg.irf_sigma)
        d4 = _eq1_map(block_sum(counts, 4), cfg.peak_method, cfg.irf_sigma)
    else:
        d1, d2, d3 = _pick(first, 2), _pick(first, 4), first_lr
        d4 = _eq1_map(block_sum(counts, 2), cfg.peak_method, cfg.irf_sigma)

    return FeatureSet(first, second, d1, d2, d3, d4, IntensityMap(intensity), crop, target)


def features_from_arrays(cube, intensity, s=4, cfg=None) -> FeatureSet:
    """Build features from a raw cube and HR intensity (no simulator metadata)."""
    meas = Measurement(HistogramCube(cube), IntensityMap(intensity), s, float("nan"))
    return build_features(meas, cfg or PipelineConfig(upsample_factor=s))
