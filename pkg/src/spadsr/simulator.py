"""SPAD measurement simulation from ground-truth depth and intensity.

Per HR pixel the expected count in bin ``t`` (1-indexed) is
``a * r * g(t - d * T) + b / s**2`` with ``g`` a unit-sum discretized
Gaussian IRF. Counts are Poisson, drawn from counter-based streams keyed by
the flat (pixel, bin) index, then summed over ``s x s`` blocks.

The signal scale ``a`` is set so that the image-average photons per pixel
(3-bin window around the true peak, true background subtracted) equals
``ppp`` in expectation; ``b = ppp / (3 * sbr)`` per LR pixel and bin makes
the image-average SBR match ``sbr`` as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import kernels
from .core import DepthMap, HistogramCube, IntensityMap, NoiseSpec

PRESETS = {
    "high": (1200.0, 2.0),
    "medium": (4.0, 0.02),
    "low": (4.0, 0.006),
}

SBR_WINDOW = 3


def preset(name: str, sigma_bins: float = 0.5714, seed: int = 0) -> NoiseSpec:
    ppp, sbr = PRESETS[name]
    return NoiseSpec(ppp=ppp, sbr=sbr, sigma_bins=sigma_bins, seed=seed)


@dataclass(frozen=True)
class ScenePair:
    depth_gt: DepthMap
    intensity_gt: IntensityMap

    def __post_init__(self):
        if self.depth_gt.shape != self.intensity_gt.shape:
            raise ValueError("depth and intensity dims differ")

    @property
    def shape(self):
        return self.depth_gt.shape


@dataclass(frozen=True)
class Measurement:
    histogram: HistogramCube
    intensity: IntensityMap
    spatial_factor: int
    true_background: float
    signal_scale: float = 0.0
    true_peaks: np.ndarray = None
    noise: NoiseSpec = None
    hr_histogram: np.ndarray = None

    def __post_init__(self):
        h, w, _ = self.histogram.shape
        s = self.spatial_factor
        if self.intensity.shape != (h * s, w * s):
            raise ValueError(
                f"intensity {self.intensity.shape} is not {s}x histogram {(h, w)}"
            )


def irf_kernel(sigma: float, half_width: int | None = None) -> np.ndarray:
    """Unit-sum Gaussian sampled at integer offsets ``-half..half``."""
    half = math.ceil(3 * sigma) if half_width is None else half_width
    half = max(half, 1)
    off = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(off**2) / (2 * sigma**2))
    return g / g.sum()


def expected_signal(depth, reflectivity, bins: int, sigma: float) -> np.ndarray:
    """Signal cube ``r * g(t - d * T)`` for unit signal scale.

    ``g`` is sampled at bin centres within ``+-ceil(4 sigma)`` of the
    nearest bin and renormalized over the taps that fall inside ``[1, T]``,
    so each pixel's signal sums exactly to ``r``.
    """
    d = np.asarray(depth, dtype=np.float64)
    r = np.asarray(reflectivity, dtype=np.float64)
    centre = d * bins
    half = math.ceil(4 * sigma)
    nearest = np.floor(centre + 0.5).astype(np.int64)
    out = np.zeros(d.shape + (bins,))
    weights, taps = [], []
    for off in range(-half, half + 1):
        t = nearest + off
        inside = (t >= 1) & (t <= bins)
        w = np.where(inside, np.exp(-((t - centre) ** 2) / (2 * sigma**2)), 0.0)
        weights.append(w)
        taps.append(np.clip(t, 1, bins))
    total = np.sum(weights, axis=0)
    total[total == 0] = 1.0
    ii, jj = np.indices(d.shape)
    for w, t in zip(weights, taps):
        out[ii, jj, t - 1] += r * w / total
    return out


def block_sum(x: np.ndarray, s: int) -> np.ndarray:
    """Sum over non-overlapping ``s x s`` blocks of the two leading axes."""
    h, w = x.shape[:2]
    if h % s or w % s:
        raise ValueError(f"dims {(h, w)} not divisible by {s}")
    acc = np.uint64 if np.issubdtype(x.dtype, np.integer) else np.float64
    y = x.reshape((h // s, s, w // s, s) + x.shape[2:]).sum(axis=(1, 3), dtype=acc)
    return y.astype(x.dtype) if np.issubdtype(x.dtype, np.integer) else y


def window_sum(cube: np.ndarray, peaks: np.ndarray) -> np.ndarray:
    """Sum of bins ``max(1, p-1)..min(T, p+1)`` per pixel (1-indexed peaks)."""
    t = cube.shape[-1]
    out = np.zeros(cube.shape[:-1])
    for off in (-1, 0, 1):
        tt = peaks + off
        inside = (tt >= 1) & (tt <= t)
        vals = np.take_along_axis(cube, np.clip(tt, 1, t)[..., None] - 1, axis=-1)[..., 0]
        out += np.where(inside, vals, 0.0)
    return out


def downsample_bicubic(img: np.ndarray, s: int) -> np.ndarray:
    h, w = img.shape
    im = Image.fromarray(np.asarray(img, dtype=np.float32), mode="F")
    return np.asarray(im.resize((w // s, h // s), Image.BICUBIC), dtype=np.float64)


def calibrate(signal_lr: np.ndarray, spec: NoiseSpec):
    """Return ``(a, b, true_peaks)`` for a unit-scale LR signal cube."""
    peaks = np.argmax(signal_lr, axis=-1) + 1
    mean_window = window_sum(signal_lr, peaks).mean()
    a = spec.ppp / mean_window if mean_window > 0 else 0.0
    b = 0.0 if math.isinf(spec.sbr) else spec.ppp / (SBR_WINDOW * spec.sbr)
    return a, b, peaks


def _check(shape, bins, spec, s):
    if bins < 3:
        raise ValueError("need at least 3 time bins")
    if shape[0] % s or shape[1] % s:
        raise ValueError(f"scene dims {shape} not divisible by factor {s}")
    if not (spec.ppp > 0 and spec.sbr > 0):
        raise ValueError("ppp and sbr must be positive")


def expected_histogram(scene: ScenePair, bins: int, spec: NoiseSpec, s: int = 4,
                       mode: str = "block"):
    """Expected LR histogram ``(lam_lr, a, b, true_peaks)``."""
    _check(scene.shape, bins, spec, s)
    if mode == "block":
        sig = block_sum(expected_signal(scene.depth_gt.values, scene.intensity_gt.values,
                                        bins, spec.sigma_bins), s)
    elif mode == "bicubic":
        d = np.clip(downsample_bicubic(scene.depth_gt.values, s), 0.0, 1.0)
        r = np.clip(downsample_bicubic(scene.intensity_gt.values, s), 0.0, None)
        sig = expected_signal(d, r, bins, spec.sigma_bins)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    a, b, peaks = calibrate(sig, spec)
    return a * sig + b, a, b, peaks


def simulate(scene: ScenePair, bins: int, spec: NoiseSpec, s: int = 4,
             mode: str = "block", keep_hr: bool = False) -> Measurement:
    """Simulate a LR histogram cube and HR intensity from a scene.

    ``mode="block"`` draws HR histograms and sums ``s x s`` blocks;
    ``mode="bicubic"`` first shrinks depth and intensity by ``s`` with
    bicubic interpolation and draws the LR cube directly.
    """
    _check(scene.shape, bins, spec, s)
    hr = None
    if mode == "block":
        sig_hr = expected_signal(scene.depth_gt.values, scene.intensity_gt.values,
                                 bins, spec.sigma_bins)
        a, b, peaks = calibrate(block_sum(sig_hr, s), spec)
        lam = a * sig_hr + b / (s * s)
        hr = kernels.poisson_sample(lam, spec.seed).reshape(lam.shape)
        counts = block_sum(hr, s)
    else:
        lam, a, b, peaks = expected_histogram(scene, bins, spec, s, mode)
        counts = kernels.poisson_sample(lam, spec.seed).reshape(lam.shape)
    return Measurement(
        histogram=HistogramCube(counts),
        intensity=scene.intensity_gt,
        spatial_factor=s,
        true_background=float(b),
        signal_scale=float(a),
        true_peaks=peaks,
        noise=spec,
        hr_histogram=hr if keep_hr else None,
    )


def make_patches(scene: ScenePair, size: int = 96, stride: int = 48) -> list[ScenePair]:
    h, w = scene.shape
    if size > h or size > w:
        raise ValueError(f"patch size {size} exceeds scene dims {(h, w)}")
    out = []
    for i in range(0, h - size + 1, stride):
        for j in range(0, w - size + 1, stride):
            sl = (slice(i, i + size), slice(j, j + size))
            out.append(ScenePair(
                DepthMap(scene.depth_gt.values[sl], scene.depth_gt.valid_mask[sl]),
                IntensityMap(scene.intensity_gt.values[sl]),
            ))
    return out


def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """k in 0..7: rotation by ``k % 4`` quarter turns, mirrored when k >= 4."""
    out = np.rot90(img, k % 4)
    return np.fliplr(out) if k >= 4 else out


def augment(scene: ScenePair) -> list[ScenePair]:
    """The eight rotations/flips of a scene."""
    return [
        ScenePair(
            DepthMap(dihedral(scene.depth_gt.values, k), dihedral(scene.depth_gt.valid_mask, k)),
            IntensityMap(dihedral(scene.intensity_gt.values, k)),
        )
        for k in range(8)
    ]
