"""HistNet: a residual U-Net over multi-scale depth features with depth and
intensity guidance.

Layout of one forward pass at target resolution ``R``::

    main = [first, second]                        R
    L0   = conv, conv                             R      64
    Lk   = pool, cat dg_k(D_k), conv, conv        R/2^k  128..1024  (k = 1..4)
    ig_k = conv on the (pooled) intensity         R/2^k  64..512    (k = 0..3)
    L5..L8 = deconv, cat skip, cat ig, conv, conv R/8..R 512..64
    L9   = 1x1 conv -> residual                   R      1

Widths are the canonical counts times ``width_scale``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import DepthMap, FeatureSet, IntensityMap
from .engine import Tape, Var

ENCODER = (64, 128, 256, 512, 1024)
DEPTH_GUIDE = (64, 128, 256, 512)
INTENSITY_GUIDE = (64, 128, 256, 512)
DECODER = (512, 256, 128, 64)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_ch: int
    out_ch: int

    @property
    def kernel(self) -> int:
        return 1 if self.kind == "conv1x1_out" else 3


def width(canonical: int, scale: float) -> int:
    return max(1, int(round(scale * canonical)))


def layer_specs(width_scale: float) -> list[LayerSpec]:
    """Parameterized layers in a fixed order (pool/concat carry no weights)."""
    if not 0 < width_scale <= 1:
        raise ValueError("width_scale must lie in (0, 1]")
    enc = [width(c, width_scale) for c in ENCODER]
    dg = [width(c, width_scale) for c in DEPTH_GUIDE]
    ig = [width(c, width_scale) for c in INTENSITY_GUIDE]
    dec = [width(c, width_scale) for c in DECODER]
    specs = [LayerSpec("L0.conv1", "conv3x3", 2, enc[0]),
             LayerSpec("L0.conv2", "conv3x3", enc[0], enc[0])]
    for k in range(1, 5):
        specs.append(LayerSpec(f"dg{k}", "conv3x3", 1, dg[k - 1]))
        specs.append(LayerSpec(f"L{k}.conv1", "conv3x3", enc[k - 1] + dg[k - 1], enc[k]))
        specs.append(LayerSpec(f"L{k}.conv2", "conv3x3", enc[k], enc[k]))
    prev = 1
    for k in range(4):
        specs.append(LayerSpec(f"ig{k}", "conv3x3", prev, ig[k]))
        prev = ig[k]
    prev = enc[4]
    for i, k in enumerate(range(5, 9)):
        skip, guide = enc[3 - i], ig[3 - i]
        specs.append(LayerSpec(f"L{k}.up", "deconv_up2", prev, dec[i]))
        specs.append(LayerSpec(f"L{k}.conv1", "conv3x3", dec[i] + skip + guide, dec[i]))
        specs.append(LayerSpec(f"L{k}.conv2", "conv3x3", dec[i], dec[i]))
        prev = dec[i]
    specs.append(LayerSpec("L9", "conv1x1_out", prev, 1))
    return specs


@dataclass
class HistNetParams:
    """Weights ``(out, in, k, k)`` and biases ``(out,)`` keyed by
    ``"<layer>.w"`` / ``"<layer>.b"``."""

    width_scale: float
    arrays: dict = field(default_factory=dict)
    step: int = 0

    @property
    def specs(self) -> list[LayerSpec]:
        return layer_specs(self.width_scale)

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def names(self) -> list[str]:
        return [f"{s.name}.{p}" for s in self.specs for p in ("w", "b")]

    def copy(self) -> "HistNetParams":
        return HistNetParams(self.width_scale, {k: v.copy() for k, v in self.arrays.items()}, self.step)

    def astype(self, dtype) -> "HistNetParams":
        return HistNetParams(self.width_scale,
                             {k: v.astype(dtype) for k, v in self.arrays.items()}, self.step)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


def init_params(width_scale: float, seed: int = 0, dtype=np.float32) -> HistNetParams:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases.

    The output layer starts at zero so the initial prediction is the
    up-scaled first depth itself.
    """
    rng = np.random.default_rng(seed)
    arrays = {}
    for s in layer_specs(width_scale):
        fan_in = s.in_ch * s.kernel * s.kernel
        bound = np.sqrt(6.0 / fan_in)
        shape = (s.out_ch, s.in_ch, s.kernel, s.kernel)
        w = rng.uniform(-bound, bound, shape)
        arrays[f"{s.name}.w"] = (w if s.kind != "conv1x1_out" else 0 * w).astype(dtype)
        arrays[f"{s.name}.b"] = np.zeros(s.out_ch, dtype=dtype)
    return HistNetParams(width_scale, arrays)


def zero_params(width_scale: float, dtype=np.float32) -> HistNetParams:
    p = init_params(width_scale, 0, dtype)
    return HistNetParams(width_scale, {k: np.zeros_like(v) for k, v in p.arrays.items()})


# -- batching -------------------------------------------------------------

INPUT_KEYS = ("main", "d1", "d2", "d3", "d4", "intensity")


def stack_features(features: list[FeatureSet], dtype=np.float32) -> dict:
    """Stack feature sets into NHWC network inputs plus the ``first`` depth."""
    if not features:
        raise ValueError("empty feature list")
    shape = features[0].first_depth.shape
    if shape[0] % 16 or shape[1] % 16:
        raise ValueError(f"feature dims {shape} not divisible by 16")

    def st(get):
        return np.stack([get(f) for f in features]).astype(dtype)

    return {
        "main": st(lambda f: np.stack([f.first_depth.values, f.second_depth.values], -1)),
        "d1": st(lambda f: f.d1.values[..., None]),
        "d2": st(lambda f: f.d2.values[..., None]),
        "d3": st(lambda f: f.d3.values[..., None]),
        "d4": st(lambda f: f.d4.values[..., None]),
        "intensity": st(lambda f: f.intensity.values[..., None]),
        "first": np.stack([f.first_depth.values for f in features]).astype(np.float64),
    }


def take(batch: dict, idx) -> dict:
    return {k: v[idx] for k, v in batch.items()}


# -- forward ----------------------------------------------------------------

def forward_tape(params: HistNetParams, batch: dict, tape: Tape):
    """Run the network on ``tape``; returns ``(residual_var, param_vars)``."""
    pv = {k: Var(v, k) for k, v in params.arrays.items()}
    dtype = params.dtype

    def conv(name, x):
        return tape.relu(tape.conv3x3(x, pv[name + ".w"], pv[name + ".b"]))

    def inp(key):
        return Var(np.asarray(batch[key], dtype=dtype))

    x = conv("L0.conv2", conv("L0.conv1", inp("main")))
    skips = [x]
    for k in range(1, 5):
        x = tape.maxpool2(x)
        g = conv(f"dg{k}", inp(f"d{k}"))
        x = conv(f"L{k}.conv2", conv(f"L{k}.conv1", tape.concat([x, g])))
        skips.append(x)

    guides = []
    y = inp("intensity")
    for k in range(4):
        y = conv(f"ig{k}", y)
        guides.append(y)
        if k < 3:
            y = tape.maxpool2(y)

    for i, k in enumerate(range(5, 9)):
        up = tape.relu(tape.deconv_up2(x, pv[f"L{k}.up.w"], pv[f"L{k}.up.b"]))
        cat = tape.concat([up, skips[3 - i], guides[3 - i]])
        x = conv(f"L{k}.conv2", conv(f"L{k}.conv1", cat))
    residual = tape.conv1x1(x, pv["L9.w"], pv["L9.b"])
    return residual, pv


def forward(params: HistNetParams, batch: dict) -> np.ndarray:
    """Residual maps ``(N, R_h, R_w)`` without recording gradients."""
    residual, _ = forward_tape(params, batch, Tape(record=False))
    return residual.value[..., 0]


def loss(residual, first_depth, depth_gt) -> float:
    """``mean |R + d - d_ref|`` over batch and pixels."""
    r = np.asarray(residual, dtype=np.float64)
    d = np.asarray(first_depth, dtype=np.float64)
    g = np.asarray(depth_gt, dtype=np.float64)
    if not r.shape == d.shape == g.shape:
        raise ValueError(f"dims differ: {r.shape}, {d.shape}, {g.shape}")
    return float(np.abs(r + d - g).mean())


def backward(params: HistNetParams, batch: dict, depth_gt, scale: float = 1.0):
    """Return ``(loss, grads)`` with grads keyed like ``params.arrays``.

    ``scale`` multiplies the loss before differentiation.
    """
    tape = Tape()
    residual, pv = forward_tape(params, batch, tape)
    out = tape.l1_loss(residual, batch["first"], np.asarray(depth_gt, dtype=np.float64))
    tape.backward(out, np.array(scale))
    grads = {}
    for k, v in pv.items():
        g = v.grad if v.grad is not None else np.zeros_like(v.value)
        grads[k] = np.asarray(g, dtype=params.dtype)
    return float(out.value) * scale, grads


# -- inference --------------------------------------------------------------

def _mirror_to16(a):
    h, w = a.shape[:2]
    ph, pw = (-h) % 16, (-w) % 16
    if ph == 0 and pw == 0:
        return a
    return np.pad(a, [(0, ph), (0, pw)] + [(0, 0)] * (a.ndim - 2), mode="symmetric")


def _pad_features(f: FeatureSet) -> FeatureSet:
    """Mirror-pad a feature set whose dims are not multiples of 16."""
    h, w = f.first_depth.shape
    if h % 16 == 0 and w % 16 == 0:
        return f

    def pd(d, k):
        v = d.values
        hh, ww = -(-h // 16) * 16 // k, -(-w // 16) * 16 // k
        pv = np.pad(v, [(0, hh - v.shape[0]), (0, ww - v.shape[1])], mode="symmetric")
        pm = np.pad(d.valid_mask, [(0, hh - v.shape[0]), (0, ww - v.shape[1])], mode="symmetric")
        return DepthMap(pv, pm)

    return FeatureSet(pd(f.first_depth, 1), pd(f.second_depth, 1), pd(f.d1, 2), pd(f.d2, 4),
                      pd(f.d3, 8), pd(f.d4, 16), IntensityMap(_mirror_to16(f.intensity.values)),
                      f.crop_range, f.target_shape)


def infer(params: HistNetParams, features: FeatureSet) -> DepthMap:
    """``clamp(first_depth + residual, 0, 1)`` cropped to the target dims."""
    f = _pad_features(features)
    batch = stack_features([f], params.dtype)
    r = forward(params, batch)[0].astype(np.float64)
    out = np.clip(f.first_depth.values + r, 0.0, 1.0)
    th, tw = features.target_shape or features.first_depth.shape
    return DepthMap(out[:th, :tw])
