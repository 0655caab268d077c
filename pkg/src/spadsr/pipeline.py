"""End-to-end helpers shared by the command line and the experiments:
reconstruction by method name, per-scene evaluation, training-set
construction and the noise sweep."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import GuidedFilterParams, guided_filter
from .core import DepthMap, FeatureSet, NoiseSpec
from .features import PipelineConfig, build_features
from .metrics import ade, measure_noise, rmse
from .scenes import random_scene
from .simulator import ScenePair, simulate

METHODS = ("nn", "guided", "histnet")


def crop_to_target(depth: DepthMap, features: FeatureSet) -> DepthMap:
    th, tw = features.target_shape
    return DepthMap(depth.values[:th, :tw], depth.valid_mask[:th, :tw])


def reconstruct(method: str, features: FeatureSet, params=None,
                gf: GuidedFilterParams = GuidedFilterParams()) -> DepthMap:
    """HR depth at the unpadded target size by ``nn``, ``guided`` or ``histnet``."""
    if method == "nn":
        return crop_to_target(features.first_depth, features)
    if method == "guided":
        return crop_to_target(guided_filter(features.first_depth, features.intensity, gf), features)
    if method == "histnet":
        if params is None:
            raise ValueError("histnet reconstruction needs a checkpoint")
        from .histnet import infer

        return infer(params, features)
    raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class SceneSpec:
    """A procedural scene plus the noise draw applied to it."""

    name: str
    shape: tuple
    scene_seed: int
    noise: NoiseSpec
    bins: int = 16
    factor: int = 4


def scene_specs(n, shape, scene_seed, noise: NoiseSpec, bins=16, factor=4) -> list[SceneSpec]:
    """``n`` scenes; scene ``k`` uses scene seed ``scene_seed * 100003 + k``
    and noise seed ``noise.seed + k``."""
    out = []
    for k in range(n):
        nz = NoiseSpec(noise.ppp, noise.sbr, noise.sigma_bins, noise.seed + k)
        out.append(SceneSpec(f"scene{k:03d}", tuple(shape), scene_seed * 100003 + k, nz, bins, factor))
    return out


def realize(spec: SceneSpec):
    """Return ``(scene, measurement, features)``."""
    scene = random_scene(spec.shape, seed=spec.scene_seed)
    mode = "block" if spec.factor == 4 else "bicubic"
    meas = simulate(scene, spec.bins, spec.noise, spec.factor, mode=mode)
    return scene, meas, build_features(meas, PipelineConfig(upsample_factor=spec.factor))


def _noise_of(meas):
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return measure_noise(meas.histogram, meas.true_background, meas.true_peaks)


def evaluate_spec(spec: SceneSpec, methods, params=None, gf=GuidedFilterParams(),
                  record_runtime=False) -> list[dict]:
    """One row per method: scene, method, rmse, ade, sbr, ppp, runtime_ms."""
    scene, meas, feats = realize(spec)
    sbr, ppp = _noise_of(meas)
    rows = []
    for m in methods:
        t0 = time.perf_counter()
        pred = reconstruct(m, feats, params, gf)
        ms = (time.perf_counter() - t0) * 1e3
        rows.append({"scene": spec.name, "method": m, "rmse": rmse(pred, scene.depth_gt),
                     "ade": ade(pred, scene.depth_gt)[1], "sbr": sbr, "ppp": ppp,
                     "runtime_ms": ms if record_runtime else None})
    return rows


def parallel_map(fn, items, jobs=1):
    """Ordered map, in a process pool when ``jobs > 1``."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


class _Eval:
    def __init__(self, methods, params, gf, record_runtime):
        self.args = (methods, params, gf, record_runtime)

    def __call__(self, spec):
        return evaluate_spec(spec, *self.args)


def evaluate(specs, methods, params=None, gf=GuidedFilterParams(), record_runtime=False,
             jobs=1) -> list[dict]:
    rows = parallel_map(_Eval(methods, params, gf, record_runtime), specs, jobs)
    return [r for group in rows for r in group]


def training_set(specs, patch=64, stride=None, augment=True) -> list:
    """Feature/ground-truth patch pairs from simulated scenes."""
    from .histnet.train import feature_patches

    data = []
    for spec in specs:
        scene, _, feats = realize(spec)
        data += feature_patches(feats, scene.depth_gt, patch, stride or patch, augment)
    return data


class _SweepCell:
    def __init__(self, params, shape, scene_seed, n, bins, sigma, seed):
        self.a = (params, shape, scene_seed, n, bins, sigma, seed)

    def __call__(self, cell):
        params, shape, scene_seed, n, bins, sigma, seed = self.a
        ppp, sbr = cell
        specs = scene_specs(n, shape, scene_seed, NoiseSpec(ppp, sbr, sigma, seed), bins)
        rows = [r for s in specs for r in evaluate_spec(s, ["histnet"], params)]
        return float(np.mean([r["rmse"] for r in rows]))


def sweep(params, ppps, sbrs, shape=(64, 64), scene_seed=0, n_scenes=4, bins=16,
          sigma=0.5714, seed=0, jobs=1) -> np.ndarray:
    """Mean HistNet RMSE on a ``len(ppps) x len(sbrs)`` noise grid.

    Every cell reuses the same scenes and noise seeds so cells differ only
    in noise level.
    """
    cells = [(p, s) for p in ppps for s in sbrs]
    vals = parallel_map(_SweepCell(params, tuple(shape), scene_seed, n_scenes, bins, sigma, seed),
                        cells, jobs)
    return np.array(vals).reshape(len(ppps), len(sbrs))


def scene_pair_from_files(depth_path, intensity_path) -> ScenePair:
    from .core import IntensityMap, read_image

    d = read_image(depth_path)
    i = read_image(intensity_path)
    if isinstance(i, DepthMap):
        i = IntensityMap(i.values)
    return ScenePair(d, i)
