"""Mini-batch training of HistNet."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import DepthMap, FeatureSet
from .model import HistNetParams, backward, init_params, stack_features, take
from .optimizer import ProximalAdagrad


@dataclass(frozen=True)
class TrainConfig:
    """``max_steps`` caps the step count; otherwise an epoch is one pass
    over the dataset and the run lasts ``epochs`` passes."""

    batch_size: int = 64
    learning_rate: float = 0.1
    epochs: int = 2000
    l1_reg: float = 0.0
    accumulator_init: float = 0.1
    seed: int = 0
    max_steps: int | None = None

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "epochs", "accumulator_init"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.l1_reg < 0:
            raise ValueError("l1_reg must be non-negative")
        if self.max_steps is not None and self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def total_steps(self, n: int) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return math.ceil(self.epochs * n / self.batch_size)


@dataclass
class TrainResult:
    params: HistNetParams
    losses: list


def prepare(dataset) -> tuple[dict, np.ndarray]:
    """Stack ``(FeatureSet, DepthMap)`` pairs into batch arrays."""
    if not dataset:
        raise ValueError("empty dataset")
    feats = [f for f, _ in dataset]
    gts = np.stack([g.values if isinstance(g, DepthMap) else np.asarray(g) for _, g in dataset])
    batch = stack_features(feats)
    if gts.shape != batch["first"].shape:
        raise ValueError(f"ground truth {gts.shape} does not match features {batch['first'].shape}")
    return batch, gts.astype(np.float64)


def _index_stream(n, rng):
    while True:
        yield from rng.permutation(n)


def train(dataset, cfg: TrainConfig = TrainConfig(), width_scale: float = 0.25,
          params: HistNetParams | None = None, callback=None) -> TrainResult:
    """Train from ``dataset``: a list of (features, ground-truth depth) pairs
    or the ``(batch, gts)`` tuple returned by :func:`prepare`.

    Batches are read from a stream of seeded permutations, so a dataset
    smaller than the batch simply repeats. ``callback(step, loss)`` runs
    after every step.
    """
    if isinstance(dataset, tuple) and isinstance(dataset[0], dict):
        batch, gts = dataset
    else:
        batch, gts = prepare(dataset)
    n = gts.shape[0]
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(width_scale, seed=cfg.seed)
    else:
        params = params.copy()
    opt = ProximalAdagrad(cfg.learning_rate, cfg.l1_reg, cfg.accumulator_init)
    stream = _index_stream(n, rng)
    losses = []
    for step in range(cfg.total_steps(n)):
        idx = np.sort(np.fromiter((next(stream) for _ in range(cfg.batch_size)), np.int64))
        value, grads = backward(params, take(batch, idx), gts[idx])
        if not math.isfinite(value) or not all(np.isfinite(g).all() for g in grads.values()):
            raise FloatingPointError(
                f"non-finite loss or gradient at step {params.step + 1} (loss={value})")
        opt.step(params.arrays, grads)
        params.step += 1
        losses.append(value)
        if callback is not None:
            callback(params.step, value)
    return TrainResult(params, losses)


def _crop_depth(d: DepthMap, sl):
    return DepthMap(d.values[sl], d.valid_mask[sl])


def _dihedral_depth(d: DepthMap, k):
    from ..simulator import dihedral

    return DepthMap(dihedral(d.values, k), dihedral(d.valid_mask, k))


def feature_patches(features: FeatureSet, depth_gt: DepthMap, size: int = 64,
                    stride: int | None = None, augment: bool = False) -> list:
    """Cut aligned ``(FeatureSet, DepthMap)`` training pairs from full-image
    features. ``size`` and ``stride`` must be multiples of 16 so every
    scale crops on its own grid. With ``augment`` each patch also yields its
    seven other rotations/flips.
    """
    from ..core import IntensityMap
    from ..simulator import dihedral

    stride = stride or size
    if size % 16 or stride % 16:
        raise ValueError("patch size and stride must be multiples of 16")
    h, w = features.target_shape
    out = []
    for i in range(0, h - size + 1, stride):
        for j in range(0, w - size + 1, stride):
            def at(d, k):
                return _crop_depth(d, (slice(i // k, (i + size) // k), slice(j // k, (j + size) // k)))

            ks = (1,) + tuple(features.first_depth.shape[0] // d.shape[0] for d in features.scales)
            maps = [at(features.first_depth, 1), at(features.second_depth, 1)]
            maps += [at(d, k) for d, k in zip(features.scales, ks[1:])]
            inten = features.intensity.values[i : i + size, j : j + size]
            gt = at(depth_gt, 1)
            for r in range(8 if augment else 1):
                m = [_dihedral_depth(d, r) for d in maps]
                fs = FeatureSet(m[0], m[1], m[2], m[3], m[4], m[5],
                                IntensityMap(dihedral(inten, r)), features.crop_range)
                out.append((fs, _dihedral_depth(gt, r)))
    return out
