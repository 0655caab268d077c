"""Checkpoint directories: one SPDT file per tensor plus ``manifest.json``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import FormatError, read_tensor, write_tensor
from .model import HistNetParams, layer_specs

MANIFEST = "manifest.json"


def save(params: HistNetParams, directory, extra: dict | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    layers = []
    for s in params.specs:
        w, b = params.arrays[f"{s.name}.w"], params.arrays[f"{s.name}.b"]
        write_tensor(d / f"{s.name}.w.spdt", w.astype(np.float32))
        write_tensor(d / f"{s.name}.b.spdt", b.astype(np.float32))
        layers.append({"name": s.name, "kind": s.kind, "in_ch": s.in_ch, "out_ch": s.out_ch,
                       "weight_dims": list(w.shape), "bias_dims": list(b.shape)})
    manifest = {"format": "histnet-checkpoint", "version": 1,
                "width_scale": params.width_scale, "step": params.step, "layers": layers}
    if extra:
        manifest.update(extra)
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load(directory) -> HistNetParams:
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"no {MANIFEST} in {d}") from exc
    scale = float(manifest["width_scale"])
    arrays = {}
    for s in layer_specs(scale):
        for p in ("w", "b"):
            t = read_tensor(d / f"{s.name}.{p}.spdt", np.float32)
            want = (s.out_ch, s.in_ch, s.kernel, s.kernel) if p == "w" else (s.out_ch,)
            if t.data.shape != want:
                raise FormatError(f"{s.name}.{p} has dims {t.data.shape}, expected {want}")
            arrays[f"{s.name}.{p}"] = t.data
    return HistNetParams(scale, arrays, int(manifest.get("step", 0)))
