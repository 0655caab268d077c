"""Command line entry point.

Subcommands: simulate, features, reconstruct, train, infer, eval, sweep.
Each writes into ``--out`` and leaves a ``manifest.json`` holding the
effective configuration (JSON config file merged under the flags).

CSV schemas
-----------
eval.csv     scene,method,rmse,ade,sbr,ppp,runtime_ms
loss.csv     step,loss
sweep.csv    ppp,sbr,rmse
heatmap.csv  ppp,<one column per sbr>

Exit status is 0 on success, 2 on bad arguments and 1 on runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import GuidedFilterParams
from .core import (DepthMap, FeatureSet, HistogramCube, IntensityMap, NoiseSpec, read_image,
                   read_tensor, write_depth_preview, write_image, write_tensor)
from .features import PipelineConfig, build_features
from .simulator import PRESETS, Measurement, simulate

FEATURE_FILES = ("first_depth", "second_depth", "d1", "d2", "d3", "d4")


class UsageError(Exception):
    """Argument combination rejected after parsing (exit 2)."""


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".9g")
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _manifest(out: Path, args, **extra):
    # the output directory is left out so reruns elsewhere stay byte-identical
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    doc = {"command": args.command, "version": __version__, "config": cfg}
    doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _noise(args) -> NoiseSpec:
    ppp, sbr = PRESETS[args.preset] if args.preset else (None, None)
    ppp = args.ppp if args.ppp is not None else ppp
    sbr = args.sbr if args.sbr is not None else sbr
    if ppp is None or sbr is None:
        raise UsageError("give --preset or both --ppp and --sbr")
    return NoiseSpec(ppp, sbr, args.sigma, args.seed)


def _pipeline_cfg(args) -> PipelineConfig:
    return PipelineConfig(upsample_factor=args.factor, level=args.level,
                          second_depth_enabled=args.second_depth, peak_method=args.peak_method,
                          crop_enabled=args.crop, median_window=args.median_window)


def _load_features(args) -> FeatureSet:
    """Features from ``--features DIR`` or computed from ``--histogram`` and
    ``--intensity``."""
    if args.features:
        d = Path(args.features)
        man = json.loads((d / "manifest.json").read_text())
        maps = [read_image(d / f"{n}.pfm") for n in FEATURE_FILES]
        maps = [DepthMap(np.clip(m.values, 0, 1), m.valid_mask) for m in maps]
        inten = IntensityMap(np.clip(read_image(d / "intensity.pfm").values, 0, 1))
        return FeatureSet(*maps, inten, tuple(man["crop_range"]), tuple(man["target_shape"]))
    if not (args.histogram and args.intensity):
        raise UsageError("give --features DIR or both --histogram and --intensity")
    cube = read_tensor(args.histogram, np.uint32).data
    inten = read_image(args.intensity)
    if isinstance(inten, DepthMap):
        inten = IntensityMap(inten.values)
    meas = Measurement(HistogramCube(cube), inten, args.factor, float("nan"))
    return build_features(meas, _pipeline_cfg(args))


def _load_params(path):
    from .histnet import load

    return load(path)


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args):
    from .pipeline import scene_pair_from_files
    from .scenes import random_scene

    out = _outdir(args)
    if args.depth or args.scene_intensity:
        if not (args.depth and args.scene_intensity):
            raise UsageError("--depth and --scene-intensity go together")
        scene = scene_pair_from_files(args.depth, args.scene_intensity)
    else:
        seed = args.seed if args.scene_seed is None else args.scene_seed
        scene = random_scene(tuple(args.shape), seed=seed)
    spec = _noise(args)
    meas = simulate(scene, args.bins, spec, args.factor, mode=args.mode)
    write_tensor(out / "histogram.spdt", meas.histogram.counts)
    write_image(out / "intensity.pgm", meas.intensity)
    write_image(out / "depth_gt.pfm", scene.depth_gt)
    _manifest(out, args, noise={"ppp": spec.ppp, "sbr": spec.sbr, "sigma_bins": spec.sigma_bins,
                                "seed": spec.seed},
              calibration={"a": meas.signal_scale, "b": meas.true_background})
    return 0


def cmd_features(args):
    out = _outdir(args)
    f = _load_features(args)
    for name, m in zip(FEATURE_FILES, (f.first_depth, f.second_depth, *f.scales)):
        write_image(out / f"{name}.pfm", m)
    write_image(out / "intensity.pfm", DepthMap(f.intensity.values))
    _manifest(out, args, crop_range=list(f.crop_range), target_shape=list(f.target_shape))
    return 0


def _write_depth(out, depth, args, **extra):
    write_image(out / "depth.pfm", depth)
    write_depth_preview(out / "depth_preview.pgm", depth)
    _manifest(out, args, output_shape=list(depth.shape), **extra)


def cmd_reconstruct(args):
    from .pipeline import reconstruct

    out = _outdir(args)
    if args.method == "histnet" and not args.checkpoint:
        raise UsageError("--method histnet needs --checkpoint")
    f = _load_features(args)
    params = _load_params(args.checkpoint) if args.method == "histnet" else None
    depth = reconstruct(args.method, f, params, GuidedFilterParams(args.radius, args.eps))
    _write_depth(out, depth, args)
    return 0


def cmd_infer(args):
    from .histnet import infer

    out = _outdir(args)
    depth = infer(_load_params(args.checkpoint), _load_features(args))
    _write_depth(out, depth, args)
    return 0


def cmd_train(args):
    from .histnet import TrainConfig, save, train
    from .pipeline import scene_specs, training_set

    out = _outdir(args)
    specs = scene_specs(args.scenes, args.shape, args.scene_seed, _noise(args), args.bins)
    data = training_set(specs, args.patch, args.stride, augment=not args.no_augment)
    cfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, epochs=args.epochs,
                      l1_reg=args.l1_reg, accumulator_init=args.accumulator_init, seed=args.seed,
                      max_steps=args.max_steps)
    init = _load_params(args.init) if args.init else None
    res = train(data, cfg, args.width_scale, params=init)
    first = init.step if init else 0
    _write_csv(out / "loss.csv", ["step", "loss"],
               [(first + k + 1, v) for k, v in enumerate(res.losses)])
    save(res.params, out / "checkpoint")
    _manifest(out, args, steps=res.params.step, patches=len(data),
              final_loss=res.losses[-1] if res.losses else None)
    return 0


def cmd_eval(args):
    from .metrics import ade, rmse
    from .pipeline import evaluate, scene_specs

    out = _outdir(args)
    header = ["scene", "method", "rmse", "ade", "sbr", "ppp", "runtime_ms"]
    if args.pred:
        if not args.gt:
            raise UsageError("--pred needs --gt")
        pred, gt = read_image(args.pred), read_image(args.gt)
        sbr = ppp = None
        if args.histogram:
            from .features import estimate_background, find_peak
            from .metrics import measure_noise

            cube = read_tensor(args.histogram, np.uint32).data
            b = estimate_background(cube)
            sbr, ppp = measure_noise(cube, b, find_peak(cube, b))
        rows = [{"scene": args.scene_name, "method": args.method_name, "rmse": rmse(pred, gt),
                 "ade": ade(pred, gt)[1], "sbr": sbr, "ppp": ppp, "runtime_ms": None}]
    else:
        methods = args.methods.split(",")
        bad = [m for m in methods if m not in ("nn", "guided", "histnet")]
        if bad:
            raise UsageError(f"unknown method(s) {bad}")
        if "histnet" in methods and not args.checkpoint:
            raise UsageError("method histnet needs --checkpoint")
        params = _load_params(args.checkpoint) if args.checkpoint else None
        specs = scene_specs(args.scenes, args.shape, args.scene_seed, _noise(args), args.bins,
                            args.factor)
        rows = evaluate(specs, methods, params, GuidedFilterParams(args.radius, args.eps),
                        args.record_runtime, args.jobs)
    _write_csv(out / "eval.csv", header, [[r[k] for k in header] for r in rows])
    _manifest(out, args, rows=len(rows))
    return 0


def cmd_sweep(args):
    from .pipeline import sweep

    out = _outdir(args)
    ppps = [float(x) for x in args.ppp_grid.split(",")]
    sbrs = [float(x) for x in args.sbr_grid.split(",")]
    grid = sweep(_load_params(args.checkpoint), ppps, sbrs, args.shape, args.scene_seed,
                 args.scenes, args.bins, args.sigma, args.seed, args.jobs)
    _write_csv(out / "sweep.csv", ["ppp", "sbr", "rmse"],
               [(p, s, float(grid[i, j])) for i, p in enumerate(ppps) for j, s in enumerate(sbrs)])
    _write_csv(out / "heatmap.csv", ["ppp"] + [_fmt(s) for s in sbrs],
               [[p] + [float(v) for v in grid[i]] for i, p in enumerate(ppps)])
    _manifest(out, args)
    return 0


# -- parser ---------------------------------------------------------------------

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _add_common(p):
    p.add_argument("--config", help="flat JSON file of flag values; flags override it")
    p.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes for per-scene work")


def _add_noise(p):
    p.add_argument("--preset", choices=sorted(PRESETS), help="named noise scenario")
    p.add_argument("--ppp", type=float, help="signal photons per pixel (overrides the preset)")
    p.add_argument("--sbr", type=float, help="signal-to-background ratio (overrides the preset)")
    p.add_argument("--sigma", type=float, default=0.5714, help="IRF width in bins")
    p.add_argument("--bins", type=_positive_int, default=16, help="time bins")


def _add_scene(p, default_shape=(64, 64)):
    p.add_argument("--shape", type=_positive_int, nargs=2, default=list(default_shape),
                   metavar=("H", "W"), help="procedural scene size (HR pixels)")
    p.add_argument("--scene-seed", type=int, default=None, help="scene generator seed")


def _add_inputs(p):
    p.add_argument("--features", help="feature directory written by the features subcommand")
    p.add_argument("--histogram", help="SPDT u32 histogram cube")
    p.add_argument("--intensity", help="HR intensity image (PGM)")
    p.add_argument("--factor", type=int, choices=(4, 8), default=4, help="spatial up-sampling factor")
    p.add_argument("--level", type=float, default=12.0, help="peak detection level")
    p.add_argument("--peak-method", choices=("argmax", "matched_filter"), default=None)
    p.add_argument("--second-depth", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--crop", action=argparse.BooleanOptionalAction, default=None,
                   help="temporal crop (default on for factor 8)")
    p.add_argument("--median-window", type=_positive_int, default=3)


def _add_gf(p):
    p.add_argument("--radius", type=_positive_int, default=8, help="guided filter radius")
    p.add_argument("--eps", type=float, default=1e-4, help="guided filter regularization")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spadsr", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a SPAD measurement")
    _add_common(p)
    _add_noise(p)
    _add_scene(p)
    p.add_argument("--factor", type=int, choices=(4, 8), default=4)
    p.add_argument("--mode", choices=("block", "bicubic"), default="block")
    p.add_argument("--depth", help="ground-truth depth PFM (instead of a procedural scene)")
    p.add_argument("--scene-intensity", help="ground-truth intensity PGM")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", help="extract the network feature set")
    _add_common(p)
    _add_inputs(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("reconstruct", help="reconstruct HR depth")
    _add_common(p)
    _add_inputs(p)
    _add_gf(p)
    p.add_argument("--method", choices=("nn", "guided", "histnet"), required=True)
    p.add_argument("--checkpoint", help="HistNet checkpoint directory")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="train HistNet on simulated patches")
    _add_common(p)
    _add_noise(p)
    _add_scene(p, (256, 128))
    p.add_argument("--scenes", type=_positive_int, default=8, help="number of training scenes")
    p.add_argument("--patch", type=_positive_int, default=32, help="patch size (multiple of 16)")
    p.add_argument("--stride", type=_positive_int, default=None)
    p.add_argument("--no-augment", action="store_true", help="skip rotations/flips")
    p.add_argument("--width-scale", type=float, default=0.25)
    p.add_argument("--batch-size", type=_positive_int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=_positive_int, default=2000)
    p.add_argument("--max-steps", type=_positive_int, default=None)
    p.add_argument("--l1-reg", type=float, default=0.0)
    p.add_argument("--accumulator-init", type=float, default=0.1)
    p.add_argument("--init", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run a HistNet checkpoint")
    _add_common(p)
    _add_inputs(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score reconstructions (eval.csv)")
    _add_common(p)
    _add_noise(p)
    _add_scene(p)
    _add_gf(p)
    p.add_argument("--pred", help="predicted depth PFM")
    p.add_argument("--gt", help="ground-truth depth PFM")
    p.add_argument("--scene-name", default="scene")
    p.add_argument("--method-name", default="pred")
    p.add_argument("--histogram", help="cube for estimated sbr/ppp columns (with --pred)")
    p.add_argument("--scenes", type=_positive_int, default=4, help="procedural scenes to evaluate")
    p.add_argument("--methods", default="nn,guided", help="comma list of nn, guided, histnet")
    p.add_argument("--checkpoint")
    p.add_argument("--factor", type=int, choices=(4, 8), default=4)
    p.add_argument("--record-runtime", action="store_true",
                   help="fill runtime_ms (makes the output machine dependent)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="RMSE heat-map over a ppp x SBR grid")
    _add_common(p)
    _add_scene(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ppp-grid", default="1,2,4,8")
    p.add_argument("--sbr-grid", default="0.005,0.01,0.02,0.04")
    p.add_argument("--scenes", type=_positive_int, default=4)
    p.add_argument("--bins", type=_positive_int, default=16)
    p.add_argument("--sigma", type=float, default=0.5714)
    p.set_defaults(func=cmd_sweep)
    return parser


def _config_path(argv):
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser, argv):
    path = _config_path(argv)
    if path is None:
        return
    cmd = next((a for a in argv if not a.startswith("-")), None)
    sub = parser._subparsers._group_actions[0].choices.get(cmd) if cmd else None
    if sub is None:
        return
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        sub.error(f"cannot read config {path}: {exc}")
    if not isinstance(cfg, dict):
        sub.error("config must be a flat JSON object")
    known = {a.dest for a in sub._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known - {"config"})
    if unknown:
        sub.error(f"unknown config key(s): {', '.join(unknown)}")
    cfg.pop("config", None)
    sub.set_defaults(**cfg)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "scene_seed", "absent") is None:
        args.scene_seed = args.seed
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spadsr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"spadsr {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
