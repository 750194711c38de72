"""Command-line entry point wiring the pipeline end to end.

Subcommands: gen-phantom, extract, train, evaluate, predict, gradcam.
Exit codes: 0 success, 1 usage error, 2 runtime error.  Flags mirror config
field names 1:1; ``--config FILE`` merges a flat JSON config (flags win);
``CINE_AVD_SEED`` overrides the default seed when no --seed flag is given.
Every run prints its resolved config and seed.
"""

import argparse
import json
import os
import sys

import numpy as np

from .densenet import ArchConfig, build_model, load_checkpoint
from .errors import CineAvdError
from .evaluation import evaluate, save_report
from .extraction import ExtractionConfig, extract_heart
from .gradcam import gradcam, overlay_export, save_heatmap_ctv
from .manifest import LabelTask, Manifest, ManifestEntry, read_manifest, write_manifest
from .phantom import PhantomConfig, generate_dataset
from .pipeline import prepare_volume
from .training import SplitSpec, TrainConfig, stratified_split, train
from .volume import read_ctv, write_ctv

SEED_ENV = "CINE_AVD_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env else 0


def _merge_config(args: argparse.Namespace, config_keys, known_keys=None) -> dict:
    """defaults <- --config file <- explicit flags (flags win)."""
    merged = {}
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise CineAvdError(f"cli: config not found: {args.config}")
        with open(args.config) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(known_keys or config_keys)
        if unknown:
            raise CineAvdError(f"cli: unknown config keys {sorted(unknown)}")
        merged.update({k: v for k, v in loaded.items() if k in config_keys})
    for key in config_keys:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _print_resolved(command: str, seed, **sections) -> None:
    doc = {"command": command, "seed": seed}
    for name, obj in sections.items():
        if obj is None:
            continue
        doc[name] = {k: (list(v) if isinstance(v, tuple) else v)
                     for k, v in vars(obj).items()}
    print(json.dumps(doc, sort_keys=True))


ARCH_KEYS = ("growth_rate", "init_channels", "num_blocks", "layers_per_block",
             "bottleneck_factor", "compression", "num_classes", "input_shape")
TRAIN_KEYS = ("learning_rate", "epochs", "batch_size", "focal_gamma", "adam_beta1",
              "adam_beta2", "adam_eps", "augment_prob", "rotation_range_deg",
              "bias_field_order", "target_depth", "seed", "task",
              "skip_extraction", "workers", "contrast_gamma_range", "bias_coeff_range")
EXTRACT_KEYS = ("canny_sigma", "dilation_radius_px", "early_frame_fraction",
                "late_frame_fraction", "canny_high_percentile", "canny_low_ratio",
                "target_hw")


def _add_arch_flags(p):
    p.add_argument("--growth_rate", type=int)
    p.add_argument("--init_channels", type=int)
    p.add_argument("--num_blocks", type=int)
    p.add_argument("--layers_per_block", type=int)
    p.add_argument("--bottleneck_factor", type=int)
    p.add_argument("--compression", type=float)
    p.add_argument("--num_classes", type=int)
    p.add_argument("--input_shape", type=int, nargs=3, metavar=("H", "W", "D"))


def _add_train_flags(p):
    p.add_argument("--learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch_size", type=int)
    p.add_argument("--focal_gamma", type=float)
    p.add_argument("--adam_beta1", type=float)
    p.add_argument("--adam_beta2", type=float)
    p.add_argument("--adam_eps", type=float)
    p.add_argument("--augment_prob", type=float)
    p.add_argument("--rotation_range_deg", type=float)
    p.add_argument("--contrast_gamma_range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--bias_field_order", type=int)
    p.add_argument("--bias_coeff_range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--target_depth", type=int)
    p.add_argument("--task", choices=("two_class", "four_class"))
    p.add_argument("--skip_extraction", action="store_true", default=None)
    p.add_argument("--workers", type=int)


def _add_extract_flags(p):
    p.add_argument("--canny_sigma", type=float)
    p.add_argument("--dilation_radius_px", type=int)
    p.add_argument("--early_frame_fraction", type=float)
    p.add_argument("--late_frame_fraction", type=float)
    p.add_argument("--canny_high_percentile", type=float)
    p.add_argument("--canny_low_ratio", type=float)
    p.add_argument("--target_hw", type=int, nargs=2, metavar=("H", "W"))


def build_parser() -> _Parser:
    parser = _Parser(prog="cineavd",
                     description="Aortic valve pathology pipeline: phantom generation, "
                                 "heart extraction, 3D DenseNet training, evaluation, "
                                 "prediction, attention maps.")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-phantom", help="generate a labeled phantom dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--class_weights", type=float, nargs=4,
                   default=(0.67, 0.14, 0.10, 0.09))
    p.add_argument("--grid", type=int, nargs=3, metavar=("H", "W", "D"))
    p.add_argument("--noise_sigma", type=float)

    p = sub.add_parser("extract", help="run heart extraction on a volume or manifest")
    p.add_argument("--volume", help=".ctv input (single-volume mode)")
    p.add_argument("--manifest", help="manifest CSV (batch mode)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--debug_dir", help="dump difference/edges/dilated/bbox stages")
    p.add_argument("--config")
    _add_extract_flags(p)

    p = sub.add_parser("train", help="train the classifier on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--split", type=int, nargs=3, metavar=("TRAIN", "VAL", "TEST"),
                   help="stratified-split sizes for manifests with unassigned splits")
    _add_train_flags(p)
    _add_arch_flags(p)

    p = sub.add_parser("evaluate", help="score a checkpoint on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--bootstrap_n", type=int, default=1000)
    p.add_argument("--skip_extraction", action="store_true", default=None)

    p = sub.add_parser("predict", help="classify one volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--skip_extraction", action="store_true", default=None)

    p = sub.add_parser("gradcam", help="attention overlay for one volume")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target_class", type=int, default=None,
                   help="defaults to the predicted class")
    p.add_argument("--layer", help="capture layer name (default: last transition conv)")
    p.add_argument("--seed", type=int)
    p.add_argument("--skip_extraction", action="store_true", default=None)
    return parser


def _cmd_gen_phantom(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    overrides = {}
    if args.grid:
        overrides["grid"] = tuple(args.grid)
    if args.noise_sigma is not None:
        overrides["noise_sigma"] = args.noise_sigma
    cfg = PhantomConfig(seed=seed, **overrides)
    _print_resolved("gen-phantom", seed, phantom=cfg)
    manifest = generate_dataset(args.n, tuple(args.class_weights), cfg, seed, args.out)
    print(f"wrote {len(manifest)} volumes + manifest to {args.out}")
    return 0


def _extraction_from_args(args) -> ExtractionConfig:
    merged = _merge_config(args, EXTRACT_KEYS)
    if "target_hw" in merged:
        merged["target_hw"] = tuple(merged["target_hw"])
    return ExtractionConfig(**merged)


def _cmd_extract(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    cfg = _extraction_from_args(args)
    _print_resolved("extract", seed, extraction=cfg)
    os.makedirs(args.out, exist_ok=True)
    if bool(args.volume) == bool(args.manifest):
        raise UsageError("extract needs exactly one of --volume / --manifest")
    if args.volume:
        vol = read_ctv(args.volume)
        out_path = os.path.join(args.out, os.path.basename(args.volume))
        write_ctv(extract_heart(vol, cfg, debug_dir=args.debug_dir), out_path)
        print(f"wrote {out_path}")
        return 0
    manifest = read_manifest(args.manifest)
    entries = []
    for e in manifest.entries:
        vol = read_ctv(e.path)
        out_path = os.path.join(args.out, f"{e.subject_id}.ctv")
        write_ctv(extract_heart(vol, cfg, debug_dir=args.debug_dir), out_path)
        entries.append(ManifestEntry(e.subject_id, out_path, e.label, e.split))
    out_manifest = os.path.join(args.out, "manifest.csv")
    write_manifest(Manifest(entries), out_manifest)
    print(f"wrote {len(entries)} extracted volumes + {out_manifest}")
    return 0


def _cmd_train(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    all_keys = TRAIN_KEYS + ARCH_KEYS + ("focal_alpha",)
    train_kw = _merge_config(args, TRAIN_KEYS + ("focal_alpha",), all_keys)
    train_kw["seed"] = seed
    for key in ("contrast_gamma_range", "bias_coeff_range"):
        if key in train_kw:
            train_kw[key] = tuple(train_kw[key])
    arch_kw = _merge_config(args, ARCH_KEYS, all_keys)
    if "input_shape" in arch_kw:
        arch_kw["input_shape"] = tuple(arch_kw["input_shape"])
    cfg = TrainConfig(**train_kw)
    if "num_classes" not in arch_kw:
        arch_kw["num_classes"] = LabelTask.from_name(cfg.task).num_classes
    arch = ArchConfig(**arch_kw)
    _print_resolved("train", seed, train=cfg, arch=arch)

    manifest = read_manifest(args.manifest)
    if all(e.split == "unassigned" for e in manifest.entries):
        spec = (SplitSpec(*args.split, seed=seed) if args.split
                else SplitSpec.proportional(len(manifest), seed=seed))
        manifest = stratified_split(manifest, spec)
        os.makedirs(args.out, exist_ok=True)
        write_manifest(manifest, os.path.join(args.out, "split_manifest.csv"))
        print(f"assigned stratified split {spec.sizes}")
    result = train(manifest, arch, cfg, args.out, log=print)
    print(f"best epoch {result.best_epoch} val_accuracy {result.best_val_accuracy:.4f}")
    print(f"checkpoints: {result.best_checkpoint} (best), {result.last_checkpoint} (last)")
    return 0


def _cmd_evaluate(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    model, _, meta = load_checkpoint(args.checkpoint)
    task = LabelTask.from_name(meta.get("task", "two_class"))
    cfg = TrainConfig(task=task.mode, target_depth=model.cfg.input_shape[2],
                      skip_extraction=bool(args.skip_extraction))
    _print_resolved("evaluate", seed, arch=model.cfg)
    manifest = read_manifest(args.manifest)
    report = evaluate(model, manifest, task, cfg, args.bootstrap_n, seed)
    save_report(report, args.out)
    print(json.dumps(report.to_json_dict(), indent=2))
    return 0


def _standardized_input(args, model):
    vol = read_ctv(args.volume)
    ext = None
    if not args.skip_extraction:
        ext = ExtractionConfig(target_hw=model.cfg.input_shape[:2])
    return prepare_volume(vol, model.cfg.input_shape[2], ext)


def _cmd_predict(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    model, _, meta = load_checkpoint(args.checkpoint)
    task = LabelTask.from_name(meta.get("task", "two_class"))
    _print_resolved("predict", seed, arch=model.cfg)
    arr = _standardized_input(args, model)
    from .training import forward_eval

    probs = forward_eval(model, [arr], 1)[0]
    pred = int(np.argmax(probs))
    print(json.dumps({
        "volume": args.volume,
        "predicted_class": pred,
        "predicted_name": task.class_names[pred],
        "probabilities": {name: float(p) for name, p in zip(task.class_names, probs)},
    }, indent=2))
    return 0


def _cmd_gradcam(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    model, _, meta = load_checkpoint(args.checkpoint)
    _print_resolved("gradcam", seed, arch=model.cfg)
    arr = _standardized_input(args, model)
    target = args.target_class
    if target is None:
        from .training import forward_eval

        target = int(np.argmax(forward_eval(model, [arr], 1)[0]))
    heatmap = gradcam(model, arr, target, args.layer)
    from .volume import CineVolume

    frames = overlay_export(CineVolume(arr, (1.0, 1.0)), heatmap, args.out)
    save_heatmap_ctv(heatmap, os.path.join(args.out, "heatmap.ctv"))
    print(f"wrote {len(frames)} overlay frames + heatmap.ctv to {args.out} "
          f"(class {target}, layer {heatmap.source_layer}"
          f"{', EMPTY ATTENTION' if heatmap.empty_attention else ''})")
    return 0


_HANDLERS = {
    "gen-phantom": _cmd_gen_phantom,
    "extract": _cmd_extract,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "gradcam": _cmd_gradcam,
}


def parse_and_dispatch(argv) -> int:
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse --help exits 0 on its own
            return int(exc.code or 0)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except CineAvdError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(parse_and_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
