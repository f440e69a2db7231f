"""Command-line entry point.

Every subcommand writes its outputs under ``--out`` together with a
``manifest.json`` describing the run (command, config, seed, input digests,
outputs, wall time). Exit codes: 0 success, 1 operational error, 2 usage
error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageFilter

from .batching import BatchingError
from .checkpoint import CheckpointError
from .config import Config, ConfigError, dump_config, load_config, toy_config
from .dataset import (IMAGE_SUFFIXES, DatasetError, ImageGroup, Sample,
                      SyntheticSpec, compute_stats, generate_synthetic, load_dataset,
                      read_image, read_manifest, save_dataset, stats_from_records, to_uint8)
from .metrics import MissingPredictionError, evaluate_dataset
from .model import ShapeError
from .training import TrainingError, infer, load_model, train

log = logging.getLogger("hicome")

THRESHOLD_FLOOR = 1e-6
OPERATIONAL_ERRORS = (DatasetError, TrainingError, ConfigError, CheckpointError, BatchingError,
                      ShapeError, OSError, ValueError)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict | None
    seed: int | None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_time_s: float = 0.0

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


# ----------------------------------------------------------------- helpers

def digest(path) -> str:
    """sha256 of a file, or of a directory's sorted (relative path, content) pairs."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_file():
        h.update(path.read_bytes())
    else:
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(p.relative_to(path).as_posix().encode() + b"\0")
            h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


def _is_within(inner: Path, outer: Path) -> bool:
    try:
        inner.resolve().relative_to(outer.resolve())
        return True
    except ValueError:
        return False


def prepare_out(out: Path, force: bool, inputs=()) -> None:
    for p in inputs:
        if p is not None and (_is_within(Path(p), out) or _is_within(out, Path(p))):
            raise UsageError(f"--out {out} overlaps input {p}")
    if out.exists() and (out.is_file() or any(out.iterdir())):
        if not force:
            raise DatasetError(f"output {out} exists and is not empty (use --force)")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True, exist_ok=True)


def save_map(m: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(m), "L").save(path)


def load_map(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def _image_files(d: Path):
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def load_image_groups(root: Path) -> list[ImageGroup]:
    """Image-only groups (masks are placeholders).

    Accepts a dataset root (``images/<group>/``), a directory of group
    directories, or a single directory of images treated as one group.
    """
    root = Path(root)
    if (root / "images").is_dir():
        root = root / "images"
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    layout = [(d.name, _image_files(d)) for d in subdirs] if subdirs else [(root.name, _image_files(root))]
    groups = []
    for name, files in layout:
        if not files:
            continue
        samples = []
        for f in files:
            img = read_image(f)
            samples.append(Sample(f.stem, img, np.zeros(img.shape[:2], np.uint8)))
        groups.append(ImageGroup(name, samples))
    if not groups:
        raise DatasetError(f"no images found under {root}")
    return groups


def adaptive_threshold(m: np.ndarray) -> float:
    return max(THRESHOLD_FLOOR, min(1.0, 2.0 * float(np.mean(m))))


def composite(image: np.ndarray, mask: np.ndarray, radius: float) -> np.ndarray:
    """Sharp foreground over a Gaussian-blurred background, uint8 RGB."""
    sharp = to_uint8(image)
    blurred = np.asarray(Image.fromarray(sharp, "RGB").filter(ImageFilter.GaussianBlur(radius)))
    return np.where(mask[..., None], sharp, blurred)


def build_config(args) -> Config:
    cfg = load_config(args.config) if args.config else toy_config()
    seed = args.seed
    cfg = cfg.override("train", epochs=args.epochs, lr_initial=args.lr, seed=seed,
                       lr_drop_epoch=args.lr_drop_epoch,
                       iaccl_enabled=False if args.no_iaccl else None)
    cfg = cfg.override("batching", batch_size=args.batch_size, padding_mode=args.padding_mode,
                       n_negatives=args.n_negatives, augmentations=args.augmentations,
                       resolution=args.resolution, seed=seed)
    if args.resolution is not None:
        cfg = cfg.override("model", resolution=args.resolution)
    return cfg


# ------------------------------------------------------------- subcommands

def cmd_synth(args, man: RunManifest) -> None:
    seed = 0 if args.seed is None else args.seed
    spec = SyntheticSpec(args.groups, args.size, args.image, args.distractors, seed)
    man.config = asdict(spec)
    man.seed = seed
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out)
    man.outputs = ["images", "gt"]
    log.info("wrote %d images in %d groups to %s", ds.n_images, len(ds.groups), args.out)


def cmd_train(args, man: RunManifest) -> None:
    cfg = build_config(args)
    man.config = cfg.to_dict()
    man.seed = cfg.train.seed
    man.inputs["dataset"] = digest(args.dataset_root)
    if args.config:
        man.inputs["config"] = digest(args.config)
    if args.resume:
        man.inputs["resume"] = digest(args.resume)
    ds = load_dataset(args.dataset_root)
    dump_config(cfg, args.out / "config.yaml")
    train(ds, cfg, out_dir=args.out, resume=args.resume)
    man.outputs = sorted(p.name for p in args.out.iterdir() if p.name != "manifest.json")


def cmd_eval(args, man: RunManifest, report_path: Path) -> None:
    man.inputs["dataset"] = digest(args.dataset_root)
    man.inputs["predictions"] = digest(args.pred_dir)
    ds = load_dataset(args.dataset_root)
    preds, missing = {}, []
    for g in ds.groups:
        for s in g.samples:
            p = args.pred_dir / g.name / f"{s.name}.png"
            if p.is_file():
                preds[(g.name, s.name)] = load_map(p)
            else:
                missing.append(f"{g.name}/{s.name}")
    if missing:
        raise MissingPredictionError(missing)
    report = evaluate_dataset(preds, ds, parallel=args.workers > 1, curves=args.curves,
                              workers=args.workers)
    report_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    man.outputs = [report_path.name]
    log.info("aggregate %s", json.dumps(report.aggregate, sort_keys=True))


def cmd_infer(args, man: RunManifest) -> None:
    man.inputs["checkpoint"] = digest(args.checkpoint)
    man.inputs["input"] = digest(args.input)
    model = load_model(args.checkpoint)
    man.config = {"model": model.cfg.to_dict()}
    for g in load_image_groups(args.input):
        for s, m in zip(g.samples, infer(model, g)):
            rel = Path(g.name) / f"{s.name}.png"
            save_map(m, args.out / rel)
            man.outputs.append(rel.as_posix())


def cmd_stats(args, man: RunManifest) -> None:
    if args.manifest is not None:
        man.inputs["manifest"] = digest(args.manifest)
        stats = stats_from_records(read_manifest(args.manifest))
    else:
        man.inputs["dataset"] = digest(args.dataset_root)
        stats = compute_stats(load_dataset(args.dataset_root))
    (args.out / "stats.json").write_text(json.dumps(stats.to_dict(), indent=2) + "\n")
    man.outputs = ["stats.json"]


def cmd_cosegment(args, man: RunManifest) -> None:
    man.inputs["checkpoint"] = digest(args.checkpoint)
    man.inputs["images"] = digest(args.image_dir)
    files = _image_files(args.image_dir)
    if not files:
        raise DatasetError(f"no images in {args.image_dir}")
    model = load_model(args.checkpoint)
    man.config = {"model": model.cfg.to_dict(), "threshold": args.threshold,
                  "blur_radius": args.blur_radius}
    samples = []
    for f in files:
        img = read_image(f)
        samples.append(Sample(f.stem, img, np.zeros(img.shape[:2], np.uint8)))
    maps = infer(model, ImageGroup(args.image_dir.name, samples))
    for s, m in zip(samples, maps):
        t = adaptive_threshold(m) if args.threshold == "adaptive" else float(args.threshold)
        mask = m >= t
        for sub, arr, mode in (("masks", mask.astype(np.uint8) * 255, "L"),
                               ("composites", composite(s.image, mask, args.blur_radius), "RGB"),
                               ("maps", to_uint8(m), "L")):
            (args.out / sub).mkdir(exist_ok=True)
            Image.fromarray(arr, mode).save(args.out / sub / f"{s.name}.png")
            man.outputs.append(f"{sub}/{s.name}.png")


# ------------------------------------------------------------------ parser

def _threshold_arg(value: str):
    if value == "adaptive":
        return value
    try:
        t = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'adaptive' or a number in [0, 1]")
    if not 0.0 <= t <= 1.0:
        raise argparse.ArgumentTypeError("threshold must be in [0, 1]")
    return t


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")

    parser = argparse.ArgumentParser(prog="hicome", description="Co-salient object detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic grouped dataset")
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--size", type=int, default=8, help="images per group")
    p.add_argument("--image", type=int, default=64, help="image side in pixels")
    p.add_argument("--distractors", type=int, default=SyntheticSpec.n_distractors)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--dataset-root", type=Path, required=True)
    p.add_argument("--resume", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-drop-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--padding-mode", choices=("fixed", "adaptive", "none"))
    p.add_argument("--n-negatives", type=int)
    p.add_argument("--augmentations", nargs="*", choices=("hflip", "color", "rotate"))
    p.add_argument("--resolution", type=int)
    p.add_argument("--no-iaccl", action="store_true", help="disable the contrastive consensus loss")

    p = sub.add_parser("eval", parents=[common], help="score prediction PNGs against a dataset")
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--dataset-root", type=Path, required=True)
    p.add_argument("--curves", action="store_true", help="include mean PR/F/E curves")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("infer", parents=[common], help="write saliency maps for image groups")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True,
                   help="dataset root, directory of group directories, or one image directory")

    p = sub.add_parser("stats", parents=[common], help="dataset statistics")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset-root", type=Path)
    src.add_argument("--manifest", type=Path, help="CSV with group,stem,height,width rows")

    p = sub.add_parser("cosegment", parents=[common], help="extract the common objects of one group")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image-dir", type=Path, required=True)
    p.add_argument("--threshold", type=_threshold_arg, default="adaptive")
    p.add_argument("--blur-radius", type=float, default=4.0)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "stats": cmd_stats,
    "cosegment": cmd_cosegment,
}

INPUT_ARGS = ("dataset_root", "pred_dir", "checkpoint", "input", "image_dir", "manifest",
              "config", "resume")


def run(args, argv) -> None:
    start = time.perf_counter()
    man = RunManifest(args.command, list(argv), None, args.seed)
    inputs = [getattr(args, a, None) for a in INPUT_ARGS]
    if args.command == "eval" and args.out.suffix == ".json":
        # --out names the report file; the manifest sits next to it
        report_path = args.out
        manifest_path = args.out.with_name(args.out.stem + ".manifest.json")
        if report_path.exists() and not args.force:
            raise DatasetError(f"output {report_path} exists (use --force)")
        report_path.parent.mkdir(parents=True, exist_ok=True)
        cmd_eval(args, man, report_path)
    else:
        prepare_out(args.out, args.force, inputs)
        manifest_path = args.out / "manifest.json"
        if args.command == "eval":
            cmd_eval(args, man, args.out / "report.json")
        else:
            COMMANDS[args.command](args, man)
    man.wall_time_s = round(time.perf_counter() - start, 3)
    man.write(manifest_path)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"hicome: error: {exc}", file=sys.stderr)
        return 2
    except MissingPredictionError as exc:
        print("missing predictions:", file=sys.stderr)
        for stem in exc.missing:
            print(f"  {stem}", file=sys.stderr)
        return 1
    except OPERATIONAL_ERRORS as exc:
        print(f"hicome: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
