# File: cli.py
"""Command line: ``python -m lesionnet {synth,train,eval,predict}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import os
import sys
import json
import shutil
import logging
import argparse
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch
import yaml
from dotenv import load_dotenv

from lesionnet.core_types import (
    CheckpointError,
    ConfigError,
    InvalidInputError,
    LesionNetError,
    ManifestError,
    MaskFileError,
    ShapeError,
    TrainingAbortedError,
    VOCABULARY,
    presence_from_maps,
    threshold_maps,
)
from lesionnet.helpers.checkpoint import load_checkpoint
from lesionnet.helpers.dataset import LesionDataset, to_tensor_image
from lesionnet.helpers.grade_rules import grade_from_lesions
from lesionnet.helpers.manifest import assign_splits, parse_manifest, split_records, write_manifest
from lesionnet.helpers.masks_io import load_image, save_image, write_masks
from lesionnet.helpers.overlay import crop_to, pad_to_multiple, render_overlay
from lesionnet.helpers.rasterize import count_blobs
from lesionnet.helpers.run_config import load_config, load_synth_config, save_config
from lesionnet.helpers.synth import synth_sample
from lesionnet.lesions import LESION_NAMES
from lesionnet.metrics import evaluate_grading, evaluate_segmentation, oracle_report, summarize_report
from lesionnet.models.backbone import STRIDE
from lesionnet.models.lesion_net import lesion_net_forward, load_lesion_net
from lesionnet.models.multitask import fuse_and_grade, load_grading_net, predict_grade
from lesionnet.training.trainer import BEST, train_grading, train_segmentation, torch_dtype
from lesionnet.utils.logger_setup import close_logger, log_file_of, reset_log, setup_logger

try:
    load_dotenv()
except UnicodeDecodeError:
    load_dotenv(encoding="latin-1")

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
USAGE_ERRORS = (ConfigError, ManifestError, CheckpointError, InvalidInputError, MaskFileError, ShapeError)


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise ConfigError(f"{out} is not empty; pass --force to overwrite", key="out")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


# --- synth ---
def cmd_synth(args) -> int:
    overrides = {"seed": args.seed} if args.seed is not None else {}
    config = load_synth_config(args.config, **overrides)
    out = Path(args.out)
    _prepare_out(out, args.force)

    ids = [f"synth_{i:05d}" for i in range(args.n)]
    splits = assign_splits(ids, config.seed)
    entries = []
    for i, image_id in enumerate(ids):
        sample = synth_sample(config, i)
        save_image(sample.image, out / "images" / f"{image_id}.png")
        write_masks(sample.masks, out / "masks", image_id)
        entries.append({
            "image_id": image_id,
            "image": f"images/{image_id}.png",
            "masks_dir": "masks",
            "grade": sample.grade,
            "split": splits[image_id],
            "ihe_blobs": sample.ihe_blobs,
        })
    write_manifest(entries, out / "manifest.jsonl")
    with open(out / "synth.yml", "w", encoding="utf-8") as f:
        yaml.safe_dump({"synth": _synth_dict(config)}, f, sort_keys=False)

    counts = {s: sum(1 for e in entries if e["split"] == s) for s in ("train", "val", "test")}
    print(f"Wrote {args.n} samples to {out} (train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return EXIT_OK


def _synth_dict(config) -> dict:
    def plain(value):
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in value]
        return value

    return plain(vars(config))


# --- train ---
def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    cfg.check_paths()
    records = parse_manifest(cfg.manifest)
    out = Path(cfg.output_dir)
    if (out / BEST).exists() and not args.force:
        raise ConfigError(f"{out} already holds a trained model; pass --force to overwrite", key="output_dir")
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yml")

    if args.force:
        reset_log(out / "logs" / "train.log")
    setup_logger("lesionnet", out / "logs" / "train.log")
    log.info("Run log: %s", log_file_of("lesionnet") or "console only")
    try:
        if cfg.task == "segment":
            result = train_segmentation(records, cfg, out)
        else:
            lesion_net = None
            if cfg.multitask.mode != "baseline":
                lesion_net = load_lesion_net(cfg.lesion_checkpoint)
            result = train_grading(records, lesion_net, cfg, out)
    finally:
        close_logger("lesionnet")

    validations = len(result.run_log.of("validation"))
    print(f"Trained {result.batches} batches, {validations} validations, "
          f"best score {result.schedule.best_score:.4f}; checkpoints in {out}")
    return EXIT_OK


# --- eval ---
def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if not cfg.manifest or not Path(cfg.manifest).is_file():
        raise ConfigError(f"dataset manifest not found: {cfg.manifest}", key="manifest")
    records = split_records(parse_manifest(cfg.manifest), args.split)
    dataset = LesionDataset(records, None, cache_size=cfg.train.cache_size, dtype=torch_dtype(cfg.train.dtype))
    if not len(dataset):
        raise InvalidInputError(f"the {args.split} split is empty")

    if args.oracle:
        report = oracle_report(dataset, cfg.task)
    elif not args.checkpoint:
        raise ConfigError("--checkpoint is required unless --oracle is given", key="checkpoint")
    elif cfg.task == "segment":
        net = load_lesion_net(args.checkpoint)
        _check_vocabulary(net.m)
        report = evaluate_segmentation(net, dataset, cfg.train.batch_size, cfg.train.threshold)
    else:
        net = load_grading_net(args.checkpoint)
        if net.lesion_net is not None:
            _check_vocabulary(net.m)
        report = evaluate_grading(net, dataset, cfg.train.batch_size, cfg.train.threshold)

    report = {"task": cfg.task, "split": args.split, "checkpoint": args.checkpoint, **report}
    out = Path(args.out) if args.out else Path(cfg.output_dir) / f"eval_{args.split}.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    print(summarize_report(report))
    return EXIT_OK


def _check_vocabulary(m: int) -> None:
    if m != VOCABULARY.m:
        raise CheckpointError(f"checkpoint predicts {m} lesions, vocabulary has {VOCABULARY.m}")


# --- predict ---
def _load_predictor(path):
    kind = load_checkpoint(path)["kind"]
    if kind == "lesion_net":
        return kind, load_lesion_net(path)
    net = load_grading_net(path)
    if net.lesion_net is None:
        raise CheckpointError(f"{path}: a baseline grading checkpoint has no lesion maps")
    return kind, net


def cmd_predict(args) -> int:
    image = load_image(args.image)
    h, w = image.shape[:2]
    if h != w or h % STRIDE:
        if not args.resize:
            raise ShapeError(f"image is {h}x{w}; sides must be equal multiples of {STRIDE} (or pass --resize)")
        padded, size = pad_to_multiple(image, STRIDE)
    else:
        padded, size = image, (h, w)

    kind, net = _load_predictor(args.checkpoint)
    dtype = next(net.parameters()).dtype
    x = to_tensor_image(padded).to(dtype)
    probabilities = None
    with torch.no_grad():
        if kind == "lesion_net":
            maps = lesion_net_forward(net, x)
        else:
            probabilities, maps, _ = fuse_and_grade(net, x)
    # Padding never reaches the written maps or the report.
    maps = maps[:, : size[0], : size[1]].to(torch.float32)

    tau = args.threshold
    presence = presence_from_maps(maps)
    masks = threshold_maps(maps, tau)
    masks_cl = masks.permute(1, 2, 0).numpy()

    if probabilities is not None:
        grade, source = predict_grade(probabilities), "model"
    else:
        present = (presence >= tau).to(torch.uint8)
        ihe_blobs = count_blobs(masks_cl[:, :, VOCABULARY.index("iHE")])
        grade, source = grade_from_lesions(present, ihe_blobs), "rules"

    out = Path(args.out)
    _prepare_out(out, args.force)
    image_id = Path(args.image).stem
    np.savez_compressed(out / "probability_maps.npz",
                        **{lesion: maps[j].numpy() for j, lesion in enumerate(VOCABULARY)})
    for j, lesion in enumerate(VOCABULARY):
        save_image(np.repeat(maps[j].numpy()[:, :, None], 3, axis=2), out / "maps" / f"{image_id}_{lesion}.png")
    write_masks(masks_cl, out / "masks", image_id)
    overlay = render_overlay(crop_to(image, size), masks_cl)
    save_image(overlay.astype(np.float32) / 255.0, out / "overlay.png")

    report = {
        "image": str(args.image),
        "checkpoint": str(args.checkpoint),
        "threshold": tau,
        "lesion_names": {lesion: LESION_NAMES[lesion] for lesion in VOCABULARY},
        "presence": {lesion: float(presence[j]) for j, lesion in enumerate(VOCABULARY)},
        "present": {lesion: bool(presence[j] >= tau) for j, lesion in enumerate(VOCABULARY)},
        "grade": int(grade),
        "grade_source": source,
    }
    if probabilities is not None:
        report["grade_probabilities"] = [float(p) for p in probabilities]
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    print(f"DR{int(grade)} ({source}); present: "
          + (", ".join(k for k, v in report["present"].items() if v) or "none"))
    return EXIT_OK


# --- entry point ---
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesionnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic fundus dataset")
    p.add_argument("--config", help="synth YAML (defaults built in)")
    p.add_argument("--n", type=int, required=True, help="number of images")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a Lesion-Net or a grading network")
    p.add_argument("--config", help="run config YAML (default: $LESIONNET_CONFIG or config/segment.yml)")
    p.add_argument("--out", help="override output_dir")
    p.add_argument("--force", action="store_true", help="overwrite existing checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="write a metrics report for one split")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", help="report path (default: <output_dir>/eval_<split>.json)")
    p.add_argument("--oracle", action="store_true", help="score the ground truth against itself")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="lesion maps, masks, overlay and grade for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resize", action="store_true", help="pad to a multiple of 32 instead of refusing")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    level = getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)-8s %(name)-15s %(message)s")

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAbortedError as e:
        log.error("Training aborted: %s %s", e, e.diagnostics)
        print(f"training aborted: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except LesionNetError as e:
        log.exception("Command failed")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
