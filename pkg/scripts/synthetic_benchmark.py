#!/usr/bin/env python3
"""End-to-end benchmark on synthetic fundus images.

1. Lesion-Net-16s trained with the dual loss on 500 images must reach a mean
   pixel F1 >= 0.6 and a mean image F1 >= 0.8 on 100 held-out images.
2. Over 3 seeds (median): dual loss >= pure Dice on mean image F1, and
   conv-attention grading kappa >= plain classifier kappa.

Runs on CPU; expect tens of minutes.  Exit code 1 when a check fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import tempfile
import time
from pathlib import Path

from lesionnet.helpers.dataset import LesionDataset
from lesionnet.helpers.manifest import parse_manifest, split_records, write_manifest
from lesionnet.helpers.masks_io import save_image, write_masks
from lesionnet.helpers.run_config import RunConfig, SynthConfig
from lesionnet.helpers.synth import synth_sample
from lesionnet.metrics import evaluate_grading, evaluate_segmentation, summarize_report
from lesionnet.training.trainer import train_grading, train_segmentation

log = logging.getLogger("synthetic_benchmark")

N_TRAIN, N_VAL, N_TEST = 500, 50, 100
SEEDS = (0, 1, 2)
MIN_PIXEL_F1 = 0.6
MIN_IMAGE_F1 = 0.8


def make_dataset(root: Path, seed: int) -> Path:
    config = SynthConfig(image_side=128, seed=seed)
    entries = []
    for i in range(N_TRAIN + N_VAL + N_TEST):
        split = "train" if i < N_TRAIN else "val" if i < N_TRAIN + N_VAL else "test"
        image_id = f"bench_{i:04d}"
        sample = synth_sample(config, i)
        save_image(sample.image, root / "images" / f"{image_id}.png")
        write_masks(sample.masks, root / "masks", image_id)
        entries.append({"image_id": image_id, "image": f"images/{image_id}.png",
                        "masks_dir": "masks", "grade": sample.grade, "split": split})
    write_manifest(entries, root / "manifest.jsonl")
    return root / "manifest.jsonl"


def run_config(manifest: Path, seed: int, **train) -> RunConfig:
    steps_per_epoch = -(-N_TRAIN // 8)
    return RunConfig.from_dict({
        "manifest": str(manifest),
        "lesion_net": {"variant": 16},
        "train": {"seed": seed, "validate_every": steps_per_epoch, "max_epochs": 30,
                  "cache_size": N_TRAIN + N_VAL, **train},
    })


def segmentation(records, manifest, out: Path, seed: int, loss: str):
    cfg = run_config(manifest, seed, loss=loss)
    result = train_segmentation(records, cfg, out)
    test = LesionDataset(split_records(records, "test"), None, cache_size=0)
    report = evaluate_segmentation(result.net, test)
    log.info("seg seed=%d loss=%s: %s", seed, loss, summarize_report(report))
    return result, report


def grading(records, manifest, lesion_net, out: Path, seed: int, mode: str):
    cfg = run_config(manifest, seed)
    cfg.task = "grade"
    cfg.multitask.mode = mode
    cfg.multitask.attention = "conv"
    result = train_grading(records, lesion_net, cfg, out)
    test = LesionDataset(split_records(records, "test"), None, cache_size=0)
    report = evaluate_grading(result.net, test)
    log.info("grade seed=%d mode=%s: %s", seed, mode, summarize_report(report))
    return report


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--work", help="working directory (default: a temporary one)")
    parser.add_argument("--data-seed", type=int, default=0)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)-8s %(name)-15s %(message)s")

    work = Path(args.work) if args.work else Path(tempfile.mkdtemp(prefix="lesionnet_bench_"))
    start = time.perf_counter()
    manifest = make_dataset(work / "data", args.data_seed)
    records = parse_manifest(manifest)

    dual_image_f1, dice_image_f1, conv_kappa, base_kappa = [], [], [], []
    headline = None
    for seed in SEEDS:
        dual, dual_report = segmentation(records, manifest, work / f"seg_dual_{seed}", seed, "dual")
        _, dice_report = segmentation(records, manifest, work / f"seg_dice_{seed}", seed, "dice")
        dual_image_f1.append(dual_report["image_f1_mean"])
        dice_image_f1.append(dice_report["image_f1_mean"])
        if headline is None:
            headline = dual_report
        conv_kappa.append(grading(records, manifest, dual.net, work / f"grade_conv_{seed}", seed, "multitask")["kappa"])
        base_kappa.append(grading(records, manifest, None, work / f"grade_base_{seed}", seed, "baseline")["kappa"])

    checks = {
        "pixel_f1": headline["pixel_f1_mean"] >= MIN_PIXEL_F1,
        "image_f1": headline["image_f1_mean"] >= MIN_IMAGE_F1,
        "dual_vs_dice": statistics.median(dual_image_f1) >= statistics.median(dice_image_f1),
        "conv_vs_baseline": statistics.median(conv_kappa) >= statistics.median(base_kappa),
    }
    summary = {
        "headline": {"pixel_f1_mean": headline["pixel_f1_mean"], "image_f1_mean": headline["image_f1_mean"]},
        "image_f1": {"dual": dual_image_f1, "dice": dice_image_f1},
        "kappa": {"multitask_conv": conv_kappa, "baseline": base_kappa},
        "checks": checks,
        "minutes": (time.perf_counter() - start) / 60.0,
    }
    print(json.dumps(summary, indent=2))
    (work / "benchmark.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return 0 if all(checks.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
