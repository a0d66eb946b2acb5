"""Segmentation and grading training loops.

Both loops validate every ``validate_every`` batches, feed the score to the
schedule, keep ``best.pt`` at each new best and write ``final.pt`` at the end.
Runs are reproducible with ``num_workers == 0``.
"""

from __future__ import annotations

import logging
import math
import random
import shutil
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch

from lesionnet.core_types import DatasetRecord, InvalidInputError, TrainingAbortedError
from lesionnet.helpers.checkpoint import module_checksum, save_checkpoint
from lesionnet.helpers.dataset import LesionDataset, make_loader, positive_class_weights
from lesionnet.helpers.manifest import split_records
from lesionnet.helpers.run_config import RunConfig
from lesionnet.losses import cross_entropy_grading, segmentation_loss
from lesionnet.metrics import evaluate_grading, evaluate_segmentation
from lesionnet.models.lesion_net import LesionNet, build_lesion_net
from lesionnet.models.multitask import build_grading_net
from lesionnet.training.optim import check_finite_grads, make_optimizer, set_lr
from lesionnet.training.schedule import ScheduleState, initial_schedule, schedule_update
from lesionnet.utils.run_log import RunLog

log = logging.getLogger(__name__)

BEST = "best.pt"
FINAL = "final.pt"
RUN_LOG = "train_log.jsonl"


@dataclass
class TrainResult:
    net: torch.nn.Module
    run_log: RunLog
    schedule: ScheduleState
    batches: int
    best_checkpoint: Optional[Path] = None
    final_checkpoint: Optional[Path] = None


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


def torch_dtype(name: str) -> torch.dtype:
    return torch.float64 if name == "float64" else torch.float32


def _datasets(records: Sequence[DatasetRecord], config: RunConfig):
    tc = config.train
    train_records = split_records(records, "train")
    val_records = split_records(records, "val")
    for split, subset in (("train", train_records), ("val", val_records)):
        if not subset:
            raise InvalidInputError(f"the {split} split is empty")
    dtype = torch_dtype(tc.dtype)
    train_set = LesionDataset(train_records, config.augment, seed=tc.seed, cache_size=tc.cache_size, dtype=dtype)
    val_set = LesionDataset(val_records, None, seed=tc.seed, cache_size=tc.cache_size, dtype=dtype)
    return train_set, val_set


def _run(
    net: torch.nn.Module,
    params: List[torch.nn.Parameter],
    train_set: LesionDataset,
    config: RunConfig,
    step_loss: Callable[[torch.nn.Module, torch.Tensor, torch.Tensor, torch.Tensor, ScheduleState], torch.Tensor],
    validate: Callable[[torch.nn.Module], Dict],
    score_key: str,
    kind: str,
    mode: Optional[str],
    output_dir: Optional[Path],
    run_log: RunLog,
) -> TrainResult:
    tc = config.train
    optimizer = make_optimizer(params, tc)
    state = initial_schedule(tc)
    named = [(n, p) for n, p in net.named_parameters() if p.requires_grad]
    best_path = output_dir / BEST if output_dir is not None else None
    final_path = output_dir / FINAL if output_dir is not None else None
    stored = config.to_dict()
    batch = 0
    saved_best = False

    for epoch in range(tc.max_epochs):
        train_set.set_epoch(epoch)
        loader = make_loader(train_set, tc.batch_size, shuffle=True, seed=tc.seed + epoch,
                             num_workers=tc.num_workers)
        for images, masks, grades in loader:
            net.train()
            optimizer.zero_grad(set_to_none=True)
            loss = step_loss(net, images, masks, grades, state)
            if not torch.isfinite(loss):
                raise TrainingAbortedError(f"non-finite loss at batch {batch + 1}",
                                           diagnostics={"batch": batch + 1, "loss": float(loss)})
            loss.backward()
            check_finite_grads(named)
            optimizer.step()
            batch += 1

            if batch % tc.validate_every:
                continue

            report = validate(net)
            score = float(report[score_key])
            new = schedule_update(state, score, tc)
            run_log.emit("validation", batch=batch, epoch=epoch, score=score, loss=float(loss),
                         lr=state.lr, using_dual=state.using_dual, report=report)
            if new.best_score > state.best_score and best_path is not None:
                checksum = save_checkpoint(best_path, net, kind, stored, mode=mode,
                                           extra={"batch": batch, "score": score})
                saved_best = True
                run_log.emit("checkpoint", batch=batch, path=str(best_path), score=score, checksum=checksum)
            if new.lr != state.lr:
                set_lr(optimizer, new.lr)
                run_log.emit("lr_change", batch=batch, old_lr=state.lr, new_lr=new.lr,
                             reductions=new.lr_reductions)
            if kind == "lesion_net" and tc.loss == "dual" and new.using_dual and not state.using_dual:
                run_log.emit("loss_switch", batch=batch, loss="dual", dual_lambda=tc.dual_lambda)
            state = new
            log.info("batch %d: %s %.4f (best %.4f, lr %g)", batch, score_key, score, state.best_score, state.lr)
            if state.stopped:
                run_log.emit("early_stop", batch=batch, non_improve_count=state.non_improve_count)
                break
        if state.stopped:
            break

    result = TrainResult(net=net, run_log=run_log, schedule=state, batches=batch)
    if output_dir is not None:
        checksum = save_checkpoint(final_path, net, kind, stored, mode=mode, extra={"batch": batch})
        run_log.emit("checkpoint", batch=batch, path=str(final_path), score=None, checksum=checksum)
        if not saved_best:
            log.warning("No validation ran in %d batches; best.pt is the final model", batch)
            shutil.copyfile(final_path, best_path)
        result.best_checkpoint, result.final_checkpoint = best_path, final_path
    run_log.emit("finish", batch=batch, best_score=state.best_score if math.isfinite(state.best_score) else None,
                 schedule=asdict(state))
    return result


def train_segmentation(records: Sequence[DatasetRecord], config: RunConfig,
                       output_dir=None) -> TrainResult:
    """Train a Lesion-Net; validation score is the mean per-lesion pixel F1."""
    tc = config.train
    output_dir = Path(output_dir) if output_dir is not None else None
    seed_everything(tc.seed, tc.deterministic)
    train_set, val_set = _datasets(records, config)
    net = build_lesion_net(config.lesion_net).to(torch_dtype(tc.dtype))
    weights = positive_class_weights(train_set, tc.wce_cap) if tc.loss == "wce" else None
    run_log = RunLog(output_dir / RUN_LOG if output_dir is not None else None)
    run_log.emit("start", task="segment", variant=config.lesion_net.variant, loss=tc.loss,
                 n_train=len(train_set), n_val=len(val_set), lr=tc.lr0, seed=tc.seed)

    def step_loss(model, images, masks, grades, state):
        w = weights.to(images.dtype) if weights is not None else None
        return segmentation_loss(model(images), masks, tc, state.using_dual, w)

    def validate(model):
        return evaluate_segmentation(model, val_set, tc.batch_size, tc.threshold)

    return _run(net, list(net.parameters()), train_set, config, step_loss, validate, "pixel_f1_mean",
                "lesion_net", f"{config.lesion_net.variant}s", output_dir, run_log)


def train_grading(records: Sequence[DatasetRecord], lesion_net: Optional[LesionNet], config: RunConfig,
                  output_dir=None) -> TrainResult:
    """Train the grading branch; the Lesion-Net side branch stays frozen.

    Validation score is the quadratic weighted kappa.
    """
    tc = config.train
    mt = config.multitask
    output_dir = Path(output_dir) if output_dir is not None else None
    seed_everything(tc.seed, tc.deterministic)
    train_set, val_set = _datasets(records, config)
    dtype = torch_dtype(tc.dtype)
    if lesion_net is not None:
        lesion_net = lesion_net.to(dtype)
        # the checkpoint must describe the side branch actually used
        config = replace(config, lesion_net=lesion_net.config)
    net = build_grading_net(mt, lesion_net if mt.mode != "baseline" else None).to(dtype)
    side_before = module_checksum(net.lesion_net) if net.lesion_net is not None else None

    run_log = RunLog(output_dir / RUN_LOG if output_dir is not None else None)
    run_log.emit("start", task="grade", mode=mt.mode, attention=mt.attention,
                 n_train=len(train_set), n_val=len(val_set), lr=tc.lr0, seed=tc.seed,
                 side_checksum=side_before)

    def step_loss(model, images, masks, grades, state):
        return cross_entropy_grading(model(images).probabilities, grades)

    def validate(model):
        return evaluate_grading(model, val_set, tc.batch_size, tc.threshold)

    result = _run(net, net.main_parameters(), train_set, config, step_loss, validate, "kappa",
                  "grading", f"{mt.mode}/{mt.attention}", output_dir, run_log)

    if side_before is not None and mt.freeze_side:
        side_after = module_checksum(net.lesion_net)
        if side_after != side_before:
            raise TrainingAbortedError("side-branch parameters changed during grading training",
                                       diagnostics={"before": side_before, "after": side_after})
    return result
