import filecmp

import pytest
import torch

from conftest import tiny_lesion_config, tiny_multitask_config
from lesionnet.core_types import InvalidInputError
from lesionnet.helpers.checkpoint import load_checkpoint, module_checksum
from lesionnet.helpers.manifest import parse_manifest
from lesionnet.helpers.run_config import AugmentConfig, RunConfig, TrainConfig
from lesionnet.models.lesion_net import build_lesion_net, load_lesion_net
from lesionnet.training.trainer import BEST, FINAL, RUN_LOG, train_grading, train_segmentation
from lesionnet.utils.run_log import RunLog

# synthetic_manifest holds 10 images: 7 train, 1 val, 2 test


def seg_config(**train) -> RunConfig:
    defaults = dict(batch_size=2, validate_every=1, max_epochs=1, cache_size=16)
    defaults.update(train)
    return RunConfig(lesion_net=tiny_lesion_config(16), train=TrainConfig(**defaults), augment=AugmentConfig())


def grade_config(mode="multitask", attention="conv", **train) -> RunConfig:
    cfg = seg_config(**train)
    cfg.task = "grade"
    cfg.multitask = tiny_multitask_config(mode, attention)
    return cfg


def test_single_batch_single_validation(synthetic_manifest, tmp_path):
    records = parse_manifest(synthetic_manifest)
    result = train_segmentation(records, seg_config(batch_size=8), tmp_path / "run")
    assert result.batches == 1
    assert len(result.run_log.of("validation")) == 1
    assert [e["event"] for e in RunLog.read(tmp_path / "run" / RUN_LOG)] == [e["event"] for e in result.run_log.events]
    assert (tmp_path / "run" / BEST).is_file() and (tmp_path / "run" / FINAL).is_file()


def test_validation_count_follows_validate_every(synthetic_manifest):
    records = parse_manifest(synthetic_manifest)
    result = train_segmentation(records, seg_config(validate_every=3, max_epochs=2))
    assert result.batches == 8
    assert len(result.run_log.of("validation")) == 8 // 3
    assert [e["batch"] for e in result.run_log.of("validation")] == [3, 6]


def test_loss_switch_lr_decay_and_early_stop(synthetic_manifest, tmp_path):
    records = parse_manifest(synthetic_manifest)
    # an LR this small leaves float32 weights untouched, so every score repeats
    cfg = seg_config(lr0=1e-12, lr_patience=1, stop_patience=3, max_epochs=3)
    result = train_segmentation(records, cfg, tmp_path)
    log = result.run_log

    validations = log.of("validation")
    assert [v["using_dual"] for v in validations] == [False, False, True, True]
    assert [e["batch"] for e in log.of("lr_change")] == [2, 3, 4]
    assert [e["batch"] for e in log.of("loss_switch")] == [2]
    assert [e["batch"] for e in log.of("early_stop")] == [4]
    assert result.batches == 4
    assert result.schedule.stopped and result.schedule.using_dual
    lrs = [v["lr"] for v in validations]
    assert lrs == sorted(lrs, reverse=True)
    checkpoints = [e["path"] for e in log.of("checkpoint")]
    assert checkpoints == [str(tmp_path / BEST), str(tmp_path / FINAL)]
    assert log.events[-1]["event"] == "finish"


def test_best_is_final_when_nothing_was_validated(synthetic_manifest, tmp_path):
    records = parse_manifest(synthetic_manifest)
    result = train_segmentation(records, seg_config(validate_every=100), tmp_path)
    assert not result.run_log.of("validation")
    assert filecmp.cmp(tmp_path / BEST, tmp_path / FINAL, shallow=False)


def test_same_seed_gives_identical_checkpoints(synthetic_manifest, tmp_path):
    records = parse_manifest(synthetic_manifest)
    cfg = seg_config(max_epochs=2, validate_every=2)
    train_segmentation(records, cfg, tmp_path / "a")
    train_segmentation(records, cfg, tmp_path / "b")
    for name in (BEST, FINAL):
        assert load_checkpoint(tmp_path / "a" / name)["checksum"] == load_checkpoint(tmp_path / "b" / name)["checksum"]


def test_checkpoint_reloads_to_the_trained_net(synthetic_manifest, tmp_path):
    records = parse_manifest(synthetic_manifest)
    result = train_segmentation(records, seg_config(validate_every=100, loss="wce"), tmp_path)
    assert module_checksum(load_lesion_net(result.final_checkpoint)) == module_checksum(result.net)


@pytest.mark.parametrize("loss", ["dice", "focal"])
def test_other_losses_train(synthetic_manifest, loss):
    records = parse_manifest(synthetic_manifest)
    result = train_segmentation(records, seg_config(loss=loss, validate_every=4))
    assert len(result.run_log.of("validation")) == 1
    assert not result.run_log.of("loss_switch")


def test_empty_split_is_an_error(synthetic_manifest):
    records = [r for r in parse_manifest(synthetic_manifest) if r.split == "train"]
    with pytest.raises(InvalidInputError, match="val split is empty"):
        train_segmentation(records, seg_config())


def test_grading_run_leaves_side_branch_unchanged(synthetic_manifest, tmp_path):
    records = parse_manifest(synthetic_manifest)
    side = build_lesion_net(tiny_lesion_config(16))
    before = module_checksum(side)
    result = train_grading(records, side, grade_config(max_epochs=2, validate_every=2), tmp_path)
    assert module_checksum(result.net.lesion_net) == before
    assert result.run_log.of("start")[0]["side_checksum"] == before
    assert all("kappa" in v["report"] for v in result.run_log.of("validation"))
    assert not result.run_log.of("loss_switch")
    payload = load_checkpoint(tmp_path / FINAL, expected_kind="grading")
    assert payload["mode"] == "multitask/conv"
    assert RunConfig.from_dict(payload["config"]).lesion_net == side.config


@pytest.mark.parametrize("mode, attention", [("baseline", "conv"), ("lesion_concat", "conv"), ("multitask", "cw_maxpool")])
def test_grading_modes_train(synthetic_manifest, mode, attention):
    records = parse_manifest(synthetic_manifest)
    side = None if mode == "baseline" else build_lesion_net(tiny_lesion_config(16))
    result = train_grading(records, side, grade_config(mode, attention, validate_every=4))
    assert result.batches == 4
    assert len(result.run_log.of("validation")) == 1


def test_float64_training(synthetic_manifest):
    records = parse_manifest(synthetic_manifest)
    result = train_segmentation(records, seg_config(dtype="float64", validate_every=4))
    assert next(result.net.parameters()).dtype == torch.float64
