import pytest
import yaml

from conftest import tiny_backbone
from lesionnet.core_types import ConfigError
from lesionnet.helpers.run_config import (
    DEFAULTS,
    AugmentConfig,
    LesionNetConfig,
    MultiTaskConfig,
    RunConfig,
    TrainConfig,
    config_path,
    load_config,
    save_config,
)


def test_defaults_follow_the_training_recipe():
    train = TrainConfig()
    assert (train.lr0, train.momentum, train.weight_decay) == (0.001, 0.95, 0.0001)
    assert (train.validate_every, train.lr_patience, train.stop_patience, train.lr_factor) == (1000, 4, 10, 10.0)
    assert train.batch_size == 8 and train.dual_lambda == 0.8
    assert DEFAULTS["lesion_net"]["variant"] == 16
    assert DEFAULTS["multitask"]["h_att"] == 64


def test_partial_yaml_is_merged_over_defaults(tmp_path):
    path = tmp_path / "run.yml"
    path.write_text("task: segment\ntrain:\n  lr0: 1e-2\n  batch_size: 2\nlesion_net:\n  variant: 8\n", encoding="utf-8")
    cfg = load_config(path)
    assert cfg.train.lr0 == 0.01
    assert cfg.train.batch_size == 2
    assert cfg.train.momentum == 0.95
    assert cfg.lesion_net.variant == 8
    assert cfg.lesion_net.merge_steps == 2


def test_env_var_selects_the_default_config(tmp_path, monkeypatch):
    path = tmp_path / "env.yml"
    path.write_text("task: grade\noutput_dir: runs/from_env\n", encoding="utf-8")
    monkeypatch.setenv("LESIONNET_CONFIG", str(path))
    assert config_path() == path
    cfg = load_config()
    assert cfg.task == "grade"
    assert cfg.output_dir == "runs/from_env"


def test_default_config_without_env(monkeypatch):
    monkeypatch.delenv("LESIONNET_CONFIG", raising=False)
    assert config_path().name == "segment.yml"


@pytest.mark.parametrize(
    "text, key",
    [
        ("lesion_net:\n  variant: 7\n", "lesion_net.variant"),
        ("train:\n  lr0: -1\n", "train.lr0"),
        ("train:\n  loss: hinge\n", "train.loss"),
        ("train:\n  dual_lambda: 1.5\n", "train.dual_lambda"),
        ("multitask:\n  attention: softmax\n", "multitask.attention"),
        ("task: detect\n", "task"),
        ("train:\n  learning_rate: 0.1\n", "train"),
    ],
)
def test_invalid_values_name_their_key(tmp_path, text, key):
    path = tmp_path / "bad.yml"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError) as err:
        load_config(path)
    assert err.value.key == key


def test_unreadable_or_non_mapping_config(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yml")
    path = tmp_path / "list.yml"
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("train: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(path)


def test_save_and_reload(tmp_path):
    cfg = RunConfig(lesion_net=LesionNetConfig(variant=4, backbone=tiny_backbone()))
    save_config(cfg, tmp_path / "out" / "config.yml")
    with open(tmp_path / "out" / "config.yml", encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    assert raw["lesion_net"]["backbone"]["stage_channels"] == [2, 3, 4, 4, 5]
    assert load_config(tmp_path / "out" / "config.yml") == cfg


def test_check_paths(tmp_path):
    cfg = RunConfig(manifest=str(tmp_path / "none.jsonl"))
    with pytest.raises(ConfigError) as err:
        cfg.check_paths()
    assert err.value.key == "manifest"

    (tmp_path / "m.jsonl").write_text("", encoding="utf-8")
    cfg = RunConfig(task="grade", manifest=str(tmp_path / "m.jsonl"))
    with pytest.raises(ConfigError) as err:
        cfg.check_paths()
    assert err.value.key == "lesion_checkpoint"

    cfg.multitask = MultiTaskConfig(mode="baseline")
    cfg.check_paths()


def test_augment_ranges_are_validated():
    with pytest.raises(ConfigError):
        AugmentConfig(crop_scale=(0.9, 1.2))
    with pytest.raises(ConfigError):
        AugmentConfig(brightness=(1.2, 0.8))
    with pytest.raises(ConfigError):
        AugmentConfig(flip_prob=2.0)
