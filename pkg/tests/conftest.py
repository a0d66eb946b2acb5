import sys
import os
import random

# Ensure project root on path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest
import torch

from lesionnet.helpers.run_config import BackboneConfig, LesionNetConfig, MultiTaskConfig


@pytest.fixture(autouse=True)
def _seed_everything():
    random.seed(0)
    np.random.seed(0)
    torch.manual_seed(0)
    yield


# Small widths keep finite-difference checks and CPU runs fast.
TINY_CHANNELS = (2, 3, 4, 4, 5)


def tiny_backbone(activation: str = "silu", **kwargs) -> BackboneConfig:
    return BackboneConfig(stage_channels=TINY_CHANNELS, activation=activation, **kwargs)


def tiny_lesion_config(variant: int = 16, activation: str = "silu") -> LesionNetConfig:
    return LesionNetConfig(variant=variant, backbone=tiny_backbone(activation))


def tiny_multitask_config(mode: str = "multitask", attention: str = "conv", **kwargs) -> MultiTaskConfig:
    return MultiTaskConfig(mode=mode, attention=attention, h_att=3, attention_activation="silu",
                           backbone=tiny_backbone(), **kwargs)


def sampled_gradcheck(fn, tensors, samples: int = 25, eps: float = 1e-3, rtol: float = 1e-4, seed: int = 0) -> float:
    """Fraction of sampled coordinates whose analytic gradient matches central differences.

    ``fn()`` must return a scalar computed from ``tensors`` (double precision
    leaves that require grad).  A coordinate passes when
    ``|analytic - numeric| <= rtol * max(|analytic|, |numeric|, floor)``; the
    floor is 1e-3 of the largest sampled gradient so that coordinates whose
    gradient is essentially zero do not count as relative failures.
    """
    tensors = list(tensors)
    out = fn()
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    pairs = []
    with torch.no_grad():
        for t, g in zip(tensors, grads):
            g = torch.zeros_like(t) if g is None else g
            flat = t.view(-1)
            gflat = g.reshape(-1)
            for i in torch.randperm(flat.numel(), generator=gen)[:samples].tolist():
                orig = flat[i].item()
                flat[i] = orig + eps
                f_plus = fn().item()
                flat[i] = orig - eps
                f_minus = fn().item()
                flat[i] = orig
                pairs.append((gflat[i].item(), (f_plus - f_minus) / (2 * eps)))
    scale = max(abs(a) for a, _ in pairs) or 1.0
    passed = [abs(a - n) <= rtol * max(abs(a), abs(n), 1e-3 * scale) for a, n in pairs]
    return sum(passed) / len(passed)


@pytest.fixture
def gradcheck_fraction():
    return sampled_gradcheck


def write_synthetic_dataset(root, n: int = 10, side: int = 32, seed: int = 0):
    """Synthetic images, mask files and a split manifest under ``root``; returns the manifest path."""
    from lesionnet.helpers.manifest import assign_splits, write_manifest
    from lesionnet.helpers.masks_io import save_image, write_masks
    from lesionnet.helpers.run_config import SynthConfig
    from lesionnet.helpers.synth import synth_sample

    config = SynthConfig(image_side=side, seed=seed)
    ids = [f"s{i:03d}" for i in range(n)]
    splits = assign_splits(ids, seed)
    entries = []
    for i, image_id in enumerate(ids):
        sample = synth_sample(config, i)
        save_image(sample.image, root / "images" / f"{image_id}.png")
        write_masks(sample.masks, root / "masks", image_id)
        entries.append({"image_id": image_id, "image": f"images/{image_id}.png", "masks_dir": "masks",
                        "grade": sample.grade, "split": splits[image_id]})
    write_manifest(entries, root / "manifest.jsonl")
    return root / "manifest.jsonl"


@pytest.fixture
def synthetic_manifest(tmp_path):
    return write_synthetic_dataset(tmp_path / "data")
