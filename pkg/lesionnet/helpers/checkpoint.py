"""Versioned model checkpoints.

A checkpoint is a ``torch.save`` dict::

    {"format": "lesionnet", "version": 1, "kind": "lesion_net" | "grading",
     "mode": <tag>, "config": {...}, "shapes": {name: [dims]},
     "state_dict": {name: tensor}, "checksum": <sha256>}
"""

import hashlib
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import torch

from lesionnet.core_types import CheckpointError

log = logging.getLogger(__name__)

FORMAT = "lesionnet"
VERSION = 1
KINDS = ("lesion_net", "grading")


def state_checksum(state: Mapping[str, torch.Tensor]) -> str:
    """SHA-256 over sorted names, shapes, dtypes and raw tensor bytes."""
    digest = hashlib.sha256()
    for name in sorted(state):
        tensor = state[name].detach().cpu().contiguous()
        digest.update(name.encode("utf-8"))
        digest.update(str(tuple(tensor.shape)).encode("utf-8"))
        digest.update(str(tensor.dtype).encode("utf-8"))
        digest.update(tensor.numpy().tobytes() if tensor.numel() else b"")
    return digest.hexdigest()


def module_checksum(module: torch.nn.Module) -> str:
    return state_checksum(module.state_dict())


def save_checkpoint(path, module: torch.nn.Module, kind: str, config: Dict[str, Any],
                    mode: Optional[str] = None, extra: Optional[Dict[str, Any]] = None) -> str:
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")
    state = {k: v.detach().cpu().clone() for k, v in module.state_dict().items()}
    checksum = state_checksum(state)
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "mode": mode,
        "config": config,
        "shapes": {k: list(v.shape) for k, v in state.items()},
        "state_dict": state,
        "checksum": checksum,
        **(extra or {}),
    }
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    torch.save(payload, path)
    log.debug("Saved %s checkpoint to %s (%s)", kind, path, checksum[:12])
    return checksum


def load_checkpoint(path, expected_kind: Optional[str] = None) -> Dict[str, Any]:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a lesionnet checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    kind = payload.get("kind")
    if kind not in KINDS:
        raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: expected a {expected_kind} checkpoint, got {kind}")

    state = payload.get("state_dict") or {}
    shapes = payload.get("shapes") or {}
    for name, tensor in state.items():
        if list(tensor.shape) != list(shapes.get(name, [])):
            raise CheckpointError(f"{path}: shape metadata disagrees for {name}")
    if payload.get("checksum") and state_checksum(state) != payload["checksum"]:
        raise CheckpointError(f"{path}: checksum mismatch")
    return payload


def restore_state(module: torch.nn.Module, payload: Dict[str, Any]) -> None:
    """Load a checkpoint's weights, turning shape mismatches into CheckpointError."""
    own = module.state_dict()
    state = payload["state_dict"]
    missing = sorted(set(own) - set(state))
    unexpected = sorted(set(state) - set(own))
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint does not fit the model (missing={missing[:3]}, unexpected={unexpected[:3]})"
        )
    for name, tensor in state.items():
        if tuple(own[name].shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"checkpoint does not fit the model: {name} is {tuple(tensor.shape)}, model wants {tuple(own[name].shape)}"
            )
    module.load_state_dict(state)
