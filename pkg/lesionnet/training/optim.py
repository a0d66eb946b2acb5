import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import torch

from lesionnet.core_types import ShapeError, TrainingAbortedError
from lesionnet.helpers.run_config import TrainConfig

log = logging.getLogger(__name__)


def make_optimizer(params: Iterable[torch.nn.Parameter], config: TrainConfig,
                   lr: Optional[float] = None) -> torch.optim.SGD:
    """SGD with heavy-ball momentum and L2 weight decay, no dampening."""
    return torch.optim.SGD(
        params,
        lr=config.lr0 if lr is None else lr,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        dampening=0.0,
        nesterov=False,
    )


def set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def check_finite_grads(named_params: Iterable[Tuple[str, torch.nn.Parameter]]) -> None:
    bad = {}
    for name, p in named_params:
        if p.grad is None:
            continue
        nonfinite = int((~torch.isfinite(p.grad)).sum())
        if nonfinite:
            bad[name] = nonfinite
    if bad:
        raise TrainingAbortedError(
            f"non-finite gradients in {len(bad)} tensors (first: {next(iter(bad))})",
            diagnostics={"nonfinite_grads": bad},
        )


def sgd_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor],
             velocities: Optional[Sequence[torch.Tensor]], lr: float,
             config: TrainConfig) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
    """One explicit SGD step; returns new ``(params, velocities)``.

    ``v = momentum * v + grad + weight_decay * param``; ``param -= lr * v``.
    Same update as :func:`make_optimizer`'s ``torch.optim.SGD``.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if velocities is None:
        velocities = [torch.zeros_like(p) for p in params]

    new_params, new_velocities = [], []
    for i, (p, g, v) in enumerate(zip(params, grads, velocities)):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"parameter {i}: shapes {tuple(p.shape)}, {tuple(g.shape)}, {tuple(v.shape)}")
        if not torch.isfinite(g).all():
            raise TrainingAbortedError(
                f"non-finite gradient for parameter {i}",
                diagnostics={"index": i, "nonfinite": int((~torch.isfinite(g)).sum())},
            )
        v = config.momentum * v + g + config.weight_decay * p
        new_velocities.append(v)
        new_params.append(p - lr * v)
    return new_params, new_velocities
