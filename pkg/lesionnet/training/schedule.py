"""Validation-driven schedule: LR decay on plateaus, loss switch, early stop.

A validation improves only when its score is strictly above the best so far.
``lr_patience`` non-improvements since the last reduction (or since the last
improvement) divide the LR by ``lr_factor``; the first reduction also turns on
the dual loss.  ``stop_patience`` consecutive non-improvements stop the run.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass

from lesionnet.core_types import InvalidInputError
from lesionnet.helpers.run_config import TrainConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleState:
    best_score: float = -math.inf
    non_improve_count: int = 0
    lr_reductions: int = 0
    using_dual: bool = False
    stopped: bool = False
    since_reduction: int = 0
    lr: float = 0.001


def initial_schedule(config: TrainConfig) -> ScheduleState:
    return ScheduleState(lr=config.lr0)


def schedule_update(state: ScheduleState, val_score: float, config: TrainConfig) -> ScheduleState:
    if state.stopped:
        return state
    if not math.isfinite(val_score):
        raise InvalidInputError(f"validation score must be finite, got {val_score}")

    if val_score > state.best_score:
        return dataclasses.replace(state, best_score=float(val_score), non_improve_count=0, since_reduction=0)

    count = state.non_improve_count + 1
    since = state.since_reduction + 1
    lr, reductions, using_dual = state.lr, state.lr_reductions, state.using_dual
    if since >= config.lr_patience:
        lr = lr / config.lr_factor
        reductions += 1
        using_dual = True
        since = 0
        log.info("No improvement in %d validations, lr -> %g", config.lr_patience, lr)
    stopped = count >= config.stop_patience
    if stopped:
        log.info("Early stop after %d validations without improvement", count)
    return ScheduleState(
        best_score=state.best_score,
        non_improve_count=count,
        lr_reductions=reductions,
        using_dual=using_dual,
        stopped=stopped,
        since_reduction=since,
        lr=lr,
    )
