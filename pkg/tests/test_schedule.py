import math

import pytest

from lesionnet.core_types import InvalidInputError
from lesionnet.helpers.run_config import TrainConfig
from lesionnet.training.schedule import ScheduleState, initial_schedule, schedule_update


def run(scores, config=None, state=None):
    config = config or TrainConfig()
    state = state or initial_schedule(config)
    trace = []
    for score in scores:
        state = schedule_update(state, score, config)
        trace.append(state)
    return trace


def test_initial_state():
    state = initial_schedule(TrainConfig(lr0=0.01))
    assert state.best_score == -math.inf
    assert state.lr == 0.01
    assert not state.using_dual and not state.stopped


def test_one_reduction_after_four_flat_scores():
    start = ScheduleState(best_score=0.5, lr=0.001)
    trace = run([0.5] * 5, state=start)
    assert [s.lr_reductions for s in trace] == [0, 0, 0, 1, 1]
    assert trace[3].lr == pytest.approx(1e-4)
    assert trace[-1].using_dual
    assert not trace[2].using_dual


def test_strictly_increasing_scores_never_reduce_or_stop():
    trace = run([0.1 * i for i in range(1, 30)])
    assert all(s.lr_reductions == 0 and not s.stopped for s in trace)
    assert trace[-1].best_score == pytest.approx(2.9)
    assert trace[-1].lr == 0.001


def test_improvement_trace_with_fourteen_plateau_validations():
    trace = run([0.7] + [0.6] * 14)
    counts = [s.non_improve_count for s in trace]
    reductions_at = [counts[i] for i in range(1, len(trace)) if trace[i].lr_reductions > trace[i - 1].lr_reductions]
    assert reductions_at == [4, 8]
    switch = next(i for i, s in enumerate(trace) if s.using_dual)
    assert counts[switch] == 4
    stop = next(i for i, s in enumerate(trace) if s.stopped)
    assert counts[stop] == 10
    # stopped is terminal
    assert all(s == trace[stop] for s in trace[stop:])
    assert trace[-1].lr == pytest.approx(1e-5)


def test_equal_score_is_not_an_improvement():
    trace = run([0.5, 0.5])
    assert trace[1].non_improve_count == 1
    assert trace[1].best_score == 0.5


def test_improvement_resets_the_counters():
    trace = run([0.5, 0.4, 0.4, 0.4, 0.6, 0.4, 0.4, 0.4])
    assert all(s.lr_reductions == 0 for s in trace)
    assert trace[-1].non_improve_count == 3


def test_lr_monotone_and_dual_never_reverts():
    trace = run([0.3, 0.2, 0.2, 0.2, 0.2, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])
    lrs = [s.lr for s in trace]
    assert lrs == sorted(lrs, reverse=True)
    first = next(i for i, s in enumerate(trace) if s.using_dual)
    assert all(s.using_dual for s in trace[first:])


def test_custom_patience_and_factor():
    config = TrainConfig(lr_patience=2, stop_patience=3, lr_factor=2.0, lr0=1.0)
    trace = run([1.0, 0.0, 0.0, 0.0], config)
    assert trace[2].lr == 0.5
    assert trace[3].stopped


@pytest.mark.parametrize("score", [math.nan, math.inf])
def test_non_finite_score(score):
    with pytest.raises(InvalidInputError):
        schedule_update(initial_schedule(TrainConfig()), score, TrainConfig())
