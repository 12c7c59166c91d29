from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsim.agent import sample_speculative_actions
from specsim.workload import (
    HitProfile,
    ParameterError,
    StepSpec,
    TaskShapeConfig,
    TaskTrace,
    generate_arrivals,
    generate_hit_profile,
    generate_task,
    generate_tasks,
)


def _geometric_mean(first, floor, rho, n):
    return np.mean([max(floor, first * rho**j) for j in range(n)])


def test_default_profile_anchors():
    prof = generate_hit_profile(0.734, 0.11, 0.40, 6)
    assert prof.p(1) == pytest.approx(0.734)
    assert 0.39 <= prof.mean <= 0.41
    # beyond the listed steps the profile sits on its floor
    assert prof.p(7) == pytest.approx(0.11)
    assert prof.p(40) == pytest.approx(0.11)
    # independent oracle: the fitted decay reproduces the target mean
    assert _geometric_mean(0.734, 0.11, prof.decay, 6) == pytest.approx(0.40, abs=1e-9)


def test_constant_profile_when_floor_equals_first():
    prof = generate_hit_profile(0.5, 0.5, 0.5, 4)
    assert prof.per_step_probability == pytest.approx((0.5, 0.5, 0.5, 0.5))


def test_no_decay_when_mean_equals_first():
    prof = generate_hit_profile(1.0, 0.0, 1.0, 3)
    assert prof.per_step_probability == pytest.approx((1.0, 1.0, 1.0))
    assert prof.decay == pytest.approx(1.0)


@pytest.mark.parametrize(
    "args",
    [(1.2, 0.1, 0.4, 6), (0.7, 0.1, 0.9, 6), (0.7, 0.1, 0.05, 6), (0.7, 0.1, 0.4, 0)],
)
def test_bad_profile_arguments(args):
    with pytest.raises(ParameterError):
        generate_hit_profile(*args)


@given(
    first=st.floats(0.05, 1.0),
    floor_frac=st.floats(0.0, 1.0),
    mean_frac=st.floats(0.01, 0.99),
    n=st.integers(2, 12),
)
@settings(max_examples=150, deadline=None)
def test_profile_monotone_and_in_range(first, floor_frac, mean_frac, n):
    floor = first * floor_frac
    lo = (first + (n - 1) * floor) / n  # steepest decay still keeps step 1 at `first`
    mean = lo + (first - lo) * mean_frac
    try:
        prof = generate_hit_profile(first, floor, mean, n)
    except ParameterError:
        return
    ps = np.array(prof.per_step_probability)
    assert np.all((ps >= 0) & (ps <= 1))
    assert np.all(np.diff(ps) <= 1e-12)
    assert prof.mean == pytest.approx(mean, abs=1e-6)


def test_generate_task_is_deterministic():
    prof = generate_hit_profile()
    assert generate_task(1, prof) == generate_task(1, prof)
    assert generate_task(1, prof) != generate_task(2, prof)


def test_task_shape_invariants():
    prof = generate_hit_profile()
    shape = TaskShapeConfig()
    for seed in range(300):
        task = generate_task(seed, prof, shape)
        assert shape.min_steps <= task.num_steps <= shape.max_steps
        assert task.steps[-1].terminal
        for prev, step in zip(task.steps, task.steps[1:]):
            # context grows by the previous output plus one observation
            assert step.input_tokens == prev.input_tokens + prev.reasoning_output_tokens + shape.observation_tokens
        for step in task.steps[:-1]:
            assert step.speculative_output_tokens < step.reasoning_output_tokens
            assert step.action_exec_time > 0
            assert step.hit_probability == pytest.approx(prof.p(step.index))


def test_action_time_and_spec_length_over_many_tasks():
    tasks = generate_tasks(10_000, 3, generate_hit_profile())
    acts = [s.action_exec_time for t in tasks for s in t.steps if not s.terminal]
    spec = [s.speculative_output_tokens for t in tasks for s in t.steps]
    assert 1.4 <= np.mean(acts) <= 1.6
    assert max(spec) <= 10
    assert min(spec) >= 4


def test_arrivals_mean_gap():
    arr = generate_arrivals(2.0, 10_000, 7)
    gaps = np.diff(np.concatenate([[0.0], arr.arrivals]))
    assert 0.49 <= gaps.mean() <= 0.51
    assert np.all(gaps >= 0)


def test_single_arrival_is_first_exponential_draw():
    arr = generate_arrivals(1.0, 1, 5)
    expected = np.random.default_rng(5).exponential(1.0, size=1)[0]
    assert len(arr.arrivals) == 1
    assert arr.arrivals[0] == pytest.approx(expected)


def test_arrivals_deterministic():
    a, b = generate_arrivals(1.5, 50, 9), generate_arrivals(1.5, 50, 9)
    assert np.array_equal(a.arrivals, b.arrivals)


def test_arrivals_reject_bad_rate():
    with pytest.raises(ParameterError):
        generate_arrivals(0.0, 5, 1)


def test_empirical_hit_rate_at_step_one():
    prof = generate_hit_profile()
    step = StepSpec(1, 250, 8, 8, 512, 1.5, "s1:act", prof.p(1))
    draws = [sample_speculative_actions(step, 1, (11, i))[0] == "s1:act" for i in range(20_000)]
    assert np.mean(draws) == pytest.approx(prof.p(1), abs=0.02)


def test_trace_rejects_misplaced_terminal():
    final = StepSpec(1, 100, 5, 8, 512, 0.0, "", 0.5)
    act = StepSpec(2, 100, 5, 8, 900, 1.0, "s2:act", 0.5)
    with pytest.raises(ParameterError):
        TaskTrace(0, (final, act))
    with pytest.raises(ParameterError):
        TaskTrace(0, ())


def test_hit_profile_type():
    prof = HitProfile((0.5, 0.4), 0.1, 0.8)
    assert prof.p(3) == 0.1
