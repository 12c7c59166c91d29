from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specsim.cost_model import EMPTY, CostModelParams, decode_overhead, hybrid_batch_time
from specsim.engine import LoadSnapshot
from specsim.scheduler import (
    SchedulerConfig,
    SpecCandidate,
    SpeculationQueue,
    UndefinedLoadError,
    compare_priority,
    expected_reduction,
    net_gain,
    priority_sort_key,
    select_step,
)

WORKED = CostModelParams(0.020, 0.0001, 64, 0.2, 0.002, 0.00005)


def cand(task=0, step=1, t=0.0, p=0.4, t_act=1.5, L_s=512, l_s=8.0, wait=0.0):
    return SpecCandidate(task, step, t, p, t_act, L_s, l_s, wait)


def test_expected_reduction_examples():
    assert expected_reduction([cand()], 1, 1, 3) == pytest.approx(0.588, rel=1e-9)
    assert expected_reduction([], 1, 1, 3) == 0.0
    assert expected_reduction([cand(p=1.0)], 1, 0, 1) == pytest.approx(1.5, rel=1e-12)
    with pytest.raises(UndefinedLoadError):
        expected_reduction([cand()], 0, 0, 3)


def test_net_gain_composition():
    g = net_gain([cand()], LoadSnapshot(16, 2, 14, 0), WORKED, 3)
    assert g.reduction == pytest.approx(0.588, rel=1e-9)
    assert g.decode_overhead == pytest.approx(0.0024, rel=1e-9)
    assert g.prefill_overhead == pytest.approx(0.0276, rel=1e-9)
    assert g.net == pytest.approx(0.558, rel=1e-9)
    empty = net_gain([], LoadSnapshot(16, 2, 14, 0), WORKED, 3)
    assert (empty.reduction, empty.decode_overhead, empty.prefill_overhead, empty.net) == (0, 0, 0, 0)


def test_decode_overhead_charged_matches_cost_model():
    load = LoadSnapshot(100, 60, 30, 10)
    S = [cand(task=i) for i in range(4)]
    g = net_gain(S, load, WORKED, 3)
    expected = 8.0 * (hybrid_batch_time(EMPTY, 100 + 12, WORKED) - hybrid_batch_time(EMPTY, 100, WORKED))
    assert g.decode_overhead == expected
    assert g.decode_overhead == decode_overhead(4, 3, 100, 8.0, WORKED)


def test_priority_examples():
    assert compare_priority(cand(step=1, t=5), cand(step=4, t=1)) < 0
    assert compare_priority(cand(step=2, t=9), cand(step=2, t=3)) < 0
    assert compare_priority(cand(task=1, step=2, t=3), cand(task=4, step=2, t=3)) < 0


candidates = st.builds(
    cand,
    task=st.integers(0, 5),
    step=st.integers(1, 6),
    t=st.sampled_from([0.0, 0.5, 1.0, 2.0]),
)


@given(candidates, candidates, candidates)
def test_priority_is_a_strict_total_order(a, b, c):
    assert compare_priority(a, a) == 0
    assert compare_priority(a, b) == -compare_priority(b, a)
    if compare_priority(a, b) < 0 and compare_priority(b, c) < 0:
        assert compare_priority(a, c) < 0
    same = (a.step_index, a.enqueue_time, a.task_id) == (b.step_index, b.enqueue_time, b.task_id)
    assert (compare_priority(a, b) == 0) == same


def test_two_cheap_candidates_both_selected():
    q = SpeculationQueue([cand(task=0), cand(task=1)])
    res = select_step(q, LoadSnapshot(16, 2, 14, 0), WORKED, SchedulerConfig(t_w=10.0))
    assert len(res.selected) == 2 and len(q) == 0
    assert res.breakdown.net > 0


def test_zero_probability_candidate_stops_selection():
    q = SpeculationQueue([cand(task=0, p=0.0), cand(task=1, step=2)])
    res = select_step(q, LoadSnapshot(16, 2, 14, 0), WORKED, SchedulerConfig(t_w=10.0))
    assert res.selected == []
    assert res.returned.task_id == 0
    assert len(q) == 2  # the break candidate goes back


def test_expired_candidate_dropped_next_one_evaluated():
    old = cand(task=0, t=0.0)
    fresh = cand(task=1, step=2, t=9.5)
    q = SpeculationQueue([old, fresh])
    res = select_step(q, LoadSnapshot(16, 2, 14, 0), WORKED, SchedulerConfig(t_w=1.0), now=10.0)
    assert res.expired == [old]
    assert res.selected == [fresh]


def test_overloaded_engine_selects_nothing():
    harsh = CostModelParams(0.02, 0.01, 4, 10.0, 0.002, 0.00005)
    load = LoadSnapshot(400, 200, 100, 100)
    q = SpeculationQueue([cand(task=i, p=1.0) for i in range(5)])
    res = select_step(q, load, harsh, SchedulerConfig(t_w=10.0))
    assert res.selected == []
    for n in range(1, 6):
        assert net_gain([cand(task=i, p=1.0) for i in range(n)], load, harsh, 3).net < 0


def test_default_wait_limit_scales_with_load():
    cfg = SchedulerConfig()
    c = cand()
    assert cfg.wait_limit(c, 10, WORKED) == pytest.approx(2 * hybrid_batch_time(EMPTY, 10, WORKED) * 8)
    assert cfg.wait_limit(c, 200, WORKED) > cfg.wait_limit(c, 10, WORKED)


def test_discarded_candidates_never_pop():
    a, b = cand(task=0), cand(task=1)
    q = SpeculationQueue([a, b])
    q.discard(a)
    assert len(q) == 1
    assert q.ordered() == [b]
    assert q.pop() is b


def _oracle_net(S, load, params, k):
    """Direct evaluation of the objective, independent of ``net_gain``."""
    if not S:
        return 0.0
    red = sum(c.t_act * (1 - (1 - c.estimated_hit_probability) ** k) for c in S) / (load.n_main + load.n_aggressive)

    def t_h(prefill_lengths, n):
        d = params.decode_cost_per_request
        knee = params.decode_knee
        dec = d * min(n, knee) + d * (1 + params.decode_slowdown) * max(0, n - knee)
        pre = sum(params.prefill_fixed_cost + params.prefill_cost_per_token * L for L in prefill_lengths)
        return params.base_step_time + dec + pre

    l_s = sum(c.l_s for c in S) / len(S)
    dec = l_s * (t_h([], load.n + k * len(S)) - t_h([], load.n))
    pre = t_h([c.L_s for c in S], load.n) - t_h([], load.n)
    return red - dec - pre


queue_strategy = st.lists(
    st.builds(
        cand,
        task=st.integers(0, 50),
        step=st.integers(1, 8),
        t=st.floats(0, 5),
        p=st.floats(0, 1),
        t_act=st.floats(0.1, 3.0),
        L_s=st.integers(64, 6000),
        l_s=st.floats(4, 10),
        wait=st.floats(0, 2),
    ),
    max_size=10,
)
load_strategy = st.builds(
    lambda m, s, a: LoadSnapshot(m + s + a, m, s, a),
    st.integers(1, 16),
    st.integers(0, 200),
    st.integers(0, 8),
)
params_strategy = st.builds(
    CostModelParams,
    base_step_time=st.floats(0.005, 0.05),
    decode_cost_per_request=st.floats(0, 0.001),
    decode_knee=st.integers(1, 128),
    decode_slowdown=st.floats(0, 3),
    prefill_fixed_cost=st.floats(0, 0.01),
    prefill_cost_per_token=st.floats(0, 0.00005),
)


@given(queue_strategy, load_strategy, params_strategy, st.integers(1, 5), st.floats(0.2, 2.5))
@settings(max_examples=300, deadline=None)
def test_selection_is_greedy_prefix_optimal(queue, load, params, k, t_w):
    q = SpeculationQueue(queue)
    res = select_step(q, load, params, SchedulerConfig(k=k, t_w=t_w))
    order = [c for c in sorted(queue, key=priority_sort_key) if c.wait_time <= t_w]
    S = res.selected
    assert all(c.wait_time <= t_w for c in S)
    assert S == order[: len(S)]
    nets = [_oracle_net(order[:j], load, params, k) for j in range(len(S) + 1)]
    for j in range(len(S)):
        assert nets[len(S)] > nets[j] - 1e-12
    if len(S) < len(order):
        assert _oracle_net(order[: len(S) + 1], load, params, k) <= nets[len(S)] + 1e-12
    assert res.breakdown.net == pytest.approx(nets[len(S)], rel=1e-9, abs=1e-12)


def test_selected_count_non_increasing_in_load():
    params = CostModelParams(0.02, 0.0004, 64, 1.0, 0.002, 0.00002)
    sizes = []
    for n in range(8, 400, 8):
        q = SpeculationQueue([cand(task=i, L_s=2048) for i in range(10)])
        load = LoadSnapshot(n, n // 2, n - n // 2, 0)
        sizes.append(len(select_step(q, load, params, SchedulerConfig(t_w=10.0)).selected))
    assert all(a >= b for a, b in itertools.pairwise(sizes))
    assert sizes[0] > sizes[-1]
