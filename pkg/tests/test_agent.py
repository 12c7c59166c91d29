from __future__ import annotations

import numpy as np
import pytest
from conftest import make_task

from specsim.agent import (
    AgentConfig,
    Phase,
    PhaseState,
    SpecOutcome,
    evaluate_and_maybe_transition,
    sample_speculative_actions,
    score_model,
)
from specsim.cost_model import CostModelParams
from specsim.simulation import Mode, Simulation
from specsim.workload import StepSpec, generate_hit_profile, generate_tasks

P = CostModelParams()


def step(p, index=1):
    return StepSpec(index, 250, 8, 8, 512, 1.5, f"s{index}:act", p)


def test_sampling_extremes():
    assert sample_speculative_actions(step(1.0), 3, 1) == ["s1:act"] * 3
    assert "s1:act" not in sample_speculative_actions(step(0.0), 3, 1)


def test_sampling_hit_chance_matches_closed_form():
    trials = 100_000
    hits = sum("s1:act" in sample_speculative_actions(step(0.4), 3, (5, i)) for i in range(trials))
    assert hits / trials == pytest.approx(1 - 0.6**3, abs=0.01)


def test_score_calibration():
    certain = [s for i in range(2000) for s in score_model(["a"] * 3, step(1.0), (3, i))]
    assert np.mean(np.array(certain) < 3) < 0.05
    hopeless = [max(score_model(["a"] * 3, step(0.0), (4, i))) < 3 for i in range(2000)]
    assert np.mean(hopeless) > 0.9
    assert score_model(["a"] * 3, step(0.4), 9) == score_model(["a"] * 3, step(0.4), 9)
    assert all(1 <= s <= 5 for s in certain)


def _outcome(scores):
    return SpecOutcome(("a",) * len(scores), tuple(scores), False)


def test_transition_rule():
    cfg = AgentConfig(beta=3)
    st = evaluate_and_maybe_transition(_outcome([2, 2, 1]), cfg, PhaseState(step_index=2))
    assert st.phase is Phase.VERIFIED and st.transitioned_at_step == 3
    st = evaluate_and_maybe_transition(_outcome([4, 2, 1]), cfg, PhaseState(step_index=2))
    assert st.phase is Phase.AGGRESSIVE and st.transitioned_at_step is None


def test_beta_one_never_transitions():
    cfg = AgentConfig(beta=1)
    for scores in ([1, 1, 1], [5, 1, 2], [1]):
        assert evaluate_and_maybe_transition(_outcome(scores), cfg).phase is Phase.AGGRESSIVE


def test_transition_is_one_way():
    with pytest.raises(ValueError):
        evaluate_and_maybe_transition(_outcome([1, 1, 1]), AgentConfig(), PhaseState(Phase.VERIFIED))


def _run(task, mode, **kw):
    sim = Simulation([task], mode, P, **kw)
    return sim, sim.run()[0]


def test_identical_samples_execute_once():
    sim, rec = _run(make_task([(250, 1.5, 1.0)]), Mode.FULL)
    assert rec.steps[0].phase == "Aggressive"
    assert rec.steps[0].distinct_actions == 1
    assert sim.server.stats.external_calls == 1


def test_two_distinct_samples_run_in_parallel():
    cfg = AgentConfig(wrong_action_pool=2)
    for seed in range(50):
        keys = sample_speculative_actions(step(0.0), 3, (seed, 0, 1, 1), 2)
        if len(set(keys)) == 2:
            break
    task = make_task([(250, 1.5, 0.0)])
    sim, rec = _run(task, Mode.FULL, agent=cfg, seed=seed)
    s1 = rec.steps[0]
    assert s1.distinct_actions == 2
    assert sim.server.stats.external_calls == 2
    slowest = max(sim.action_time(0, 1, k) for k in set(keys))
    assert s1.action == pytest.approx(slowest, abs=1e-9)


def test_aggressive_step_is_cheaper_than_reasoning():
    task = make_task([(250, 1.5, 0.5)])
    _, fast = _run(task, Mode.FULL)
    _, slow = _run(task, Mode.NAIVE)
    assert fast.steps[0].llm < slow.steps[0].llm


def test_immediate_hit_hides_action_time():
    # reasoning takes ~5 s, the correct action only 0.5 s
    _, rec = _run(make_task([(250, 0.5, 1.0)]), Mode.VERIFIED_ONLY)
    s1 = rec.steps[0]
    assert s1.spec_hit and s1.action == 0.0


def test_partial_overlap_leaves_residual_wait():
    probe = make_task([(23, 1.5, 1.0)])
    sim, _ = _run(probe, Mode.VERIFIED_ONLY)
    finish = {rid: t for t, kind, rid, *_ in sim.events if kind == "finish"}
    lead = finish["t0-s1-main"] - finish["t0-s1-spec"]
    assert lead > 0
    # pick the action time so the main path waits exactly 1.2 s
    task = make_task([(23, lead + 1.2, 1.0)])
    _, spec = _run(task, Mode.VERIFIED_ONLY)
    _, naive = _run(task, Mode.NAIVE)
    assert spec.steps[0].action == pytest.approx(1.2, abs=1e-9)
    assert naive.steps[0].action == pytest.approx(lead + 1.2, abs=1e-9)


def test_unlaunched_speculation_degenerates_to_plain_step():
    # zero hit chance means zero expected reduction, so nothing is launched
    task = make_task([(250, 1.5, 0.0), (200, 1.2, 0.0)])
    sim = Simulation([task], Mode.FULL, P)
    sim.agents[0].state = PhaseState(Phase.VERIFIED)
    rec = sim.run()[0]
    _, naive = _run(task, Mode.NAIVE)
    assert not any(s.spec_launched for s in rec.steps)
    assert rec.latency == pytest.approx(naive.latency, abs=1e-9)
    assert rec.other == 0.0


def test_phase_sequence_is_aggressive_then_verified():
    tasks = generate_tasks(300, 5, generate_hit_profile())
    for t in tasks:
        sim = Simulation([t], Mode.FULL, P)
        rec = sim.run()[0]
        hist = [p.value for p in sim.agents[0].phase_history]
        assert hist == sorted(hist)  # "Aggressive" < "Verified"
        if rec.transition_step is not None and rec.transition_step < t.num_steps:
            assert hist.index("Verified") + 1 == rec.transition_step


def test_hits_count_only_verified_steps():
    tasks = generate_tasks(100, 6, generate_hit_profile())
    for t in tasks:
        rec = Simulation([t], Mode.FULL, P).run()[0]
        verified = [s for s in rec.steps if s.phase == "Verified"]
        assert rec.lookups == len(verified)
        assert rec.hits == sum(bool(s.spec_hit) for s in verified)


def test_verified_steps_follow_main_path_context():
    task = make_task([(250, 1.5, 0.2), (250, 1.5, 0.2), (250, 1.5, 0.2)])
    sim = Simulation([task], Mode.VERIFIED_ONLY, P)
    sim.run()
    assert sim.agents[0].context_delta == 0
    submitted = [d for _, kind, rid, _, _, d in sim.events if kind == "submit" and rid.endswith("main")]
    for step, detail in zip(task.steps, submitted):
        assert f"in={step.input_tokens};" in detail


def test_median_transition_step_under_default_profile():
    tasks = generate_tasks(400, 7, generate_hit_profile())
    steps = []
    for t in tasks:
        rec = Simulation([t], Mode.FULL, P).run()[0]
        steps.append(rec.transition_step if rec.transition_step is not None else t.num_steps + 1)
    assert 4 <= np.median(steps) <= 6


def test_agent_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(k=0)
    with pytest.raises(ValueError):
        AgentConfig(beta=6)
