from __future__ import annotations

from specsim.workload import StepSpec, TaskTrace, true_action_key


def make_task(action_steps, final_tokens=250, context=512, observation=300, task_id=0, arrival=0.0, spec_tokens=8):
    """Build a trace from ``(reasoning_tokens, action_seconds, hit_probability)`` per action step."""
    steps = []
    ctx = context
    for i, (reasoning, act, p) in enumerate(action_steps, start=1):
        steps.append(StepSpec(i, reasoning, spec_tokens, 8, ctx, act, true_action_key(i), p))
        ctx += reasoning + observation
    n = len(steps) + 1
    steps.append(StepSpec(n, final_tokens, spec_tokens, 8, ctx, 0.0, "", 0.11))
    return TaskTrace(task_id, tuple(steps), arrival)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import ACCEPTANCE_KEY

    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
