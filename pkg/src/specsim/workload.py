"""Synthetic agent-task traces and Poisson arrival schedules.

Every generator here is a pure function of ``(seed, config)``. Generated
objects are frozen dataclasses and may be shared freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq


class ParameterError(ValueError):
    """Raised for infeasible or out-of-range generator parameters."""


@dataclass(frozen=True)
class HitProfile:
    """Per-step probability that a single speculative sample hits the true action.

    ``per_step_probability[0]`` is step 1. Steps past the listed ones use
    ``floor_probability``.
    """

    per_step_probability: tuple[float, ...]
    floor_probability: float
    decay: float = 1.0

    def __post_init__(self) -> None:
        probs = (*self.per_step_probability, self.floor_probability)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ParameterError(f"probabilities must lie in [0, 1]: {probs}")

    def p(self, step: int) -> float:
        if step < 1:
            raise ParameterError(f"steps are 1-based, got {step}")
        if step <= len(self.per_step_probability):
            return self.per_step_probability[step - 1]
        return self.floor_probability

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_step_probability))


def _geometric_profile(first: float, floor: float, rho: float, max_steps: int) -> np.ndarray:
    steps = np.arange(max_steps)
    return np.maximum(floor, first * rho**steps)


def generate_hit_profile(
    first: float = 0.734,
    floor: float = 0.11,
    mean_target: float = 0.40,
    max_steps: int = 6,
) -> HitProfile:
    """Fit a geometric-decay-with-floor profile whose mean equals ``mean_target``.

    ``p(step) = max(floor, first * rho**(step - 1))`` with ``rho`` in (0, 1]
    found by root finding on the mean over ``max_steps`` steps.
    """
    if max_steps < 1:
        raise ParameterError("max_steps must be >= 1")
    if not 0.0 <= floor <= mean_target <= first <= 1.0:
        raise ParameterError(
            f"need 0 <= floor <= mean <= first <= 1, got floor={floor}, mean={mean_target}, first={first}"
        )

    def gap(rho: float) -> float:
        return float(_geometric_profile(first, floor, rho, max_steps).mean()) - mean_target

    tol = 1e-12
    if abs(gap(1.0)) <= tol:
        rho = 1.0
    else:
        lo = 1e-12
        if gap(lo) > tol or gap(1.0) < -tol:
            raise ParameterError(
                f"no decay rate in (0, 1] reaches mean {mean_target} over {max_steps} steps"
            )
        if abs(gap(lo)) <= tol:
            rho = lo
        else:
            rho = brentq(gap, lo, 1.0, xtol=1e-14)
    probs = _geometric_profile(first, floor, rho, max_steps)
    return HitProfile(tuple(float(p) for p in probs), float(floor), float(rho))


@dataclass(frozen=True)
class TaskShapeConfig:
    """Distributions used to draw a task trace.

    Step count is uniform on ``[min_steps, max_steps]``. Reasoning lengths
    are lognormal with mean ``reasoning_mean_tokens``; speculative lengths
    are uniform integers on ``[spec_min_tokens, spec_max_tokens]``; action
    times are gamma distributed with mean ``action_mean_s``.
    """

    min_steps: int = 5
    max_steps: int = 12
    reasoning_mean_tokens: float = 250.0
    reasoning_sigma: float = 0.5
    reasoning_min_tokens: int = 16
    spec_min_tokens: int = 4
    spec_max_tokens: int = 10
    evaluation_tokens: int = 8
    action_mean_s: float = 1.5
    action_shape: float = 4.0
    initial_context_tokens: int = 512
    observation_tokens: int = 300

    def __post_init__(self) -> None:
        if not 1 <= self.min_steps <= self.max_steps:
            raise ParameterError("need 1 <= min_steps <= max_steps")
        if not 1 <= self.spec_min_tokens <= self.spec_max_tokens:
            raise ParameterError("need 1 <= spec_min_tokens <= spec_max_tokens")
        if self.reasoning_min_tokens <= self.spec_max_tokens:
            raise ParameterError("reasoning_min_tokens must exceed spec_max_tokens")
        if self.action_mean_s <= 0 or self.action_shape <= 0:
            raise ParameterError("action time distribution must be positive")
        if self.reasoning_mean_tokens <= 0 or self.reasoning_sigma < 0:
            raise ParameterError("bad reasoning length distribution")

    @property
    def spec_mean_tokens(self) -> float:
        return (self.spec_min_tokens + self.spec_max_tokens) / 2


@dataclass(frozen=True)
class StepSpec:
    index: int
    reasoning_output_tokens: int
    speculative_output_tokens: int
    evaluation_output_tokens: int
    input_tokens: int
    action_exec_time: float
    true_action_key: str
    hit_probability: float

    @property
    def terminal(self) -> bool:
        return self.true_action_key == ""


@dataclass(frozen=True)
class TaskTrace:
    task_id: int
    steps: tuple[StepSpec, ...]
    arrival_time: float = 0.0

    def __post_init__(self) -> None:
        if not self.steps:
            raise ParameterError("a task needs at least one step")
        if not self.steps[-1].terminal or any(s.terminal for s in self.steps[:-1]):
            raise ParameterError("only the final step may be terminal")
        if self.arrival_time < 0:
            raise ParameterError("arrival_time must be >= 0")

    @property
    def num_steps(self) -> int:
        return len(self.steps)


def true_action_key(step: int) -> str:
    return f"s{step}:act"


def generate_task(
    seed: int | tuple[int, ...],
    profile: HitProfile,
    shape: TaskShapeConfig | None = None,
    task_id: int = 0,
    arrival_time: float = 0.0,
) -> TaskTrace:
    shape = shape or TaskShapeConfig()
    rng = np.random.default_rng(seed)
    n = int(rng.integers(shape.min_steps, shape.max_steps + 1))
    mu = np.log(shape.reasoning_mean_tokens) - shape.reasoning_sigma**2 / 2
    reasoning = rng.lognormal(mu, shape.reasoning_sigma, size=n)
    spec = rng.integers(shape.spec_min_tokens, shape.spec_max_tokens + 1, size=n)
    action = rng.gamma(shape.action_shape, shape.action_mean_s / shape.action_shape, size=n)

    steps = []
    context = shape.initial_context_tokens
    for i in range(n):
        step = i + 1
        terminal = step == n
        r_tokens = max(shape.reasoning_min_tokens, int(round(reasoning[i])))
        steps.append(
            StepSpec(
                index=step,
                reasoning_output_tokens=r_tokens,
                speculative_output_tokens=int(spec[i]),
                evaluation_output_tokens=shape.evaluation_tokens,
                input_tokens=context,
                action_exec_time=0.0 if terminal else float(action[i]),
                true_action_key="" if terminal else true_action_key(step),
                hit_probability=profile.p(step),
            )
        )
        context += r_tokens + shape.observation_tokens
    return TaskTrace(task_id=task_id, steps=tuple(steps), arrival_time=arrival_time)


@dataclass(frozen=True)
class ArrivalSchedule:
    rate: float
    seed: int
    arrivals: tuple[float, ...] = field(repr=False)


def generate_arrivals(rate: float, count: int, seed: int) -> ArrivalSchedule:
    """Poisson arrivals: cumulative sums of i.i.d. exponential gaps."""
    if rate <= 0:
        raise ParameterError("rate must be > 0")
    if count <= 0:
        raise ParameterError("count must be > 0")
    gaps = np.random.default_rng(seed).exponential(1.0 / rate, size=count)
    return ArrivalSchedule(rate, seed, tuple(float(t) for t in np.cumsum(gaps)))


def generate_tasks(
    count: int,
    seed: int,
    profile: HitProfile,
    shape: TaskShapeConfig | None = None,
    arrivals: ArrivalSchedule | None = None,
) -> list[TaskTrace]:
    times = arrivals.arrivals if arrivals is not None else (0.0,) * count
    return [
        generate_task((seed, i), profile, shape, task_id=i, arrival_time=times[i])
        for i in range(count)
    ]
