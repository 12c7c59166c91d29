"""Per-task agent: aggressive and verified speculation phases.

The pure pieces (sampling, scoring, the phase rule) are module functions.
:class:`TaskAgent` is the event-driven state machine that strings them
together inside a :class:`specsim.simulation.Simulation`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .action_server import ActionKey, LookupKind
from .engine import InferenceRequest, RequestKind
from .scheduler import SpecCandidate
from .workload import StepSpec, TaskTrace

if TYPE_CHECKING:
    from .simulation import Simulation


class Phase(enum.Enum):
    AGGRESSIVE = "Aggressive"
    VERIFIED = "Verified"


class Speculation(enum.Enum):
    """How verified-phase speculation is launched."""

    NONE = "none"
    IMMEDIATE = "immediate"
    SCHEDULED = "scheduled"


# RNG stream ids, combined with (seed, task, step)
SAMPLE_STREAM = 1
SCORE_STREAM = 2
ACTION_STREAM = 3


@dataclass(frozen=True)
class AgentConfig:
    k: int = 3
    beta: int = 3
    evaluation_enabled: bool = True
    serialize_evaluation: bool = False
    append_all_observations: bool = True
    wrong_action_pool: int = 3

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 1 <= self.beta <= 5:
            raise ValueError("beta must lie in [1, 5]")
        if self.wrong_action_pool < 1:
            raise ValueError("wrong_action_pool must be >= 1")


@dataclass
class PhaseState:
    phase: Phase = Phase.AGGRESSIVE
    step_index: int = 1
    transitioned_at_step: int | None = None


@dataclass(frozen=True)
class SpecOutcome:
    sampled_keys: tuple[ActionKey, ...]
    scores: tuple[int, ...]
    hit: bool


def wrong_action_key(step: int, j: int) -> str:
    return f"s{step}:alt{j}"


def sample_speculative_actions(
    step: StepSpec, k: int, seed: int | Sequence[int], wrong_action_pool: int = 3
) -> list[ActionKey]:
    """Draw ``k`` speculative actions; each hits independently with ``step.hit_probability``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    hits = rng.random(k) < step.hit_probability
    wrong = rng.integers(0, wrong_action_pool, size=k)
    return [
        ActionKey(step.true_action_key if hit else wrong_action_key(step.index, int(j)))
        for hit, j in zip(hits, wrong)
    ]


# Scores are 1 + Binomial(4, theta) with theta logistic in the hit
# probability. The constants put the median first verified step (beta=3,
# k=3) of the default hit profile at step 5, the first step with p < 0.3.
SCORE_CENTER = 0.44
SCORE_SLOPE = 12.0


def score_success(p: float) -> float:
    return 1.0 / (1.0 + math.exp(-SCORE_SLOPE * (p - SCORE_CENTER)))


def score_model(sampled_keys: Sequence[ActionKey], step: StepSpec, seed: int | Sequence[int]) -> list[int]:
    rng = np.random.default_rng(seed)
    theta = score_success(step.hit_probability)
    return [int(s) for s in 1 + rng.binomial(4, theta, size=len(sampled_keys))]


def evaluate_and_maybe_transition(
    outcome: SpecOutcome, config: AgentConfig, state: PhaseState | None = None
) -> PhaseState:
    """Switch to the verified phase (from the next step) when every score is below beta."""
    state = state or PhaseState()
    if state.phase is not Phase.AGGRESSIVE:
        raise ValueError("transition is only evaluated in the aggressive phase")
    if not outcome.scores:
        raise ValueError("outcome carries no scores")
    if max(outcome.scores) < config.beta:
        return PhaseState(Phase.VERIFIED, state.step_index + 1, state.step_index + 1)
    return PhaseState(Phase.AGGRESSIVE, state.step_index + 1, None)


@dataclass
class StepRecord:
    step: int
    phase: str
    start: float
    end: float = math.nan
    llm: float = 0.0
    action: float = 0.0
    other: float = 0.0
    spec_launched: bool = False
    spec_hit: bool | None = None
    distinct_actions: int = 0
    scores: tuple[int, ...] = ()

    @property
    def total(self) -> float:
        return self.end - self.start


@dataclass
class TaskRecord:
    task_id: int
    arrival: float
    completion: float = math.nan
    steps: list[StepRecord] = field(default_factory=list)
    transition_step: int | None = None
    footprint_bytes: int = 0
    hits: int = 0
    lookups: int = 0

    @property
    def latency(self) -> float:
        return self.completion - self.arrival

    @property
    def llm(self) -> float:
        return sum(s.llm for s in self.steps)

    @property
    def action(self) -> float:
        return sum(s.action for s in self.steps)

    @property
    def other(self) -> float:
        return sum(s.other for s in self.steps)


class TaskAgent:
    """Drives one task trace step by step.

    ``aggressive`` enables the early phase; ``speculation`` controls the
    verified phase (``NONE`` reproduces the plain reason-then-act loop).
    """

    def __init__(
        self,
        sim: Simulation,
        trace: TaskTrace,
        config: AgentConfig,
        aggressive: bool,
        speculation: Speculation,
        observation_tokens: int,
        l_s_estimate: float,
        t_act_estimate: float,
    ):
        self.sim = sim
        self.trace = trace
        self.config = config
        self.speculation = speculation
        self.observation_tokens = observation_tokens
        self.l_s_estimate = l_s_estimate
        self.t_act_estimate = t_act_estimate
        self.state = PhaseState(Phase.AGGRESSIVE if aggressive else Phase.VERIFIED)
        self.aggressive_enabled = aggressive
        self.record = TaskRecord(trace.task_id, trace.arrival_time)
        self.context_delta = 0
        self.phase_history: list[Phase] = []
        # per-step scratch
        self._step: StepSpec | None = None
        self._rec: StepRecord | None = None
        self._pending = 0
        self._mark = 0.0
        self._resolved = False
        self._candidate: SpecCandidate | None = None
        self._actions_ready = 0.0
        self._score_done = 0.0

    @property
    def task_id(self) -> int:
        return self.trace.task_id

    def _seed(self, step: int, stream: int) -> tuple[int, ...]:
        return (self.sim.seed, self.task_id, step, stream)

    def _request(self, kind: RequestKind, output: int, sequences: int = 1, aggressive: bool = False) -> InferenceRequest:
        step = self._step
        return InferenceRequest(
            request_id=f"t{self.task_id}-s{step.index}-{kind.name.lower()}",
            kind=kind,
            task_id=self.task_id,
            step_index=step.index,
            input_tokens=step.input_tokens + self.context_delta,
            output_tokens=output,
            sequences=sequences,
            aggressive=aggressive,
        )

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        self.sim.log("task_arrive", "", self.task_id, 0, f"steps={self.trace.num_steps}")
        self._begin_step(0)

    def _begin_step(self, i: int) -> None:
        now = self.sim.now
        step = self.trace.steps[i]
        self._step = step
        self.state.step_index = step.index
        if step.terminal:
            label = "Final"
        elif self.speculation is Speculation.NONE and not self.aggressive_enabled:
            label = "Naive"
        else:
            label = self.state.phase.value
        if not step.terminal and label != "Naive":
            self.phase_history.append(self.state.phase)
        self._rec = StepRecord(step.index, label, now)
        self._mark = now
        self._resolved = False
        self._candidate = None
        self.sim.log("step_start", "", self.task_id, step.index, label)
        if step.terminal or label == "Naive":
            self._submit_main()
        elif self.state.phase is Phase.AGGRESSIVE:
            self._aggressive_step()
        else:
            self._verified_step()

    def _end_step(self) -> None:
        now = self.sim.now
        rec = self._rec
        rec.end = now
        self.record.steps.append(rec)
        self.sim.log("step_end", "", self.task_id, rec.step, f"llm={rec.llm:.6f};action={rec.action:.6f};other={rec.other:.6f}")
        i = rec.step
        if i == self.trace.num_steps:
            self._finish()
        else:
            self._begin_step(i)

    def _finish(self) -> None:
        now = self.sim.now
        self.record.completion = now
        self.record.transition_step = self.state.transitioned_at_step
        self.record.footprint_bytes = self.sim.server.buffer_footprint(self.task_id)
        self.sim.server.drop_scope(self.task_id)
        self.sim.log("task_complete", "", self.task_id, self.trace.num_steps, f"latency={self.record.latency:.6f}")

    # -- plain reasoning (naive steps and the terminal step) ---------------

    def _submit_main(self) -> None:
        req = self._request(RequestKind.MAIN, self._step.reasoning_output_tokens)
        self.sim.submit(req, self._on_main_done)

    def _on_main_done(self, req: InferenceRequest) -> None:
        now = self.sim.now
        rec, step = self._rec, self._step
        rec.llm = now - rec.start
        if step.terminal:
            self._end_step()
            return
        if rec.phase == Phase.VERIFIED.value:
            self._resolve_verified(now)
            return
        handle = self.sim.execute(step.true_action_key, req.request_id, self.task_id, step.index)
        self.sim.at(handle.ready_time, self._on_naive_action_done)

    def _on_naive_action_done(self) -> None:
        rec = self._rec
        rec.action = self.sim.now - rec.start - rec.llm
        self._end_step()

    # -- aggressive phase ---------------------------------------------------

    def _aggressive_step(self) -> None:
        step = self._step
        req = self._request(RequestKind.SPEC, step.speculative_output_tokens, self.config.k, aggressive=True)
        self.sim.submit(req, self._on_aggressive_sampled)

    def _on_aggressive_sampled(self, req: InferenceRequest) -> None:
        now = self.sim.now
        rec, step = self._rec, self._step
        rec.llm = now - rec.start
        keys = sample_speculative_actions(step, self.config.k, self._seed(step.index, SAMPLE_STREAM), self.config.wrong_action_pool)
        self._sampled = keys
        self._pending = 0
        self._actions_ready = now
        self._score_done = now
        if self.config.evaluation_enabled:
            self._pending += 1
            score = self._request(RequestKind.SCORE, step.evaluation_output_tokens, aggressive=True)
            self.sim.submit(score, self._on_score_done)
        if not (self.config.evaluation_enabled and self.config.serialize_evaluation):
            self._launch_aggressive_actions(req.request_id)

    def _launch_aggressive_actions(self, requester: str) -> None:
        step, rec = self._step, self._rec
        distinct = list(dict.fromkeys(self._sampled))
        rec.distinct_actions = len(distinct)
        rec.spec_hit = step.true_action_key in distinct
        ready = self.sim.now
        for key in distinct:
            handle = self.sim.execute(key, requester, self.task_id, step.index)
            ready = max(ready, handle.ready_time)
        self._actions_ready = ready
        self._pending += 1
        self.sim.at(ready, self._on_aggressive_part_done)

    def _on_score_done(self, req: InferenceRequest) -> None:
        self._score_done = self.sim.now
        if self.config.serialize_evaluation:
            self._pending -= 1
            self._launch_aggressive_actions(req.request_id)
        else:
            self._on_aggressive_part_done()

    def _on_aggressive_part_done(self) -> None:
        self._pending -= 1
        if self._pending > 0:
            return
        rec, step = self._rec, self._step
        sampled_at = rec.start + rec.llm
        if self.config.serialize_evaluation:
            rec.other = self._score_done - sampled_at
            rec.action = self._actions_ready - self._score_done
        else:
            rec.action = self._actions_ready - sampled_at
            rec.other = max(0.0, self._score_done - self._actions_ready)
        n_obs = rec.distinct_actions if self.config.append_all_observations else 1
        self.context_delta += (
            step.speculative_output_tokens
            + n_obs * self.observation_tokens
            - step.reasoning_output_tokens
            - self.observation_tokens
        )
        if self.config.evaluation_enabled:
            scores = score_model(self._sampled, step, self._seed(step.index, SCORE_STREAM))
            rec.scores = tuple(scores)
            outcome = SpecOutcome(tuple(self._sampled), tuple(scores), bool(rec.spec_hit))
            new = evaluate_and_maybe_transition(outcome, self.config, self.state)
            if new.phase is Phase.VERIFIED:
                self.state = new
                self.sim.log("phase_transition", "", self.task_id, step.index, f"scores={list(scores)}")
        self._end_step()

    # -- verified phase -----------------------------------------------------

    def _verified_step(self) -> None:
        step = self._step
        self._submit_main()
        if self.speculation is Speculation.NONE:
            return
        cand = SpecCandidate(
            task_id=self.task_id,
            step_index=step.index,
            enqueue_time=self.sim.now,
            estimated_hit_probability=step.hit_probability,
            t_act=self.t_act_estimate,
            L_s=step.input_tokens + self.context_delta,
            l_s=self.l_s_estimate,
        )
        self._candidate = cand
        if self.speculation is Speculation.IMMEDIATE:
            self.launch_speculation(cand)
        else:
            self.sim.enqueue_candidate(cand, self)

    def launch_speculation(self, cand: SpecCandidate) -> None:
        if cand is not self._candidate or self._resolved:
            return
        step = self._step
        self._rec.spec_launched = True
        req = self._request(RequestKind.SPEC, step.speculative_output_tokens, self.config.k)
        self.sim.submit(req, self._on_verified_sampled)

    def _on_verified_sampled(self, req: InferenceRequest) -> None:
        step = self._step
        if self._resolved or req.step_index != step.index:
            self.sim.log("spec_late", req.request_id, self.task_id, req.step_index, "")
            return
        keys = sample_speculative_actions(step, self.config.k, self._seed(step.index, SAMPLE_STREAM), self.config.wrong_action_pool)
        distinct = list(dict.fromkeys(keys))
        self._rec.distinct_actions = len(distinct)
        for key in distinct:
            self.sim.execute(key, req.request_id, self.task_id, step.index)

    def _resolve_verified(self, now: float) -> None:
        step, rec = self._step, self._rec
        self._resolved = True
        if self._candidate is not None and not rec.spec_launched:
            self.sim.withdraw_candidate(self._candidate)
        look = self.sim.lookup(step.true_action_key, self.task_id, step.index)
        rec.spec_hit = look.hit
        self.record.lookups += 1
        self.record.hits += int(look.hit)
        if look.kind is LookupKind.HIT_COMPLETED:
            ready = now
        else:
            ready = self.sim.execute(step.true_action_key, f"t{self.task_id}-s{step.index}-main", self.task_id, step.index).ready_time
        self.sim.at(ready, self._on_verified_action_done)

    def _on_verified_action_done(self) -> None:
        rec = self._rec
        rec.action = self.sim.now - rec.start - rec.llm
        self._end_step()
