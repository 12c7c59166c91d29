"""Continuous-batching inference engine.

Each batch step admits waiting requests (their prefills join the step),
runs one decode iteration for every running request and advances the
clock by ``hybrid_batch_time``. A request admitted in a step also emits its
first token in that step.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import NamedTuple

from .cost_model import EMPTY, CostModelParams, PrefillSet, hybrid_batch_time


class ProtocolError(RuntimeError):
    pass


class RequestKind(enum.Enum):
    MAIN = "MainReasoning"
    SPEC = "SpeculativeSample"
    SCORE = "ScoreEvaluation"


class Policy(enum.Enum):
    FCFS = "FCFS"
    SPECULATION_FIRST = "SpeculationFirst"


STARVATION_STEPS = 50


@dataclass(eq=False)
class InferenceRequest:
    request_id: str
    kind: RequestKind
    task_id: int
    step_index: int
    input_tokens: int
    output_tokens: int
    sequences: int = 1
    aggressive: bool = False
    tokens_done: int = 0
    submit_time: float | None = None
    start_time: float | None = None
    finish_time: float | None = None
    # engine bookkeeping
    submit_seq: int = field(default=-1, repr=False)
    submit_batch: int = field(default=-1, repr=False)
    admit_batch: int = field(default=-1, repr=False)

    @property
    def finished(self) -> bool:
        return self.finish_time is not None

    @property
    def remaining(self) -> int:
        return self.output_tokens - self.tokens_done


class LoadSnapshot(NamedTuple):
    """Sequence counts by kind over running and waiting requests."""

    n: int
    n_main: int
    n_spec: int
    n_aggressive: int


@dataclass
class Batch:
    """One batch step, or a run of identical decode-only steps after it."""

    start: float
    duration: float
    prefill: PrefillSet
    decode_count: int
    admitted: list[InferenceRequest]
    steps: int = 1
    end: float = 0.0

    def __post_init__(self) -> None:
        if not self.end:
            self.end = self.start + self.duration


@dataclass(frozen=True)
class EngineEvent:
    time: float
    kind: str
    request: InferenceRequest


class Engine:
    """Single-replica engine state.

    The event loop calls :meth:`begin_step` when the engine is idle and has
    work, then :meth:`finish_step` at ``batch.end``. :meth:`step` does both.
    """

    def __init__(
        self,
        params: CostModelParams,
        policy: Policy = Policy.FCFS,
        max_batch: int = 256,
        starvation_steps: int = STARVATION_STEPS,
    ):
        if max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        self.params = params
        self.policy = policy
        self.max_batch = max_batch
        self.starvation_steps = starvation_steps
        self.clock = 0.0
        self.waiting: list[InferenceRequest] = []
        self.running: dict[str, InferenceRequest] = {}
        self.batches = 0
        self.busy = False
        self.current: Batch | None = None
        self._ids: set[str] = set()
        self._seq = 0
        # (finish batch index, submit_seq, request) for running requests
        self._finish_heap: list[tuple[int, int, InferenceRequest]] = []
        self.tokens_emitted = 0

    # -- submission ---------------------------------------------------------

    def submit(self, req: InferenceRequest, now: float | None = None) -> InferenceRequest:
        if req.request_id in self._ids:
            raise ProtocolError(f"duplicate request id {req.request_id!r}")
        if req.output_tokens < 1:
            raise ProtocolError(f"request {req.request_id!r} must produce at least one token")
        if req.input_tokens < 1:
            raise ProtocolError(f"request {req.request_id!r} needs a non-empty prompt")
        if now is not None:
            if now < self.clock:
                raise ProtocolError("submission before current engine clock")
            if not self.busy:
                self.clock = now
        self._ids.add(req.request_id)
        req.submit_time = self.clock if now is None else now
        req.submit_seq = self._seq
        req.submit_batch = self.batches
        self._seq += 1
        self.waiting.append(req)
        return req

    def has_work(self) -> bool:
        return bool(self.waiting or self.running)

    # -- batching -----------------------------------------------------------

    def _admission_order(self) -> list[InferenceRequest]:
        """FCFS, or speculation first.

        Under speculation-first a non-speculative request that has waited
        more than ``starvation_steps`` batch steps joins the speculative
        class, so it is admitted ahead of any speculation submitted after it.
        """
        if self.policy is Policy.FCFS:
            return sorted(self.waiting, key=lambda r: (r.submit_time, r.submit_seq))

        def key(r: InferenceRequest) -> tuple:
            urgent = r.kind is RequestKind.SPEC or self.batches - r.submit_batch > self.starvation_steps
            return (not urgent, r.submit_time, r.submit_seq)

        return sorted(self.waiting, key=key)

    def form_next_batch(self) -> tuple[PrefillSet, int, list[InferenceRequest]]:
        """Choose admissions for the next step without mutating state."""
        free = self.max_batch - len(self.running)
        admitted = self._admission_order()[: max(free, 0)]
        prefill = PrefillSet.of(r.input_tokens for r in admitted)
        decode = sum(r.sequences for r in self.running.values())
        return prefill, decode, admitted

    def begin_step(self, now: float | None = None, horizon: float | None = None) -> Batch:
        """Start the next batch step.

        With ``horizon`` set and nothing left waiting, the batch is extended
        by identical decode-only steps until the first request finishes or
        a step boundary reaches ``horizon``, whichever comes first. The
        result equals stepping one at a time when no submission arrives
        before ``horizon``.
        """
        if self.busy:
            raise ProtocolError("engine is already executing a batch")
        if not self.has_work():
            raise ProtocolError("no work to batch")
        if now is not None:
            self.clock = max(self.clock, now)
        prefill, decode, admitted = self.form_next_batch()
        admitted_ids = {id(r) for r in admitted}
        self.waiting = [r for r in self.waiting if id(r) not in admitted_ids]
        for r in admitted:
            r.start_time = self.clock
            r.admit_batch = self.batches
            self.running[r.request_id] = r
            heapq.heappush(self._finish_heap, (self.batches + r.output_tokens - 1, r.submit_seq, r))
        duration = hybrid_batch_time(prefill, decode, self.params)
        end = self.clock + duration
        steps = 1
        if horizon is not None and not self.waiting and end < horizon:
            last = self._finish_heap[0][0] - self.batches + 1
            if steps < last:
                d = hybrid_batch_time(EMPTY, sum(r.sequences for r in self.running.values()), self.params)
                while steps < last and end < horizon:
                    end += d
                    steps += 1
        self.busy = True
        self.current = Batch(self.clock, duration, prefill, decode, admitted, steps, end)
        return self.current

    def finish_step(self) -> list[InferenceRequest]:
        """Complete the in-flight batch; return requests that finished."""
        if not self.busy or self.current is None:
            raise ProtocolError("no batch in flight")
        batch = self.current
        self.clock = batch.end
        self.tokens_emitted += len(self.running) * batch.steps
        last = self.batches + batch.steps - 1
        done = []
        while self._finish_heap and self._finish_heap[0][0] <= last:
            _, _, r = heapq.heappop(self._finish_heap)
            r.tokens_done = r.output_tokens
            r.finish_time = self.clock
            del self.running[r.request_id]
            done.append(r)
        self.batches += batch.steps
        self.busy = False
        self.current = None
        return done

    def step(self) -> list[EngineEvent]:
        batch = self.begin_step()
        done = self.finish_step()
        events = [EngineEvent(batch.start, "admit", r) for r in batch.admitted]
        events += [EngineEvent(self.clock, "finish", r) for r in done]
        return events

    def sync_progress(self) -> None:
        """Materialise ``tokens_done`` for running requests (it is kept lazily)."""
        for r in self.running.values():
            r.tokens_done = self.batches - r.admit_batch

    # -- load ---------------------------------------------------------------

    def load_snapshot(self) -> LoadSnapshot:
        n_main = n_spec = n_aggr = 0
        for r in (*self.running.values(), *self.waiting):
            if r.aggressive:
                n_aggr += r.sequences
            elif r.kind is RequestKind.MAIN:
                n_main += r.sequences
            else:
                n_spec += r.sequences
        return LoadSnapshot(n_main + n_spec + n_aggr, n_main, n_spec, n_aggr)
