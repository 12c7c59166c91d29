"""Deterministic event loop wiring tasks, engine, scheduler and action server."""

from __future__ import annotations

import enum
import heapq
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .action_server import ActionHandle, ActionServer, Lookup
from .agent import ACTION_STREAM, AgentConfig, Speculation, TaskAgent, TaskRecord
from .cost_model import CostModelParams
from .engine import Engine, InferenceRequest, Policy, RequestKind
from .scheduler import SchedulerConfig, SpecCandidate, SpeculationQueue, select_step
from .workload import TaskShapeConfig, TaskTrace


class Mode(enum.Enum):
    NAIVE = "Naive"
    VERIFIED_ONLY = "VerifiedOnly"
    NO_SCHED = "SPAgentNoSched"
    FULL = "SPAgentFull"

    @property
    def aggressive(self) -> bool:
        return self in (Mode.NO_SCHED, Mode.FULL)

    @property
    def speculation(self) -> Speculation:
        if self is Mode.NAIVE:
            return Speculation.NONE
        if self is Mode.FULL:
            return Speculation.SCHEDULED
        return Speculation.IMMEDIATE

    @property
    def default_policy(self) -> Policy:
        return Policy.SPECULATION_FIRST if self.aggressive else Policy.FCFS


# Event priorities at equal timestamps: ordinary events, then batch starts.
_NORMAL, _BATCH_START = 0, 1

EVENT_LOG_HEADER = "time,event_kind,request_id,task_id,step,detail"


@dataclass
class Decision:
    time: float
    queue_length: int
    load: tuple[int, int, int, int]
    selected: int
    expired: int
    gains: list[tuple[float, float, float, float]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "time": round(self.time, 9),
                "queue_length": self.queue_length,
                "load": {"N": self.load[0], "N_m": self.load[1], "N_s": self.load[2], "N_a": self.load[3]},
                "selected": self.selected,
                "expired": self.expired,
                "gains": [
                    {"reduction": g[0], "decode_overhead": g[1], "prefill_overhead": g[2], "net": g[3]}
                    for g in self.gains
                ],
            },
            sort_keys=True,
        )


class Simulation:
    def __init__(
        self,
        tasks: Iterable[TaskTrace],
        mode: Mode,
        params: CostModelParams,
        agent: AgentConfig | None = None,
        scheduler: SchedulerConfig | None = None,
        shape: TaskShapeConfig | None = None,
        policy: Policy | None = None,
        max_batch: int = 256,
        seed: int = 0,
        trace_actions: bool = True,
        fast_forward: bool = True,
    ):
        self.mode = mode
        self.params = params
        self.agent_config = agent or AgentConfig()
        self.scheduler_config = scheduler or SchedulerConfig(k=self.agent_config.k)
        self.shape = shape or TaskShapeConfig()
        self.seed = seed
        self.trace_actions = trace_actions
        self.fast_forward = fast_forward
        self.engine = Engine(params, policy or mode.default_policy, max_batch)
        self.server = ActionServer()
        self.queue = SpeculationQueue()
        self.now = 0.0
        self.events: list[tuple] = []
        self.decisions: list[Decision] = []
        self._heap: list[tuple[float, int, int, Callable[[], None]]] = []
        self._seq = 0
        self._callbacks: dict[str, Callable[[InferenceRequest], None]] = {}
        self._owners: dict[int, TaskAgent] = {}
        self._batch_pending = False
        self.agents = [
            TaskAgent(
                self,
                t,
                self.agent_config,
                aggressive=mode.aggressive,
                speculation=mode.speculation,
                observation_tokens=self.shape.observation_tokens,
                l_s_estimate=self.shape.spec_mean_tokens,
                t_act_estimate=self.shape.action_mean_s,
            )
            for t in tasks
        ]
        self.agents_by_id = {a.task_id: a for a in self.agents}
        for a in self.agents:
            self.at(a.trace.arrival_time, a.start)

    # -- event plumbing -----------------------------------------------------

    def at(self, time: float, fn: Callable[[], None], priority: int = _NORMAL) -> None:
        if time < self.now:
            raise ValueError(f"cannot schedule in the past ({time} < {self.now})")
        heapq.heappush(self._heap, (time, priority, self._seq, fn))
        self._seq += 1

    def log(self, kind: str, request_id: str, task_id: int, step: int, detail: str) -> None:
        self.events.append((self.now, kind, request_id, task_id, step, detail))

    def run(self) -> list[TaskRecord]:
        while self._heap:
            time, _, _, fn = heapq.heappop(self._heap)
            self.now = time
            fn()
        unfinished = [a.task_id for a in self.agents if np.isnan(a.record.completion)]
        if unfinished:
            raise RuntimeError(f"simulation stalled with unfinished tasks {unfinished[:5]}")
        return [a.record for a in self.agents]

    # -- engine -------------------------------------------------------------

    def submit(self, req: InferenceRequest, callback: Callable[[InferenceRequest], None]) -> None:
        self.engine.submit(req, self.now)
        self._callbacks[req.request_id] = callback
        self.log("submit", req.request_id, req.task_id, req.step_index, f"{req.kind.value};in={req.input_tokens};out={req.output_tokens}")
        self._kick()

    def _kick(self) -> None:
        if not self._batch_pending and not self.engine.busy and self.engine.has_work():
            self._batch_pending = True
            self.at(self.now, self._start_batch, _BATCH_START)

    def _start_batch(self) -> None:
        if self.mode.speculation is Speculation.SCHEDULED and len(self.queue) and (
            self.engine.batches % self.scheduler_config.scheduling_interval == 0
        ):
            self._schedule_speculation()
        horizon = None
        if self.fast_forward and not len(self.queue):
            horizon = self._heap[0][0] if self._heap else math.inf
        batch = self.engine.begin_step(self.now, horizon)
        self._batch_pending = False
        for r in batch.admitted:
            self.log("admit", r.request_id, r.task_id, r.step_index, f"{r.kind.value}")
        self.at(batch.end, self._end_batch)

    def _end_batch(self) -> None:
        done = self.engine.finish_step()
        # speculation results land before main-path results of the same step
        done.sort(key=lambda r: (r.kind is not RequestKind.SPEC, r.submit_seq))
        for r in done:
            self.log("finish", r.request_id, r.task_id, r.step_index, f"{r.kind.value}")
            self._callbacks.pop(r.request_id)(r)
        self._kick()

    # -- speculation scheduling --------------------------------------------

    def enqueue_candidate(self, cand: SpecCandidate, owner: TaskAgent) -> None:
        self._owners[id(cand)] = owner
        self.queue.push(cand)
        self.log("spec_enqueue", "", cand.task_id, cand.step_index, f"p={cand.estimated_hit_probability:.4f}")

    def withdraw_candidate(self, cand: SpecCandidate) -> None:
        if self._owners.pop(id(cand), None) is not None:
            self.queue.discard(cand)

    def _schedule_speculation(self) -> None:
        load = self.engine.load_snapshot()
        qlen = len(self.queue)
        result = select_step(self.queue, load, self.params, self.scheduler_config, self.now)
        for cand in result.expired:
            self._owners.pop(id(cand), None)
            self.log("spec_expire", "", cand.task_id, cand.step_index, f"wait={cand.wait_time:.6f}")
        self.decisions.append(
            Decision(self.now, qlen, tuple(load), len(result.selected), len(result.expired),
                     [tuple(g.__dict__.values()) for g in result.per_candidate])
        )
        for cand in result.selected:
            owner = self._owners.pop(id(cand))
            self.log("spec_select", "", cand.task_id, cand.step_index, f"wait={cand.wait_time:.6f}")
            owner.launch_speculation(cand)

    # -- actions ------------------------------------------------------------

    def action_time(self, task_id: int, step: int, key: str) -> float:
        agent = self.agents_by_id[task_id]
        spec = agent.trace.steps[step - 1]
        if key == spec.true_action_key:
            return spec.action_exec_time
        rng = np.random.default_rng((self.seed, task_id, step, ACTION_STREAM, zlib.crc32(key.encode())))
        return float(rng.gamma(self.shape.action_shape, self.shape.action_mean_s / self.shape.action_shape))

    def execute(self, key: str, requester: str, task_id: int, step: int) -> ActionHandle:
        handle = self.server.execute(key, requester, self.now, self.action_time(task_id, step, key), scope=task_id)
        if self.trace_actions:
            self.log("action_" + handle.resolution.value, requester, task_id, step, f"{handle.key}@{handle.ready_time:.9f}")
        return handle

    def lookup(self, key: str, task_id: int, step: int) -> Lookup:
        look = self.server.main_path_lookup(key, self.now, scope=task_id)
        self.log("lookup", "", task_id, step, f"{look.kind.value};remaining={look.remaining:.9f}")
        return look

    # -- output -------------------------------------------------------------

    def event_log_lines(self) -> list[str]:
        return [EVENT_LOG_HEADER] + [
            f"{t:.9f},{kind},{rid},{task},{step},{detail}" for t, kind, rid, task, step, detail in self.events
        ]
