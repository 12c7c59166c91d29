"""Load-aware selection of which verified-phase speculations to launch.

The objective for a candidate set ``S`` under load ``N`` is::

    net(S) = reduction(S) - decode_overhead(S) - prefill_overhead(S)
    reduction(S) = sum(t_act * (1 - (1 - p)**k) for r in S) / (N_m + N_a)

Selection is greedy over a priority order (earlier step first, then most
recently enqueued) and stops at the first candidate that does not strictly
improve ``net``.
"""

from __future__ import annotations

import functools
import heapq
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .cost_model import (
    EMPTY,
    CostModelParams,
    PrefillSet,
    decode_overhead,
    hybrid_batch_time,
    prefill_set_overhead,
)
from .engine import LoadSnapshot


class UndefinedLoadError(ValueError):
    pass


@dataclass
class SpecCandidate:
    task_id: int
    step_index: int
    enqueue_time: float
    estimated_hit_probability: float
    t_act: float
    L_s: int
    l_s: float
    wait_time: float = 0.0

    def refresh(self, now: float) -> None:
        self.wait_time = max(0.0, now - self.enqueue_time)


@dataclass(frozen=True)
class SchedulerConfig:
    k: int = 3
    # None: twice the time to decode l_s tokens at the current load
    t_w: float | None = None
    scheduling_interval: int = 1

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.t_w is not None and self.t_w <= 0:
            raise ValueError("t_w must be > 0")
        if self.scheduling_interval < 1:
            raise ValueError("scheduling_interval must be >= 1")

    def wait_limit(self, cand: SpecCandidate, n: int, params: CostModelParams) -> float:
        if self.t_w is not None:
            return self.t_w
        return 2.0 * hybrid_batch_time(EMPTY, n, params) * cand.l_s


@dataclass(frozen=True)
class GainBreakdown:
    reduction: float
    decode_overhead: float
    prefill_overhead: float
    net: float


def hit_chance(p: float, k: int) -> float:
    return 1.0 - (1.0 - p) ** k


def expected_reduction(S: Sequence[SpecCandidate], n_main: int, n_aggressive: int, k: int) -> float:
    if n_main + n_aggressive <= 0:
        raise UndefinedLoadError("N_m + N_a must be >= 1")
    total = sum(c.t_act * hit_chance(c.estimated_hit_probability, k) for c in S)
    return total / (n_main + n_aggressive)


def net_gain(
    S: Sequence[SpecCandidate],
    load: LoadSnapshot,
    params: CostModelParams,
    k: int,
) -> GainBreakdown:
    if not S:
        return GainBreakdown(0.0, 0.0, 0.0, 0.0)
    reduction = expected_reduction(S, load.n_main, load.n_aggressive, k)
    mean_l_s = sum(c.l_s for c in S) / len(S)
    t_dec = decode_overhead(len(S), k, load.n, mean_l_s, params)
    t_pre = prefill_set_overhead(PrefillSet.of(c.L_s for c in S), load.n, params)
    return GainBreakdown(reduction, t_dec, t_pre, reduction - (t_dec + t_pre))


def _priority_key(c: SpecCandidate) -> tuple:
    return (c.step_index, -c.enqueue_time, c.task_id)


def compare_priority(a: SpecCandidate, b: SpecCandidate) -> int:
    """Negative when ``a`` should be popped before ``b``."""
    ka, kb = _priority_key(a), _priority_key(b)
    return (ka > kb) - (ka < kb)


priority_sort_key = functools.cmp_to_key(compare_priority)


class SpeculationQueue:
    """Heap of pending candidates ordered by :func:`compare_priority`."""

    def __init__(self, candidates: Iterable[SpecCandidate] = ()):
        self._heap: list[tuple[tuple, int, SpecCandidate]] = []
        self._seq = 0
        self._dead: set[int] = set()
        for c in candidates:
            self.push(c)

    def push(self, cand: SpecCandidate) -> None:
        heapq.heappush(self._heap, (_priority_key(cand), self._seq, cand))
        self._seq += 1

    def pop(self) -> SpecCandidate:
        while self._heap:
            _, _, cand = heapq.heappop(self._heap)
            if id(cand) in self._dead:
                self._dead.discard(id(cand))
                continue
            return cand
        raise IndexError("pop from empty queue")

    def discard(self, cand: SpecCandidate) -> None:
        """Lazily remove ``cand`` (e.g. its main request already finished)."""
        if any(c is cand for _, _, c in self._heap):
            self._dead.add(id(cand))

    def ordered(self) -> list[SpecCandidate]:
        return [c for _, _, c in sorted(self._heap) if id(c) not in self._dead]

    def __len__(self) -> int:
        return len(self._heap) - len(self._dead)


@dataclass
class SelectionResult:
    selected: list[SpecCandidate]
    breakdown: GainBreakdown
    expired: list[SpecCandidate] = field(default_factory=list)
    returned: SpecCandidate | None = None
    per_candidate: list[GainBreakdown] = field(default_factory=list)


def select_step(
    queue: SpeculationQueue,
    load: LoadSnapshot,
    params: CostModelParams,
    config: SchedulerConfig,
    now: float | None = None,
) -> SelectionResult:
    """One scheduling step of greedy speculation selection.

    Pops candidates in priority order, drops expired ones, and keeps adding
    while the net gain strictly increases. The first non-improving
    candidate goes back into the queue; untouched candidates stay queued.
    """
    selected: list[SpecCandidate] = []
    expired: list[SpecCandidate] = []
    per_candidate: list[GainBreakdown] = []
    best = GainBreakdown(0.0, 0.0, 0.0, 0.0)
    returned = None
    while len(queue):
        cand = queue.pop()
        if now is not None:
            cand.refresh(now)
        if cand.wait_time > config.wait_limit(cand, load.n, params):
            expired.append(cand)
            continue
        trial = net_gain([*selected, cand], load, params, config.k)
        if trial.net > best.net:
            per_candidate.append(
                GainBreakdown(
                    trial.reduction - best.reduction,
                    trial.decode_overhead - best.decode_overhead,
                    trial.prefill_overhead - best.prefill_overhead,
                    trial.net - best.net,
                )
            )
            best = trial
            selected.append(cand)
        else:
            queue.push(cand)
            returned = cand
            break
    return SelectionResult(selected, best, expired, returned, per_candidate)
