"""Tool-execution front end with a per-task action buffer.

Identical actions are executed once: a repeat request either attaches to
the in-flight call (and resolves at its original completion time) or
reuses the stored result. Check-and-insert is atomic per server, so the
class is safe to call from several threads outside the simulator too.
"""

from __future__ import annotations

import enum
import hashlib
import threading
from dataclasses import dataclass, field
from typing import Hashable, NamedTuple


class ActionKey(str):
    """Normalised action text: surrounding whitespace stripped, case-folded."""

    def __new__(cls, text: str) -> ActionKey:
        norm = " ".join(str(text).split()).casefold()
        if not norm:
            raise ValueError("action key is empty after normalisation")
        return super().__new__(cls, norm)


class ActionState(enum.Enum):
    IN_PROGRESS = "InProgress"
    COMPLETED = "Completed"


# Footprint accounting, in bytes: UTF-8 key + result token + two float64
# timestamps + one state byte + one 4-byte id per waiter.
TIMESTAMP_BYTES = 8
STATE_BYTES = 1
WAITER_BYTES = 4
RECORD_FIXED_BYTES = 2 * TIMESTAMP_BYTES + STATE_BYTES


def observation_token(key: str) -> str:
    return hashlib.blake2b(key.encode(), digest_size=8).hexdigest()


@dataclass
class ActionRecord:
    key: ActionKey
    state: ActionState
    result: str
    issue_time: float
    exec_time: float
    complete_time: float | None = None
    waiters: set[Hashable] = field(default_factory=set)

    @property
    def due_time(self) -> float:
        return self.issue_time + self.exec_time

    def nbytes(self) -> int:
        return (
            len(self.key.encode())
            + len(self.result.encode())
            + RECORD_FIXED_BYTES
            + WAITER_BYTES * len(self.waiters)
        )


class Resolution(enum.Enum):
    EXECUTED = "executed"
    ATTACHED = "attached"
    REUSED = "reused"


class ActionHandle(NamedTuple):
    key: ActionKey
    ready_time: float
    result: str
    resolution: Resolution


class LookupKind(enum.Enum):
    HIT_COMPLETED = "Hit-Completed"
    HIT_IN_PROGRESS = "Hit-InProgress"
    MISS = "Miss"


class Lookup(NamedTuple):
    kind: LookupKind
    result: str | None = None
    remaining: float = 0.0

    @property
    def hit(self) -> bool:
        return self.kind is not LookupKind.MISS


@dataclass
class BufferStats:
    external_calls: int = 0
    attaches: int = 0
    reuses: int = 0
    main_path_hits: int = 0
    main_path_lookups: int = 0

    @property
    def hit_rate(self) -> float:
        if self.main_path_lookups == 0:
            return float("nan")
        return self.main_path_hits / self.main_path_lookups


class ActionServer:
    """Buffer keyed by ``(scope, ActionKey)``; scope is normally a task id.

    Records become ``Completed`` lazily: any access at or after the due time
    observes the completed state, so no timer callback is needed.
    """

    def __init__(self) -> None:
        self._buffers: dict[Hashable, dict[ActionKey, ActionRecord]] = {}
        self._lock = threading.Lock()
        self.stats = BufferStats()

    def _settle(self, rec: ActionRecord, now: float) -> ActionRecord:
        if rec.state is ActionState.IN_PROGRESS and now >= rec.due_time:
            rec.state = ActionState.COMPLETED
            rec.complete_time = rec.due_time
        return rec

    def execute(
        self,
        key: str,
        requester: Hashable,
        now: float,
        exec_time: float,
        scope: Hashable = 0,
    ) -> ActionHandle:
        if exec_time <= 0:
            raise ValueError("exec_time must be > 0")
        key = ActionKey(key)
        with self._lock:
            buf = self._buffers.setdefault(scope, {})
            rec = buf.get(key)
            if rec is None:
                rec = ActionRecord(key, ActionState.IN_PROGRESS, observation_token(key), now, exec_time)
                rec.waiters.add(requester)
                buf[key] = rec
                self.stats.external_calls += 1
                return ActionHandle(key, rec.due_time, rec.result, Resolution.EXECUTED)
            self._settle(rec, now)
            if rec.state is ActionState.IN_PROGRESS:
                rec.waiters.add(requester)
                self.stats.attaches += 1
                return ActionHandle(key, rec.due_time, rec.result, Resolution.ATTACHED)
            self.stats.reuses += 1
            return ActionHandle(key, now, rec.result, Resolution.REUSED)

    def main_path_lookup(self, key: str, now: float, scope: Hashable = 0) -> Lookup:
        key = ActionKey(key)
        with self._lock:
            self.stats.main_path_lookups += 1
            rec = self._buffers.get(scope, {}).get(key)
            if rec is None:
                return Lookup(LookupKind.MISS)
            self.stats.main_path_hits += 1
            self._settle(rec, now)
            if rec.state is ActionState.COMPLETED:
                return Lookup(LookupKind.HIT_COMPLETED, rec.result)
            return Lookup(LookupKind.HIT_IN_PROGRESS, rec.result, rec.due_time - now)

    def record(self, key: str, scope: Hashable = 0, now: float | None = None) -> ActionRecord | None:
        with self._lock:
            rec = self._buffers.get(scope, {}).get(ActionKey(key))
            if rec is not None and now is not None:
                self._settle(rec, now)
            return rec

    def buffer_footprint(self, scope: Hashable = 0) -> int:
        with self._lock:
            return sum(rec.nbytes() for rec in self._buffers.get(scope, {}).values())

    def drop_scope(self, scope: Hashable) -> None:
        with self._lock:
            self._buffers.pop(scope, None)
