"""Small engine-only scenarios used by tests, demos and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost_model import CostModelParams
from .engine import Engine, InferenceRequest, Policy, RequestKind


@dataclass(frozen=True)
class PairOutcome:
    pair: int
    main_finish: float
    spec_finish: float

    @property
    def spec_first(self) -> bool:
        return self.spec_finish < self.main_finish


def paired_completion_scenario(
    seed: int,
    policy: Policy,
    pairs: int = 6,
    max_batch: int = 2,
    params: CostModelParams | None = None,
    spec_delay: float = 0.005,
    gap: float = 0.1,
    background_tokens: tuple[int, int] = (20, 48),
) -> list[PairOutcome]:
    """Head-of-line blocking on a saturated engine.

    ``max_batch`` background requests occupy every slot at t=0. Then
    ``pairs`` main requests arrive (exponential gaps, mean ``gap`` seconds), each
    followed ``spec_delay`` seconds later by its short speculative request.
    Background lengths stay below the starvation window so that queue
    order, not the guard, decides admission. Returns, per pair, when each
    side finished.
    """
    params = params or CostModelParams()
    rng = np.random.default_rng(seed)
    engine = Engine(params, policy, max_batch=max_batch)
    arrivals: list[tuple[float, InferenceRequest]] = []
    for i in range(max_batch):
        out = int(rng.integers(*background_tokens))
        arrivals.append((0.0, InferenceRequest(f"bg{i}", RequestKind.MAIN, -1 - i, 1, 512, out)))
    t = 0.0
    for i in range(pairs):
        t += float(rng.exponential(gap))
        main_out = int(rng.lognormal(np.log(250) - 0.125, 0.5)) + 16
        spec_out = int(rng.integers(4, 11))
        arrivals.append((t, InferenceRequest(f"m{i}", RequestKind.MAIN, i, 1, 1024, main_out)))
        arrivals.append((t + spec_delay, InferenceRequest(f"s{i}", RequestKind.SPEC, i, 1, 1024, spec_out, sequences=3)))
    arrivals.sort(key=lambda a: a[0])

    finished: dict[str, float] = {}
    pending = list(arrivals)
    while pending or engine.has_work():
        if not engine.has_work():
            engine.clock = max(engine.clock, pending[0][0])
        while pending and pending[0][0] <= engine.clock:
            when, req = pending.pop(0)
            engine.submit(req, max(when, engine.clock))
        for ev in engine.step():
            if ev.kind == "finish":
                finished[ev.request.request_id] = ev.time
    return [PairOutcome(i, finished[f"m{i}"], finished[f"s{i}"]) for i in range(pairs)]


def spec_first_fraction(seeds, policy: Policy, **kwargs) -> float:
    outcomes = [o for s in seeds for o in paired_completion_scenario(s, policy, **kwargs)]
    return sum(o.spec_first for o in outcomes) / len(outcomes)
