"""Experiment presets: configuration, single runs, rate sweeps and artifacts."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentConfig, TaskRecord
from .cost_model import CostModelParams, calibrate, read_profile_table
from .engine import Policy
from .scheduler import SchedulerConfig
from .simulation import Decision, Mode, Simulation
from .workload import (
    ParameterError,
    TaskShapeConfig,
    generate_arrivals,
    generate_hit_profile,
    generate_tasks,
)

OUT_ENV = "SPECSIM_OUT"


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass(frozen=True)
class WorkloadConfig:
    rate: float = 1.0
    tasks: int = 200
    seed: int = 7
    # "poisson": shared engine with Poisson arrivals; "isolated": one task at a time
    arrival: str = "poisson"

    def __post_init__(self) -> None:
        if self.arrival not in ("poisson", "isolated"):
            raise ValueError("arrival must be 'poisson' or 'isolated'")
        if self.tasks < 1:
            raise ValueError("tasks must be >= 1")
        if self.arrival == "poisson" and self.rate <= 0:
            raise ValueError("rate must be > 0")


@dataclass(frozen=True)
class ProfileConfig:
    first: float = 0.734
    floor: float = 0.11
    mean: float = 0.40
    max_steps: int = 6

    def build(self):
        return generate_hit_profile(self.first, self.floor, self.mean, self.max_steps)


@dataclass(frozen=True)
class EngineConfig:
    policy: str = "auto"
    max_batch: int = 256

    def __post_init__(self) -> None:
        if self.policy != "auto":
            Policy(self.policy)
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")

    def resolve(self, mode: Mode) -> Policy:
        return mode.default_policy if self.policy == "auto" else Policy(self.policy)


@dataclass(frozen=True)
class SweepConfig:
    rates: tuple[float, ...] = (0.5, 1.0, 2.0, 3.0)
    modes: tuple[str, ...] = tuple(m.value for m in Mode)

    def __post_init__(self) -> None:
        if not self.rates or any(r <= 0 for r in self.rates):
            raise ValueError("rates must be a non-empty list of positive numbers")
        for m in self.modes:
            Mode(m)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: Mode = Mode.FULL
    seed: int = 1
    replications: int = 5
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    profile: ProfileConfig = field(default_factory=ProfileConfig)
    shape: TaskShapeConfig = field(default_factory=TaskShapeConfig)
    cost: CostModelParams = field(default_factory=CostModelParams)
    agent: AgentConfig = field(default_factory=AgentConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.scheduler.k != self.agent.k:
            raise ValueError("scheduler.k must equal agent.k")

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


_SECTIONS = {
    "workload": WorkloadConfig,
    "profile": ProfileConfig,
    "shape": TaskShapeConfig,
    "cost": CostModelParams,
    "agent": AgentConfig,
    "scheduler": SchedulerConfig,
    "engine": EngineConfig,
    "sweep": SweepConfig,
}
_EXPERIMENT_KEYS = {"mode", "seed", "replications"}


def _check_type(path: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
        value = tuple(float(v) if isinstance(default[0] if default else 0, float) else v for v in value) if ok else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")
    return value


def _build_section(name: str, cls: type, values: Mapping[str, Any], base_dir: Path) -> Any:
    if not isinstance(values, Mapping):
        raise ConfigError(f"{name}: expected a table")
    values = dict(values)
    if name == "cost" and "profile_table" in values:
        table = Path(values.pop("profile_table"))
        if values:
            raise ConfigError(f"cost.{next(iter(values))}: cannot combine with cost.profile_table")
        table = table if table.is_absolute() else base_dir / table
        try:
            return calibrate(read_profile_table(table)).params
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cost.profile_table: {exc}") from exc
    if name == "scheduler" and values.get("t_w") is not None:
        values["t_w"] = _check_type("scheduler.t_w", values["t_w"], 0.0)
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        path = f"{name}.{key}"
        if key not in known:
            raise ConfigError(f"{path}: unknown key")
        default = getattr(defaults, key)
        kwargs[key] = value if default is None else _check_type(path, value, default)
    try:
        return cls(**kwargs)
    except (ValueError, ParameterError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_mapping(data: Mapping[str, Any], base_dir: str | Path = ".") -> ExperimentConfig:
    base_dir = Path(base_dir)
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key == "experiment":
            if not isinstance(value, Mapping):
                raise ConfigError("experiment: expected a table")
            for sub, v in value.items():
                if sub not in _EXPERIMENT_KEYS:
                    raise ConfigError(f"experiment.{sub}: unknown key")
                if sub == "mode":
                    try:
                        kwargs["mode"] = Mode(v)
                    except ValueError:
                        raise ConfigError(f"experiment.mode: unknown mode {v!r}") from None
                else:
                    kwargs[sub] = _check_type(f"experiment.{sub}", v, 0)
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, _SECTIONS[key], value, base_dir)
        else:
            raise ConfigError(f"{key}: unknown section")
    if "agent" in kwargs and "scheduler" not in kwargs:
        kwargs["scheduler"] = SchedulerConfig(k=kwargs["agent"].k)
    try:
        return ExperimentConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"experiment: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_mapping(data, path.parent)


def preset(name: str) -> ExperimentConfig:
    """Load a shipped configuration (``default`` or ``serving``)."""
    text = resources.files("specsim.data").joinpath(f"{name}.toml").read_text()
    return config_from_mapping(tomllib.loads(text))


# --- running -----------------------------------------------------------------


def derive_seed(seed: int, replication: int) -> int:
    return int(np.random.SeedSequence([seed, replication]).generate_state(1)[0])


@dataclass
class Replication:
    index: int
    records: list[TaskRecord]
    event_log: list[str]
    decisions: list[Decision]


@dataclass
class RunSummary:
    mode: Mode
    rate: float | None
    replications: list[Replication]

    @property
    def records(self) -> list[TaskRecord]:
        return [r for rep in self.replications for r in rep.records]

    def latencies(self) -> np.ndarray:
        return np.array([r.latency for r in self.records])

    @property
    def mean_latency(self) -> float:
        return float(self.latencies().mean())

    @property
    def median_latency(self) -> float:
        return float(np.median(self.latencies()))

    @property
    def p95_latency(self) -> float:
        return float(np.percentile(self.latencies(), 95))

    @property
    def replication_means(self) -> list[float]:
        return [float(np.mean([r.latency for r in rep.records])) for rep in self.replications]

    @property
    def breakdown(self) -> tuple[float, float, float]:
        recs = self.records
        return (
            float(np.mean([r.llm for r in recs])),
            float(np.mean([r.action for r in recs])),
            float(np.mean([r.other for r in recs])),
        )

    @property
    def main_path_hits(self) -> int:
        return sum(r.hits for r in self.records)

    @property
    def main_path_lookups(self) -> int:
        return sum(r.lookups for r in self.records)

    @property
    def hit_rate(self) -> float:
        n = self.main_path_lookups
        return self.main_path_hits / n if n else math.nan

    @property
    def mean_transition_step(self) -> float:
        """Mean first verified step; a task that never switches counts as ``num_steps + 1``."""
        steps = [
            r.transition_step if r.transition_step is not None else len(r.steps) + 1
            for r in self.records
            if any(s.phase == "Aggressive" for s in r.steps)
        ]
        return float(np.mean(steps)) if steps else math.nan

    @property
    def mean_footprint(self) -> float:
        return float(np.mean([r.footprint_bytes for r in self.records]))

    def to_dict(self) -> dict[str, Any]:
        llm, action, other = self.breakdown
        means = self.replication_means
        return {
            "mode": self.mode.value,
            "rate": self.rate,
            "tasks": len(self.records),
            "replications": len(self.replications),
            "latency": {
                "mean": self.mean_latency,
                "median": self.median_latency,
                "p95": self.p95_latency,
                "mean_min": min(means),
                "mean_max": max(means),
            },
            "breakdown": {"llm_s": llm, "action_s": action, "other_s": other},
            "buffer": {
                "main_path_hits": self.main_path_hits,
                "main_path_lookups": self.main_path_lookups,
                "hit_rate": None if math.isnan(self.hit_rate) else self.hit_rate,
                "mean_footprint_bytes": self.mean_footprint,
            },
            "mean_transition_step": None if math.isnan(self.mean_transition_step) else self.mean_transition_step,
        }


def run_replication(config: ExperimentConfig, replication: int = 0, rate: float | None = None) -> Replication:
    wl = config.workload
    profile = config.profile.build()
    wseed = derive_seed(wl.seed, replication)
    sseed = derive_seed(config.seed, replication)
    kwargs = dict(
        mode=config.mode,
        params=config.cost,
        agent=config.agent,
        scheduler=config.scheduler,
        shape=config.shape,
        policy=config.engine.resolve(config.mode),
        max_batch=config.engine.max_batch,
        seed=sseed,
    )
    if wl.arrival == "isolated" and rate is None:
        tasks = generate_tasks(wl.tasks, wseed, profile, config.shape)
        records, log, decisions = [], [], []
        for task in tasks:
            sim = Simulation([task], **kwargs)
            records += sim.run()
            lines = sim.event_log_lines()
            log += lines if not log else lines[1:]
            decisions += sim.decisions
        return Replication(replication, records, log, decisions)
    arrivals = generate_arrivals(rate if rate is not None else wl.rate, wl.tasks, wseed)
    tasks = generate_tasks(wl.tasks, wseed, profile, config.shape, arrivals)
    sim = Simulation(tasks, **kwargs)
    records = sim.run()
    return Replication(replication, records, sim.event_log_lines(), sim.decisions)


def run(config: ExperimentConfig, rate: float | None = None) -> RunSummary:
    reps = [run_replication(config, r, rate) for r in range(config.replications)]
    if rate is None and config.workload.arrival == "poisson":
        rate = config.workload.rate
    return RunSummary(config.mode, rate, reps)


def sweep(
    rates: Sequence[float] | None,
    config: ExperimentConfig,
    modes: Iterable[Mode | str] | None = None,
) -> list[RunSummary]:
    """Run every mode at every rate with common seeds; sorted by (mode, rate)."""
    rates = tuple(rates) if rates is not None else config.sweep.rates
    if not rates:
        raise ConfigError("sweep.rates: must be non-empty")
    modes = [Mode(m) for m in (modes if modes is not None else config.sweep.modes)]
    out = [run(config.replace(mode=m), rate=r) for m in modes for r in rates]
    return sorted(out, key=lambda s: (s.mode.value, s.rate))


# --- artifacts ---------------------------------------------------------------

BREAKDOWN_COLUMNS = ("mode", "task_id", "llm_s", "action_s", "other_s", "total_s")
SWEEP_COLUMNS = ("mode", "rate", "mean", "p95", "median", "mean_min", "mean_max")
HITRATE_COLUMNS = ("mode", "rate", "main_path_hits", "main_path_lookups", "hit_rate")


def output_dir(out: str | Path | None) -> Path:
    env = os.environ.get(OUT_ENV)
    return Path(env) if env else Path(out or "out")


def _fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def emit(summaries: RunSummary | Sequence[RunSummary], out: str | Path, event_logs: bool = True) -> list[Path]:
    """Write CSV tables and ``summary.json`` into ``out``; return the written paths."""
    if isinstance(summaries, RunSummary):
        summaries = [summaries]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "breakdown.csv"
    _write_csv(
        path,
        BREAKDOWN_COLUMNS,
        (
            (s.mode.value, f"{rep.index}/{r.task_id}", _fmt(r.llm), _fmt(r.action), _fmt(r.other), _fmt(r.latency))
            for s in summaries
            for rep in s.replications
            for r in rep.records
        ),
    )
    written.append(path)

    path = out / "hitrate.csv"
    _write_csv(
        path,
        HITRATE_COLUMNS,
        ((s.mode.value, _fmt(s.rate), s.main_path_hits, s.main_path_lookups, _fmt(s.hit_rate)) for s in summaries),
    )
    written.append(path)

    if len(summaries) > 1:
        path = out / "sweep.csv"
        ordered = sorted(summaries, key=lambda s: (s.mode.value, s.rate if s.rate is not None else -1.0))
        _write_csv(
            path,
            SWEEP_COLUMNS,
            (
                (s.mode.value, _fmt(s.rate), _fmt(s.mean_latency), _fmt(s.p95_latency), _fmt(s.median_latency),
                 _fmt(min(s.replication_means)), _fmt(max(s.replication_means)))
                for s in ordered
            ),
        )
        written.append(path)

    path = out / "summary.json"
    path.write_text(json.dumps([s.to_dict() for s in summaries], indent=2, sort_keys=True) + "\n")
    written.append(path)

    if event_logs:
        for s in summaries:
            tag = s.mode.value if s.rate is None else f"{s.mode.value}_rate{s.rate:g}"
            for rep in s.replications:
                path = out / f"events_{tag}_r{rep.index}.csv"
                path.write_text("\n".join(rep.event_log) + "\n")
                written.append(path)
                path = out / f"decisions_{tag}_r{rep.index}.jsonl"
                path.write_text("".join(d.to_json() + "\n" for d in rep.decisions))
                written.append(path)
    return written
