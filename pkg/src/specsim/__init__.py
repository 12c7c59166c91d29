"""Discrete-event simulator for speculative LLM search agents."""

from .action_server import ActionKey, ActionServer, BufferStats
from .agent import AgentConfig, Phase, sample_speculative_actions, score_model
from .cost_model import CostModelParams, PrefillSet, calibrate, hybrid_batch_time
from .engine import Engine, InferenceRequest, Policy, RequestKind
from .experiment import ExperimentConfig, RunSummary, emit, load_config, preset, run, sweep
from .scheduler import SchedulerConfig, SpecCandidate, select_step
from .simulation import Mode, Simulation
from .workload import HitProfile, TaskShapeConfig, generate_arrivals, generate_hit_profile, generate_task

__version__ = "0.1.0"
