"""Reliability-controlled insertion loop and the memoryless baseline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .belief import (
    Belief,
    ImpossibleObservation,
    PerceptionMatrix,
    map_estimate,
    measurement_update,
    shift_update,
    uniform_belief,
)
from .sim import InsertionEnv

log = logging.getLogger(__name__)

MODES = ("memory", "memoryless")
IMPOSSIBLE_POLICIES = ("reset_uniform", "abort")


class Outcome(str, Enum):
    STOPPED_SUCCESS = "stopped_success"
    STOPPED_FAILURE = "stopped_failure"
    MAX_ITERS_REACHED = "max_iters_reached"


@dataclass(frozen=True)
class ControllerConfig:
    gamma_target: float = 0.999
    max_iterations: int = 20
    mode: str = "memory"
    on_impossible: str = "reset_uniform"

    def __post_init__(self):
        if not 0.0 < self.gamma_target < 1.0:
            raise ValueError("gamma_target must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.on_impossible not in IMPOSSIBLE_POLICIES:
            raise ValueError(f"on_impossible must be one of {IMPOSSIBLE_POLICIES}")


@dataclass(frozen=True)
class IterationRecord:
    """Audit of one insertion attempt.

    ``reliability`` and ``belief`` are ``None`` for the memoryless
    baseline, which never forms a distribution.  ``reset`` marks an
    iteration where an impossible percept forced a fresh uniform prior.
    """

    index: int
    action: int
    status_before: int
    status_after: int
    percept: int
    estimate: int
    reliability: float | None
    revised: bool
    belief: tuple[float, ...] | None = None
    reset: bool = False

    def to_dict(self) -> dict:
        return {
            "i": self.index,
            "u": self.action,
            "s_before": self.status_before,
            "s_after": self.status_after,
            "z": self.percept,
            "s_hat": self.estimate,
            "gamma": self.reliability,
            "revised": self.revised,
            "belief": None if self.belief is None else list(self.belief),
            "reset": self.reset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(
            index=d["i"],
            action=d["u"],
            status_before=d["s_before"],
            status_after=d["s_after"],
            percept=d["z"],
            estimate=d["s_hat"],
            reliability=d["gamma"],
            revised=d["revised"],
            belief=None if d["belief"] is None else tuple(d["belief"]),
            reset=d.get("reset", False),
        )


@dataclass
class TrialLog:
    trial_id: int
    master_seed: int | None
    initial_offset_mm: float
    mode: str
    records: list[IterationRecord] = field(default_factory=list)
    outcome: Outcome = Outcome.MAX_ITERS_REACHED
    stop_iteration: int | None = None

    @property
    def stopped(self) -> bool:
        return self.outcome is not Outcome.MAX_ITERS_REACHED

    @property
    def final_status(self) -> int:
        return self.records[-1].status_after

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "master_seed": self.master_seed,
            "initial_offset_mm": self.initial_offset_mm,
            "mode": self.mode,
            "outcome": self.outcome.value,
            "stop_iteration": self.stop_iteration,
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialLog":
        return cls(
            trial_id=d["trial_id"],
            master_seed=d["master_seed"],
            initial_offset_mm=d["initial_offset_mm"],
            mode=d["mode"],
            records=[IterationRecord.from_dict(r) for r in d["records"]],
            outcome=Outcome(d["outcome"]),
            stop_iteration=d["stop_iteration"],
        )


def select_action(s_hat: int) -> int:
    # u = -s_hat moves an estimated error of s_hat back into M
    return -s_hat


def should_stop(s_hat: int, gamma: float, cfg: ControllerConfig) -> bool:
    return s_hat == 0 and gamma > cfg.gamma_target


def _finish(log_: TrialLog, index: int, final_status: int) -> TrialLog:
    log_.stop_iteration = index
    log_.outcome = Outcome.STOPPED_SUCCESS if final_status == 0 else Outcome.STOPPED_FAILURE
    return log_


def run_memory_controller(
    env: InsertionEnv,
    matrix: PerceptionMatrix,
    cfg: ControllerConfig,
    rng: np.random.Generator,
    *,
    trial_id: int = 0,
    master_seed: int | None = None,
    prior: Belief | None = None,
) -> TrialLog:
    """Run the belief-tracking insertion loop until the stop rule fires.

    Each iteration shifts the belief by the commanded action, moves the
    cable, inserts, and folds the percept into the belief.  The first
    action is 0, so the first insertion happens at the initial offset.
    """
    space = env.space
    belief = prior if prior is not None else uniform_belief(space)
    out = TrialLog(trial_id, master_seed, env.state.offset_mm, "memory")
    u = 0
    for i in range(cfg.max_iterations):
        before = env.status
        belief = shift_update(belief, u)
        env.apply_action(u)
        after = env.status
        z = env.insert(rng)
        reset = False
        try:
            belief = measurement_update(belief, z, matrix)
        except ImpossibleObservation:
            if cfg.on_impossible == "abort":
                raise
            log.debug("trial %s iteration %d: impossible percept %d, resetting belief", trial_id, i, z)
            reset = True
            belief = uniform_belief(space)
            try:
                belief = measurement_update(belief, z, matrix)
            except ImpossibleObservation:
                pass
        s_hat, gamma = map_estimate(belief)
        out.records.append(
            IterationRecord(i, u, before, after, z, s_hat, gamma, s_hat != z, tuple(belief.probs.tolist()), reset)
        )
        if should_stop(s_hat, gamma, cfg):
            return _finish(out, i, after)
        u = select_action(s_hat)
    out.outcome = Outcome.MAX_ITERS_REACHED
    return out


def run_memoryless_controller(
    env: InsertionEnv,
    cfg: ControllerConfig,
    rng: np.random.Generator,
    *,
    trial_id: int = 0,
    master_seed: int | None = None,
) -> TrialLog:
    """Baseline that trusts every raw percept and stops on the first ``M``."""
    out = TrialLog(trial_id, master_seed, env.state.offset_mm, "memoryless")
    u = 0
    for i in range(cfg.max_iterations):
        before = env.status
        env.apply_action(u)
        after = env.status
        z = env.insert(rng)
        out.records.append(IterationRecord(i, u, before, after, z, z, None, False))
        if z == 0:
            return _finish(out, i, after)
        u = select_action(z)
    out.outcome = Outcome.MAX_ITERS_REACHED
    return out
