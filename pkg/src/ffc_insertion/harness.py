"""Seeded Monte-Carlo insertion campaigns and their per-iteration metrics.

Every trial draws from its own generator,
``PCG64(SeedSequence([master_seed, trial_index]))``.  The initial offset is
the first draw from that stream; the controller and sensor consume the
rest.  A campaign therefore gives identical logs for any worker count,
and both controller arms see the same initial offsets.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .belief import PerceptionMatrix, StatusSpace, load_matrix, table2_matrix
from .controller import (
    ControllerConfig,
    Outcome,
    TrialLog,
    run_memory_controller,
    run_memoryless_controller,
)
from .perception import (
    ClassifierModel,
    TrajectorySensor,
    estimate_confusion,
    generate_dataset,
    load_model,
    position_grid,
)
from .sim import EnvConfig, InsertionEnv, MatrixSensor, TrajectoryParams, sample_initial_offset

METRIC_COLUMNS = (
    "iteration",
    "revisions",
    "mean_abs_revision",
    "perception_acc",
    "memory_acc",
    "rel_correct",
    "rel_incorrect",
    "rel_all",
    "stopped",
    "stop_success_rate",
    "mae",
    "cum_success",
)

MATRIX_SOURCES = ("table2", "file", "estimated")
OFFSET_SAMPLING = ("uniform", "stratified")
RUN_MODES = ("memory", "memoryless", "both")

# salt for the held-out set used when the likelihood is estimated from a model
_HELDOUT_STREAM = 2**32 + 1


def derive_rng_stream(master_seed: int, trial_index: int) -> np.random.Generator:
    if master_seed < 0 or trial_index < 0:
        raise ValueError("master_seed and trial_index must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, trial_index])))


@dataclass(frozen=True)
class RunConfig:
    trials: int = 100
    master_seed: int = 0
    mode: str = "memory"
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    trajectory: TrajectoryParams = field(default_factory=TrajectoryParams)
    matrix_source: str = "table2"
    matrix_path: str | None = None
    model_path: str | None = None
    alpha: float = 1.0
    heldout_reps: int = 30
    offset_sampling: str = "uniform"
    out_dir: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.mode not in RUN_MODES:
            raise ValueError(f"mode must be one of {RUN_MODES}")
        if self.matrix_source not in MATRIX_SOURCES:
            raise ValueError(f"matrix_source must be one of {MATRIX_SOURCES}")
        if self.matrix_source == "file" and not self.matrix_path:
            raise ValueError("matrix_source 'file' needs matrix_path")
        if self.offset_sampling not in OFFSET_SAMPLING:
            raise ValueError(f"offset_sampling must be one of {OFFSET_SAMPLING}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def arms(self) -> tuple[str, ...]:
        return ("memory", "memoryless") if self.mode == "both" else (self.mode,)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        if isinstance(d.get("controller"), dict):
            d["controller"] = ControllerConfig(**d["controller"])
        if isinstance(d.get("env"), dict):
            env = dict(d["env"])
            if isinstance(env.get("space"), dict):
                env["space"] = StatusSpace(**env["space"])
            d["env"] = EnvConfig(**env)
        if isinstance(d.get("trajectory"), dict):
            d["trajectory"] = TrajectoryParams(**d["trajectory"])
        return cls(**d)


PRESETS: dict[str, dict[str, Any]] = {
    # 100 tests per arm with the built-in table2 likelihood
    "paper100": {"trials": 100, "mode": "both", "matrix_source": "table2", "offset_sampling": "uniform"},
}


@dataclass
class MetricsTable:
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS)
            for r in self.rows:
                w.writerow(["" if _isnan(r[c]) else r[c] for c in METRIC_COLUMNS])


def _isnan(v) -> bool:
    return isinstance(v, float) and math.isnan(v)


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else float("nan")


def compute_metrics(logs: list[TrialLog]) -> MetricsTable:
    """Per-iteration statistics over the trials still active at each iteration."""
    if not logs:
        raise ValueError("no trial logs to aggregate")
    total = len(logs)
    depth = max(len(t.records) for t in logs)
    table = MetricsTable()
    successes_so_far = 0
    for i in range(depth):
        active = [t for t in logs if len(t.records) > i]
        if not active:
            continue
        recs = [t.records[i] for t in active]
        revised = [r for r in recs if r.revised]
        correct = [r for r in recs if r.estimate == r.status_after]
        incorrect = [r for r in recs if r.estimate != r.status_after]
        stopped = [t for t in active if t.stop_iteration == i]
        n_ok = sum(t.outcome is Outcome.STOPPED_SUCCESS for t in stopped)
        successes_so_far += n_ok
        with_rel = [r.reliability for r in recs if r.reliability is not None]
        table.rows.append(
            {
                "iteration": i,
                "revisions": len(revised),
                "mean_abs_revision": _mean([abs(r.estimate - r.percept) for r in revised]),
                "perception_acc": _mean([float(r.percept == r.status_after) for r in recs]),
                "memory_acc": len(correct) / len(recs),
                "rel_correct": _mean([r.reliability for r in correct if r.reliability is not None]),
                "rel_incorrect": _mean([r.reliability for r in incorrect if r.reliability is not None]),
                "rel_all": _mean(with_rel),
                "stopped": len(stopped),
                "stop_success_rate": n_ok / len(stopped) if stopped else float("nan"),
                "mae": _mean([abs(r.status_after) for r in recs]),
                "cum_success": successes_so_far / total,
            }
        )
    return table


def population_mae(logs: list[TrialLog]) -> list[float]:
    """MAE per iteration over all trials, holding stopped trials at their final status."""
    depth = max(len(t.records) for t in logs)
    out = []
    for i in range(depth):
        vals = [abs(t.records[min(i, len(t.records) - 1)].status_after) for t in logs]
        out.append(float(np.mean(vals)))
    return out


def summarize(logs: list[TrialLog], arm: str, cfg: RunConfig | None = None) -> dict:
    counts = {o.value: 0 for o in Outcome}
    for t in logs:
        counts[t.outcome.value] += 1
    n = len(logs)
    stopped = [t for t in logs if t.stopped]
    return {
        "mode": arm,
        "trials": n,
        "master_seed": None if cfg is None else cfg.master_seed,
        "counts": counts,
        "success_rate": counts["stopped_success"] / n,
        "wrong_stop_rate": counts["stopped_failure"] / n,
        "failure_rate": (counts["stopped_failure"] + counts["max_iters_reached"]) / n,
        "stopped_success_rate": counts["stopped_success"] / len(stopped) if stopped else None,
        "mean_insertions_to_stop": float(np.mean([t.stop_iteration + 1 for t in stopped])) if stopped else None,
        "belief_resets": sum(r.reset for t in logs for r in t.records),
        "mae_all_trials": population_mae(logs),
        "config": None if cfg is None else cfg.to_dict(),
    }


def resolve_matrix(cfg: RunConfig, model: ClassifierModel | None = None) -> PerceptionMatrix:
    if cfg.matrix_source == "table2":
        return table2_matrix()
    if cfg.matrix_source == "file":
        return load_matrix(cfg.matrix_path, cfg.env.space.delta_mm)
    if model is None:
        raise ValueError("matrix_source 'estimated' needs a classifier model")
    rng = derive_rng_stream(cfg.master_seed, _HELDOUT_STREAM)
    heldout = generate_dataset(cfg.env, cfg.trajectory, position_grid(cfg.env), cfg.heldout_reps, rng)
    return estimate_confusion(model, heldout, cfg.alpha)


def resolve_model(cfg: RunConfig) -> ClassifierModel | None:
    if cfg.model_path:
        return load_model(cfg.model_path)
    return None


def run_trial(
    cfg: RunConfig,
    arm: str,
    trial_index: int,
    matrix: PerceptionMatrix,
    model: ClassifierModel | None = None,
) -> TrialLog:
    rng = derive_rng_stream(cfg.master_seed, trial_index)
    offset = sample_initial_offset(cfg.env, rng, cfg.offset_sampling, trial_index)
    if cfg.env.sensor_mode == "trajectory_classified":
        if model is None:
            raise ValueError("trajectory sensing needs a classifier model")
        sensor = TrajectorySensor(model, cfg.trajectory)
    else:
        sensor = MatrixSensor(matrix)
    env = InsertionEnv(cfg.env, offset, sensor)
    ctrl = replace(cfg.controller, mode=arm)
    if arm == "memory":
        return run_memory_controller(env, matrix, ctrl, rng, trial_id=trial_index, master_seed=cfg.master_seed)
    return run_memoryless_controller(env, ctrl, rng, trial_id=trial_index, master_seed=cfg.master_seed)


def _run_chunk(args) -> list[TrialLog]:
    cfg, arm, indices, matrix, model = args
    return [run_trial(cfg, arm, i, matrix, model) for i in indices]


def run_trials(
    cfg: RunConfig,
    arm: str,
    matrix: PerceptionMatrix,
    model: ClassifierModel | None = None,
) -> list[TrialLog]:
    indices = range(cfg.trials)
    if cfg.workers == 1:
        return _run_chunk((cfg, arm, indices, matrix, model))
    n_chunks = cfg.workers * 4
    chunks = [list(indices[k::n_chunks]) for k in range(n_chunks)]
    chunks = [c for c in chunks if c]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        results = pool.map(_run_chunk, [(cfg, arm, c, matrix, model) for c in chunks])
        logs = [t for part in results for t in part]
    return sorted(logs, key=lambda t: t.trial_id)


@dataclass
class ArmResult:
    summary: dict
    metrics: MetricsTable
    logs: list[TrialLog]


def run_experiment(
    cfg: RunConfig,
    matrix: PerceptionMatrix | None = None,
    model: ClassifierModel | None = None,
) -> dict[str, ArmResult]:
    """Run every arm of ``cfg``; write outputs when ``cfg.out_dir`` is set.

    ``matrix`` and ``model`` override what ``cfg`` would load from disk.
    """
    if model is None:
        model = resolve_model(cfg)
    if matrix is None:
        matrix = resolve_matrix(cfg, model)
    if matrix.space.n != cfg.env.space.n:
        raise ValueError(f"perception matrix has n={matrix.space.n}, environment has n={cfg.env.space.n}")
    results = {}
    for arm in cfg.arms:
        logs = run_trials(cfg, arm, matrix, model)
        results[arm] = ArmResult(summarize(logs, arm, cfg), compute_metrics(logs), logs)
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        if len(results) == 1:
            (res,) = results.values()
            write_outputs(res.summary, res.metrics, res.logs, out, cfg)
        else:
            for arm, res in results.items():
                write_outputs(res.summary, res.metrics, res.logs, out / arm, cfg)
            _write_json(out / "summary.json", {arm: r.summary for arm, r in results.items()})
    return results


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def dump_trials(logs: Iterable[TrialLog], path: str | Path) -> None:
    with open(path, "w") as fh:
        for t in logs:
            fh.write(json.dumps(t.to_dict(), separators=(",", ":")))
            fh.write("\n")


def read_trials(path: str | Path) -> list[TrialLog]:
    with open(path) as fh:
        return [TrialLog.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_outputs(summary: dict, metrics: MetricsTable, logs: list[TrialLog], out_dir: str | Path, cfg: RunConfig | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "summary.json", summary)
    metrics.to_csv(out / "metrics.csv")
    dump_trials(logs, out / "trials.jsonl")
    if cfg is not None:
        _write_json(out / "run_config.json", cfg.to_dict())
