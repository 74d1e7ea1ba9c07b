"""Simulated insertion world.

The cable position is a continuous signed offset in mm, centered so that
the insertable band ``M`` is ``[-delta/2, +delta/2]``; positive offsets are
left errors.  Error regions of width ``delta`` tile outward from ``M`` and
the status saturates at ``+-n`` beyond the modeled band.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .belief import PerceptionMatrix, StatusSpace

SENSOR_MODES = ("matrix_sampled", "trajectory_classified")


class OffsetOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    space: StatusSpace = field(default_factory=StatusSpace)
    offset_halfspan_mm: float | None = None
    sensor_mode: str = "matrix_sampled"

    def __post_init__(self):
        if self.offset_halfspan_mm is None:
            d = self.space.delta_mm
            object.__setattr__(self, "offset_halfspan_mm", self.space.n * d + d / 2)
        if self.offset_halfspan_mm < self.space.delta_mm / 2:
            raise ValueError("offset_halfspan_mm must be at least delta/2")
        if self.sensor_mode not in SENSOR_MODES:
            raise ValueError(f"sensor_mode must be one of {SENSOR_MODES}")


@dataclass(frozen=True)
class EnvState:
    offset_mm: float
    insert_count: int = 0


@dataclass(frozen=True)
class TrajectoryParams:
    T: int = 100
    A_x: float = 1.0
    c_y: float = 1.0
    m0_mm: float = 0.75
    c_z: float = 0.8
    noise_sigma: float = 0.05

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be at least 2")
        if min(self.A_x, self.c_y, self.c_z, self.noise_sigma) < 0:
            raise ValueError("amplitudes and noise_sigma must be non-negative")
        if not self.m0_mm > 0:
            raise ValueError("m0_mm must be positive")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """``T x 3`` array of ``(x, y, z)`` tactile readings."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"trajectory must be T x 3, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return np.array_equal(self.samples, other.samples)

    @property
    def x(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def z(self) -> np.ndarray:
        return self.samples[:, 2]


def init_env(cfg: EnvConfig, initial_offset_mm: float) -> EnvState:
    if abs(initial_offset_mm) > cfg.offset_halfspan_mm:
        raise OffsetOutOfRange(
            f"initial offset {initial_offset_mm} mm outside +-{cfg.offset_halfspan_mm} mm"
        )
    return EnvState(float(initial_offset_mm), 0)


def status_from_offset(offset_mm: float, space: StatusSpace) -> int:
    half = space.delta_mm / 2
    mag = abs(offset_mm)
    if mag <= half:
        return 0
    k = min(space.n, math.ceil((mag - half) / space.delta_mm))
    return k if offset_mm > 0 else -k


def status_of(state: EnvState, space: StatusSpace) -> int:
    return status_from_offset(state.offset_mm, space)


def apply_action(state: EnvState, u: int, space: StatusSpace) -> EnvState:
    if u == 0:
        return state
    return replace(state, offset_mm=state.offset_mm + u * space.delta_mm)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one index using a single ``rng.random()`` call."""
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    # guard against rounding past the last non-zero entry
    nz = np.flatnonzero(probs)
    return min(max(idx, int(nz[0])), int(nz[-1]))


def sample_percept(state: EnvState, matrix: PerceptionMatrix, space: StatusSpace, rng: np.random.Generator) -> int:
    s = status_of(state, space)
    return sample_categorical(matrix.row(s), rng) - space.n


def alignment_error(offset_mm: float, delta_mm: float) -> float:
    return max(0.0, abs(offset_mm) - delta_mm / 2)


def synth_trajectory(
    state: EnvState,
    params: TrajectoryParams,
    rng: np.random.Generator | None,
    delta_mm: float = 0.5,
) -> Trajectory:
    """Parametric stand-in for the tactile response of one insertion.

    Inside ``M`` the x channel shows a rise-and-fall bump with flat shear.
    Outside it all three channels ramp up over the insertion: y with the
    sign of the offset and an amplitude that peaks at ``m0_mm``, z with an
    amplitude linear in the alignment error.
    """
    T = params.T
    t = np.arange(1, T + 1, dtype=np.float64)
    r = t / T
    m = alignment_error(state.offset_mm, delta_mm)
    out = np.zeros((T, 3))
    if m == 0:
        out[:, 0] = params.A_x * np.sin(np.pi * t / T)
    else:
        ratio = m / params.m0_mm
        a_y = params.c_y * ratio * math.exp(1.0 - ratio)
        a_z = params.c_z * m
        out[:, 0] = params.A_x * r
        out[:, 1] = math.copysign(1.0, state.offset_mm) * a_y * r
        out[:, 2] = a_z * r
    if params.noise_sigma > 0:
        if rng is None:
            raise ValueError("a random generator is required when noise_sigma > 0")
        out += rng.normal(0.0, params.noise_sigma, size=out.shape)
    return Trajectory(out)


def region_bounds(s: int, cfg: EnvConfig) -> tuple[float, float]:
    """Offset interval (mm) covered by status ``s`` within the reachable span."""
    d = cfg.space.delta_mm
    if s == 0:
        return -d / 2, d / 2
    k = abs(s)
    lo = d / 2 + (k - 1) * d
    hi = cfg.offset_halfspan_mm if k == cfg.space.n else d / 2 + k * d
    return (lo, hi) if s > 0 else (-hi, -lo)


def sample_initial_offset(
    cfg: EnvConfig, rng: np.random.Generator, mode: str = "uniform", trial_index: int = 0
) -> float:
    """Uniform over the reachable span, or uniform within region ``trial_index mod (2n+1)``."""
    if mode == "uniform":
        h = cfg.offset_halfspan_mm
        return float(rng.uniform(-h, h))
    if mode == "stratified":
        space = cfg.space
        s = space.status_at(trial_index % space.size)
        lo, hi = region_bounds(s, cfg)
        return float(rng.uniform(lo, hi))
    raise ValueError(f"unknown offset sampling mode {mode!r}")


class Sensor(Protocol):
    def perceive(self, state: EnvState, space: StatusSpace, rng: np.random.Generator) -> int: ...


@dataclass(frozen=True)
class MatrixSensor:
    """Draws percepts from the rows of a confusion matrix."""

    matrix: PerceptionMatrix

    def perceive(self, state, space, rng):
        return sample_percept(state, self.matrix, space, rng)


class ScriptedSensor:
    """Replays a fixed percept sequence; used to pin controller behaviour in tests."""

    def __init__(self, percepts: Sequence[int], cycle: bool = False):
        self.percepts = list(percepts)
        self.cycle = cycle
        self._i = 0

    def perceive(self, state, space, rng):
        if self._i >= len(self.percepts):
            if not self.cycle:
                raise IndexError("scripted sensor ran out of percepts")
            self._i = 0
        z = self.percepts[self._i]
        self._i += 1
        return z


class InsertionEnv:
    """One episode's world: owns the cable state and the sensor."""

    def __init__(self, cfg: EnvConfig, initial_offset_mm: float, sensor: Sensor):
        self.cfg = cfg
        self.state = init_env(cfg, initial_offset_mm)
        self.sensor = sensor

    @property
    def space(self) -> StatusSpace:
        return self.cfg.space

    @property
    def status(self) -> int:
        return status_of(self.state, self.cfg.space)

    def apply_action(self, u: int) -> None:
        self.state = apply_action(self.state, u, self.cfg.space)

    def insert(self, rng: np.random.Generator) -> int:
        """Perform one insertion attempt and return the percept."""
        self.state = replace(self.state, insert_count=self.state.insert_count + 1)
        return self.sensor.perceive(self.state, self.cfg.space, rng)


def write_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z"])
        for t, (x, y, z) in enumerate(traj.samples, start=1):
            w.writerow([t, repr(float(x)), repr(float(y)), repr(float(z))])


def read_trajectory_csv(path: str | Path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["t", "x", "y", "z"]:
            raise ValueError(f"{path}: expected header t,x,y,z, got {reader.fieldnames}")
        rows = [(float(r["x"]), float(r["y"]), float(r["z"])) for r in reader]
    return Trajectory(np.array(rows).reshape(-1, 3))
