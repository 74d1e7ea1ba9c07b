"""Discrete reliability distribution over cable contact statuses.

Statuses are integers ``s`` in ``[-n, n]``: positive values are left
alignment errors (``L1..Ln``), negative values right errors (``R1..Rn``)
and ``0`` is the insertable middle region ``M``.  Every array in this
module is indexed in ascending-``s`` order, i.e. ``R_n, ..., R_1, M, L_1,
..., L_n``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-6


class MalformedMatrix(ValueError):
    """Perception matrix is not square or not row-stochastic."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class ImpossibleObservation(RuntimeError):
    """The percept has zero likelihood under the whole prior support."""

    def __init__(self, z: int):
        super().__init__(f"percept {status_label(z)} has zero likelihood under the current belief")
        self.z = z


def status_label(s: int) -> str:
    if s == 0:
        return "M"
    return f"L{s}" if s > 0 else f"R{-s}"


def parse_label(label: str | int) -> int:
    """Inverse of :func:`status_label`; integers pass through."""
    if isinstance(label, (int, np.integer)):
        return int(label)
    text = label.strip().upper()
    if text == "M":
        return 0
    if len(text) >= 2 and text[0] in "LR" and text[1:].isdigit():
        k = int(text[1:])
        return k if text[0] == "L" else -k
    raise ValueError(f"unknown status label {label!r}")


@dataclass(frozen=True)
class StatusSpace:
    n: int = 3
    delta_mm: float = 0.5

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n}")
        if not self.delta_mm > 0:
            raise ValueError(f"delta_mm must be positive, got {self.delta_mm}")

    @property
    def size(self) -> int:
        return 2 * self.n + 1

    @property
    def statuses(self) -> range:
        return range(-self.n, self.n + 1)

    @property
    def labels(self) -> list[str]:
        return [status_label(s) for s in self.statuses]

    def index(self, s: int) -> int:
        if not self.contains(s):
            raise ValueError(f"status {s} outside [-{self.n}, {self.n}]")
        return s + self.n

    def status_at(self, idx: int) -> int:
        return idx - self.n

    def contains(self, s: int) -> bool:
        return -self.n <= s <= self.n


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Belief:
    """Probability mass over the statuses of ``space`` (ascending ``s``)."""

    space: StatusSpace
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.shape != (self.space.size,):
            raise ValueError(f"belief needs {self.space.size} entries, got shape {probs.shape}")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("belief entries must be finite and non-negative")
        object.__setattr__(self, "probs", probs)

    def __getitem__(self, s: int) -> float:
        return float(self.probs[self.space.index(s)])

    def __eq__(self, other):
        if not isinstance(other, Belief):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.probs, other.probs)

    @property
    def total(self) -> float:
        return float(self.probs.sum())

    @classmethod
    def delta(cls, space: StatusSpace, s: int) -> "Belief":
        probs = np.zeros(space.size)
        probs[space.index(s)] = 1.0
        return cls(space, probs)


@dataclass(frozen=True, eq=False)
class PerceptionMatrix:
    """Row-stochastic likelihood ``rows[s][z] = p(z | s)``.

    ``counts`` optionally holds the number of samples behind each row; it
    weights Laplace smoothing and is ``None`` for hand-entered matrices.
    """

    space: StatusSpace
    rows: np.ndarray
    counts: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "rows", _frozen(self.rows))
        if self.counts is not None:
            object.__setattr__(self, "counts", _frozen(self.counts))

    def __eq__(self, other):
        if not isinstance(other, PerceptionMatrix):
            return NotImplemented
        return self.space == other.space and np.array_equal(self.rows, other.rows)

    def likelihood(self, z: int) -> np.ndarray:
        """Column ``p(z | s)`` for every ``s``."""
        return self.rows[:, self.space.index(z)]

    def row(self, s: int) -> np.ndarray:
        return self.rows[self.space.index(s)]


def uniform_belief(space: StatusSpace) -> Belief:
    return Belief(space, np.full(space.size, 1.0 / space.size))


def shift_update(b: Belief, u: int) -> Belief:
    """Move belief mass by ``u`` statuses, dropping what leaves the space.

    The result is deliberately not renormalized; the next measurement
    update's normalizer absorbs the lost mass.
    """
    n = b.space.n
    if abs(u) > n:
        raise ValueError(f"action {u} outside [-{n}, {n}]")
    out = np.zeros_like(b.probs)
    if u >= 0:
        out[u:] = b.probs[: b.space.size - u]
    else:
        out[:u] = b.probs[-u:]
    if not out.any():
        raise ValueError("shift left no probability mass inside the status space")
    return Belief(b.space, out)


def measurement_update(b: Belief, z: int, m: PerceptionMatrix) -> Belief:
    """Bayes update of ``b`` with percept ``z`` under likelihood ``m``."""
    if m.space.n != b.space.n:
        raise ValueError("belief and perception matrix have different status counts")
    unnorm = m.likelihood(z) * b.probs
    eta = unnorm.sum()
    if eta <= 0.0:
        raise ImpossibleObservation(z)
    return Belief(b.space, unnorm / eta)


def map_estimate(b: Belief) -> tuple[int, float]:
    """Most reliable status and its probability.

    Exact ties go to the smallest ``|s|``, then to the negative status.
    """
    p = b.probs
    top = p.max()
    candidates = [b.space.status_at(int(i)) for i in np.flatnonzero(p == top)]
    s_hat = min(candidates, key=lambda s: (abs(s), s))
    return s_hat, float(top)


def validate_matrix(rows, space: StatusSpace, counts=None) -> PerceptionMatrix:
    arr = np.asarray(rows, dtype=np.float64)
    k = space.size
    if arr.shape != (k, k):
        raise MalformedMatrix(f"expected a {k}x{k} matrix, got shape {arr.shape}")
    for i, row in enumerate(arr):
        if not np.all(np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
            raise MalformedMatrix(f"row {i} ({status_label(space.status_at(i))}) has entries outside [0, 1]", row=i)
        if abs(row.sum() - 1.0) > ROW_SUM_TOL:
            raise MalformedMatrix(
                f"row {i} ({status_label(space.status_at(i))}) sums to {row.sum():.6g}, not 1", row=i
            )
    if counts is not None:
        counts = np.asarray(counts, dtype=np.float64)
        if counts.shape != (k,) or np.any(counts < 0):
            raise MalformedMatrix(f"counts must be {k} non-negative numbers")
    return PerceptionMatrix(space, arr, counts)


def smooth_matrix(m: PerceptionMatrix, alpha: float) -> PerceptionMatrix:
    """Additive (Laplace) smoothing of every row, weighted by its sample count."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha == 0:
        return m
    k = m.space.size
    n_s = np.ones(k) if m.counts is None else np.asarray(m.counts, dtype=np.float64)
    rows = (m.rows * n_s[:, None] + alpha) / (n_s[:, None] + alpha * k)
    # exact renormalization so rows sum to 1 to machine precision
    rows = rows / rows.sum(axis=1, keepdims=True)
    return PerceptionMatrix(m.space, rows, m.counts)


# Perception distribution measured on the real sensor, printed with both
# axes ordered L3..R3 (true status -> signal).
PRINTED_LABEL_ORDER = ["L3", "L2", "L1", "M", "R1", "R2", "R3"]
_TABLE2_PRINTED = [
    [1, 0, 0, 0, 0, 0, 0],
    [0.0182, 0.9636, 0.0182, 0, 0, 0, 0],
    [0, 0.0182, 0.9818, 0, 0, 0, 0],
    [0, 0, 0.0182, 0.9636, 0.0182, 0, 0],
    [0, 0, 0, 0.0182, 0.9636, 0.0182, 0],
    [0, 0, 0, 0, 0.0189, 0.9811, 0],
    [0, 0, 0, 0, 0, 0.0182, 0.9818],
]


def reorder_rows(rows, labels: Sequence[str], space: StatusSpace) -> np.ndarray:
    """Permute a matrix whose rows and columns follow ``labels`` into canonical order."""
    arr = np.asarray(rows, dtype=np.float64)
    statuses = [parse_label(lab) for lab in labels]
    if sorted(statuses) != list(space.statuses):
        raise MalformedMatrix(f"labels {list(labels)} do not cover {space.labels}")
    perm = [statuses.index(s) for s in space.statuses]
    return arr[np.ix_(perm, perm)]


def table2_matrix() -> PerceptionMatrix:
    space = StatusSpace(3, 0.5)
    return validate_matrix(reorder_rows(_TABLE2_PRINTED, PRINTED_LABEL_ORDER, space), space)


def identity_matrix(space: StatusSpace) -> PerceptionMatrix:
    return validate_matrix(np.eye(space.size), space)


def matrix_to_json(m: PerceptionMatrix) -> dict:
    doc = {"n": m.space.n, "labels": m.space.labels, "rows": m.rows.tolist()}
    if m.counts is not None:
        doc["counts"] = m.counts.tolist()
    return doc


def matrix_from_json(doc: dict, delta_mm: float = 0.5) -> PerceptionMatrix:
    """Parse the perception-matrix JSON document.

    ``label_order`` (e.g. the printed ``L3..R3`` order) takes precedence over
    ``labels`` for interpreting row/column order; the result is canonical.
    """
    try:
        n = int(doc["n"])
        rows = doc["rows"]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedMatrix(f"matrix document needs 'n' and 'rows': {exc}") from None
    space = StatusSpace(n, float(doc.get("delta_mm", delta_mm)))
    order = doc.get("label_order") or doc.get("labels") or space.labels
    if len(order) != space.size:
        raise MalformedMatrix(f"expected {space.size} labels, got {len(order)}")
    try:
        arr = np.asarray(rows, dtype=np.float64)
    except ValueError:
        raise MalformedMatrix("rows must be a rectangular array of numbers") from None
    if arr.shape != (space.size, space.size):
        raise MalformedMatrix(f"expected a {space.size}x{space.size} matrix, got shape {arr.shape}")
    counts = doc.get("counts")
    statuses = [parse_label(lab) for lab in order]
    canonical = reorder_rows(arr, order, space)
    if counts is not None:
        counts = [counts[statuses.index(s)] for s in space.statuses]
    return validate_matrix(canonical, space, counts)


def load_matrix(path: str | Path, delta_mm: float = 0.5) -> PerceptionMatrix:
    with open(path) as fh:
        return matrix_from_json(json.load(fh), delta_mm)


def save_matrix(m: PerceptionMatrix, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(matrix_to_json(m), fh, indent=2)
        fh.write("\n")
