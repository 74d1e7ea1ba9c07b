"""Tactile trajectory -> contact-status percept.

A fixed 7-feature summary of each trajectory feeds a multinomial softmax
classifier trained by full-batch gradient descent.  The held-out confusion
matrix of that classifier is the likelihood the belief filter consumes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .belief import PerceptionMatrix, StatusSpace, parse_label, smooth_matrix, status_label, validate_matrix
from .sim import (
    EnvConfig,
    EnvState,
    Trajectory,
    TrajectoryParams,
    read_trajectory_csv,
    status_from_offset,
    synth_trajectory,
    write_trajectory_csv,
)

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "final_x",
    "max_x_minus_final_x",
    "mean_y",
    "final_y",
    "slope_y",
    "final_z",
    "mean_z",
)
N_FEATURES = len(FEATURE_NAMES)


class DegenerateTrajectory(ValueError):
    pass


class DegenerateData(ValueError):
    pass


class MissingClass(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2_penalty: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.l2_penalty < 0:
            raise ValueError("l2_penalty must be non-negative")


@dataclass
class LabeledSet:
    trajectories: list[Trajectory] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    offsets_mm: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def append(self, traj: Trajectory, label: int, offset_mm: float) -> None:
        self.trajectories.append(traj)
        self.labels.append(int(label))
        self.offsets_mm.append(float(offset_mm))

    def subset(self, idx: Sequence[int]) -> "LabeledSet":
        return LabeledSet(
            [self.trajectories[i] for i in idx],
            [self.labels[i] for i in idx],
            [self.offsets_mm[i] for i in idx],
        )

    def features(self) -> np.ndarray:
        if not self.trajectories:
            return np.zeros((0, N_FEATURES))
        return np.stack([extract_features(t) for t in self.trajectories])


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """Linear softmax over standardized features.

    Rows of ``weights`` follow ascending status order.  Features with
    ``active`` false had zero training variance and keep a zero weight.
    """

    space: StatusSpace
    weights: np.ndarray
    biases: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    active: np.ndarray | None = None

    def __post_init__(self):
        for name in ("weights", "biases", "feature_means", "feature_stds"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        active = np.ones(self.weights.shape[1], dtype=bool) if self.active is None else np.array(self.active, dtype=bool)
        object.__setattr__(self, "active", active)
        k = self.space.size
        if self.weights.shape != (k, N_FEATURES) or self.biases.shape != (k,):
            raise ValueError(f"expected weights {k}x{N_FEATURES} and {k} biases")
        if np.any(self.feature_stds <= 0):
            raise ValueError("feature_stds must be positive")

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.feature_means) / self.feature_stds

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self.standardize(features) @ self.weights.T + self.biases

    def with_params(self, weights: np.ndarray, biases: np.ndarray) -> "ClassifierModel":
        return ClassifierModel(self.space, weights, biases, self.feature_means, self.feature_stds, self.active)


def _least_squares_slope(values: np.ndarray) -> float:
    t = np.arange(1, values.size + 1, dtype=np.float64)
    tc = t - t.mean()
    return float(tc @ (values - values.mean()) / (tc @ tc))


def extract_features(traj: Trajectory) -> np.ndarray:
    s = traj.samples
    if s.shape[0] < 2:
        raise DegenerateTrajectory(f"need at least 2 samples, got {s.shape[0]}")
    x, y, z = s[:, 0], s[:, 1], s[:, 2]
    return np.array(
        [
            x[-1],
            x.max() - x[-1],
            y.mean(),
            y[-1],
            _least_squares_slope(y),
            z[-1],
            z.mean(),
        ]
    )


def generate_dataset(
    env_cfg: EnvConfig,
    params: TrajectoryParams,
    positions: Sequence[float],
    reps: int,
    rng: np.random.Generator,
) -> LabeledSet:
    h = env_cfg.offset_halfspan_mm
    out = LabeledSet()
    for pos in positions:
        if abs(pos) > h + 1e-9:
            raise ValueError(f"position {pos} mm outside +-{h} mm")
    for pos in positions:
        label = status_from_offset(pos, env_cfg.space)
        for _ in range(reps):
            traj = synth_trajectory(EnvState(float(pos)), params, rng, env_cfg.space.delta_mm)
            out.append(traj, label, pos)
    return out


def position_grid(env_cfg: EnvConfig, step_mm: float = 0.05) -> list[float]:
    """Sign-symmetric grid over the reachable span; endpoints included when the step divides it."""
    if step_mm <= 0:
        raise ValueError("step_mm must be > 0")
    k = int(np.floor(env_cfg.offset_halfspan_mm / step_mm + 1e-9))
    return [round(i * step_mm, 10) for i in range(-k, k + 1)]


def stratified_split(data: LabeledSet, test_fraction: float, rng: np.random.Generator) -> tuple[LabeledSet, LabeledSet]:
    """Split per label so each region keeps the same train/test proportion."""
    labels = np.asarray(data.labels)
    train_idx, test_idx = [], []
    for s in np.unique(labels):
        idx = np.flatnonzero(labels == s)
        idx = idx[rng.permutation(idx.size)]
        n_test = int(round(test_fraction * idx.size))
        test_idx.extend(idx[:n_test].tolist())
        train_idx.extend(idx[n_test:].tolist())
    return data.subset(sorted(train_idx)), data.subset(sorted(test_idx))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_gradient(
    model: ClassifierModel,
    features: np.ndarray,
    labels: Sequence[int],
    l2_penalty: float = 1e-4,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2_penalty * ||W||^2`` and its exact gradient.

    ``features`` are raw (unstandardized); ``labels`` are statuses.  Returns
    ``(loss, dW, db)``.  Biases are not penalized.
    """
    X = model.standardize(np.atleast_2d(np.asarray(features, dtype=np.float64)))
    y = np.asarray(labels, dtype=int) + model.space.n
    N = X.shape[0]
    if N == 0:
        raise ValueError("empty batch")
    logits = X @ model.weights.T + model.biases
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -log_p[np.arange(N), y].mean() + l2_penalty * float(np.sum(model.weights**2))
    resid = np.exp(log_p)
    resid[np.arange(N), y] -= 1.0
    resid /= N
    dW = resid.T @ X + 2.0 * l2_penalty * model.weights
    db = resid.sum(axis=0)
    return float(loss), dW, db


def train_classifier(
    data: LabeledSet,
    cfg: TrainConfig = TrainConfig(),
    space: StatusSpace = StatusSpace(),
    history: list[float] | None = None,
) -> ClassifierModel:
    """Fit feature standardization, then full-batch gradient descent from zero weights.

    A step that would increase the loss is rejected and the learning rate
    halved, so the loss sequence appended to ``history`` never increases.
    """
    if len(set(data.labels)) < 2:
        raise DegenerateData("training data must contain at least two statuses")
    X = data.features()
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    active = stds > 1e-12
    if not active.any():
        raise DegenerateData("every feature has zero variance")
    if not active.all():
        dropped = [FEATURE_NAMES[i] for i in np.flatnonzero(~active)]
        log.warning("features with zero variance fixed at zero weight: %s", ", ".join(dropped))
    stds = np.where(active, stds, 1.0)
    k = space.size
    model = ClassifierModel(space, np.zeros((k, N_FEATURES)), np.zeros(k), means, stds, active)
    lr = cfg.learning_rate
    loss, dW, db = loss_and_gradient(model, X, data.labels, cfg.l2_penalty)
    if history is not None:
        history.append(loss)
    for _ in range(cfg.epochs):
        while True:
            cand = model.with_params(model.weights - lr * dW * active, model.biases - lr * db)
            c_loss, c_dW, c_db = loss_and_gradient(cand, X, data.labels, cfg.l2_penalty)
            if c_loss <= loss or lr < 1e-12:
                break
            lr /= 2
        if c_loss > loss:
            break
        model, loss, dW, db = cand, c_loss, c_dW, c_db
        if history is not None:
            history.append(loss)
    return model


def predict_proba(model: ClassifierModel, features: np.ndarray) -> np.ndarray:
    return softmax(model.logits(np.atleast_2d(features)))


def predict_features(model: ClassifierModel, features: np.ndarray) -> np.ndarray:
    """Vectorized classification of a feature matrix; returns statuses."""
    return np.argmax(model.logits(np.atleast_2d(features)), axis=1) - model.space.n


def classify(model: ClassifierModel, traj: Trajectory) -> int:
    return int(predict_features(model, extract_features(traj))[0])


def accuracy(model: ClassifierModel, data: LabeledSet) -> float:
    pred = predict_features(model, data.features())
    return float(np.mean(pred == np.asarray(data.labels)))


def confusion_counts(model: ClassifierModel, data: LabeledSet) -> np.ndarray:
    space = model.space
    counts = np.zeros((space.size, space.size))
    pred = predict_features(model, data.features())
    for s, z in zip(data.labels, pred):
        counts[space.index(s), space.index(int(z))] += 1
    return counts


def estimate_confusion(model: ClassifierModel, heldout: LabeledSet, alpha: float = 0.0) -> PerceptionMatrix:
    space = model.space
    if len(heldout) == 0:
        raise MissingClass("held-out set is empty")
    counts = confusion_counts(model, heldout)
    n_s = counts.sum(axis=1)
    missing = [status_label(space.status_at(i)) for i in np.flatnonzero(n_s == 0)]
    if missing:
        raise MissingClass(f"no held-out samples for {', '.join(missing)}")
    raw = validate_matrix(counts / n_s[:, None], space, n_s)
    return smooth_matrix(raw, alpha)


@dataclass(frozen=True)
class TrajectorySensor:
    """Synthesizes a trajectory at the current offset and classifies it."""

    model: ClassifierModel
    params: TrajectoryParams = TrajectoryParams()

    def perceive(self, state, space, rng):
        traj = synth_trajectory(state, self.params, rng, space.delta_mm)
        return classify(self.model, traj)


def model_to_json(model: ClassifierModel) -> dict:
    return {
        "n": model.space.n,
        "delta_mm": model.space.delta_mm,
        "labels": model.space.labels,
        "feature_names": list(FEATURE_NAMES),
        "weights": model.weights.tolist(),
        "biases": model.biases.tolist(),
        "feature_means": model.feature_means.tolist(),
        "feature_stds": model.feature_stds.tolist(),
        "active_features": model.active.tolist(),
    }


def model_from_json(doc: dict) -> ClassifierModel:
    if list(doc.get("feature_names", FEATURE_NAMES)) != list(FEATURE_NAMES):
        raise ValueError(f"model features {doc['feature_names']} do not match {list(FEATURE_NAMES)}")
    space = StatusSpace(int(doc["n"]), float(doc.get("delta_mm", 0.5)))
    if "labels" in doc and [parse_label(x) for x in doc["labels"]] != list(space.statuses):
        raise ValueError("model labels must be in ascending status order")
    return ClassifierModel(
        space,
        doc["weights"],
        doc["biases"],
        doc["feature_means"],
        doc["feature_stds"],
        doc.get("active_features"),
    )


def save_model(model: ClassifierModel, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json(model), fh, indent=2)
        fh.write("\n")


def load_model(path: str | Path) -> ClassifierModel:
    with open(path) as fh:
        return model_from_json(json.load(fh))


def save_dataset(data: LabeledSet, directory: str | Path) -> Path:
    """Write one CSV per trajectory plus ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = []
    width = max(4, len(str(len(data))))
    for i, (traj, label, off) in enumerate(zip(data.trajectories, data.labels, data.offsets_mm)):
        name = f"traj_{i:0{width}d}.csv"
        write_trajectory_csv(traj, directory / name)
        manifest.append({"path": name, "label": status_label(label), "offset_mm": off})
    path = directory / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path


def load_dataset(manifest_path: str | Path) -> LabeledSet:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    with open(manifest_path) as fh:
        entries = json.load(fh)
    out = LabeledSet()
    for e in entries:
        p = Path(e["path"])
        if not p.is_absolute():
            p = manifest_path.parent / p
        out.append(read_trajectory_csv(p), parse_label(e["label"]), e["offset_mm"])
    return out
