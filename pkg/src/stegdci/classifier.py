"""Random-subspace Fisher linear discriminant ensemble with a vote threshold."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DescriptorMismatch, InvalidArgument, IoError, ParseError, UnsupportedVersion
from .imaging import SeededRng

MODEL_VERSION = 1
MAX_SUBSPACE = 200
RIDGE_FACTOR = 1e-6
HOLDOUT_FRACTION = 0.2


class ThresholdMode(enum.Enum):
    MajorityVote = "majority"
    ValidationTuned = "validation"


@dataclass(frozen=True)
class TrainConfig:
    n_learners: int = 51
    subspace_dim: Optional[int] = None  # None: ceil(D/4) capped at 200
    seed: int = 0
    threshold_mode: ThresholdMode = ThresholdMode.MajorityVote

    def __post_init__(self):
        if self.n_learners < 1 or self.n_learners % 2 == 0:
            raise InvalidArgument(f"n_learners must be a positive odd number, got {self.n_learners}")
        if self.subspace_dim is not None and self.subspace_dim < 1:
            raise InvalidArgument(f"subspace_dim must be >= 1, got {self.subspace_dim}")
        if not isinstance(self.threshold_mode, ThresholdMode):
            object.__setattr__(self, "threshold_mode", ThresholdMode(self.threshold_mode))

    def resolved_subspace(self, D: int) -> int:
        d = self.subspace_dim if self.subspace_dim is not None else min(math.ceil(D / 4), MAX_SUBSPACE)
        if not 1 <= d <= D:
            raise InvalidArgument(f"subspace_dim {d} outside [1, {D}]")
        return d

    def to_json(self) -> dict:
        return {"n_learners": self.n_learners, "subspace_dim": self.subspace_dim,
                "seed": self.seed, "threshold_mode": self.threshold_mode.value}

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(int(d["n_learners"]), d.get("subspace_dim"), int(d["seed"]),
                   ThresholdMode(d.get("threshold_mode", "majority")))


@dataclass(frozen=True)
class Learner:
    subspace: np.ndarray  # sorted feature indices
    weights: np.ndarray
    bias: float


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    config: TrainConfig
    mean: np.ndarray
    scale: np.ndarray
    learners: tuple
    threshold: int
    descriptor_hash: Optional[str] = None
    version: int = MODEL_VERSION

    @property
    def dimension(self) -> int:
        return len(self.mean)

    def to_json(self) -> dict:
        return {
            "format": 1,
            "version": self.version,
            "config": self.config.to_json(),
            "standardizer": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "learners": [{"subspace": l.subspace.tolist(), "weights": l.weights.tolist(), "bias": l.bias}
                         for l in self.learners],
            "threshold": self.threshold,
            "descriptor_hash": self.descriptor_hash,
        }

    def __eq__(self, other):
        return isinstance(other, EnsembleModel) and self.to_json() == other.to_json()


def _subspaces(D: int, config: TrainConfig) -> list:
    d = config.resolved_subspace(D)
    root = SeededRng(config.seed)
    return [np.sort(root.child("subspace", i).generator().choice(D, size=d, replace=False))
            for i in range(config.n_learners)]


def _fit_fld(x0: np.ndarray, x1: np.ndarray) -> tuple:
    m0, m1 = x0.mean(axis=0), x1.mean(axis=0)
    c0, c1 = x0 - m0, x1 - m1
    sw = c0.T @ c0 + c1.T @ c1
    d = sw.shape[0]
    tr = float(np.trace(sw))
    ridge = RIDGE_FACTOR * tr / d if tr > 0 else RIDGE_FACTOR
    w = np.linalg.solve(sw + ridge * np.eye(d), m1 - m0)
    bias = -float(w @ (m0 + m1)) / 2.0
    return w, bias


def _fit_learners(z: np.ndarray, y: np.ndarray, subspaces: list) -> tuple:
    z0, z1 = z[y == 0], z[y == 1]
    out = []
    for s in subspaces:
        w, b = _fit_fld(z0[:, s], z1[:, s])
        out.append(Learner(s, w, b))
    return tuple(out)


def _votes(learners, z: np.ndarray) -> np.ndarray:
    v = np.zeros(len(z), dtype=int)
    for l in learners:
        v += (z[:, l.subspace] @ l.weights + l.bias > 0)
    return v


def _check_training(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y).astype(int).ravel()
    if x.ndim != 2:
        raise InvalidArgument("features must be an N x D matrix")
    if len(x) != len(y):
        raise InvalidArgument(f"{len(x)} feature rows but {len(y)} labels")
    if len(x) < 20:
        raise InvalidArgument(f"need at least 20 training rows, got {len(x)}")
    if not set(np.unique(y)) <= {0, 1}:
        raise InvalidArgument("labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        raise InvalidArgument("training data must contain both classes")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("features contain non-finite values")
    return x, y


def train(features, labels, config: TrainConfig = TrainConfig(),
          descriptor_hash: Optional[str] = None) -> EnsembleModel:
    x, y = _check_training(features, labels)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - mean) / scale
    subspaces = _subspaces(x.shape[1], config)
    n = config.n_learners
    threshold = (n + 1) // 2
    if config.threshold_mode is ThresholdMode.ValidationTuned:
        gen = SeededRng(config.seed).child("holdout").generator()
        hold = np.zeros(len(y), dtype=bool)
        for c in (0, 1):
            idx = np.flatnonzero(y == c)
            k = max(1, int(round(HOLDOUT_FRACTION * len(idx))))
            hold[gen.choice(idx, size=k, replace=False)] = True
        fit = ~hold
        if len(np.unique(y[fit])) == 2:
            votes = _votes(_fit_learners(z[fit], y[fit], subspaces), z[hold])
            errs = [np.mean((votes >= t).astype(int) != y[hold]) for t in range(1, n + 1)]
            best = min(errs)
            candidates = [t for t, e in zip(range(1, n + 1), errs) if e == best]
            threshold = min(candidates, key=lambda t: (abs(t - (n + 1) / 2), t))
    learners = _fit_learners(z, y, subspaces)
    return EnsembleModel(config, mean, scale, learners, threshold, descriptor_hash)


def _check_descriptor(model: EnsembleModel, descriptor_hash: Optional[str]):
    if descriptor_hash is not None and model.descriptor_hash is not None and descriptor_hash != model.descriptor_hash:
        raise DescriptorMismatch(f"model trained on descriptor {model.descriptor_hash}, got {descriptor_hash}")


def predict_many(model: EnsembleModel, features, descriptor_hash: Optional[str] = None) -> tuple:
    """(labels, votes) arrays for an N x D matrix."""
    _check_descriptor(model, descriptor_hash)
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.dimension:
        raise InvalidArgument(f"feature dimension {x.shape[1]} does not match model dimension {model.dimension}")
    if len(x) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    votes = _votes(model.learners, (x - model.mean) / model.scale)
    return (votes >= model.threshold).astype(int), votes


def predict(model: EnsembleModel, features, descriptor_hash: Optional[str] = None) -> tuple:
    x = np.asarray(features, dtype=float)
    if x.ndim != 1:
        raise InvalidArgument("predict takes a single feature vector; use predict_many for matrices")
    labels, votes = predict_many(model, x, descriptor_hash)
    return int(labels[0]), int(votes[0])


def save(model: EnsembleModel, path) -> None:
    try:
        Path(path).write_text(json.dumps(model.to_json()))
    except OSError as exc:
        raise IoError(f"cannot write model {path}: {exc}") from exc


def from_json(data: dict) -> EnsembleModel:
    if not isinstance(data, dict) or "version" not in data:
        raise ParseError("model file lacks a version field")
    if data["version"] != MODEL_VERSION:
        raise UnsupportedVersion(f"model version {data['version']} (expected {MODEL_VERSION})")
    try:
        learners = tuple(Learner(np.asarray(l["subspace"], dtype=np.int64), np.asarray(l["weights"], dtype=float),
                                 float(l["bias"])) for l in data["learners"])
        model = EnsembleModel(TrainConfig.from_json(data["config"]),
                              np.asarray(data["standardizer"]["mean"], dtype=float),
                              np.asarray(data["standardizer"]["scale"], dtype=float),
                              learners, int(data["threshold"]), data.get("descriptor_hash"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed model: {exc}") from exc
    D = model.dimension
    for l in learners:
        if l.subspace.size != l.weights.size or np.any(l.subspace < 0) or np.any(l.subspace >= D):
            raise ParseError("learner subspace inconsistent with model dimension")
        if not np.all(np.isfinite(l.weights)):
            raise ParseError("learner weights are not finite")
    return model


def load(path) -> EnsembleModel:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model file {path} is not valid JSON") from exc
    return from_json(data)
