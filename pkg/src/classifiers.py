"""
Frame Classifiers
=================

One-vs-all ridge regression (linear) and an Extreme Learning Machine
(fixed random sigmoid hidden layer with a ridge readout). Frames are
scored by argmax; recordings by majority vote over their frames.
Ties always resolve to the lowest class index.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import expit

from .config import ELM_HIDDEN, ELM_SEED
from .errors import DataError, DimensionMismatchError, InsufficientFramesError

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


class ClassifierKind(str, Enum):
    LINEAR = "linear"
    ELM = "elm"


@dataclass
class ClassifierModel:
    kind: ClassifierKind
    weights: np.ndarray  # (features + 1, classes), bias row first
    n_classes: int
    input_dim: int
    lam: float
    hidden_size: int = 0
    seed: Optional[int] = None
    projection: Optional[np.ndarray] = None
    hidden_bias: Optional[np.ndarray] = None

    def hidden(self, X: np.ndarray) -> np.ndarray:
        if self.kind is ClassifierKind.LINEAR:
            return X
        return expit(X @ self.projection + self.hidden_bias)

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.input_dim:
            raise DimensionMismatchError(f"Model expects {self.input_dim} inputs, frame has {X.shape[1]}")
        return with_bias(self.hidden(X)) @ self.weights


def with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def one_hot(labels: Sequence[int], n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    Y = np.zeros((labels.size, n_classes))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def ridge(Phi: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """argmin ||Phi W - Y||^2 + lam ||W||^2; lam = 0 falls back to the pseudo-inverse solution."""
    n, d = Phi.shape
    if lam <= 0:
        return linalg.lstsq(Phi, Y)[0]
    if n >= d:
        return linalg.solve(Phi.T @ Phi + lam * np.eye(d), Phi.T @ Y, assume_a="pos")
    return Phi.T @ linalg.solve(Phi @ Phi.T + lam * np.eye(n), Y, assume_a="pos")


def _check_training_set(X: np.ndarray, labels: np.ndarray, n_classes: Optional[int]) -> int:
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("Cannot train on an empty frame set")
    if X.shape[1] == 0:
        raise DimensionMismatchError("Frames have zero length")
    if labels.size != X.shape[0]:
        raise DimensionMismatchError(f"{X.shape[0]} frames but {labels.size} labels")
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    missing = sorted(set(range(n_classes)) - set(labels.tolist()))
    if missing:
        raise DataError(f"No training frames for classes {missing}")
    return n_classes


def train_linear(X: np.ndarray, labels: Sequence[int], lam: float, n_classes: Optional[int] = None) -> ClassifierModel:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = _check_training_set(X, labels, n_classes)
    weights = ridge(with_bias(X), one_hot(labels, n_classes), lam)
    return ClassifierModel(ClassifierKind.LINEAR, weights, n_classes, X.shape[1], lam)


def train_elm(X: np.ndarray, labels: Sequence[int], lam: float, hidden_size: int = ELM_HIDDEN,
              seed: int = ELM_SEED, n_classes: Optional[int] = None) -> ClassifierModel:
    """
    ELM with hidden layer sigmoid(X A + b), A and b uniform in [-1, 1] from seed.

    hidden_size = 0 leaves only the bias, i.e. a majority-class predictor.
    """
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = _check_training_set(X, labels, n_classes)
    rng = np.random.default_rng(seed)
    projection = rng.uniform(-1.0, 1.0, size=(X.shape[1], hidden_size))
    hidden_bias = rng.uniform(-1.0, 1.0, size=hidden_size)
    model = ClassifierModel(ClassifierKind.ELM, np.zeros((hidden_size + 1, n_classes)), n_classes,
                            X.shape[1], lam, hidden_size, seed, projection, hidden_bias)
    model.weights = ridge(with_bias(model.hidden(X)), one_hot(labels, n_classes), lam)
    return model


def train_classifier(kind, X, labels, lam, n_classes=None, hidden_size=ELM_HIDDEN, seed=ELM_SEED) -> ClassifierModel:
    if ClassifierKind(kind) is ClassifierKind.LINEAR:
        return train_linear(X, labels, lam, n_classes)
    return train_elm(X, labels, lam, hidden_size, seed, n_classes)


def predict_frames(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    return np.argmax(model.scores(X), axis=1)


def predict_frame(model: ClassifierModel, frame: np.ndarray) -> int:
    return int(predict_frames(model, np.atleast_2d(frame))[0])


def vote(predictions: Sequence[int], n_classes: int) -> int:
    """Majority class of per-frame predictions; ties go to the lowest class."""
    predictions = np.asarray(predictions, dtype=np.int64)
    if predictions.size == 0:
        raise InsufficientFramesError("Cannot vote over zero frames")
    return int(np.argmax(np.bincount(predictions, minlength=n_classes)))


def predict_drop(model: ClassifierModel, frames: np.ndarray) -> int:
    frames = np.asarray(frames, dtype=float)
    if frames.size == 0:
        raise InsufficientFramesError("A recording needs at least one frame to be classified")
    return vote(predict_frames(model, frames), model.n_classes)


@dataclass
class Evaluation:
    frame_accuracy: float
    drop_accuracy: float
    frame_confusion: np.ndarray
    drop_confusion: np.ndarray
    misclassified: List[str] = field(default_factory=list)
    n_frames: int = 0
    n_drops: int = 0

    def to_dict(self) -> dict:
        return {
            "frame_accuracy": self.frame_accuracy,
            "drop_accuracy": self.drop_accuracy,
            "frame_confusion": self.frame_confusion.tolist(),
            "drop_confusion": self.drop_confusion.tolist(),
            "misclassified": list(self.misclassified),
            "n_frames": self.n_frames,
            "n_drops": self.n_drops,
        }


def normalized_confusion(confusion: np.ndarray) -> np.ndarray:
    """Row-stochastic confusion (rows without samples stay zero)."""
    confusion = np.asarray(confusion, dtype=float)
    totals = confusion.sum(axis=1, keepdims=True)
    return np.divide(confusion, totals, out=np.zeros_like(confusion), where=totals > 0)


def evaluate_predictions(groups: Sequence[Tuple[str, int, np.ndarray]], n_classes: int) -> Evaluation:
    """
    Score per-frame predictions already made for each recording.

    Args:
        groups: (recording_id, true label, per-frame predicted classes) per recording
    """
    groups = [g for g in groups if len(g[2])]
    if not groups:
        raise InsufficientFramesError("Evaluation needs at least one recording with frames")
    frame_conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    drop_conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    misclassified = []
    for recording_id, label, predicted in groups:
        np.add.at(frame_conf, (label, np.asarray(predicted, dtype=np.int64)), 1)
        decision = vote(predicted, n_classes)
        drop_conf[label, decision] += 1
        if decision != label:
            misclassified.append(recording_id)
    n_frames = int(frame_conf.sum())
    return Evaluation(
        frame_accuracy=float(np.trace(frame_conf) / n_frames),
        drop_accuracy=float(np.trace(drop_conf) / len(groups)),
        frame_confusion=frame_conf,
        drop_confusion=drop_conf,
        misclassified=misclassified,
        n_frames=n_frames,
        n_drops=len(groups),
    )


def evaluate(model: ClassifierModel, groups: Sequence[Tuple[str, int, np.ndarray]]) -> Evaluation:
    """groups holds (recording_id, true label, frame matrix) per test recording."""
    predicted = [(rid, label, predict_frames(model, X) if len(X) else np.zeros(0, np.int64))
                 for rid, label, X in groups]
    return evaluate_predictions(predicted, model.n_classes)


def select_lambda(trainer: Callable[[np.ndarray, np.ndarray, float], ClassifierModel], X: np.ndarray,
                  labels: np.ndarray, groups: np.ndarray, grid: Sequence[float],
                  validation_fraction: float = 0.2, seed: int = 0) -> float:
    """
    Pick the ridge strength with the best per-frame validation accuracy.

    Validation recordings (groups) are held out as a whole; ties keep the
    earlier grid entry. With too few recordings the middle grid value is used.
    """
    grid = list(grid)
    if len(grid) == 1:
        return grid[0]
    fallback = grid[len(grid) // 2]
    names = np.unique(groups)
    n_val = int(round(validation_fraction * names.size))
    if names.size < 2 or n_val < 1 or n_val >= names.size:
        logger.warning(f"Too few recordings to select lambda; using {fallback}")
        return fallback
    rng = np.random.default_rng(seed)
    held = set(rng.choice(names, size=n_val, replace=False).tolist())
    val = np.array([g in held for g in groups])
    n_classes = int(labels.max()) + 1
    if len(np.unique(labels[~val])) < n_classes:
        logger.warning(f"Validation split leaves a class without training frames; using lambda {fallback}")
        return fallback

    best, best_acc = fallback, -1.0
    for lam in grid:
        model = trainer(X[~val], labels[~val], lam)
        acc = float(np.mean(predict_frames(model, X[val]) == labels[val]))
        logger.debug(f"lambda {lam}: validation accuracy {acc:.4f}")
        if acc > best_acc:
            best, best_acc = lam, acc
    return best


def error_ratio(elm_accuracy: float, linear_accuracy: float) -> float:
    """(1 - elm) / (1 - linear); 1.0 when both are perfect, inf when only the linear one is."""
    elm_err, lin_err = 1.0 - elm_accuracy, 1.0 - linear_accuracy
    if lin_err <= 0:
        return 1.0 if elm_err <= 0 else float("inf")
    return elm_err / lin_err


def median_error_ratio(elm_accuracies: Sequence[float], linear_accuracies: Sequence[float]) -> float:
    ratios = [error_ratio(e, l) for e, l in zip(elm_accuracies, linear_accuracies)]
    return float(np.median(ratios)) if ratios else float("nan")


def save_model(path, model: ClassifierModel) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    extras: Dict[str, np.ndarray] = {}
    if model.kind is ClassifierKind.ELM:
        extras = {"projection": model.projection, "hidden_bias": model.hidden_bias}
    with path.open("wb") as handle:
        np.savez(handle, version=MODEL_FORMAT_VERSION, kind=model.kind.value, weights=model.weights,
                 n_classes=model.n_classes, input_dim=model.input_dim, lam=model.lam,
                 hidden_size=model.hidden_size, seed=-1 if model.seed is None else model.seed, **extras)


def load_model(path) -> ClassifierModel:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Model file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if int(data["version"]) != MODEL_FORMAT_VERSION:
            raise DataError(f"Unsupported model format version {int(data['version'])}")
        kind = ClassifierKind(str(data["kind"]))
        seed = int(data["seed"])
        return ClassifierModel(
            kind=kind,
            weights=data["weights"],
            n_classes=int(data["n_classes"]),
            input_dim=int(data["input_dim"]),
            lam=float(data["lam"]),
            hidden_size=int(data["hidden_size"]),
            seed=None if seed < 0 else seed,
            projection=data["projection"] if kind is ClassifierKind.ELM else None,
            hidden_bias=data["hidden_bias"] if kind is ClassifierKind.ELM else None,
        )
