"""Class-balanced accuracy at sample and track granularity."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .events import CLASSES


@dataclass(frozen=True)
class Prediction:
    track_id: int
    frame_index: int
    true_class: int
    predicted: int
    probabilities: tuple[float, ...]

    def __post_init__(self):
        if abs(sum(self.probabilities) - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {sum(self.probabilities)}, not 1")


def _class_list(y_true, classes):
    if classes is None:
        return sorted(set(np.asarray(y_true).tolist()))
    return list(classes)


def _name(c) -> str:
    return CLASSES[c] if 0 <= c < len(CLASSES) else str(c)


def per_sample_balanced(y_true, y_pred, classes=None) -> tuple[float, dict]:
    """Mean over classes of within-class accuracy, in percent.

    ``classes`` defaults to the classes present in ``y_true``; a listed class
    with no samples is an error.
    """
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    per_class = {}
    for c in _class_list(y_true, classes):
        mask = y_true == c
        if not mask.any():
            raise ValueError(f"class {_name(c)!r} has no samples")
        per_class[c] = float((y_pred[mask] == c).mean())
    if not per_class:
        raise ValueError("no samples to score")
    return 100.0 * float(np.mean(list(per_class.values()))), per_class


def track_votes(y_true, y_pred, track_ids, n_classes: int = len(CLASSES)):
    """``{track_id: (true_class, voted_class)}``; the vote is the modal prediction,
    ties going to the smallest class index."""
    y_true, y_pred, track_ids = map(np.asarray, (y_true, y_pred, track_ids))
    out = {}
    for tid in np.unique(track_ids).tolist():
        mask = track_ids == tid
        truth = np.unique(y_true[mask])
        if len(truth) != 1:
            raise ValueError(f"track {tid} has mixed true classes {truth.tolist()}")
        counts = np.bincount(y_pred[mask], minlength=n_classes)
        out[tid] = (int(truth[0]), int(counts.argmax()))
    return out


def per_track_balanced(y_true, y_pred, track_ids, classes=None) -> tuple[float, dict]:
    votes = track_votes(y_true, y_pred, track_ids)
    if not votes:
        raise ValueError("no tracks to score")
    truth = np.array([t for t, _ in votes.values()])
    voted = np.array([v for _, v in votes.values()])
    return per_sample_balanced(truth, voted, classes)


def confusion_matrix(y_true, y_pred, n_classes: int = len(CLASSES)) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), np.int64)
    np.add.at(m, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return m


@dataclass
class Metrics:
    per_sample_balanced: float
    per_track_balanced: float
    per_class: dict
    confusion: list

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_sample_balanced": self.per_sample_balanced,
                "per_track_balanced": self.per_track_balanced,
                "per_class": self.per_class,
                "confusion": self.confusion,
            },
            indent=2,
            sort_keys=True,
        ) + "\n"

    def table_cell(self) -> str:
        """``X/Y`` with X per-sample and Y per-track balanced accuracy."""
        return f"{self.per_sample_balanced:.2f}/{self.per_track_balanced:.2f}"


def evaluate(y_true, y_pred, track_ids, classes=range(len(CLASSES))) -> Metrics:
    y_true, y_pred, track_ids = map(np.asarray, (y_true, y_pred, track_ids))
    classes = list(classes)
    ps, ps_class = per_sample_balanced(y_true, y_pred, classes)
    pt, pt_class = per_track_balanced(y_true, y_pred, track_ids, classes)
    votes = track_votes(y_true, y_pred, track_ids)
    per_class = {}
    for c in classes:
        per_class[_name(c)] = {
            "sample_accuracy": 100.0 * ps_class[c],
            "track_accuracy": 100.0 * pt_class[c],
            "samples": int((y_true == c).sum()),
            "tracks": sum(1 for t, _ in votes.values() if t == c),
        }
    return Metrics(ps, pt, per_class, confusion_matrix(y_true, y_pred).tolist())


def evaluate_predictions(preds) -> Metrics:
    preds = list(preds)
    return evaluate([p.true_class for p in preds], [p.predicted for p in preds],
                    [p.track_id for p in preds])
