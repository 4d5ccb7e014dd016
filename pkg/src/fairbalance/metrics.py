"""Fairness and performance measurement.

Covers accuracy, per-class true-positive-rate gaps between the two groups
(for binary tasks the class-0 entry doubles as the TNR gap), their
quadratic mean (RMS GAP), the accuracy-fairness trade-off score, and
multi-seed aggregation. Gaps are stored as fractions in [0, 1]; percent
formatting is presentation only.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class EvalRecord:
    """Predictions with gold labels and group ids for one evaluation set."""

    predictions: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    label_count: int | None = None
    group_count: int | None = None

    def __post_init__(self):
        self.predictions = np.asarray(self.predictions, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.groups = np.asarray(self.groups, dtype=np.int64)
        n = len(self.predictions)
        if n == 0:
            raise ValueError("evaluation record is empty")
        if len(self.labels) != n or len(self.groups) != n:
            raise ValueError("predictions, labels and groups must have identical length")
        if self.label_count is None:
            self.label_count = int(max(self.predictions.max(), self.labels.max())) + 1
        if self.group_count is None:
            self.group_count = int(self.groups.max()) + 1
        for name, values, bound in (
            ("predictions", self.predictions, self.label_count),
            ("labels", self.labels, self.label_count),
            ("groups", self.groups, self.group_count),
        ):
            if values.min() < 0 or values.max() >= bound:
                raise ValueError(f"{name} must lie in [0, {bound})")

    @property
    def n(self) -> int:
        return len(self.predictions)


class TprGaps(NamedTuple):
    gaps: np.ndarray
    classes: np.ndarray


def accuracy(record: EvalRecord) -> float:
    """Fraction of predictions equal to the gold labels."""
    return float(np.mean(record.predictions == record.labels))


def tpr_gap_per_class(record: EvalRecord) -> TprGaps:
    """Absolute between-group TPR difference for every class with gold
    instances in both groups.

    Classes lacking gold instances for either group have an undefined TPR
    and are excluded with a logged warning rather than defaulted.
    """
    if record.group_count != 2:
        raise ValueError("TPR gaps are defined for exactly two groups")
    gaps, classes, excluded = [], [], []
    for c in range(record.label_count):
        rates = []
        for g in (0, 1):
            mask = (record.labels == c) & (record.groups == g)
            if not mask.any():
                rates = None
                break
            rates.append(float(np.mean(record.predictions[mask] == c)))
        if rates is None:
            excluded.append(c)
        else:
            classes.append(c)
            gaps.append(abs(rates[0] - rates[1]))
    if excluded:
        log.warning("classes %s lack gold instances for one group; excluded from GAP", excluded)
    return TprGaps(np.asarray(gaps, dtype=np.float64), np.asarray(classes, dtype=np.int64))


def rms_gap(gaps) -> float:
    """Quadratic mean of the per-class gaps."""
    if isinstance(gaps, TprGaps):
        gaps = gaps.gaps
    g = np.asarray(gaps, dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("rms_gap needs a non-empty gap vector")
    return float(np.sqrt(np.mean(g * g)))


def tradeoff(accuracy_value: float, gap_value: float, best_accuracy: float, best_gap: float) -> float:
    """Distance to the ideal corner after normalizing both axes by the best
    observed model: sqrt((1 - acc/best_acc)^2 + (1 - (1-gap)/(1-best_gap))^2).

    Lower is better; the best model on both axes scores 0.
    """
    for name, value in (("accuracy", accuracy_value), ("best_accuracy", best_accuracy)):
        if not 0.0 < value <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1]")
    for name, value in (("gap", gap_value), ("best_gap", best_gap)):
        if not 0.0 <= value < 1.0:
            raise ValueError(f"{name} must lie in [0, 1)")
    if accuracy_value > best_accuracy + 1e-9 or gap_value < best_gap - 1e-9:
        log.warning("evaluated model beats the supplied bests; normalized coordinates exceed 1")
    x = accuracy_value / best_accuracy
    y = (1.0 - gap_value) / (1.0 - best_gap)
    return float(np.hypot(1.0 - x, 1.0 - y))


@dataclass
class FairnessReport:
    """Headline metrics for one trained model on one evaluation set."""

    accuracy: float
    per_class_tpr_gap: list[float]
    evaluated_classes: list[int]
    tnr_gap: float | None
    rms_gap: float
    tradeoff: float | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.per_class_tpr_gap:
            expected = float(np.sqrt(np.mean(np.square(self.per_class_tpr_gap))))
            if abs(expected - self.rms_gap) > 1e-12:
                raise ValueError("rms_gap must be the quadratic mean of the per-class gaps")

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_tpr_gap": list(self.per_class_tpr_gap),
            "evaluated_classes": list(self.evaluated_classes),
            "tnr_gap": self.tnr_gap,
            "rms_gap": self.rms_gap,
            "tradeoff": self.tradeoff,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FairnessReport":
        return cls(
            accuracy=payload["accuracy"],
            per_class_tpr_gap=list(payload["per_class_tpr_gap"]),
            evaluated_classes=list(payload["evaluated_classes"]),
            tnr_gap=payload.get("tnr_gap"),
            rms_gap=payload["rms_gap"],
            tradeoff=payload.get("tradeoff"),
            seed=payload.get("seed"),
        )


def make_report(record: EvalRecord, seed: int | None = None) -> FairnessReport:
    """Evaluate one record into a FairnessReport (trade-off left unset; it
    needs the best accuracy and gap across a whole model table)."""
    gaps, classes = tpr_gap_per_class(record)
    rms = rms_gap(gaps) if gaps.size else float("nan")
    tnr = None
    if record.label_count == 2 and 0 in classes:
        tnr = float(gaps[list(classes).index(0)])
    return FairnessReport(
        accuracy=accuracy(record),
        per_class_tpr_gap=[float(g) for g in gaps],
        evaluated_classes=[int(c) for c in classes],
        tnr_gap=tnr,
        rms_gap=rms,
        seed=seed,
    )


def save_report(report: FairnessReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_report(path) -> FairnessReport:
    with open(path, "r") as fh:
        return FairnessReport.from_dict(json.load(fh))


_AGGREGATE_FIELDS = ("accuracy", "rms_gap", "tnr_gap", "tradeoff")


def aggregate(reports: list[FairnessReport]) -> dict:
    """Sample mean and standard deviation (n-1 denominator) per numeric field;
    optional fields are aggregated only when present in every report."""
    if len(reports) < 2:
        raise ValueError("aggregation needs at least two reports")
    out = {"mean": {}, "std": {}}
    for name in _AGGREGATE_FIELDS:
        values = [getattr(r, name) for r in reports]
        if any(v is None for v in values):
            continue
        arr = np.asarray(values, dtype=np.float64)
        out["mean"][name] = float(arr.mean())
        out["std"][name] = float(arr.std(ddof=1))
    return out
