"""Fairness-constrained grid search and the inference-time gating sweep.

The selection rule mirrors the experimental protocol: either maximize dev
accuracy outright, or minimize the dev GAP among configurations whose
accuracy stays within an offset of the best (the best-accuracy entry always
qualifies, so the constrained rule can never come up empty).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .metrics import EvalRecord, accuracy, rms_gap, tpr_gap_per_class
from .model import GatedModel, forward_gated, soft_coefficients

SELECTION_MODES = ("max_accuracy", "min_gap_at_threshold")


@dataclass(frozen=True)
class SelectionRule:
    mode: str = "min_gap_at_threshold"
    threshold_offset: float = 0.02

    def __post_init__(self):
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES}")
        if self.threshold_offset < 0:
            raise ValueError("threshold_offset must be non-negative")


@dataclass
class SearchSpace:
    """Named axes of finite value lists; iteration follows axis insertion order."""

    axes: dict[str, list]

    def __post_init__(self):
        if not self.axes:
            raise ValueError("search space needs at least one axis")
        for name, values in self.axes.items():
            if not values:
                raise ValueError(f"axis {name!r} is empty")

    @property
    def size(self) -> int:
        out = 1
        for values in self.axes.values():
            out *= len(values)
        return out

    def configs(self):
        names = list(self.axes)
        for combo in itertools.product(*self.axes.values()):
            yield dict(zip(names, combo))


def grid_search(space: SearchSpace, evaluator, rule: SelectionRule):
    """Evaluate every configuration and select per the rule.

    ``evaluator(config) -> (dev_accuracy, dev_gap)``. Ties break toward
    higher accuracy, then grid order. Returns (selected config, full table).
    """
    table = []
    for index, config in enumerate(space.configs()):
        dev_accuracy, dev_gap = evaluator(config)
        table.append(
            {**config, "dev_accuracy": float(dev_accuracy), "dev_gap": float(dev_gap), "index": index}
        )
    if not table:
        raise ValueError("empty search grid")
    if rule.mode == "max_accuracy":
        selected = min(table, key=lambda r: (-r["dev_accuracy"], r["index"]))
    else:
        best = max(r["dev_accuracy"] for r in table)
        eligible = [r for r in table if r["dev_accuracy"] >= best - rule.threshold_offset]
        selected = min(eligible, key=lambda r: (r["dev_gap"], -r["dev_accuracy"], r["index"]))
    config = {k: v for k, v in selected.items() if k not in ("dev_accuracy", "dev_gap", "index")}
    return config, table


def save_search_table(table: list[dict], path) -> None:
    """Grid-search results as JSON lines, one object per configuration."""
    with open(path, "w") as fh:
        for row in table:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass
class SweepResult:
    """Dev metrics over the (alpha, beta) grid; entry [i, j] pairs alphas[i]
    with betas[j]."""

    alphas: np.ndarray
    betas: np.ndarray
    accuracy: np.ndarray
    rms_gap: np.ndarray

    def records(self):
        for i, alpha in enumerate(self.alphas):
            for j, beta in enumerate(self.betas):
                yield {
                    "alpha": float(alpha),
                    "beta": float(beta),
                    "accuracy": float(self.accuracy[i, j]),
                    "rms_gap": float(self.rms_gap[i, j]),
                }

    def save_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("alpha,beta,accuracy,rms_gap\n")
            for rec in self.records():
                fh.write(
                    f"{rec['alpha']:.17g},{rec['beta']:.17g},"
                    f"{rec['accuracy']:.17g},{rec['rms_gap']:.17g}\n"
                )


def evaluate_gate_cell(model: GatedModel, dev: Dataset, alpha: float, beta: float):
    """Dev accuracy and RMS GAP for one (alpha, beta) soft-gating setting,
    gating each instance by its gold group; pure given its arguments."""
    coeffs = soft_coefficients(dev.groups, alpha, beta)
    preds = np.argmax(forward_gated(model, dev.features, coeffs), axis=1)
    record = EvalRecord(preds, dev.labels, dev.groups, dev.label_count, dev.group_count)
    return accuracy(record), rms_gap(tpr_gap_per_class(record))


def alpha_beta_sweep(model: GatedModel, dev: Dataset, grid_resolution: int = 21) -> SweepResult:
    """Evaluate the trained gated model over the uniform (alpha, beta) grid on
    [0, 1]^2. No retraining happens; every cell is independent."""
    if not isinstance(model, GatedModel) or model.group_count != 2:
        raise ValueError("the sweep needs a gated model with exactly two groups")
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be at least 2")
    grid = np.linspace(0.0, 1.0, grid_resolution)
    acc = np.empty((grid_resolution, grid_resolution))
    gap = np.empty_like(acc)
    for i, alpha in enumerate(grid):
        for j, beta in enumerate(grid):
            acc[i, j], gap[i, j] = evaluate_gate_cell(model, dev, float(alpha), float(beta))
    return SweepResult(grid, grid.copy(), acc, gap)


def select_coefficients(sweep: SweepResult, rule: SelectionRule) -> tuple[float, float]:
    """Pick (alpha, beta) by the rule; ties prefer the smaller alpha + beta,
    then grid order."""
    rows = []
    index = 0
    for i in range(len(sweep.alphas)):
        for j in range(len(sweep.betas)):
            rows.append(
                (
                    index,
                    float(sweep.alphas[i]),
                    float(sweep.betas[j]),
                    float(sweep.accuracy[i, j]),
                    float(sweep.rms_gap[i, j]),
                )
            )
            index += 1
    if not rows:
        raise ValueError("empty sweep")
    if rule.mode == "max_accuracy":
        pick = min(rows, key=lambda r: (-r[3], r[1] + r[2], r[0]))
    else:
        best = max(r[3] for r in rows)
        eligible = [r for r in rows if r[3] >= best - rule.threshold_offset]
        pick = min(eligible, key=lambda r: (r[4], r[1] + r[2], r[0]))
    return pick[1], pick[2]
