"""Per-instance loss weights and down-sampled datasets under balancing objectives.

Three objectives are supported: matching a target for the group marginal
p(G), for the within-class conditional p(G|Y), or for the full joint
p(G,Y). Weights follow the target / empirical convention, which makes the
weighted cell distribution equal the target exactly; ``raw_inverse``
rescales by the number of cells under the kind, recovering plain inverse
frequencies for uniform targets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import Dataset, JointDistribution, empirical_joint, skew_probabilities

log = logging.getLogger(__name__)


class BalanceKind(str, Enum):
    PG = "pg"
    PG_GIVEN_Y = "pg_given_y"
    PGY = "pgy"


@dataclass(frozen=True)
class BalanceObjective:
    """Which distribution to balance and toward what target (default uniform)."""

    kind: BalanceKind = BalanceKind.PGY
    target: JointDistribution | None = None


def skew_target(skew: float, label_count: int = 2, group_count: int = 2) -> JointDistribution:
    """Joint target placing ``skew`` mass on the stereotypical cells; 0.5 is
    balanced and values below 0.5 balance toward anti-stereotyping."""
    if label_count != 2 or group_count != 2:
        raise ValueError("skew targets are defined for binary labels and groups only")
    return JointDistribution(skew_probabilities(skew))


def _resolve_target(objective: BalanceObjective, label_count: int, group_count: int) -> np.ndarray:
    if objective.target is None:
        return np.full((label_count, group_count), 1.0 / (label_count * group_count))
    table = objective.target.probabilities
    if table.shape != (label_count, group_count):
        raise ValueError(
            f"target table shape {table.shape} does not match dataset ({label_count}, {group_count})"
        )
    return table


def _ratio_table(target: np.ndarray, empirical: np.ndarray) -> np.ndarray:
    """target / empirical per cell; errors on occupied cells with zero target,
    warns about empty cells the target cares about (their ratio is unused)."""
    target = np.asarray(target, dtype=np.float64)
    empirical = np.asarray(empirical, dtype=np.float64)
    occupied = empirical > 0
    if np.any(occupied & ~(target > 0)):
        raise ValueError("occupied cell has zero target mass")
    if np.any(~occupied & (target > 0)):
        log.warning("empty cells carry target mass; their weights are undefined but unused")
    ratio = np.full(target.shape, np.nan)
    ratio[occupied] = target[occupied] / empirical[occupied]
    return ratio


def compute_weights(
    dataset: Dataset, objective: BalanceObjective, raw_inverse: bool = False
) -> np.ndarray:
    """Per-instance weights that move the empirical cell distribution onto the
    target.

    weight_i = target(cell_i) / empirical(cell_i), where the cell is the
    (y, g) pair for PGY, the group marginal for PG, and the group within
    the instance's class for PG_GIVEN_Y.
    """
    emp = empirical_joint(dataset).probabilities
    table = _resolve_target(objective, dataset.label_count, dataset.group_count)
    kind = BalanceKind(objective.kind)
    if kind is BalanceKind.PGY:
        ratio = _ratio_table(table, emp)
        weights = ratio[dataset.labels, dataset.groups]
        cells = dataset.label_count * dataset.group_count
    elif kind is BalanceKind.PG:
        ratio = _ratio_table(table.sum(axis=0), emp.sum(axis=0))
        weights = ratio[dataset.groups]
        cells = dataset.group_count
    else:
        target_class = table.sum(axis=1, keepdims=True)
        emp_class = emp.sum(axis=1, keepdims=True)
        target_cond = np.divide(
            table, target_class, out=np.full_like(table, np.nan), where=target_class > 0
        )
        emp_cond = np.divide(emp, emp_class, out=np.full_like(emp, np.nan), where=emp_class > 0)
        ratio = _ratio_table(target_cond, emp_cond)
        weights = ratio[dataset.labels, dataset.groups]
        cells = dataset.group_count
    if raw_inverse:
        weights = weights * cells
    if not np.isfinite(weights).all() or (weights <= 0).any():
        raise RuntimeError("computed weights are not all finite and positive")
    return weights


def _cell_quota(counts: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Largest per-cell sample sizes proportional to the target, bounded by the
    most constrained cell."""
    counts = np.asarray(counts, dtype=np.int64)
    target = np.asarray(target, dtype=np.float64)
    required = target > 0
    if np.any(required & (counts == 0)):
        raise ValueError("down-sampling requires every cell with target mass to be non-empty")
    if np.any(~required & (counts == 0)):
        log.warning("empty cell outside the objective's support")
    scale = float(np.min(counts[required] / target[required]))
    quota = np.zeros(counts.shape, dtype=np.int64)
    quota[required] = np.minimum(
        counts[required], np.floor(scale * target[required] + 1e-9).astype(np.int64)
    )
    return quota


def downsample(dataset: Dataset, objective: BalanceObjective, seed: int) -> Dataset:
    """Sample cells without replacement so the output satisfies the objective.

    Uniform targets reduce to the min-cell rule; non-uniform targets scale
    every cell proportionally to the most constrained one. Output order is
    the concatenation of cells in (y, g) lexicographic order (group order
    for the PG kind), ascending original index within each cell.
    """
    rng = np.random.default_rng(seed)
    kind = BalanceKind(objective.kind)
    table = _resolve_target(objective, dataset.label_count, dataset.group_count)
    keep: list[np.ndarray] = []

    def sample(members: np.ndarray, size: int) -> None:
        if size > 0:
            keep.append(np.sort(rng.choice(members, size=size, replace=False)))

    if kind is BalanceKind.PG:
        counts = np.bincount(dataset.groups, minlength=dataset.group_count)
        quota = _cell_quota(counts, table.sum(axis=0))
        for g in range(dataset.group_count):
            sample(np.flatnonzero(dataset.groups == g), int(quota[g]))
    elif kind is BalanceKind.PGY:
        counts = empirical_joint(dataset).counts
        quota = _cell_quota(counts.ravel(), table.ravel()).reshape(table.shape)
        for y in range(dataset.label_count):
            for g in range(dataset.group_count):
                members = np.flatnonzero((dataset.labels == y) & (dataset.groups == g))
                sample(members, int(quota[y, g]))
    else:
        counts = empirical_joint(dataset).counts
        class_mass = table.sum(axis=1, keepdims=True)
        if np.any((counts.sum(axis=1) == 0) & (class_mass[:, 0] > 0)):
            raise ValueError("down-sampling requires every class in the objective to be present")
        cond = np.divide(table, class_mass, out=np.zeros_like(table), where=class_mass > 0)
        for y in range(dataset.label_count):
            if class_mass[y, 0] <= 0:
                continue
            quota = _cell_quota(counts[y], cond[y])
            for g in range(dataset.group_count):
                members = np.flatnonzero((dataset.labels == y) & (dataset.groups == g))
                sample(members, int(quota[g]))
    if not keep:
        raise ValueError("down-sampling produced an empty dataset")
    return dataset.subset(np.concatenate(keep))


def save_weights(weights, path) -> None:
    """One decimal real per line, index-aligned with the dataset file."""
    with open(path, "w") as fh:
        for w in np.asarray(weights, dtype=np.float64):
            fh.write(f"{w:.17g}\n")


def load_weights(path) -> np.ndarray:
    values = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                values.append(float(line))
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: malformed weight") from None
    if not values:
        raise ValueError(f"{path}: empty weight file")
    return np.asarray(values, dtype=np.float64)
