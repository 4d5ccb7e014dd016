"""Dataset container, synthetic biased-data generation, file I/O, splitting.

Two on-disk formats are supported and detected automatically on load:

* text: a header line ``n d n_labels n_groups``, then one line per instance
  of the form ``y g f_1 ... f_d`` with floats printed to 17 significant
  digits (lossless for 64-bit reals).
* binary: 8-byte magic ``FBDSET01``, four little-endian int64
  (n, d, n_labels, n_groups), then one record per instance of two int64
  (y, g) followed by d float64. Round-trips bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BINARY_MAGIC = b"FBDSET01"
_HEADER_BYTES = len(BINARY_MAGIC) + 4 * 8


class DatasetFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


class UnsupportedConfigError(ValueError):
    """Raised when a generator configuration asks for an unsupported shape."""


@dataclass
class Dataset:
    """Fixed feature representations with main-task labels and group ids."""

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    label_count: int
    group_count: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        self.labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        self.groups = np.ascontiguousarray(np.asarray(self.groups, dtype=np.int64))
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("a dataset must contain at least one instance")
        if self.labels.shape != (n,) or self.groups.shape != (n,):
            raise ValueError("features, labels and groups must have identical length")
        if self.label_count < 2 or self.group_count < 2:
            raise ValueError("label_count and group_count must be at least 2")
        if self.labels.min() < 0 or self.labels.max() >= self.label_count:
            raise ValueError(f"labels must lie in [0, {self.label_count})")
        if self.groups.min() < 0 or self.groups.max() >= self.group_count:
            raise ValueError(f"groups must lie in [0, {self.group_count})")
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.groups[idx],
            self.label_count,
            self.group_count,
        )


@dataclass
class JointDistribution:
    """Distribution over (label, group) cells.

    ``counts`` is None for synthetic targets that were not estimated from
    data; empirical distributions always carry their counts.
    """

    probabilities: np.ndarray
    counts: np.ndarray | None = None

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.probabilities.ndim != 2:
            raise ValueError("probabilities must be a 2-d (label x group) table")
        if (self.probabilities < 0).any():
            raise ValueError("probabilities must be non-negative")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != self.probabilities.shape:
                raise ValueError("counts and probabilities must have the same shape")
            if (self.counts < 0).any():
                raise ValueError("counts must be non-negative")
            expected = self.counts / self.counts.sum()
            if not np.allclose(expected, self.probabilities, rtol=0.0, atol=1e-12):
                raise ValueError("probabilities must equal counts / total")

    @classmethod
    def from_counts(cls, counts) -> "JointDistribution":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(counts / counts.sum(), counts)

    @property
    def label_count(self) -> int:
        return self.probabilities.shape[0]

    @property
    def group_count(self) -> int:
        return self.probabilities.shape[1]


def skew_probabilities(skew: float) -> np.ndarray:
    """2x2 joint table with mass ``skew`` split between the stereotypical cells.

    Cell convention: (y=1, g=0) and (y=0, g=1) are the stereotypical cells.
    skew 0.5 is balanced; larger values amplify the stereotype, smaller
    invert it. Both marginals are uniform for every skew.
    """
    if not 0.0 < skew < 1.0:
        raise ValueError("skew must lie strictly between 0 and 1")
    on = skew / 2.0
    off = (1.0 - skew) / 2.0
    return np.array([[off, on], [on, off]], dtype=np.float64)


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the Gaussian generator with a controlled label-group skew."""

    n: int
    d: int
    skew: float
    class_separation: float = 2.0
    group_shift: float = 1.0
    noise_std: float = 1.0
    seed: int = 0
    label_count: int = 2
    group_count: int = 2

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.d < 2:
            raise ValueError("d must be at least 2 (class axis plus group axis)")
        if not 0.0 < self.skew < 1.0:
            raise ValueError("skew must lie strictly between 0 and 1")
        if self.class_separation <= 0:
            raise ValueError("class_separation must be positive")
        if self.group_shift < 0:
            raise ValueError("group_shift must be non-negative")
        if self.noise_std <= 0:
            raise ValueError("noise_std must be positive")


def exact_cell_counts(n: int, probabilities: np.ndarray) -> np.ndarray:
    """Integer counts from round(n * p) per cell, with the rounding remainder
    folded into the lexicographically first cell of maximal target mass."""
    p = np.asarray(probabilities, dtype=np.float64)
    counts = np.floor(n * p + 0.5).astype(np.int64)
    remainder = n - int(counts.sum())
    if remainder != 0:
        flat = p.ravel()
        target = int(np.flatnonzero(flat == flat.max())[0])
        counts.ravel()[target] += remainder
    if (counts < 0).any():
        raise ValueError(f"target joint cannot be realized with n={n}")
    return counts


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Draw a Gaussian dataset whose (label, group) cell counts hit the skew
    target exactly.

    Axis 0 carries the class signal (means at +-class_separation / 2),
    axis 1 carries the group signal (+-group_shift / 2), and the remaining
    axes are pure noise. Instances are emitted cell block by cell block in
    (y, g) order; identical configs produce bit-identical datasets.
    """
    if config.label_count != 2 or config.group_count != 2:
        raise UnsupportedConfigError(
            "the synthetic generator supports binary labels and binary groups only"
        )
    counts = exact_cell_counts(config.n, skew_probabilities(config.skew))
    rng = np.random.default_rng(config.seed)
    blocks, labels, groups = [], [], []
    for y in range(2):
        for g in range(2):
            m = int(counts[y, g])
            block = rng.normal(0.0, config.noise_std, size=(m, config.d))
            block[:, 0] += (y - 0.5) * config.class_separation
            block[:, 1] += (g - 0.5) * config.group_shift
            blocks.append(block)
            labels.append(np.full(m, y, dtype=np.int64))
            groups.append(np.full(m, g, dtype=np.int64))
    return Dataset(np.concatenate(blocks), np.concatenate(labels), np.concatenate(groups), 2, 2)


def empirical_joint(dataset: Dataset) -> JointDistribution:
    """Exact (label, group) cell counts and their normalized probabilities."""
    counts = np.zeros((dataset.label_count, dataset.group_count), dtype=np.int64)
    np.add.at(counts, (dataset.labels, dataset.groups), 1)
    return JointDistribution.from_counts(counts)


def split(dataset: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded shuffle split into disjoint, exhaustive train/dev/test parts."""
    f = np.asarray(fractions, dtype=np.float64)
    if f.shape != (3,):
        raise ValueError("fractions must contain exactly three values (train, dev, test)")
    if (f <= 0).any():
        raise ValueError("all split fractions must be positive")
    if abs(float(f.sum()) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    n = dataset.n
    n_train = int(np.floor(f[0] * n + 0.5))
    n_dev = int(np.floor(f[1] * n + 0.5))
    n_test = n - n_train - n_dev
    if min(n_train, n_dev, n_test) < 1:
        raise ValueError("split produces an empty part; dataset too small for these fractions")
    perm = np.random.default_rng(seed).permutation(n)
    return (
        dataset.subset(perm[:n_train]),
        dataset.subset(perm[n_train:n_train + n_dev]),
        dataset.subset(perm[n_train + n_dev:]),
    )


def save_dataset(dataset: Dataset, path, fmt: str | None = None) -> None:
    """Write a dataset; format inferred from the suffix unless given
    (``.txt``/``.tsv`` mean text, everything else binary)."""
    if fmt is None:
        fmt = "text" if str(path).endswith((".txt", ".tsv")) else "binary"
    if fmt == "text":
        _save_text(dataset, path)
    elif fmt == "binary":
        _save_binary(dataset, path)
    else:
        raise ValueError(f"unknown dataset format {fmt!r}")


def load_dataset(path) -> Dataset:
    """Read a dataset file, sniffing the binary magic to pick the format."""
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return _load_binary(path)
    return _load_text(path)


def _save_text(dataset: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{dataset.n} {dataset.dim} {dataset.label_count} {dataset.group_count}\n")
        for y, g, row in zip(dataset.labels, dataset.groups, dataset.features):
            values = " ".join(f"{v:.17g}" for v in row)
            fh.write(f"{y} {g} {values}\n")


def _load_text(path) -> Dataset:
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    header = lines[0].split()
    if len(header) != 4:
        raise DatasetFormatError(f"{path}: line 1: header must be 'n d n_labels n_groups'")
    try:
        n, d, label_count, group_count = (int(tok) for tok in header)
    except ValueError:
        raise DatasetFormatError(f"{path}: line 1: header fields must be integers") from None
    if n < 1 or d < 1 or label_count < 2 or group_count < 2:
        raise DatasetFormatError(f"{path}: line 1: header values out of range")
    if len(lines) - 1 != n:
        raise DatasetFormatError(
            f"{path}: line {len(lines)}: expected {n} data lines, found {len(lines) - 1}"
        )
    features = np.empty((n, d), dtype=np.float64)
    labels = np.empty(n, dtype=np.int64)
    groups = np.empty(n, dtype=np.int64)
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        tokens = line.split()
        if len(tokens) != 2 + d:
            raise DatasetFormatError(
                f"{path}: line {lineno}: expected {2 + d} fields, found {len(tokens)}"
            )
        try:
            y = int(tokens[0])
            g = int(tokens[1])
            row = np.array(tokens[2:], dtype=np.float64)
        except ValueError:
            raise DatasetFormatError(f"{path}: line {lineno}: malformed numeric field") from None
        if not 0 <= y < label_count:
            raise DatasetFormatError(
                f"{path}: line {lineno}: label {y} out of range [0, {label_count})"
            )
        if not 0 <= g < group_count:
            raise DatasetFormatError(
                f"{path}: line {lineno}: group {g} out of range [0, {group_count})"
            )
        if not np.isfinite(row).all():
            raise DatasetFormatError(f"{path}: line {lineno}: non-finite feature value")
        labels[i], groups[i], features[i] = y, g, row
    return Dataset(features, labels, groups, label_count, group_count)


def _row_dtype(d: int) -> np.dtype:
    return np.dtype([("y", "<i8"), ("g", "<i8"), ("f", "<f8", (d,))])


def _save_binary(dataset: Dataset, path) -> None:
    records = np.empty(dataset.n, dtype=_row_dtype(dataset.dim))
    records["y"] = dataset.labels
    records["g"] = dataset.groups
    records["f"] = dataset.features
    header = np.array(
        [dataset.n, dataset.dim, dataset.label_count, dataset.group_count], dtype="<i8"
    )
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(header.tobytes())
        fh.write(records.tobytes())


def _load_binary(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER_BYTES:
        raise DatasetFormatError(f"{path}: truncated header at offset {len(blob)}")
    if blob[: len(BINARY_MAGIC)] != BINARY_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic at offset 0")
    n, d, label_count, group_count = (
        int(v) for v in np.frombuffer(blob, dtype="<i8", count=4, offset=len(BINARY_MAGIC))
    )
    if n < 1 or d < 1 or label_count < 2 or group_count < 2:
        raise DatasetFormatError(f"{path}: header values out of range at offset 8")
    row_bytes = 16 + 8 * d
    expected = _HEADER_BYTES + n * row_bytes
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{path}: expected {expected} bytes, found {len(blob)} (offset {min(expected, len(blob))})"
        )
    records = np.frombuffer(blob, dtype=_row_dtype(d), count=n, offset=_HEADER_BYTES)
    labels = records["y"].copy()
    groups = records["g"].copy()
    features = records["f"].copy()
    for name, values, bound in (("label", labels, label_count), ("group", groups, group_count)):
        bad = np.flatnonzero((values < 0) | (values >= bound))
        if bad.size:
            offset = _HEADER_BYTES + int(bad[0]) * row_bytes
            raise DatasetFormatError(f"{path}: {name} out of range at offset {offset}")
    bad = np.flatnonzero(~np.isfinite(features).all(axis=1))
    if bad.size:
        offset = _HEADER_BYTES + int(bad[0]) * row_bytes + 16
        raise DatasetFormatError(f"{path}: non-finite feature value at offset {offset}")
    return Dataset(features, labels, groups, label_count, group_count)
