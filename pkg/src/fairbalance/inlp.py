"""Iterative nullspace projection against a demographic probe.

Repeatedly fits a softmax-regression probe for the group label on the
current representations, removes the probe's weight directions through an
orthogonal projector, and reprojects, until a fresh probe falls back to the
majority baseline. The same fitter doubles as the final linear main-task
classifier over the debiased representations.

Stack file format: two little-endian int64 (dimension, direction count)
followed by the unit directions as 64-bit little-endian floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .balance import BalanceObjective, compute_weights, downsample
from .data import Dataset
from .model import MLP, softmax, build_mlp
from .train import TrainConfig, train

STACK_TOLERANCE = 1e-10

BASE_KINDS = ("standard", "rw", "ds")


@dataclass
class LinearProbe:
    """Softmax-regression probe; one weight row per non-reference class."""

    weights: np.ndarray
    bias: np.ndarray
    accuracy: float

    def logits(self, representations) -> np.ndarray:
        X = np.asarray(representations, dtype=np.float64)
        scores = X @ self.weights.T + self.bias
        return np.hstack([np.zeros((len(X), 1)), scores])

    def predict(self, representations) -> np.ndarray:
        return np.argmax(self.logits(representations), axis=1)

    def probabilities(self, representations) -> np.ndarray:
        return softmax(self.logits(representations))

    def directions(self) -> list[np.ndarray]:
        return [w.copy() for w in self.weights]


def fit_linear_probe(
    representations,
    targets,
    regularization: float = 1e-4,
    seed: int = 0,
    class_count: int | None = None,
    max_iter: int = 2000,
    tol: float = 1e-7,
) -> LinearProbe:
    """L2-regularized softmax regression by deterministic full-batch gradient
    descent with a 1/L step (L from the data's smoothness bound), run until
    the gradient falls below ``tol`` or ``max_iter`` is reached.

    The seed only draws the small random init; the fit is fully determined
    by (data, hyperparameters, seed).
    """
    X = np.asarray(representations, dtype=np.float64)
    y = np.asarray(targets, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("representations and targets must align")
    if np.unique(y).size < 2:
        raise ValueError("probe fitting needs at least two classes present")
    k = class_count if class_count is not None else int(y.max()) + 1
    if y.max() >= k:
        raise ValueError(f"targets must lie in [0, {k})")
    n, d = X.shape
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 1e-2, size=(k - 1, d))
    b = np.zeros(k - 1)
    gram = X.T @ X / n
    lipschitz = 0.5 * float(np.linalg.eigvalsh(gram)[-1]) + regularization
    step = 1.0 / lipschitz
    onehot_rest = (y[:, None] == np.arange(1, k)[None, :]).astype(np.float64)
    for _ in range(max_iter):
        scores = X @ W.T + b
        full = np.hstack([np.zeros((n, 1)), scores])
        p_rest = softmax(full)[:, 1:]
        g_scores = (p_rest - onehot_rest) / n
        grad_W = g_scores.T @ X + regularization * W
        grad_b = g_scores.sum(axis=0)
        if max(np.abs(grad_W).max(), np.abs(grad_b).max()) <= tol:
            break
        W -= step * grad_W
        b -= step * grad_b
    probe = LinearProbe(W, b, 0.0)
    probe.accuracy = float(np.mean(probe.predict(X) == y))
    return probe


def _orthonormalize(rows, existing) -> list[np.ndarray]:
    """Unit vectors spanning the new directions orthogonal to ``existing``;
    numerically dependent rows are dropped. Two Gram-Schmidt passes keep the
    projector identities tight."""
    accepted = list(existing)
    added = []
    for row in np.atleast_2d(np.asarray(rows, dtype=np.float64)):
        v = row / np.linalg.norm(row)
        for _ in range(2):
            for u in accepted:
                v = v - (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > STACK_TOLERANCE:
            v = v / norm
            accepted.append(v)
            added.append(v)
    return added


def nullspace_projection(directions) -> np.ndarray:
    """Orthogonal projector onto the complement of the span of the directions."""
    D = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    norms = np.linalg.norm(D, axis=1)
    if (norms <= 0).any():
        raise ValueError("cannot project out a zero direction")
    basis = _orthonormalize(D, [])
    U = np.vstack(basis)
    return np.eye(D.shape[1]) - U.T @ U


@dataclass
class ProjectionStack:
    """Accumulated removed directions and their composed nullspace projector."""

    dim: int
    directions: list[np.ndarray] = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        P = np.eye(self.dim)
        if self.directions:
            U = np.vstack(self.directions)
            P = P - U.T @ U
        return P

    @property
    def rank(self) -> int:
        return self.dim - len(self.directions)

    def add(self, directions) -> int:
        """Orthonormalize against the stored directions and append; returns
        how many independent directions were actually added."""
        rows = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        if rows.shape[1] != self.dim:
            raise ValueError(f"direction width {rows.shape[1]} does not match dim {self.dim}")
        if (np.linalg.norm(rows, axis=1) <= 0).any():
            raise ValueError("cannot add a zero direction")
        added = _orthonormalize(rows, self.directions)
        self.directions.extend(added)
        return len(added)


def apply_projection(stack: ProjectionStack, representations) -> np.ndarray:
    """Project representations onto the stack's nullspace (idempotent)."""
    X = np.asarray(representations, dtype=np.float64)
    if not stack.directions:
        raise ValueError("projection stack is empty")
    if X.shape[-1] != stack.dim:
        raise ValueError(f"representation width {X.shape[-1]} does not match dim {stack.dim}")
    return X @ stack.matrix


def save_stack(stack: ProjectionStack, path) -> None:
    with open(path, "wb") as fh:
        fh.write(np.array([stack.dim, len(stack.directions)], dtype="<i8").tobytes())
        for u in stack.directions:
            fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def load_stack(path) -> ProjectionStack:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ValueError(f"{path}: truncated stack file")
    dim, count = (int(v) for v in np.frombuffer(blob, dtype="<i8", count=2))
    if dim < 1 or count < 0 or len(blob) != 16 + count * dim * 8:
        raise ValueError(f"{path}: stack payload does not match its header")
    flat = np.frombuffer(blob, dtype="<f8", offset=16)
    return ProjectionStack(dim, [row.copy() for row in flat.reshape(count, dim)])


@dataclass
class InlpResult:
    stack: ProjectionStack
    probe_accuracies: list[float]
    majority_baseline: float
    stopped_early: bool


def run_inlp(
    representations,
    groups,
    iterations: int = 20,
    stop_margin: float = 0.02,
    seed: int = 0,
    regularization: float = 1e-4,
) -> InlpResult:
    """Iteratively remove probe directions until group accuracy hits the floor.

    Each iteration fits a probe on the currently projected representations,
    appends its directions, recomposes the projector, and reprojects from
    the originals. The first probe is always removed; afterwards the loop
    stops once a freshly fitted probe scores at or below majority + margin.
    """
    X0 = np.asarray(representations, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    if iterations > X0.shape[1]:
        raise ValueError(
            f"{iterations} iterations exceed the representation dimension {X0.shape[1]}"
        )
    counts = np.bincount(groups)
    majority = float(counts.max() / counts.sum())
    rng = np.random.default_rng(seed)
    stack = ProjectionStack(X0.shape[1])
    X = X0
    accuracies: list[float] = []
    stopped = False
    for iteration in range(iterations):
        probe = fit_linear_probe(X, groups, regularization, seed=int(rng.integers(2**63)))
        accuracies.append(probe.accuracy)
        if iteration > 0 and probe.accuracy <= majority + stop_margin:
            stopped = True
            break
        if stack.rank - len(probe.directions()) < 0:
            raise ValueError("no representation directions left to remove")
        stack.add(probe.directions())
        X = X0 @ stack.matrix
    return InlpResult(stack, accuracies, majority, stopped)


@dataclass
class InlpPipelineResult:
    base_model: MLP
    history: list
    inlp: InlpResult
    classifier: LinearProbe
    dev_predictions: np.ndarray
    test_predictions: np.ndarray


def inlp_pipeline(
    base_kind: str,
    train_data: Dataset,
    dev_data: Dataset,
    test_data: Dataset,
    train_config: TrainConfig,
    *,
    hidden_dims=(16, 16),
    activation: str = "tanh",
    objective: BalanceObjective | None = None,
    iterations: int = 20,
    stop_margin: float = 0.02,
    regularization: float = 1e-4,
) -> InlpPipelineResult:
    """Train a base model (plain, reweighted, or down-sampled), strip group
    information from its last hidden layer, and refit a linear main-task
    classifier on the projected representations."""
    if base_kind not in BASE_KINDS:
        raise ValueError(f"base_kind must be one of {BASE_KINDS}")
    rng = np.random.default_rng(train_config.seed)
    init_seed, ds_seed, inlp_seed, cls_seed = (int(s) for s in rng.integers(2**63, size=4))
    objective = objective or BalanceObjective()
    fit_data = train_data
    if base_kind == "ds":
        fit_data = downsample(train_data, objective, ds_seed)
    if base_kind == "rw":
        weights = compute_weights(fit_data, objective)
    else:
        weights = np.ones(fit_data.n)
    model = build_mlp(
        train_data.dim, hidden_dims, train_data.label_count, activation, seed=init_seed
    )
    model, history = train(model, fit_data, dev_data, weights, train_config)
    reps = model.hidden(fit_data.features)
    result = run_inlp(reps, fit_data.groups, iterations, stop_margin, inlp_seed, regularization)
    P = result.stack.matrix
    classifier = fit_linear_probe(
        reps @ P, fit_data.labels, regularization, seed=cls_seed, class_count=train_data.label_count
    )
    dev_predictions = classifier.predict(model.hidden(dev_data.features) @ P)
    test_predictions = classifier.predict(model.hidden(test_data.features) @ P)
    return InlpPipelineResult(model, history, result, classifier, dev_predictions, test_predictions)
