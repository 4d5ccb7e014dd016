"""Weighted cross-entropy training: exact backpropagation, Adam updates, and
a deterministic epoch loop with dev-based checkpoint selection.

All accumulation is in 64-bit reals so that finite-difference gradient
checks hold to tight tolerances. The loop is single-threaded; independent
calls (different seeds or configs) share nothing mutable.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import metrics
from .data import Dataset
from .model import (
    ACTIVATIONS,
    MLP,
    GatedModel,
    GatePolicy,
    activation_derivative,
    predict,
    softmax,
    validate_gate_coefficients,
)

DEV_SELECTION_MODES = ("final_epoch", "best_dev_accuracy", "best_dev_gap_at_threshold")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    dev_selection: str = "best_dev_accuracy"
    selection_offset: float = 0.02

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("moment decay rates must lie strictly between 0 and 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.dev_selection not in DEV_SELECTION_MODES:
            raise ValueError(f"dev_selection must be one of {DEV_SELECTION_MODES}")
        if self.selection_offset < 0:
            raise ValueError("selection_offset must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    dev_accuracy: float
    dev_rms_gap: float
    seconds: float


def save_history(history: list[EpochRecord], path) -> None:
    """One JSON object per epoch."""
    with open(path, "w") as fh:
        for record in history:
            fh.write(json.dumps(asdict(record)) + "\n")


def load_history(path) -> list[EpochRecord]:
    records = []
    with open(path, "r") as fh:
        for line in fh:
            if line.strip():
                records.append(EpochRecord(**json.loads(line)))
    return records


def weighted_cross_entropy(logits, labels, weights) -> float:
    """(1/n) sum_i w_i * (-log softmax(logits_i)[y_i]), log-sum-exp stabilized."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    n = len(labels)
    if logits.ndim != 2 or logits.shape[0] != n or weights.shape != (n,):
        raise ValueError("logits, labels and weights must agree in length")
    if (weights < 0).any():
        raise ValueError("weights must be non-negative")
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    nll = lse - logits[np.arange(n), labels]
    return float(np.mean(weights * nll))


def _logit_gradient(logits, labels, weights) -> np.ndarray:
    n = len(labels)
    p = softmax(logits)
    p[np.arange(n), labels] -= 1.0
    return p * (np.asarray(weights, dtype=np.float64) / n)[:, None]


def _forward_cached(mlp: MLP, features):
    act = ACTIVATIONS[mlp.activation]
    acts = [np.asarray(features, dtype=np.float64)]
    zs = []
    last = len(mlp.weights) - 1
    for i, (W, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = acts[-1] @ W + b
        zs.append(z)
        acts.append(act(z) if (i < last or mlp.final_activation) else z)
    return acts, zs


def _backward_mlp(mlp: MLP, acts, zs, grad_out):
    """Backprop one MLP; returns ([dW0, db0, dW1, db1, ...], grad wrt input)."""
    grads = [None] * (2 * len(mlp.weights))
    g = grad_out
    last = len(mlp.weights) - 1
    for i in range(last, -1, -1):
        if i < last or mlp.final_activation:
            g = g * activation_derivative(mlp.activation, zs[i], acts[i + 1])
        grads[2 * i] = acts[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ mlp.weights[i].T
    return grads, g


def loss_and_gradients(model, features, labels, weights, coeffs=None):
    """Weighted cross-entropy and its exact gradient for every parameter, in
    ``model.parameters()`` order.

    For gated models the group-encoder gradients are scaled by each
    instance's gate coefficient, so 1-hot gating sends exactly zero
    gradient to non-selected encoders.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if len(labels) == 0:
        raise ValueError("batch is empty")
    if isinstance(model, MLP):
        if coeffs is not None:
            raise ValueError("gate coefficients are only valid for gated models")
        acts, zs = _forward_cached(model, features)
        logits = acts[-1]
        loss = weighted_cross_entropy(logits, labels, weights)
        grads, _ = _backward_mlp(model, acts, zs, _logit_gradient(logits, labels, weights))
        return loss, grads
    if coeffs is None:
        raise ValueError("gated models require gate coefficients")
    coeffs = validate_gate_coefficients(coeffs, model.group_count, features.shape[0])
    shared_acts, shared_zs = _forward_cached(model.shared, features)
    encoder_caches = [_forward_cached(enc, features) for enc in model.group_encoders]
    h_shared = shared_acts[-1]
    h_group = np.zeros((features.shape[0], model.group_encoders[0].output_dim))
    for j, (acts_j, _) in enumerate(encoder_caches):
        h_group += coeffs[:, j : j + 1] * acts_j[-1]
    joint = np.hstack([h_shared, h_group])
    cls_acts, cls_zs = _forward_cached(model.classifier, joint)
    logits = cls_acts[-1]
    loss = weighted_cross_entropy(logits, labels, weights)
    cls_grads, g_joint = _backward_mlp(
        model.classifier, cls_acts, cls_zs, _logit_gradient(logits, labels, weights)
    )
    width = h_shared.shape[1]
    shared_grads, _ = _backward_mlp(model.shared, shared_acts, shared_zs, g_joint[:, :width])
    g_group = g_joint[:, width:]
    encoder_grads = []
    for j, (acts_j, zs_j) in enumerate(encoder_caches):
        grads_j, _ = _backward_mlp(
            model.group_encoders[j], acts_j, zs_j, coeffs[:, j : j + 1] * g_group
        )
        encoder_grads += grads_j
    return loss, shared_grads + encoder_grads + cls_grads


class Adam:
    """Adam with bias correction; updates the parameter arrays in place."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)


def _dev_metrics(model, dev: Dataset, policy: GatePolicy | None):
    preds = predict(model, dev.features, dev.groups, policy)
    record = metrics.EvalRecord(preds, dev.labels, dev.groups, dev.label_count, dev.group_count)
    gaps, _ = metrics.tpr_gap_per_class(record)
    gap = metrics.rms_gap(gaps) if gaps.size else float("nan")
    return metrics.accuracy(record), gap


def _restore(params, stored) -> None:
    for p, s in zip(params, stored):
        p[...] = s


def train(
    model,
    train_data: Dataset,
    dev_data: Dataset,
    weights,
    config: TrainConfig,
    gate_policy: GatePolicy | None = None,
):
    """Train with seeded per-epoch shuffling and Adam; returns the model at
    the dev-selected checkpoint plus the per-epoch history.

    Gated models use ``gate_policy`` (default 1-hot gold groups) both for
    the loss and for the per-epoch dev metrics. The batch remainder forms a
    final smaller batch, so no instance is dropped. Identical inputs and
    seed reproduce the returned parameters bitwise.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (train_data.n,):
        raise ValueError("weights must align with the training set")
    if (weights <= 0).any():
        raise ValueError("training weights must be strictly positive")
    gated = isinstance(model, GatedModel)
    if not gated and gate_policy is not None:
        raise ValueError("gate_policy is only valid for gated models")
    if gated:
        gate_policy = gate_policy or GatePolicy()
        if gate_policy.kind == "bayes":
            raise ValueError("bayes averaging is an inference policy; train with coefficient gating")
        train_coeffs = gate_policy.coefficients(train_data.groups, model.group_count)
    else:
        train_coeffs = None
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    optimizer = Adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    history: list[EpochRecord] = []
    snapshots: list[list[np.ndarray]] = []
    best: tuple[float, list[np.ndarray]] | None = None
    n = train_data.n
    for epoch in range(config.epochs):
        start_time = time.perf_counter()
        perm = rng.permutation(n)
        total = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            batch_coeffs = train_coeffs[idx] if gated else None
            loss, grads = loss_and_gradients(
                model, train_data.features[idx], train_data.labels[idx], weights[idx], batch_coeffs
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_index}"
                )
            optimizer.step(params, grads)
            total += loss * len(idx)
        dev_acc, dev_gap = _dev_metrics(model, dev_data, gate_policy if gated else None)
        history.append(
            EpochRecord(epoch, total / n, dev_acc, dev_gap, time.perf_counter() - start_time)
        )
        if config.dev_selection == "best_dev_accuracy":
            if best is None or dev_acc > best[0]:
                best = (dev_acc, [p.copy() for p in params])
        elif config.dev_selection == "best_dev_gap_at_threshold":
            snapshots.append([p.copy() for p in params])
    if config.dev_selection == "best_dev_accuracy" and best is not None:
        _restore(params, best[1])
    elif config.dev_selection == "best_dev_gap_at_threshold":
        accs = np.array([r.dev_accuracy for r in history])
        threshold = accs.max() - config.selection_offset

        def key(i: int):
            gap = history[i].dev_rms_gap
            return (gap if np.isfinite(gap) else np.inf, -history[i].dev_accuracy, i)

        eligible = [i for i in range(len(history)) if accs[i] >= threshold]
        _restore(params, snapshots[min(eligible, key=key)])
    return model, history
