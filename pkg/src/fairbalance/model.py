"""Classifier architectures: plain MLP, group-gated model, gating policies.

The gated model runs one shared encoder plus one encoder per demographic
group. Per-instance simplex coefficients mix the group-encoder outputs, and
the classifier consumes the concatenation of the shared and the mixed
representation. Gating policies (1-hot, uniform, alpha/beta soft, Bayesian
averaging) only change inference; none of them require retraining.

Checkpoint format: 8-byte magic ``FBMODEL1``, a little-endian int64 header
length, a JSON header describing the architecture, then all parameters as
64-bit little-endian floats in ``parameters()`` order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

MODEL_MAGIC = b"FBMODEL1"
GATE_TOLERANCE = 1e-9


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


ACTIVATIONS = {"tanh": np.tanh, "relu": _relu}


def activation_derivative(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation z, where a = act(z)."""
    if name == "tanh":
        return 1.0 - a * a
    return (z > 0).astype(np.float64)


@dataclass
class MLP:
    """Stack of affine layers. Hidden layers apply ``activation``; the final
    layer emits identity logits unless ``final_activation`` (encoder mode)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    final_activation: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must be non-empty parallel lists")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} does not match weights {W.shape}")
            if i and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {i}: input width {W.shape[0]} does not chain")
            if not (np.isfinite(W).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {i}: non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def forward(self, features) -> np.ndarray:
        a = np.asarray(features, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.input_dim:
            raise ValueError(f"expected features of width {self.input_dim}, got shape {a.shape}")
        act = ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W + b
            if i < last or self.final_activation:
                a = act(a)
        return a

    def hidden(self, features) -> np.ndarray:
        """Activated output of the last hidden layer (the classifier input)."""
        if len(self.weights) < 2:
            raise ValueError("model has no hidden layer")
        a = np.asarray(features, dtype=np.float64)
        act = ACTIVATIONS[self.activation]
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = act(a @ W + b)
        return a

    def parameters(self) -> list[np.ndarray]:
        params = []
        for W, b in zip(self.weights, self.biases):
            params += [W, b]
        return params


@dataclass
class GatedModel:
    """Shared encoder, one encoder per group, classifier over the concatenation."""

    shared: MLP
    group_encoders: list[MLP]
    classifier: MLP
    seed: int = 0

    def __post_init__(self):
        if len(self.group_encoders) < 2:
            raise ValueError("a gated model needs at least two group encoders")
        widths = {enc.output_dim for enc in self.group_encoders}
        if len(widths) != 1:
            raise ValueError("group encoders must share their output width")
        if not self.shared.final_activation or not all(e.final_activation for e in self.group_encoders):
            raise ValueError("encoders must apply the activation to their final layer")
        if any(e.input_dim != self.shared.input_dim for e in self.group_encoders):
            raise ValueError("all encoders must accept the same input width")
        expected = self.shared.output_dim + self.group_encoders[0].output_dim
        if self.classifier.input_dim != expected:
            raise ValueError(f"classifier input width must be {expected}")

    @property
    def input_dim(self) -> int:
        return self.shared.input_dim

    @property
    def group_count(self) -> int:
        return len(self.group_encoders)

    @property
    def label_count(self) -> int:
        return self.classifier.output_dim

    def parameters(self) -> list[np.ndarray]:
        params = self.shared.parameters()
        for enc in self.group_encoders:
            params += enc.parameters()
        return params + self.classifier.parameters()


def _init_layers(rng: np.random.Generator, dims: list[int]) -> tuple[list, list]:
    # variance 1 / fan_in keeps activations scale-stable at init
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def build_mlp(
    input_dim: int,
    hidden_dims,
    output_dim: int,
    activation: str = "tanh",
    seed: int = 0,
    final_activation: bool = False,
) -> MLP:
    """Seeded fan-in-scaled initialization of a plain MLP classifier."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_dims, output_dim]
    weights, biases = _init_layers(rng, dims)
    return MLP(weights, biases, activation, final_activation, seed)


def build_gated_model(
    input_dim: int,
    group_count: int,
    label_count: int,
    encoder_dim: int = 16,
    classifier_hidden=(16,),
    activation: str = "tanh",
    seed: int = 0,
) -> GatedModel:
    """Gated model with single-layer encoders and a two-layer classifier, so
    the full path depth matches a three-layer standard model."""
    rng = np.random.default_rng(seed)

    def encoder() -> MLP:
        weights, biases = _init_layers(rng, [input_dim, encoder_dim])
        return MLP(weights, biases, activation, final_activation=True)

    shared = encoder()
    group_encoders = [encoder() for _ in range(group_count)]
    weights, biases = _init_layers(rng, [2 * encoder_dim, *classifier_hidden, label_count])
    classifier = MLP(weights, biases, activation, final_activation=False)
    return GatedModel(shared, group_encoders, classifier, seed)


def gate_onehot(group: int, group_count: int) -> np.ndarray:
    """1-hot coefficients selecting the gold group's encoder."""
    if not 0 <= group < group_count:
        raise ValueError(f"group {group} out of range [0, {group_count})")
    coeffs = np.zeros(group_count)
    coeffs[group] = 1.0
    return coeffs


def gate_uniform(group_count: int) -> np.ndarray:
    """Equal mass 1/|G| on every group encoder."""
    if group_count < 1:
        raise ValueError("group_count must be at least 1")
    return np.full(group_count, 1.0 / group_count)


def gate_soft(gold_group: int, alpha: float = 0.0, beta: float = 0.0) -> np.ndarray:
    """Perturbed binary gate.

    alpha (for gold group 0) and beta (for gold group 1) are the mass moved
    to the opposite group's encoder: 0 keeps the 1-hot gate, 0.5 is uniform,
    1 fully flips the group.
    """
    if gold_group not in (0, 1):
        raise ValueError("soft gating is defined for binary groups")
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise ValueError("alpha and beta must lie in [0, 1]")
    if gold_group == 0:
        return np.array([1.0 - alpha, alpha])
    return np.array([beta, 1.0 - beta])


def onehot_coefficients(groups, group_count: int) -> np.ndarray:
    groups = np.asarray(groups, dtype=np.int64)
    if groups.size and not (0 <= groups.min() and groups.max() < group_count):
        raise ValueError(f"groups must lie in [0, {group_count})")
    coeffs = np.zeros((len(groups), group_count))
    coeffs[np.arange(len(groups)), groups] = 1.0
    return coeffs


def uniform_coefficients(n: int, group_count: int) -> np.ndarray:
    return np.full((n, group_count), 1.0 / group_count)


def soft_coefficients(groups, alpha: float = 0.0, beta: float = 0.0) -> np.ndarray:
    groups = np.asarray(groups, dtype=np.int64)
    if groups.size and not (0 <= groups.min() and groups.max() <= 1):
        raise ValueError("soft gating is defined for binary groups")
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise ValueError("alpha and beta must lie in [0, 1]")
    coeffs = np.empty((len(groups), 2))
    zero = groups == 0
    coeffs[zero] = (1.0 - alpha, alpha)
    coeffs[~zero] = (beta, 1.0 - beta)
    return coeffs


def validate_gate_coefficients(coeffs, group_count: int, n: int | None = None) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 2 or coeffs.shape[1] != group_count:
        raise ValueError(f"gate coefficients must be (n, {group_count}), got {coeffs.shape}")
    if n is not None and coeffs.shape[0] != n:
        raise ValueError(f"need one coefficient row per instance ({n}), got {coeffs.shape[0]}")
    if (coeffs < -GATE_TOLERANCE).any() or (np.abs(coeffs.sum(axis=1) - 1.0) > GATE_TOLERANCE).any():
        raise ValueError("gate coefficient rows must lie on the probability simplex")
    return coeffs


def gated_representations(model: GatedModel, features, coeffs) -> tuple[np.ndarray, np.ndarray]:
    """Shared representation and the coefficient-mixed group representation."""
    features = np.asarray(features, dtype=np.float64)
    coeffs = validate_gate_coefficients(coeffs, model.group_count, features.shape[0])
    h_shared = model.shared.forward(features)
    h_group = np.zeros((features.shape[0], model.group_encoders[0].output_dim))
    for j, encoder in enumerate(model.group_encoders):
        h_group += coeffs[:, j : j + 1] * encoder.forward(features)
    return h_shared, h_group


def forward_gated(model: GatedModel, features, coeffs) -> np.ndarray:
    """Logits of the gated model under per-instance gate coefficients."""
    h_shared, h_group = gated_representations(model, features, coeffs)
    return model.classifier.forward(np.hstack([h_shared, h_group]))


def forward_standard(model: MLP, features) -> np.ndarray:
    """Logits of a plain classifier MLP."""
    if model.final_activation:
        raise ValueError("expected a classifier MLP, got an encoder")
    return model.forward(features)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def bayes_average(model: GatedModel, features, prior) -> np.ndarray:
    """Mix the per-group softmax predictions under a prior over groups:
    p(y|x) = sum_g prior(g) p(y|x, g)."""
    prior = np.asarray(prior, dtype=np.float64)
    if (
        prior.shape != (model.group_count,)
        or (prior < -GATE_TOLERANCE).any()
        or abs(float(prior.sum()) - 1.0) > GATE_TOLERANCE
    ):
        raise ValueError("prior must be a probability vector over the groups")
    features = np.asarray(features, dtype=np.float64)
    out = np.zeros((features.shape[0], model.label_count))
    for j in range(model.group_count):
        coeffs = onehot_coefficients(np.full(features.shape[0], j), model.group_count)
        out += prior[j] * softmax(forward_gated(model, features, coeffs))
    return out


@dataclass(frozen=True)
class GatePolicy:
    """Inference-time gating choice for gated models."""

    kind: str = "onehot"  # onehot | uniform | soft | bayes
    alpha: float = 0.0
    beta: float = 0.0
    prior: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("onehot", "uniform", "soft", "bayes"):
            raise ValueError(f"unknown gating policy {self.kind!r}")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.prior is not None and self.kind != "bayes":
            raise ValueError("a prior is only meaningful for bayes gating")

    def coefficients(self, groups, group_count: int) -> np.ndarray:
        if self.kind == "onehot":
            return onehot_coefficients(groups, group_count)
        if self.kind == "uniform":
            return uniform_coefficients(len(groups), group_count)
        if self.kind == "soft":
            return soft_coefficients(groups, self.alpha, self.beta)
        raise ValueError("bayes gating mixes probabilities, not coefficients")

    def resolve_prior(self, group_count: int) -> np.ndarray:
        if self.prior is not None:
            return np.asarray(self.prior, dtype=np.float64)
        return np.full(group_count, 1.0 / group_count)


def predict(model, features, groups=None, policy: GatePolicy | None = None) -> np.ndarray:
    """Predicted labels. Gated models gate by ``policy`` (default 1-hot gold
    groups); bayes gating needs no groups at all."""
    if isinstance(model, MLP):
        return np.argmax(forward_standard(model, features), axis=1)
    policy = policy or GatePolicy()
    if policy.kind == "bayes":
        return np.argmax(bayes_average(model, features, policy.resolve_prior(model.group_count)), axis=1)
    if groups is None:
        raise ValueError("gated prediction requires gold groups under coefficient gating")
    coeffs = policy.coefficients(np.asarray(groups, dtype=np.int64), model.group_count)
    return np.argmax(forward_gated(model, features, coeffs), axis=1)


def _layer_dims(mlp: MLP) -> list[list[int]]:
    return [[int(W.shape[0]), int(W.shape[1])] for W in mlp.weights]


def _model_header(model) -> dict:
    if isinstance(model, MLP):
        return {
            "kind": "standard",
            "activation": model.activation,
            "seed": int(model.seed),
            "label_count": model.output_dim,
            "group_count": 0,
            "final_activation": model.final_activation,
            "layers": _layer_dims(model),
        }
    return {
        "kind": "gated",
        "activation": model.classifier.activation,
        "seed": int(model.seed),
        "label_count": model.label_count,
        "group_count": model.group_count,
        "shared": _layer_dims(model.shared),
        "group_encoders": [_layer_dims(enc) for enc in model.group_encoders],
        "classifier": _layer_dims(model.classifier),
    }


def save_model(model, path) -> None:
    """Write a checkpoint; load(save(m)) is a bitwise identity."""
    header = json.dumps(_model_header(model), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(np.array(len(header), dtype="<i8").tobytes())
        fh.write(header)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def _read_layers(dims: list, flat: np.ndarray, offset: int) -> tuple[list, list, int]:
    weights, biases = [], []
    for fan_in, fan_out in dims:
        size = fan_in * fan_out
        weights.append(flat[offset : offset + size].reshape(fan_in, fan_out).copy())
        offset += size
        biases.append(flat[offset : offset + fan_out].copy())
        offset += fan_out
    return weights, biases, offset


def load_model(path):
    """Read a checkpoint written by :func:`save_model`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MODEL_MAGIC) + 8 or blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    header_len = int(np.frombuffer(blob, dtype="<i8", count=1, offset=len(MODEL_MAGIC))[0])
    start = len(MODEL_MAGIC) + 8
    try:
        header = json.loads(blob[start : start + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ValueError(f"{path}: malformed checkpoint header") from None
    flat = np.frombuffer(blob, dtype="<f8", offset=start + header_len)
    if header.get("kind") == "standard":
        dims_lists = [header.get("layers", [])]
    else:
        dims_lists = [header.get("shared", []), *header.get("group_encoders", []),
                      header.get("classifier", [])]
    expected = sum(fan_in * fan_out + fan_out for dims in dims_lists for fan_in, fan_out in dims)
    if flat.size != expected:
        raise ValueError(f"{path}: parameter payload does not match the header")
    if header["kind"] == "standard":
        weights, biases, offset = _read_layers(header["layers"], flat, 0)
        model = MLP(
            weights,
            biases,
            header["activation"],
            bool(header.get("final_activation", False)),
            int(header["seed"]),
        )
    elif header["kind"] == "gated":
        offset = 0
        weights, biases, offset = _read_layers(header["shared"], flat, offset)
        shared = MLP(weights, biases, header["activation"], final_activation=True)
        encoders = []
        for dims in header["group_encoders"]:
            weights, biases, offset = _read_layers(dims, flat, offset)
            encoders.append(MLP(weights, biases, header["activation"], final_activation=True))
        weights, biases, offset = _read_layers(header["classifier"], flat, offset)
        classifier = MLP(weights, biases, header["activation"], final_activation=False)
        model = GatedModel(shared, encoders, classifier, int(header["seed"]))
    else:
        raise ValueError(f"{path}: unknown model kind {header['kind']!r}")
    if offset != flat.size:
        raise ValueError(f"{path}: parameter payload does not match the header")
    return model
