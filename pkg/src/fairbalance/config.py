"""Experiment configuration: YAML schema, validation, hashing, run labels.

A config document has the sections data, model, balance, gating, inlp,
train, sweep, eval and output. Every field is checked before any work
starts, and validation errors name the offending field with its full path.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .balance import BalanceKind, BalanceObjective, skew_target
from .data import SyntheticConfig
from .model import GatePolicy
from .train import DEV_SELECTION_MODES, TrainConfig
from .tuning import SELECTION_MODES, SelectionRule


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


def _require(section: dict, path: str, key: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}: required field is missing")
    return section[key]


def _typed(value, path: str, kind):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}: expected {kind.__name__}")
    if not isinstance(value, kind):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _get(section: dict, path: str, key: str, kind, default):
    if key not in section or section[key] is None:
        return default
    return _typed(section[key], f"{path}.{key}", kind)


def _choice(value, path: str, choices):
    if value not in choices:
        raise ConfigError(f"{path}: must be one of {list(choices)}, got {value!r}")
    return value


def _check_keys(section: dict, path: str, allowed):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown field")


@dataclass(frozen=True)
class SyntheticDataConfig:
    n_train: int
    n_dev: int
    n_test: int
    d: int
    skew: float
    eval_skew: float
    class_separation: float
    group_shift: float
    noise_std: float
    seed: int
    file_format: str = "binary"

    def part_config(self, part: str, n: int, seed: int) -> SyntheticConfig:
        skew = self.skew if part == "train" else self.eval_skew
        return SyntheticConfig(
            n=n,
            d=self.d,
            skew=skew,
            class_separation=self.class_separation,
            group_shift=self.group_shift,
            noise_std=self.noise_std,
            seed=seed,
        )


@dataclass(frozen=True)
class DataConfig:
    synthetic: SyntheticDataConfig | None = None
    paths: dict | None = None


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "standard"  # standard | gated
    hidden: int = 16
    activation: str = "tanh"


@dataclass(frozen=True)
class BalanceConfig:
    method: str = "none"  # none | rw | ds
    objective: str = "pgy"
    target_skew: float | None = None
    raw_inverse: bool = False

    def to_objective(self) -> BalanceObjective:
        target = skew_target(self.target_skew) if self.target_skew is not None else None
        return BalanceObjective(BalanceKind(self.objective), target)


@dataclass(frozen=True)
class InlpSettings:
    enabled: bool = False
    iterations: int = 20
    stop_margin: float = 0.02
    regularization: float = 1e-4


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dev_selection: str = "best_dev_accuracy"
    selection_offset: float = 0.02

    def to_train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            seed=seed,
            dev_selection=self.dev_selection,
            selection_offset=self.selection_offset,
        )


@dataclass(frozen=True)
class SweepSettings:
    resolution: int = 21
    rule: str = "min_gap_at_threshold"
    threshold_offset: float = 0.02

    def to_rule(self) -> SelectionRule:
        return SelectionRule(self.rule, self.threshold_offset)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: DataConfig
    model: ModelConfig
    balance: BalanceConfig
    gating: GatePolicy
    inlp: InlpSettings
    train: TrainSettings
    sweep: SweepSettings
    seeds: tuple[int, ...]
    output: str | None

    def to_dict(self) -> dict:
        synthetic = None
        if self.data.synthetic is not None:
            synthetic = dict(vars(self.data.synthetic))
        return {
            "name": self.name,
            "data": {"synthetic": synthetic, "paths": self.data.paths},
            "model": dict(vars(self.model)),
            "balance": dict(vars(self.balance)),
            "gating": {
                "policy": self.gating.kind,
                "alpha": self.gating.alpha,
                "beta": self.gating.beta,
                "prior": list(self.gating.prior) if self.gating.prior else None,
            },
            "inlp": dict(vars(self.inlp)),
            "train": dict(vars(self.train)),
            "sweep": dict(vars(self.sweep)),
            "seeds": list(self.seeds),
            "output": self.output,
        }


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:10]


def run_label(config: ExperimentConfig) -> str:
    parts = ["gate" if config.model.kind == "gated" else "standard"]
    if config.balance.method != "none":
        tag = config.balance.method
        if config.balance.objective != "pgy":
            tag += f"({config.balance.objective})"
        if config.balance.target_skew is not None:
            tag += f"@{config.balance.target_skew:g}"
        parts.append(tag)
    if config.gating.kind != "onehot":
        gate = config.gating.kind
        if config.gating.kind == "soft":
            gate += f"({config.gating.alpha:g},{config.gating.beta:g})"
        parts.append(gate)
    if config.inlp.enabled:
        parts.append("inlp")
    return "+".join(parts)


def _parse_synthetic(section: dict, path: str) -> SyntheticDataConfig:
    _check_keys(
        section,
        path,
        {
            "n_train", "n_dev", "n_test", "d", "skew", "eval_skew",
            "class_separation", "group_shift", "noise_std", "seed", "file_format",
        },
    )
    cfg = SyntheticDataConfig(
        n_train=_typed(_require(section, path, "n_train"), f"{path}.n_train", int),
        n_dev=_typed(_require(section, path, "n_dev"), f"{path}.n_dev", int),
        n_test=_typed(_require(section, path, "n_test"), f"{path}.n_test", int),
        d=_get(section, path, "d", int, 8),
        skew=_typed(_require(section, path, "skew"), f"{path}.skew", float),
        eval_skew=_get(section, path, "eval_skew", float, 0.5),
        class_separation=_get(section, path, "class_separation", float, 2.0),
        group_shift=_get(section, path, "group_shift", float, 1.0),
        noise_std=_get(section, path, "noise_std", float, 1.0),
        seed=_get(section, path, "seed", int, 0),
        file_format=_choice(_get(section, path, "file_format", str, "binary"), f"{path}.file_format", ("binary", "text")),
    )
    for field_name, value in (("n_train", cfg.n_train), ("n_dev", cfg.n_dev), ("n_test", cfg.n_test)):
        if value < 1:
            raise ConfigError(f"{path}.{field_name}: must be positive")
    if cfg.d < 2:
        raise ConfigError(f"{path}.d: must be at least 2")
    if not 0.0 < cfg.skew < 1.0:
        raise ConfigError(f"{path}.skew: must lie strictly between 0 and 1")
    if not 0.0 < cfg.eval_skew < 1.0:
        raise ConfigError(f"{path}.eval_skew: must lie strictly between 0 and 1")
    if cfg.class_separation <= 0:
        raise ConfigError(f"{path}.class_separation: must be positive")
    if cfg.group_shift < 0:
        raise ConfigError(f"{path}.group_shift: must be non-negative")
    if cfg.noise_std <= 0:
        raise ConfigError(f"{path}.noise_std: must be positive")
    return cfg


def _parse_data(section: dict, path: str) -> DataConfig:
    _check_keys(section, path, {"synthetic", "paths"})
    synthetic = section.get("synthetic")
    paths = section.get("paths")
    if (synthetic is None) == (paths is None):
        raise ConfigError(f"{path}: exactly one of 'synthetic' or 'paths' is required")
    if synthetic is not None:
        return DataConfig(synthetic=_parse_synthetic(_typed(synthetic, f"{path}.synthetic", dict), f"{path}.synthetic"))
    paths = _typed(paths, f"{path}.paths", dict)
    _check_keys(paths, f"{path}.paths", {"train", "dev", "test"})
    for part in ("train", "dev", "test"):
        _typed(_require(paths, f"{path}.paths", part), f"{path}.paths.{part}", str)
    return DataConfig(paths=dict(paths))


def parse_config(document: dict, source: str = "config") -> ExperimentConfig:
    if not isinstance(document, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    _check_keys(
        document, source,
        {"name", "data", "model", "balance", "gating", "inlp", "train", "sweep", "eval", "output"},
    )
    data = _parse_data(_typed(_require(document, source, "data"), f"{source}.data", dict), f"{source}.data")

    model_section = _typed(document.get("model") or {}, f"{source}.model", dict)
    _check_keys(model_section, f"{source}.model", {"kind", "hidden", "activation"})
    model = ModelConfig(
        kind=_choice(_get(model_section, f"{source}.model", "kind", str, "standard"), f"{source}.model.kind", ("standard", "gated")),
        hidden=_get(model_section, f"{source}.model", "hidden", int, 16),
        activation=_choice(_get(model_section, f"{source}.model", "activation", str, "tanh"), f"{source}.model.activation", ("tanh", "relu")),
    )
    if model.hidden < 1:
        raise ConfigError(f"{source}.model.hidden: must be positive")

    balance_section = _typed(document.get("balance") or {}, f"{source}.balance", dict)
    _check_keys(balance_section, f"{source}.balance", {"method", "objective", "target_skew", "raw_inverse"})
    balance = BalanceConfig(
        method=_choice(_get(balance_section, f"{source}.balance", "method", str, "none"), f"{source}.balance.method", ("none", "rw", "ds")),
        objective=_choice(_get(balance_section, f"{source}.balance", "objective", str, "pgy"), f"{source}.balance.objective", ("pg", "pg_given_y", "pgy")),
        target_skew=_get(balance_section, f"{source}.balance", "target_skew", float, None),
        raw_inverse=_get(balance_section, f"{source}.balance", "raw_inverse", bool, False),
    )
    if balance.target_skew is not None and not 0.0 < balance.target_skew < 1.0:
        raise ConfigError(f"{source}.balance.target_skew: must lie strictly between 0 and 1")

    gating_section = _typed(document.get("gating") or {}, f"{source}.gating", dict)
    _check_keys(gating_section, f"{source}.gating", {"policy", "alpha", "beta", "prior"})
    policy_kind = _choice(_get(gating_section, f"{source}.gating", "policy", str, "onehot"), f"{source}.gating.policy", ("onehot", "uniform", "soft", "bayes"))
    prior = gating_section.get("prior")
    if prior is not None:
        prior = tuple(_typed(v, f"{source}.gating.prior[{i}]", float) for i, v in enumerate(_typed(prior, f"{source}.gating.prior", list)))
        if abs(sum(prior) - 1.0) > 1e-9 or any(p < 0 for p in prior):
            raise ConfigError(f"{source}.gating.prior: must be a probability vector")
    alpha = _get(gating_section, f"{source}.gating", "alpha", float, 0.0)
    beta = _get(gating_section, f"{source}.gating", "beta", float, 0.0)
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise ConfigError(f"{source}.gating.alpha/beta: must lie in [0, 1]")
    try:
        gating = GatePolicy(policy_kind, alpha, beta, prior if policy_kind == "bayes" else None)
    except ValueError as exc:
        raise ConfigError(f"{source}.gating: {exc}") from None
    if model.kind == "standard" and policy_kind != "onehot":
        raise ConfigError(f"{source}.gating.policy: {policy_kind!r} requires model.kind = gated")

    inlp_section = _typed(document.get("inlp") or {}, f"{source}.inlp", dict)
    _check_keys(inlp_section, f"{source}.inlp", {"enabled", "iterations", "stop_margin", "regularization"})
    inlp = InlpSettings(
        enabled=_get(inlp_section, f"{source}.inlp", "enabled", bool, False),
        iterations=_get(inlp_section, f"{source}.inlp", "iterations", int, 20),
        stop_margin=_get(inlp_section, f"{source}.inlp", "stop_margin", float, 0.02),
        regularization=_get(inlp_section, f"{source}.inlp", "regularization", float, 1e-4),
    )
    if inlp.enabled and model.kind != "standard":
        raise ConfigError(f"{source}.inlp.enabled: the projection pipeline runs on standard models only")
    if inlp.iterations < 1:
        raise ConfigError(f"{source}.inlp.iterations: must be at least 1")
    if inlp.stop_margin < 0:
        raise ConfigError(f"{source}.inlp.stop_margin: must be non-negative")

    train_section = _typed(document.get("train") or {}, f"{source}.train", dict)
    _check_keys(
        train_section, f"{source}.train",
        {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "dev_selection", "selection_offset"},
    )
    debiased = balance.method != "none" or inlp.enabled
    default_selection = "best_dev_gap_at_threshold" if debiased else "best_dev_accuracy"
    train_settings = TrainSettings(
        epochs=_get(train_section, f"{source}.train", "epochs", int, 30),
        batch_size=_get(train_section, f"{source}.train", "batch_size", int, 256),
        learning_rate=_get(train_section, f"{source}.train", "learning_rate", float, 1e-3),
        beta1=_get(train_section, f"{source}.train", "beta1", float, 0.9),
        beta2=_get(train_section, f"{source}.train", "beta2", float, 0.999),
        epsilon=_get(train_section, f"{source}.train", "epsilon", float, 1e-8),
        dev_selection=_choice(
            _get(train_section, f"{source}.train", "dev_selection", str, default_selection),
            f"{source}.train.dev_selection", DEV_SELECTION_MODES,
        ),
        selection_offset=_get(train_section, f"{source}.train", "selection_offset", float, 0.02),
    )
    try:
        train_settings.to_train_config(0)
    except ValueError as exc:
        raise ConfigError(f"{source}.train: {exc}") from None

    sweep_section = _typed(document.get("sweep") or {}, f"{source}.sweep", dict)
    _check_keys(sweep_section, f"{source}.sweep", {"resolution", "rule", "threshold_offset"})
    sweep = SweepSettings(
        resolution=_get(sweep_section, f"{source}.sweep", "resolution", int, 21),
        rule=_choice(_get(sweep_section, f"{source}.sweep", "rule", str, "min_gap_at_threshold"), f"{source}.sweep.rule", SELECTION_MODES),
        threshold_offset=_get(sweep_section, f"{source}.sweep", "threshold_offset", float, 0.02),
    )
    if sweep.resolution < 2:
        raise ConfigError(f"{source}.sweep.resolution: must be at least 2")

    eval_section = _typed(document.get("eval") or {}, f"{source}.eval", dict)
    _check_keys(eval_section, f"{source}.eval", {"seeds"})
    seeds = eval_section.get("seeds", [0, 1, 2, 3, 4])
    seeds = tuple(_typed(s, f"{source}.eval.seeds[{i}]", int) for i, s in enumerate(_typed(seeds, f"{source}.eval.seeds", list)))
    if not seeds:
        raise ConfigError(f"{source}.eval.seeds: must not be empty")

    output = document.get("output")
    if output is not None:
        output = _typed(output, f"{source}.output", str)

    config = ExperimentConfig(
        name=_get(document, source, "name", str, ""),
        data=data,
        model=model,
        balance=balance,
        gating=gating,
        inlp=inlp,
        train=train_settings,
        sweep=sweep,
        seeds=seeds,
        output=output,
    )
    if not config.name:
        config = ExperimentConfig(**{**_fields(config), "name": run_label(config)})
    return config


def _fields(config: ExperimentConfig) -> dict:
    return {
        "name": config.name,
        "data": config.data,
        "model": config.model,
        "balance": config.balance,
        "gating": config.gating,
        "inlp": config.inlp,
        "train": config.train,
        "sweep": config.sweep,
        "seeds": config.seeds,
        "output": config.output,
    }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_config(document, source=str(path))
