"""Experiment composition shared by the command line and the test suite.

A run is fully determined by (config, seed). Its directory is named
``<name>-<config hash>-s<seed>`` and holds the checkpoint, per-epoch
history, dev/test fairness reports, and a run.json with bookkeeping.
Wall-clock timing lives only in run.json and the history, so checkpoints
and reports rewrite bitwise on identical reruns.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .balance import compute_weights, downsample
from .config import ExperimentConfig, config_hash, run_label
from .data import Dataset, empirical_joint, generate_synthetic, load_dataset
from .inlp import InlpPipelineResult, inlp_pipeline, save_stack
from .metrics import EvalRecord, FairnessReport, make_report, save_report, tradeoff
from .model import GatePolicy, build_gated_model, build_mlp, load_model, predict, save_model
from .train import EpochRecord, save_history, train

RUN_FILES = ("run.json", "checkpoint.bin", "history.jsonl", "report_dev.json", "report_test.json")


def synthetic_parts(config: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    spec = config.data.synthetic
    rng = np.random.default_rng(spec.seed)
    seeds = [int(s) for s in rng.integers(2**63, size=3)]
    sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    parts = [
        generate_synthetic(spec.part_config(part, sizes[part], seed))
        for part, seed in zip(("train", "dev", "test"), seeds)
    ]
    return tuple(parts)


def load_experiment_data(config: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    if config.data.synthetic is not None:
        return synthetic_parts(config)
    paths = config.data.paths
    return tuple(load_dataset(paths[part]) for part in ("train", "dev", "test"))


@dataclass
class RunResult:
    label: str
    seed: int
    model: object
    history: list[EpochRecord]
    dev_report: FairnessReport
    test_report: FairnessReport
    wall_seconds: float
    pipeline: InlpPipelineResult | None = None


def _evaluate(model, dataset: Dataset, policy: GatePolicy | None, seed: int) -> FairnessReport:
    preds = predict(model, dataset.features, dataset.groups, policy)
    record = EvalRecord(preds, dataset.labels, dataset.groups, dataset.label_count, dataset.group_count)
    return make_report(record, seed=seed)


def execute_run(config: ExperimentConfig, seed: int) -> RunResult:
    """Balance, train, optionally project, and evaluate; pure in (config, seed)."""
    started = time.perf_counter()
    train_data, dev_data, test_data = load_experiment_data(config)
    rng = np.random.default_rng(seed)
    init_seed, shuffle_seed, ds_seed = (int(s) for s in rng.integers(2**63, size=3))
    train_config = config.train.to_train_config(shuffle_seed)
    objective = config.balance.to_objective()
    label = config.name or run_label(config)
    pipeline = None

    if config.inlp.enabled:
        base_kind = {"none": "standard", "rw": "rw", "ds": "ds"}[config.balance.method]
        pipeline = inlp_pipeline(
            base_kind,
            train_data,
            dev_data,
            test_data,
            train_config,
            hidden_dims=(config.model.hidden, config.model.hidden),
            activation=config.model.activation,
            objective=objective,
            iterations=config.inlp.iterations,
            stop_margin=config.inlp.stop_margin,
            regularization=config.inlp.regularization,
        )
        model = pipeline.base_model
        history = pipeline.history
        dev_report = make_report(
            EvalRecord(pipeline.dev_predictions, dev_data.labels, dev_data.groups,
                       dev_data.label_count, dev_data.group_count),
            seed=seed,
        )
        test_report = make_report(
            EvalRecord(pipeline.test_predictions, test_data.labels, test_data.groups,
                       test_data.label_count, test_data.group_count),
            seed=seed,
        )
        return RunResult(label, seed, model, history, dev_report, test_report,
                         time.perf_counter() - started, pipeline)

    fit_data = train_data
    if config.balance.method == "ds":
        fit_data = downsample(train_data, objective, ds_seed)
    if config.balance.method == "rw":
        weights = compute_weights(fit_data, objective, raw_inverse=config.balance.raw_inverse)
    else:
        weights = np.ones(fit_data.n)

    if config.model.kind == "gated":
        model = build_gated_model(
            fit_data.dim,
            fit_data.group_count,
            fit_data.label_count,
            encoder_dim=config.model.hidden,
            classifier_hidden=(config.model.hidden,),
            activation=config.model.activation,
            seed=init_seed,
        )
        model, history = train(model, fit_data, dev_data, weights, train_config, GatePolicy())
        policy = config.gating
    else:
        model = build_mlp(
            fit_data.dim,
            (config.model.hidden, config.model.hidden),
            fit_data.label_count,
            config.model.activation,
            seed=init_seed,
        )
        model, history = train(model, fit_data, dev_data, weights, train_config)
        policy = None

    dev_report = _evaluate(model, dev_data, policy, seed)
    test_report = _evaluate(model, test_data, policy, seed)
    return RunResult(label, seed, model, history, dev_report, test_report,
                     time.perf_counter() - started)


def run_directory(config: ExperimentConfig, seed: int, out_root) -> Path:
    return Path(out_root) / f"{config.name or run_label(config)}-{config_hash(config)}-s{seed}"


def write_run(config: ExperimentConfig, seed: int, out_root) -> Path:
    """Execute and persist one run; rewrites are bitwise-identical apart from
    recorded wall-clock times."""
    result = execute_run(config, seed)
    run_dir = run_directory(config, seed, out_root)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_model(result.model, run_dir / "checkpoint.bin")
    save_history(result.history, run_dir / "history.jsonl")
    save_report(result.dev_report, run_dir / "report_dev.json")
    save_report(result.test_report, run_dir / "report_test.json")
    if result.pipeline is not None:
        save_stack(result.pipeline.inlp.stack, run_dir / "projection.bin")
        payload = {
            "probe_accuracies": result.pipeline.inlp.probe_accuracies,
            "majority_baseline": result.pipeline.inlp.majority_baseline,
            "stopped_early": result.pipeline.inlp.stopped_early,
            "classifier_weights": result.pipeline.classifier.weights.tolist(),
            "classifier_bias": result.pipeline.classifier.bias.tolist(),
        }
        (run_dir / "inlp.json").write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    meta = {
        "label": result.label,
        "config_hash": config_hash(config),
        "seed": seed,
        "model_kind": config.model.kind,
        "balance_method": config.balance.method,
        "gating_policy": config.gating.kind,
        "inlp_enabled": config.inlp.enabled,
        "is_standard": (
            config.model.kind == "standard"
            and config.balance.method == "none"
            and not config.inlp.enabled
        ),
        "wall_clock_seconds": result.wall_seconds,
        "config": config.to_dict(),
    }
    (run_dir / "run.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    _validate_run_dir(run_dir)
    return run_dir


def _validate_run_dir(run_dir: Path) -> None:
    missing = [name for name in RUN_FILES if not (run_dir / name).is_file()]
    if missing:
        raise RuntimeError(f"{run_dir}: missing artifacts after write: {missing}")
    load_model(run_dir / "checkpoint.bin")
    json.loads((run_dir / "report_test.json").read_text())


@dataclass
class RunRow:
    label: str
    seed: int
    is_standard: bool
    accuracy: float
    rms_gap: float
    seconds: float


def collect_runs(run_dirs) -> list[RunRow]:
    """Read completed run directories; errors list every absence found."""
    rows = []
    problems = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        meta_path = run_dir / "run.json"
        report_path = run_dir / "report_test.json"
        history_path = run_dir / "history.jsonl"
        missing = [str(p) for p in (meta_path, report_path, history_path) if not p.is_file()]
        if missing:
            problems.extend(missing)
            continue
        meta = json.loads(meta_path.read_text())
        report = json.loads(report_path.read_text())
        seconds = sum(
            json.loads(line)["seconds"]
            for line in history_path.read_text().splitlines()
            if line.strip()
        )
        rows.append(
            RunRow(
                label=meta["label"],
                seed=int(meta["seed"]),
                is_standard=bool(meta.get("is_standard", False)),
                accuracy=float(report["accuracy"]),
                rms_gap=float(report["rms_gap"]),
                seconds=float(seconds),
            )
        )
    if problems:
        raise FileNotFoundError("missing run artifacts: " + ", ".join(sorted(problems)))
    return rows


def build_report(rows: list[RunRow], min_seeds: int = 2) -> list[dict]:
    """Per-label mean and std of accuracy and RMS GAP, trade-off against the
    best mean accuracy and best mean GAP across the supplied labels, and
    wall-clock normalized to the standard runs when present."""
    by_label: dict[str, list[RunRow]] = {}
    for row in rows:
        by_label.setdefault(row.label, []).append(row)
    short = [label for label, group in by_label.items() if len(group) < min_seeds]
    if short:
        raise ValueError(
            f"need at least {min_seeds} seed runs per model; too few for: {sorted(short)}"
        )
    summary = []
    for label in sorted(by_label):
        group = by_label[label]
        acc = np.array([r.accuracy for r in group])
        gap = np.array([r.rms_gap for r in group])
        secs = np.array([r.seconds for r in group])
        summary.append(
            {
                "model": label,
                "seeds": len(group),
                "accuracy_mean": float(acc.mean()),
                "accuracy_std": float(acc.std(ddof=1)),
                "rms_gap_mean": float(gap.mean()),
                "rms_gap_std": float(gap.std(ddof=1)),
                "seconds_mean": float(secs.mean()),
                "is_standard": all(r.is_standard for r in group),
            }
        )
    best_accuracy = max(row["accuracy_mean"] for row in summary)
    best_gap = min(row["rms_gap_mean"] for row in summary)
    standard_secs = [row["seconds_mean"] for row in summary if row["is_standard"]]
    denom = float(np.mean(standard_secs)) if standard_secs else None
    for row in summary:
        row["tradeoff"] = tradeoff(row["accuracy_mean"], row["rms_gap_mean"], best_accuracy, best_gap)
        row["relative_time"] = (row["seconds_mean"] / denom) if denom else None
    return summary


def save_summary_json(summary: list[dict], path) -> None:
    Path(path).write_text(json.dumps({"models": summary}, sort_keys=True, indent=2) + "\n")


_SUMMARY_COLUMNS = (
    "model", "seeds", "accuracy_mean", "accuracy_std", "rms_gap_mean", "rms_gap_std",
    "tradeoff", "seconds_mean", "relative_time",
)


def save_summary_csv(summary: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_SUMMARY_COLUMNS) + "\n")
        for row in summary:
            cells = []
            for col in _SUMMARY_COLUMNS:
                value = row[col]
                if value is None:
                    cells.append("")
                elif isinstance(value, float):
                    cells.append(f"{value:.17g}")
                else:
                    cells.append(str(value))
            fh.write(",".join(cells) + "\n")


def save_runs_csv(rows: list[RunRow], path) -> None:
    """Long-form export, one row per (model, seed)."""
    with open(path, "w") as fh:
        fh.write("model,seed,accuracy,rms_gap,seconds\n")
        for row in sorted(rows, key=lambda r: (r.label, r.seed)):
            fh.write(
                f"{row.label},{row.seed},{row.accuracy:.17g},{row.rms_gap:.17g},{row.seconds:.17g}\n"
            )
