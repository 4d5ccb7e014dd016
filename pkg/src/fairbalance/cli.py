"""Command line wiring: gen, train, sweep, inlp, eval, report.

Every command takes --config (YAML), an optional --seed, --out for the
output root (default: $FAIRBALANCE_OUT, then the config's output field,
then ./runs), and --format json|csv for tabular artifacts. Exit codes:
0 on success with all artifacts written, 2 for configuration errors,
1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .data import DatasetFormatError, empirical_joint, save_dataset
from .figures import save_report_charts, save_sweep_heatmaps
from .metrics import EvalRecord, make_report, save_report
from .model import GatedModel, load_model, predict
from .runner import (
    build_report,
    collect_runs,
    load_experiment_data,
    save_runs_csv,
    save_summary_csv,
    save_summary_json,
    synthetic_parts,
    write_run,
)
from .tuning import alpha_beta_sweep, evaluate_gate_cell, select_coefficients

OUTPUT_ROOT_ENV = "FAIRBALANCE_OUT"


def _resolve_out(args, config: ExperimentConfig | None) -> Path:
    if args.out is not None:
        return Path(args.out)
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    if config is not None and config.output:
        return Path(config.output)
    return Path("runs")


def _print_joint(name: str, dataset) -> None:
    joint = empirical_joint(dataset)
    cells = ", ".join(
        f"(y={y},g={g})={int(joint.counts[y, g])}"
        for y in range(joint.label_count)
        for g in range(joint.group_count)
    )
    print(f"{name}: n={dataset.n} cells: {cells}")


def cmd_gen(args) -> int:
    config = load_config(args.config)
    if config.data.synthetic is None:
        raise ConfigError(f"{args.config}: data.synthetic: gen needs a synthetic data section")
    if args.seed is not None:
        synthetic = replace(config.data.synthetic, seed=args.seed)
        config = replace(config, data=replace(config.data, synthetic=synthetic))
    out = _resolve_out(args, config) / "data"
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".tsv" if config.data.synthetic.file_format == "text" else ".bin"
    parts = synthetic_parts(config)
    for name, dataset in zip(("train", "dev", "test"), parts):
        save_dataset(dataset, out / f"{name}{suffix}", fmt=config.data.synthetic.file_format)
        _print_joint(name, dataset)
    print(f"wrote {out / ('train' + suffix)}, dev, test")
    return 0


def _seed_list(args, config: ExperimentConfig) -> list[int]:
    return [args.seed] if args.seed is not None else list(config.seeds)


def cmd_train(args) -> int:
    config = load_config(args.config)
    out = _resolve_out(args, config)
    for seed in _seed_list(args, config):
        run_dir = write_run(config, seed, out)
        report = json.loads((run_dir / "report_test.json").read_text())
        print(
            f"{config.name} seed={seed}: test accuracy={report['accuracy']:.4f} "
            f"rms_gap={report['rms_gap']:.4f} -> {run_dir}"
        )
    return 0


def cmd_inlp(args) -> int:
    config = load_config(args.config)
    if not config.inlp.enabled:
        raise ConfigError(f"{args.config}: inlp.enabled: must be true for the inlp command")
    return cmd_train(args)


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    out = _resolve_out(args, config)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.checkpoint)
    if not isinstance(model, GatedModel):
        raise ValueError(f"{args.checkpoint}: the sweep needs a gated checkpoint")
    _, dev_data, test_data = load_experiment_data(config)
    sweep = alpha_beta_sweep(model, dev_data, config.sweep.resolution)
    sweep.save_csv(out / "sweep.csv")
    save_sweep_heatmaps(sweep, out / "sweep_heatmaps.png")
    rule = config.sweep.to_rule()
    alpha, beta = select_coefficients(sweep, rule)
    dev_accuracy, dev_gap = evaluate_gate_cell(model, dev_data, alpha, beta)
    test_accuracy, test_gap = evaluate_gate_cell(model, test_data, alpha, beta)
    selection = {
        "alpha": alpha,
        "beta": beta,
        "rule": rule.mode,
        "threshold_offset": rule.threshold_offset,
        "dev_accuracy": dev_accuracy,
        "dev_rms_gap": dev_gap,
        "test_accuracy": test_accuracy,
        "test_rms_gap": test_gap,
    }
    (out / "sweep_selection.json").write_text(json.dumps(selection, sort_keys=True, indent=2) + "\n")
    print(
        f"selected alpha={alpha:g} beta={beta:g} "
        f"(dev acc={dev_accuracy:.4f}, gap={dev_gap:.4f}; "
        f"test acc={test_accuracy:.4f}, gap={test_gap:.4f})"
    )
    print(f"wrote {out / 'sweep.csv'} and {out / 'sweep_heatmaps.png'}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config)
    out = _resolve_out(args, config)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(args.checkpoint)
    _, dev_data, test_data = load_experiment_data(config)
    parts = {"dev": dev_data, "test": test_data}
    chosen = ("dev", "test") if args.split == "both" else (args.split,)
    policy = config.gating if isinstance(model, GatedModel) else None
    for part in chosen:
        dataset = parts[part]
        preds = predict(model, dataset.features, dataset.groups, policy)
        record = EvalRecord(preds, dataset.labels, dataset.groups,
                            dataset.label_count, dataset.group_count)
        report = make_report(record)
        if args.format == "csv":
            path = out / f"report_{part}.csv"
            with open(path, "w") as fh:
                fh.write("split,accuracy,rms_gap,tnr_gap\n")
                tnr = "" if report.tnr_gap is None else f"{report.tnr_gap:.17g}"
                fh.write(f"{part},{report.accuracy:.17g},{report.rms_gap:.17g},{tnr}\n")
        else:
            path = out / f"report_{part}.json"
            save_report(report, path)
        print(f"{part}: accuracy={report.accuracy:.4f} rms_gap={report.rms_gap:.4f} -> {path}")
    return 0


def cmd_report(args) -> int:
    rows = collect_runs(args.run_dirs)
    summary = build_report(rows)
    out = _resolve_out(args, None)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "csv":
        save_summary_csv(summary, out / "report_summary.csv")
    else:
        save_summary_json(summary, out / "report_summary.json")
    save_runs_csv(rows, out / "report_runs.csv")
    save_report_charts(summary, out / "report_charts.png")
    header = f"{'model':<28} {'acc':>8} {'±':>7} {'gap':>8} {'±':>7} {'tradeoff':>9} {'time':>6}"
    print(header)
    for row in summary:
        rel = f"{row['relative_time']:.2f}" if row["relative_time"] is not None else "n/a"
        print(
            f"{row['model']:<28} {row['accuracy_mean']:>8.4f} {row['accuracy_std']:>7.4f} "
            f"{row['rms_gap_mean']:>8.4f} {row['rms_gap_std']:>7.4f} "
            f"{row['tradeoff']:>9.4f} {rel:>6}"
        )
    print(f"wrote {out / 'report_runs.csv'} and {out / 'report_charts.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairbalance",
        description="Balanced training, gated models, and nullspace projection "
        "for fair classification over fixed representations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_seed=True):
        p.add_argument("--config", required=True, type=Path, help="experiment config (YAML)")
        p.add_argument("--out", type=Path, default=None,
                       help=f"output root (default: ${OUTPUT_ROOT_ENV}, config output, ./runs)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if with_seed:
            p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("gen", help="generate synthetic train/dev/test files")
    common(p)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("train", help="balance, train, optionally project, evaluate")
    common(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("inlp", help="run the nullspace-projection pipeline")
    common(p)
    p.set_defaults(handler=cmd_inlp)

    p = sub.add_parser("sweep", help="alpha/beta gating sweep over a gated checkpoint")
    common(p, with_seed=False)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's data")
    common(p, with_seed=False)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--split", choices=("dev", "test", "both"), default="test")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", help="aggregate completed runs into a summary table")
    p.add_argument("run_dirs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, FileNotFoundError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
