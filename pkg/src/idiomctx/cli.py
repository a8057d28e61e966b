"""Command-line entry point.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .corpus import CorpusError, load_dataset
from .encoding import load_tokenizer
from .evaluation import build_report, compare_runs, render_table, write_submission
from .files import atomic_write_text
from .model import CheckpointError, IdiomaticityModel, fingerprint, load_checkpoint
from .plotting import plot_comparison, plot_dev_curves
from .training import SweepResult, encode_instances, predict_probs, sweep, to_predictions

logger = logging.getLogger("idiomctx")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _factory(cfg: RunConfig):
    return lambda: IdiomaticityModel.from_config(cfg.model)


def _write_sweep_outputs(result: SweepResult, out: Path, title: str = "") -> None:
    rows = [(f"seed {r.meta['seed']} ({r.meta['split']})", r) for r in result.reports]
    if rows:
        atomic_write_text(out / "report.tsv", render_table(rows))
    atomic_write_text(out / "summary.json", json.dumps(result.summary, indent=2) + "\n")
    atomic_write_text(out / "runs.jsonl", "".join(json.dumps(r.to_dict()) + "\n" for r in result.runs))
    if result.runs:
        curves = {f"seed {r.seed}": r.per_epoch_dev_f1 for r in result.runs}
        chosen = {f"seed {r.seed}": int(r.selected_checkpoint_id.rsplit("epoch", 1)[1]) for r in result.runs}
        plot_dev_curves(curves, out / "dev_curves.png", chosen)


def run_sweep(cfg: RunConfig, out: Path) -> SweepResult:
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.yaml", cfg.snapshot())
    data = cfg.load_data()
    tokenizer = load_tokenizer(cfg.tokenizer)
    result = sweep(cfg.training, data, _factory(cfg), tokenizer, out, cfg.overall)
    _write_sweep_outputs(result, out)
    return result


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out = Path(args.output_dir) if args.output_dir else cfg.output_dir
    result = run_sweep(cfg, out)
    print(f"run directory: {out}")
    for r in result.runs:
        print(f"seed {r.seed}: best epoch {r.best_epoch}, selected {r.selected_checkpoint_id}")
    for split in ("dev", "test"):
        if split in result.summary:
            s = result.summary[split]
            print(f"{split}: macro-F1 {s['mean']:.2f} +/- {s['std']:.2f} over {len(s['scores'])} seeds")
    if result.failures:
        for seed, err in result.failures.items():
            print(f"seed {seed} failed: {err}", file=sys.stderr)
        return EXIT_RUNTIME if not result.runs else EXIT_OK
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, args.set)
    if not cfg.ablation_axis:
        raise ConfigError(["ablation: section required for the ablate command"])
    out = Path(args.output_dir) if args.output_dir else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.yaml", cfg.snapshot())
    reports, failed = [], {}
    for value in cfg.ablation_values:
        label = value.value if hasattr(value, "value") else str(value)
        sub = replace(cfg, training=replace(cfg.training, **{cfg.ablation_axis: value}))
        if cfg.ablation_axis == "variant":
            sub = replace(sub, model=replace(cfg.model, variant=value.value))
        try:
            result = run_sweep(sub, out / f"{cfg.ablation_axis}_{label.replace(':', '')}")
        except Exception as exc:  # one group failing must not stop the others
            logger.exception("group %s failed", label)
            failed[label] = f"{type(exc).__name__}: {exc}"
            continue
        if not result.runs:
            failed[label] = "all seeds failed"
        reports.extend(result.reports)
    if failed:
        atomic_write_text(out / "failures.json", json.dumps(failed, indent=2) + "\n")
    try:
        comparison = compare_runs(reports, cfg.ablation_axis)
    except ValueError as exc:
        print(f"comparison failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    atomic_write_text(out / "comparison.tsv", comparison.table())
    atomic_write_text(out / "comparison_pivot.tsv", comparison.pivot_table())
    atomic_write_text(out / "comparison_plot.tsv", comparison.plot_data())
    plot_comparison(comparison, out / "comparison.png")
    sys.stdout.write(comparison.table())
    return EXIT_RUNTIME if failed and len(failed) == len(cfg.ablation_values) else EXIT_OK


def _load_for_inference(args):
    expected = None
    cfg = None
    if args.config:
        cfg = load_config(args.config, args.set, check_paths=False)
        expected = fingerprint(cfg.model.to_dict(), cfg.tokenizer, cfg.training.form_mode.value)
    model, payload = load_checkpoint(args.checkpoint, expected)
    return cfg, model, payload


def _predict(model, payload, cfg, data_path):
    from .chunking import VariantConfig
    from .corpus import ColumnMapping, FormMode

    columns = cfg.columns if cfg else ColumnMapping()
    rows = load_dataset(data_path, columns)
    tokenizer = load_tokenizer(payload["tokenizer"])
    max_len = cfg.training.max_len if cfg else 300
    vc = VariantConfig(model.variant, FormMode(payload["form_mode"]), tokenizer.mask_token)
    probs = predict_probs(model, encode_instances(rows, tokenizer, vc, max_len), tokenizer.pad_id)
    return rows, to_predictions(rows, probs), columns


def cmd_predict(args) -> int:
    cfg, model, payload = _load_for_inference(args)
    _, preds, columns = _predict(model, payload, cfg, args.data)
    write_submission(preds, args.out, columns)
    print(f"wrote {len(preds)} predictions to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, model, payload = _load_for_inference(args)
    rows, preds, _ = _predict(model, payload, cfg, args.data)
    meta = {"variant": payload["variant"], "form_mode": payload["form_mode"], **payload.get("extra", {})}
    report = build_report(preds, rows, cfg.overall if cfg else "pooled", meta)
    text = report.render(label=Path(args.checkpoint).stem)
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idiomctx", description="Idiomaticity detection with contextual views")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=True):
        sp.add_argument("config", help="YAML run config") if required else sp.add_argument("--config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. training.epochs=3")

    for name, fn, help_ in (("train", cmd_train, "train all configured seeds"),
                            ("sweep", cmd_train, "alias of train"),
                            ("ablate", cmd_ablate, "train every ablation group and compare")):
        sp = sub.add_parser(name, help=help_)
        with_config(sp)
        sp.add_argument("--output-dir")
        sp.set_defaults(func=fn)

    sp = sub.add_parser("predict", help="write a submission file")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("out")
    with_config(sp, required=False)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("evaluate", help="score a checkpoint on labeled data")
    sp.add_argument("checkpoint")
    sp.add_argument("data")
    sp.add_argument("--out")
    with_config(sp, required=False)
    sp.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except (CheckpointError, CorpusError, FileNotFoundError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
