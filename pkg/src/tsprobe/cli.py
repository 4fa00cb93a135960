"""Command-line interface.

Subcommands: synth (synthetic dataset), train (one probe), eval (score a
checkpoint), sweep (full TS sweep from a spec JSON), report (re-render a JSON
report). Exit code 0 on success; on failure a machine-readable error summary
{"error": kind, "message": text} goes to stderr and the exit code is 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import probe, runner, store, trainer


def _cmd_synth(args: argparse.Namespace) -> int:
    manifest = runner.generate_synthetic(
        n_clips=args.clips,
        n_classes=args.classes,
        dim=args.dim,
        n_layers=args.layers,
        steps_per_clip=args.steps,
        task=args.task,
        class_separation=args.sep,
        seed=args.seed,
        out_dir=args.out,
        ts_seconds=args.ts,
    )
    print(
        json.dumps(
            {
                "manifest": str(Path(args.out) / "manifest.json"),
                "clips": len(manifest.clips),
                "train": len(manifest.split_clips("train")),
                "test": len(manifest.split_clips("test")),
            }
        )
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    manifest = store.load_manifest(args.manifest)
    store.validate_manifest(manifest)
    pool = store.usable_clips(manifest, manifest.split_clips("train"))
    fraction = args.val_frac if args.val_frac is not None else runner.VAL_FRACTION[manifest.task]
    train_clips, valid_clips = store._carve_pool(pool, fraction, args.seed)
    meta = manifest.embedding_meta
    pcfg = probe.ProbeConfig(
        task=manifest.task,
        n_classes=manifest.n_classes,
        dim=meta.dim,
        n_layers=meta.n_layers,
        aggregation=args.agg,
        layer_mode=args.layers,
    ).validate()
    tcfg = trainer.default_train_config(
        manifest.task,
        seed=args.seed,
        learning_rate=args.lr,
        batch_size=args.batch,
        max_epochs=args.epochs,
    )
    result = trainer.train(train_clips, valid_clips, pcfg, tcfg)
    probe.save_checkpoint(
        args.out,
        result.best_params,
        pcfg,
        extra={
            "manifest": str(Path(args.manifest).resolve()),
            "seed": args.seed,
            "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
        },
    )
    if args.history:
        Path(args.history).write_text(trainer.history_csv(result), encoding="utf-8")
    print(
        json.dumps(
            {
                "checkpoint": str(Path(args.out).with_suffix(".json")),
                "best_epoch": result.best_epoch,
                "best_val_loss": result.best_val_loss,
                "epochs": len(result.history),
            }
        )
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    manifest = store.load_manifest(args.manifest)
    store.validate_manifest(manifest)
    params, pcfg, _ = probe.load_checkpoint(args.checkpoint)
    clips = store.usable_clips(manifest, manifest.split_clips(args.split))
    result = runner.evaluate_probe(clips, params, pcfg, manifest.task)
    doc = {
        "metric_name": result.metric_name,
        "value": result.value,
        "n_instances": result.n_instances,
        "per_class": None if result.per_class is None else [
            None if not np.isfinite(v) else float(v) for v in result.per_class
        ],
        "manifest": str(Path(args.manifest).resolve()),
        "checkpoint": str(Path(args.checkpoint).resolve()),
        "split": args.split,
    }
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(json.dumps({"metric_name": result.metric_name, "value": result.value}))
    return 0


def _report_format(out: str, explicit: str | None) -> str:
    if explicit:
        return explicit
    suffix = Path(out).suffix.lstrip(".").lower()
    return {"json": "json", "csv": "csv", "md": "md", "markdown": "md"}.get(suffix, "json")


def _cmd_sweep(args: argparse.Namespace) -> int:
    spec = runner.load_spec(args.spec)
    report = runner.run_cv(spec, spec.cv_folds) if spec.cv_folds else runner.run_experiment(spec)
    fmt = _report_format(args.out, args.format)
    Path(args.out).write_text(runner.emit_report(report, fmt), encoding="utf-8")
    print(json.dumps({"report": args.out, "rows": len(report.rows), "failures": len(report.failures)}))
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    report = runner.load_report(getattr(args, "in"))
    text = runner.emit_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsprobe",
        description="Probe frozen audio embeddings under varying temporal support.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset (TSEB files + manifest)")
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--task", choices=["multilabel", "multiclass"], required=True)
    p.add_argument("--sep", type=float, required=True, help="class separation (0 = pure noise)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ts", type=float, default=1.0, help="temporal support recorded in the manifest")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train one probe on a manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--agg", choices=["mean", "attention"], required=True)
    p.add_argument("--layers", choices=["last", "weighted"], required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.json + .bin sidecar)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--val-frac", type=float, default=None)
    p.add_argument("--history", default=None, help="optional CSV path for the loss history")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="write the full EvalResult JSON here")
    p.add_argument("--split", choices=["train", "valid", "test"], default="test")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="run a TS sweep from a spec JSON")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True, help="report path (.json, .csv or .md)")
    p.add_argument("--format", choices=["json", "csv", "md"], default=None)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report", help="re-render a JSON report")
    p.add_argument("--in", required=True)
    p.add_argument("--format", choices=["json", "csv", "md"], default="md")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        summary = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(summary), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
