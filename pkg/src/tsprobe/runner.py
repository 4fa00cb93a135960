"""Experiment orchestration: temporal-support sweeps, repeated seeded runs,
cross-validation, synthetic dataset generation, and report emission.

A sweep walks the (ts, aggregation, layer_mode) grid. Each cell trains
`n_runs` probes with seeds base_seed..base_seed+n_runs-1 (validation carve-out
redrawn per seed), scores each run on the test split (mAP for multilabel,
accuracy for multiclass), and reduces to mean +/- population std. Cells fail
independently; failures are recorded in the report instead of aborting the
sweep. JSON reports serialize deterministically, so identical inputs yield
byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, probe, store, trainer

AGG_ORDER = {"mean": 0, "attention": 1}
LAYER_ORDER = {"last": 0, "weighted": 1}

# Validation carve-out fractions per task type (15% for the multilabel
# protocol, 30% for the single-label ones).
VAL_FRACTION = {"multilabel": 0.15, "multiclass": 0.30}


class RunnerError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    manifests: dict[float, str | None]  # ts_seconds -> manifest path (None: unavailable)
    aggregations: list[str]
    layer_modes: list[str]
    n_runs: int = 5
    base_seed: int = 0
    cv_folds: int | None = None
    train_overrides: dict = field(default_factory=dict)

    TRAIN_OVERRIDE_KEYS = frozenset(
        {"learning_rate", "batch_size", "max_epochs", "val_fraction", "adam_beta1", "adam_beta2", "adam_eps"}
    )

    def __post_init__(self):
        if not self.manifests:
            raise RunnerError("spec has no manifests")
        if self.n_runs < 1:
            raise RunnerError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.base_seed < 0:
            raise RunnerError(f"base_seed must be >= 0, got {self.base_seed}")
        unknown = set(self.train_overrides) - self.TRAIN_OVERRIDE_KEYS
        if unknown:
            raise RunnerError(f"unknown train override keys {sorted(unknown)}; allowed: {sorted(self.TRAIN_OVERRIDE_KEYS)}")
        bad = [a for a in self.aggregations if a not in AGG_ORDER]
        if bad or not self.aggregations:
            raise RunnerError(f"bad aggregations {self.aggregations}")
        bad = [m for m in self.layer_modes if m not in LAYER_ORDER]
        if bad or not self.layer_modes:
            raise RunnerError(f"bad layer_modes {self.layer_modes}")
        self.aggregations = sorted(set(self.aggregations), key=AGG_ORDER.get)
        self.layer_modes = sorted(set(self.layer_modes), key=LAYER_ORDER.get)


@dataclass
class ReportRow:
    model_id: str
    ts_seconds: float
    aggregation: str
    layer_mode: str
    metric_name: str
    mean: float
    std: float
    n_runs: int


@dataclass
class CellFailure:
    ts_seconds: float
    aggregation: str
    layer_mode: str
    reason: str


@dataclass
class ExperimentReport:
    rows: list[ReportRow]
    failures: list[CellFailure] = field(default_factory=list)


def load_spec(path: str | Path) -> ExperimentSpec:
    """Read an experiment spec JSON; manifest paths resolve against the file.

    Keys: manifests {"<ts_seconds>": "path" | null}, aggregations,
    layer_modes, n_runs, base_seed, cv_folds, train {learning_rate,
    batch_size, max_epochs, val_fraction}.
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    base = path.parent.resolve()
    manifests: dict[float, str | None] = {}
    for key, value in doc["manifests"].items():
        ts = float(key)
        if value is None:
            manifests[ts] = None
        else:
            p = Path(value)
            manifests[ts] = str(p if p.is_absolute() else base / p)
    return ExperimentSpec(
        manifests=manifests,
        aggregations=list(doc.get("aggregations", ["mean", "attention"])),
        layer_modes=list(doc.get("layer_modes", ["last"])),
        n_runs=int(doc.get("n_runs", 5)),
        base_seed=int(doc.get("base_seed", 0)),
        cv_folds=doc.get("cv_folds"),
        train_overrides=dict(doc.get("train", {})),
    )


def _probe_config(manifest: store.DatasetManifest, aggregation: str, layer_mode: str) -> probe.ProbeConfig:
    meta = manifest.embedding_meta
    return probe.ProbeConfig(
        task=manifest.task,
        n_classes=manifest.n_classes,
        dim=meta.dim,
        n_layers=meta.n_layers,
        aggregation=aggregation,
        layer_mode=layer_mode,
    ).validate()


def _train_config(spec: ExperimentSpec, task: str, seed: int) -> trainer.TrainConfig:
    overrides = {k: v for k, v in spec.train_overrides.items() if k != "val_fraction"}
    return trainer.default_train_config(task, seed=seed, **overrides)


def _val_fraction(spec: ExperimentSpec, task: str) -> float:
    return float(spec.train_overrides.get("val_fraction") or VAL_FRACTION[task])


def evaluate_probe(
    clips: list[store.ClipRecord],
    params: probe.ProbeParams,
    config: probe.ProbeConfig,
    task: str,
) -> metrics.EvalResult:
    """Score a trained probe on a clip list: mAP (multilabel) or accuracy."""
    if not clips:
        raise RunnerError("no clips to evaluate")
    scores = np.stack(
        [probe.forward(store.read_embedding(c.embedding_path), params, config).y_hat for c in clips]
    )
    labels = np.stack([c.labels for c in clips])
    mask = np.stack([c.observed_mask for c in clips])
    if task == "multilabel":
        return metrics.macro_map(scores, labels, mask)
    return metrics.accuracy(scores, labels)


def _single_run(
    train_pool: list[store.ClipRecord],
    test_pool: list[store.ClipRecord],
    manifest: store.DatasetManifest,
    aggregation: str,
    layer_mode: str,
    spec: ExperimentSpec,
    seed: int,
) -> float:
    tr, va = store._carve_pool(train_pool, _val_fraction(spec, manifest.task), seed)
    pcfg = _probe_config(manifest, aggregation, layer_mode)
    tcfg = _train_config(spec, manifest.task, seed)
    result = trainer.train(tr, va, pcfg, tcfg)
    return evaluate_probe(test_pool, result.best_params, pcfg, manifest.task).value


def _run_cell(
    manifest: store.DatasetManifest,
    ts: float,
    aggregation: str,
    layer_mode: str,
    spec: ExperimentSpec,
) -> ReportRow:
    train_pool = store.usable_clips(manifest, manifest.split_clips("train"))
    test_pool = store.usable_clips(manifest, manifest.split_clips("test"))
    if not train_pool or not test_pool:
        raise RunnerError("temporal support exceeds every clip in the train or test split")
    values = []
    for r in range(spec.n_runs):
        values.append(
            _single_run(train_pool, test_pool, manifest, aggregation, layer_mode, spec, spec.base_seed + r)
        )
    mean, std = metrics.mean_std(values)
    metric_name = "map" if manifest.task == "multilabel" else "accuracy"
    return ReportRow(
        model_id=manifest.embedding_meta.model_id,
        ts_seconds=ts,
        aggregation=aggregation,
        layer_mode=layer_mode,
        metric_name=metric_name,
        mean=mean,
        std=std,
        n_runs=spec.n_runs,
    )


def _run_cv_cell(
    manifest: store.DatasetManifest,
    ts: float,
    aggregation: str,
    layer_mode: str,
    spec: ExperimentSpec,
    pairs: list[tuple[list[store.ClipRecord], list[store.ClipRecord]]],
) -> ReportRow:
    values = []
    for r in range(spec.n_runs):
        seed = spec.base_seed + r
        fold_values = []
        for train_pool, test_pool in pairs:
            train_pool = store.usable_clips(manifest, train_pool)
            test_pool = store.usable_clips(manifest, test_pool)
            if not train_pool or not test_pool:
                raise RunnerError("temporal support exceeds every clip in a fold")
            fold_values.append(
                _single_run(train_pool, test_pool, manifest, aggregation, layer_mode, spec, seed)
            )
        values.append(float(np.mean(fold_values)))
    mean, std = metrics.mean_std(values)
    metric_name = "map" if manifest.task == "multilabel" else "accuracy"
    return ReportRow(
        model_id=manifest.embedding_meta.model_id,
        ts_seconds=ts,
        aggregation=aggregation,
        layer_mode=layer_mode,
        metric_name=metric_name,
        mean=mean,
        std=std,
        n_runs=spec.n_runs,
    )


def _load_cell_manifest(path: str, ts: float) -> store.DatasetManifest:
    manifest = store.load_manifest(path)
    store.validate_manifest(manifest)
    if not math.isclose(manifest.embedding_meta.ts_seconds, ts, rel_tol=0, abs_tol=1e-9):
        raise RunnerError(
            f"manifest {path} has ts_seconds={manifest.embedding_meta.ts_seconds}, spec key says {ts}"
        )
    return manifest


def _sweep(spec: ExperimentSpec, cv_k: int | None) -> ExperimentReport:
    rows: list[ReportRow] = []
    failures: list[CellFailure] = []
    for ts in sorted(spec.manifests):
        path = spec.manifests[ts]
        cells = [(agg, lm) for agg in spec.aggregations for lm in spec.layer_modes]
        if path is None:
            for agg, lm in cells:
                failures.append(CellFailure(ts, agg, lm, "unavailable: no embeddings at this temporal support"))
            continue
        try:
            manifest = _load_cell_manifest(path, ts)
            pairs = None if cv_k is None else store.fold_splits(manifest, cv_k)
        except Exception as exc:
            for agg, lm in cells:
                failures.append(CellFailure(ts, agg, lm, str(exc)))
            continue
        for agg, lm in cells:
            try:
                if pairs is None:
                    rows.append(_run_cell(manifest, ts, agg, lm, spec))
                else:
                    rows.append(_run_cv_cell(manifest, ts, agg, lm, spec, pairs))
            except Exception as exc:
                failures.append(CellFailure(ts, agg, lm, str(exc)))
    return ExperimentReport(rows=rows, failures=failures)


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Full TS sweep over the experiment grid with per-cell failure isolation."""
    return _sweep(spec, cv_k=None)


def run_cv(spec: ExperimentSpec, k: int) -> ExperimentReport:
    """Sweep where each run's metric is the mean over k cross-validation folds
    (validation still carved from the training folds per seed)."""
    if k < 2:
        raise RunnerError(f"k must be >= 2, got {k}")
    return _sweep(spec, cv_k=k)


def generate_synthetic(
    n_clips: int,
    n_classes: int,
    dim: int,
    n_layers: int,
    steps_per_clip: int,
    task: str,
    class_separation: float,
    seed: int,
    out_dir: str | Path,
    ts_seconds: float = 1.0,
    model_id: str = "synthetic",
    test_fraction: float = 0.2,
) -> store.DatasetManifest:
    """Write a seed-deterministic synthetic dataset (TSEB files + manifest).

    Each class gets a random unit mean vector; clip steps are sampled from
    Gaussian(mean * class_separation, I), independently per layer. Multilabel
    clips activate 1-3 classes and sum their means. The train/test split
    interleaves deterministically at roughly test_fraction.
    """
    if min(n_clips, n_classes, dim, n_layers, steps_per_clip) < 1:
        raise ValueError("all counts must be >= 1")
    if task not in store.TASKS:
        raise ValueError(f"unknown task {task!r}")
    if task == "multiclass" and n_clips < n_classes:
        raise ValueError("need at least one clip per class")
    out_dir = Path(out_dir).resolve()  # records carry absolute embedding paths
    emb_dir = out_dir / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)

    period = max(2, int(round(1.0 / test_fraction)))
    clips: list[store.ClipRecord] = []
    for i in range(n_clips):
        labels = np.zeros(n_classes, dtype=np.int8)
        if task == "multiclass":
            cls = i % n_classes
            labels[cls] = 1
            mu = means[cls] * class_separation
            is_test = (i // n_classes) % period == 0
        else:
            n_active = int(rng.integers(1, min(3, n_classes) + 1))
            active = np.sort(rng.choice(n_classes, size=n_active, replace=False))
            labels[active] = 1
            mu = means[active].sum(axis=0) * class_separation
            is_test = i % period == 0
        data = rng.standard_normal((n_layers, steps_per_clip, dim)) + mu
        tensor = store.EmbeddingTensor(data=data.astype(np.float32))
        clip_id = f"clip_{i:05d}"
        path = emb_dir / f"{clip_id}.tseb"
        store.write_embedding(tensor, path)
        clips.append(
            store.ClipRecord(
                clip_id=clip_id,
                labels=labels,
                observed_mask=np.ones(n_classes, dtype=np.int8),
                split="test" if is_test else "train",
                embedding_path=str(path),
                duration_s=steps_per_clip * ts_seconds,
            )
        )

    manifest = store.DatasetManifest(
        task=task,
        class_names=[f"class_{i:02d}" for i in range(n_classes)],
        clips=clips,
        embedding_meta=store.EmbeddingMeta(
            model_id=model_id, ts_seconds=ts_seconds, n_layers=n_layers, dim=dim
        ),
    )
    store.save_manifest(manifest, out_dir / "manifest.json")
    return manifest


# --- report emission ----------------------------------------------------------


def _report_doc(report: ExperimentReport) -> dict:
    return {
        "rows": [
            {
                "model_id": r.model_id,
                "ts_seconds": r.ts_seconds,
                "aggregation": r.aggregation,
                "layer_mode": r.layer_mode,
                "metric_name": r.metric_name,
                "mean": r.mean,
                "std": r.std,
                "n_runs": r.n_runs,
            }
            for r in report.rows
        ],
        "failures": [
            {
                "ts_seconds": f.ts_seconds,
                "aggregation": f.aggregation,
                "layer_mode": f.layer_mode,
                "reason": f.reason,
            }
            for f in report.failures
        ],
    }


def load_report(path: str | Path) -> ExperimentReport:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    rows = [ReportRow(**entry) for entry in doc.get("rows", [])]
    failures = [CellFailure(**entry) for entry in doc.get("failures", [])]
    return ExperimentReport(rows=rows, failures=failures)


def format_cell(metric_name: str, mean: float, std: float) -> str:
    """Table-cell shape: '0.869 ± 0.001' for mAP, '67.5 ± 0.2' for accuracy."""
    if metric_name == "map":
        return f"{mean:.3f} ± {std:.3f}"
    return f"{mean * 100:.1f} ± {std * 100:.1f}"


def _markdown(report: ExperimentReport) -> str:
    cells: dict[tuple[str, float, str, str], ReportRow] = {}
    combos: set[tuple[str, str]] = set()
    for r in report.rows:
        cells[(r.model_id, r.ts_seconds, r.aggregation, r.layer_mode)] = r
        combos.add((r.aggregation, r.layer_mode))
    for f in report.failures:
        combos.add((f.aggregation, f.layer_mode))
    combo_list = sorted(combos, key=lambda c: (AGG_ORDER[c[0]], LAYER_ORDER[c[1]]))
    multi_layer = len({lm for _, lm in combo_list}) > 1

    def header(combo: tuple[str, str]) -> str:
        agg, lm = combo
        return f"{agg} ({lm})" if multi_layer else agg

    # Failures carry no model id; render them under every model seen in the
    # rows (or a placeholder when nothing succeeded).
    models = sorted({r.model_id for r in report.rows}) or ["(unavailable)"]
    failed_ts = {f.ts_seconds for f in report.failures}
    row_ts = {(r.model_id, r.ts_seconds) for r in report.rows}
    group_keys = sorted(row_ts | {(m, ts) for m in models for ts in failed_ts})

    lines = ["| Model | TS (s) | " + " | ".join(header(c) for c in combo_list) + " |"]
    lines.append("|" + " --- |" * (2 + len(combo_list)))
    for model_id, ts in group_keys:
        row_cells = []
        for agg, lm in combo_list:
            row = cells.get((model_id, ts, agg, lm))
            row_cells.append(format_cell(row.metric_name, row.mean, row.std) if row else "-")
        lines.append(f"| {model_id} | {ts:g} | " + " | ".join(row_cells) + " |")
    return "\n".join(lines) + "\n"


def _csv(report: ExperimentReport) -> str:
    lines = ["model_id,ts_seconds,aggregation,layer_mode,metric_name,mean,std,n_runs"]
    for r in report.rows:
        lines.append(
            f"{r.model_id},{r.ts_seconds!r},{r.aggregation},{r.layer_mode},"
            f"{r.metric_name},{r.mean!r},{r.std!r},{r.n_runs}"
        )
    return "\n".join(lines) + "\n"


def emit_report(report: ExperimentReport, format: str) -> str:
    """Render a report document: 'json' and 'csv' carry full precision,
    'markdown' renders the mean +/- std grid with '-' for missing cells."""
    if not report.rows and not report.failures:
        raise RunnerError("empty report")
    if format == "json":
        return json.dumps(_report_doc(report), indent=2, sort_keys=True) + "\n"
    if format == "csv":
        return _csv(report)
    if format in ("md", "markdown"):
        return _markdown(report)
    raise RunnerError(f"unknown report format {format!r}")
