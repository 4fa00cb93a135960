"""Clip and dataset extraction: segment audio by temporal support, run the
adapter per segment, stack steps (unrolling multi-token outputs), and emit
TSEB v1 files plus a manifest JSON consumable by the probing harness.

Labels file schema (JSON):

    {
      "task": "multilabel" | "multiclass",
      "class_names": [...],
      "cv_folds": 5,               // optional
      "clips": {
        "<clip_id>": {
          "labels": [0/1, ...],
          "observed_mask": [0/1, ...],   // optional, defaults to all-ones
          "split": "train"|"valid"|"test",  // optional, defaults to "train"
          "fold": 3                      // optional
        }
      }
    }

Audio files are matched to clip ids by filename stem under the audio dir.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import audio, tseb
from .adapters import ExtractorError, ExtractorSpec, ModelAdapter, build_adapter


def expected_segments(n_samples: int, sample_rate: float, ts_seconds: float) -> int:
    """floor(N / (ts * sr)) whole segments, with the same fp-noise snap the
    consumer's segmentation arithmetic applies."""
    seg = ts_seconds * sample_rate
    snapped = round(seg)
    if snapped >= 1 and abs(seg - snapped) <= 1e-9 * max(1.0, seg):
        seg = snapped
    return int(math.floor(n_samples / seg))


def extract_clip(
    clip: audio.AudioClip, spec: ExtractorSpec, adapter: ModelAdapter | None = None
) -> np.ndarray:
    """One clip -> (n_layers, n_steps, dim) float32 embedding array.

    The clip is resampled to the adapter's rate and cut into consecutive,
    non-overlapping ts-second segments from sample 0; the tail remainder is
    dropped. Multi-token segment outputs are unrolled into consecutive steps.
    A clip shorter than one segment is an error unless spec.pad_short is set,
    in which case it is zero-padded to a single segment.
    """
    if adapter is None:
        adapter = build_adapter(spec)
    clip = audio.resample(clip, adapter.sample_rate)
    samples = clip.samples
    n_segments = expected_segments(samples.size, adapter.sample_rate, spec.ts_seconds)
    seg_len = int(round(spec.ts_seconds * adapter.sample_rate))
    if n_segments == 0:
        if not spec.pad_short:
            raise ExtractorError(
                f"clip {clip.clip_id}: {clip.duration_s:.3f}s is shorter than one "
                f"{spec.ts_seconds}s segment (enable pad_short to zero-pad)"
            )
        padded = np.zeros(seg_len, dtype=np.float32)
        padded[: samples.size] = samples
        samples = padded
        n_segments = 1

    per_segment = []
    for t in range(n_segments):
        segment = samples[t * seg_len : (t + 1) * seg_len]
        feats = adapter.embed_segment(segment, spec.layer_capture)
        if feats.ndim != 3:
            raise ExtractorError(f"adapter returned shape {feats.shape}, expected (layers, tokens, dim)")
        per_segment.append(feats)
    tokens = {f.shape[1] for f in per_segment}
    if len(tokens) != 1:
        raise ExtractorError(f"clip {clip.clip_id}: token count varies across equal segments: {tokens}")
    stacked = np.concatenate(per_segment, axis=1)  # tokens unroll into steps
    if not np.isfinite(stacked).all():
        raise ExtractorError(f"clip {clip.clip_id}: adapter produced non-finite values")
    return stacked.astype(np.float32)


def _load_labels(labels_file: str | Path) -> dict:
    with open(labels_file, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("task", "class_names", "clips"):
        if key not in doc:
            raise ExtractorError(f"{labels_file}: missing key {key!r}")
    return doc


def _resume_ok(path: Path, n_layers: int, dim: int, min_steps: int) -> bool:
    try:
        got_layers, got_steps, got_dim = tseb.read_header(path)
    except (OSError, ValueError):
        return False
    return got_layers == n_layers and got_dim == dim and got_steps >= min_steps


def extract_dataset(
    audio_dir: str | Path,
    labels_file: str | Path,
    spec: ExtractorSpec,
    out_dir: str | Path,
) -> tuple[dict, list[tuple[str, str]]]:
    """Extract every labelled clip under audio_dir; returns (manifest, skipped).

    Already-extracted clips are skipped when their TSEB header matches the
    expected layout. Unreadable or unlabelled audio files are collected in
    `skipped` (path, reason) without aborting the run. The manifest JSON is
    written to out_dir/manifest.json.
    """
    audio_dir = Path(audio_dir)
    out_dir = Path(out_dir)
    emb_dir = out_dir / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)

    doc = _load_labels(labels_file)
    labels_by_clip = doc["clips"]
    n_classes = len(doc["class_names"])
    adapter = build_adapter(spec)
    n_layers = adapter.layers_for(spec.layer_capture)

    files = sorted(p for p in audio_dir.iterdir() if p.suffix.lower() in audio.AUDIO_SUFFIXES)
    clips = []
    skipped: list[tuple[str, str]] = []
    for path in files:
        clip_id = path.stem
        entry = labels_by_clip.get(clip_id)
        if entry is None:
            skipped.append((str(path), "no label entry"))
            continue
        try:
            clip = audio.load_audio(path, clip_id=clip_id)
        except (OSError, ValueError) as exc:
            skipped.append((str(path), f"unreadable: {exc}"))
            continue
        out_path = emb_dir / f"{clip_id}.tseb"
        resampled_n = clip.samples.size if clip.sample_rate == adapter.sample_rate else None
        min_steps = 1
        if resampled_n is not None:
            min_steps = max(1, expected_segments(resampled_n, adapter.sample_rate, spec.ts_seconds))
        if not _resume_ok(out_path, n_layers, adapter.dim, min_steps):
            try:
                tensor = extract_clip(clip, spec, adapter)
            except ExtractorError as exc:
                skipped.append((str(path), str(exc)))
                continue
            tseb.write_tensor(out_path, tensor)
        labels = list(entry["labels"])
        if len(labels) != n_classes:
            raise ExtractorError(f"clip {clip_id}: {len(labels)} labels for {n_classes} classes")
        clips.append(
            {
                "clip_id": clip_id,
                "labels": [int(v) for v in labels],
                "observed_mask": [int(v) for v in entry.get("observed_mask", [1] * n_classes)],
                "split": entry.get("split", "train"),
                "fold": entry.get("fold"),
                "embedding_path": f"emb/{clip_id}.tseb",
                "duration_s": float(clip.duration_s),
            }
        )

    manifest = {
        "task": doc["task"],
        "class_names": list(doc["class_names"]),
        "embedding_meta": {
            "model_id": spec.model_id,
            "ts_seconds": float(spec.ts_seconds),
            "n_layers": int(n_layers),
            "dim": int(adapter.dim),
        },
        "cv_folds": doc.get("cv_folds"),
        "clips": clips,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest, skipped
