"""Embedding store: TSEB v1 tensor files, dataset manifests, segmentation and split arithmetic.

TSEB v1 byte layout (everything little-endian):

    bytes 0-3    magic ``TSEB``
    bytes 4-7    u32 format version, always 1
    bytes 8-11   u32 n_layers
    bytes 12-15  u32 n_steps
    bytes 16-19  u32 dim
    bytes 20-    n_layers * n_steps * dim float32 values in (layer, step, dim) order

Manifests are JSON documents with top-level keys ``task``, ``class_names``,
``embedding_meta`` (``model_id``, ``ts_seconds``, ``n_layers``, ``dim``),
``clips`` (array of ``clip_id``, ``labels``, ``observed_mask``, ``split``,
``fold``, ``embedding_path``, ``duration_s``) and optional ``cv_folds``.
``embedding_path`` entries are resolved relative to the manifest file on load.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

TSEB_MAGIC = b"TSEB"
TSEB_VERSION = 1
_HEADER = struct.Struct("<4sIIII")

TASKS = ("multilabel", "multiclass")
SPLITS = ("train", "valid", "test")


class TsebError(ValueError):
    """Embedding file violates the TSEB v1 format."""


class TsebBadMagic(TsebError):
    pass


class TsebBadVersion(TsebError):
    pass


class TsebTruncated(TsebError):
    """Payload size disagrees with the header dimensions."""


class NonFiniteDataError(ValueError):
    """Tensor data contains NaN or Inf."""


class ManifestError(ValueError):
    """Manifest fails schema or consistency checks."""


@dataclass
class EmbeddingTensor:
    """One clip's embedding sequence, shape (n_layers, n_steps, dim), float32.

    Layer index runs over captured network layers (1 for last-layer capture),
    step index over temporal-support segments, dim over embedding channels.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ValueError(f"expected a (n_layers, n_steps, dim) array, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteDataError("embedding tensor contains non-finite values")
        self.data = arr

    @property
    def n_layers(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def as_float64(self) -> np.ndarray:
        return self.data.astype(np.float64)


@dataclass
class ClipRecord:
    clip_id: str
    labels: np.ndarray
    observed_mask: np.ndarray
    split: str
    embedding_path: str
    duration_s: float
    fold: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.observed_mask = np.asarray(self.observed_mask, dtype=np.int8)


@dataclass
class EmbeddingMeta:
    model_id: str
    ts_seconds: float
    n_layers: int
    dim: int


@dataclass
class DatasetManifest:
    task: str
    class_names: list[str]
    clips: list[ClipRecord]
    embedding_meta: EmbeddingMeta
    cv_folds: int | None = None

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split_clips(self, split: str) -> list[ClipRecord]:
        return [c for c in self.clips if c.split == split]


def segment_count(n_samples: int, sample_rate: float, ts_seconds: float) -> int:
    """Number of whole temporal-support segments in a clip: floor(N / (ts * sr)).

    Returns 0 when the clip is shorter than one segment; callers decide
    whether to pad or drop such clips.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if sample_rate <= 0:
        raise ValueError(f"sample_rate must be > 0, got {sample_rate}")
    if ts_seconds <= 0:
        raise ValueError(f"ts_seconds must be > 0, got {ts_seconds}")
    seg = ts_seconds * sample_rate
    # ts*sr like 0.1*16000 lands at 1600.0000000000002; snap fp noise so the
    # floor matches exact arithmetic.
    snapped = round(seg)
    if snapped >= 1 and abs(seg - snapped) <= 1e-9 * max(1.0, seg):
        seg = snapped
    return int(math.floor(n_samples / seg))


def write_embedding(tensor: EmbeddingTensor, path: str | Path) -> None:
    """Write a TSEB v1 file. Byte-deterministic; rejects non-finite data before
    touching the filesystem."""
    data = np.ascontiguousarray(tensor.data, dtype="<f4")
    if not np.isfinite(data).all():
        raise NonFiniteDataError("refusing to write non-finite embedding data")
    header = _HEADER.pack(TSEB_MAGIC, TSEB_VERSION, tensor.n_layers, tensor.n_steps, tensor.dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def read_embedding_header(path: str | Path) -> tuple[int, int, int]:
    """Read just (n_layers, n_steps, dim) from a TSEB file header."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise TsebTruncated(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, n_layers, n_steps, dim = _HEADER.unpack(raw)
    if magic != TSEB_MAGIC:
        raise TsebBadMagic(f"{path}: bad magic {magic!r}, expected {TSEB_MAGIC!r}")
    if version != TSEB_VERSION:
        raise TsebBadVersion(f"{path}: unsupported version {version}, expected {TSEB_VERSION}")
    if min(n_layers, n_steps, dim) < 1:
        raise TsebError(f"{path}: header declares a zero dimension ({n_layers}x{n_steps}x{dim})")
    return n_layers, n_steps, dim


def read_embedding(path: str | Path) -> EmbeddingTensor:
    """Read and validate a TSEB v1 file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise TsebTruncated(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, n_layers, n_steps, dim = _HEADER.unpack(raw[: _HEADER.size])
    if magic != TSEB_MAGIC:
        raise TsebBadMagic(f"{path}: bad magic {magic!r}, expected {TSEB_MAGIC!r}")
    if version != TSEB_VERSION:
        raise TsebBadVersion(f"{path}: unsupported version {version}, expected {TSEB_VERSION}")
    if min(n_layers, n_steps, dim) < 1:
        raise TsebError(f"{path}: header declares a zero dimension ({n_layers}x{n_steps}x{dim})")
    expected = n_layers * n_steps * dim * 4
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise TsebTruncated(f"{path}: payload size mismatch, expected {expected} bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(n_layers, n_steps, dim)
    if not np.isfinite(data).all():
        raise NonFiniteDataError(f"{path}: payload contains non-finite values")
    return EmbeddingTensor(data=data.copy())


def _carve_pool(
    pool: list[ClipRecord], fraction: float, seed: int
) -> tuple[list[ClipRecord], list[ClipRecord]]:
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if not pool:
        raise ManifestError("empty clip pool, nothing to carve")
    n_valid = int(round(fraction * len(pool)))
    rng = np.random.default_rng(seed)
    picked = set(rng.permutation(len(pool))[:n_valid].tolist())
    valid = [c for i, c in enumerate(pool) if i in picked]
    train = [c for i, c in enumerate(pool) if i not in picked]
    return train, valid


def carve_validation(
    manifest: DatasetManifest, fraction: float, seed: int
) -> tuple[list[ClipRecord], list[ClipRecord]]:
    """Seed-deterministic uniform split of the train clips into (train, valid).

    |valid| = round(fraction * |train pool|); the two parts are disjoint and
    cover the pool. Output keeps the original clip order.
    """
    pool = manifest.split_clips("train")
    if not pool:
        raise ManifestError("manifest has no train clips to carve validation from")
    return _carve_pool(pool, fraction, seed)


def fold_splits(
    manifest: DatasetManifest, k: int
) -> list[tuple[list[ClipRecord], list[ClipRecord]]]:
    """k cross-validation pairs (train, test); each clip tests in exactly one fold.

    Predefined fold assignments are respected; 1-indexed label sets {1..k}
    (the ESC-50 convention) are normalized to 0-based. Clips without fold
    assignments are distributed round-robin in manifest order.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    clips = manifest.clips
    if not clips:
        raise ManifestError("manifest has no clips")
    assigned = [c.fold for c in clips]
    if all(f is None for f in assigned):
        folds = [i % k for i in range(len(clips))]
    elif any(f is None for f in assigned):
        missing = [c.clip_id for c, f in zip(clips, assigned) if f is None]
        raise ManifestError(f"mixed fold assignments; clips without a fold: {missing[:5]}")
    else:
        folds = [int(f) for f in assigned]
        values = set(folds)
        if values == set(range(1, k + 1)):
            folds = [f - 1 for f in folds]
        bad = sorted(f for f in set(folds) if f < 0 or f >= k)
        if bad:
            raise ManifestError(f"fold indices out of range for k={k}: {bad}")
    pairs = []
    for f in range(k):
        test = [c for c, cf in zip(clips, folds) if cf == f]
        train = [c for c, cf in zip(clips, folds) if cf != f]
        if not test:
            raise ManifestError(f"fold {f} is empty; degenerate folds rejected")
        pairs.append((train, test))
    return pairs


def usable_clips(manifest: DatasetManifest, clips: list[ClipRecord] | None = None) -> list[ClipRecord]:
    """Drop clips shorter than the manifest's temporal support, with a warning.

    Matches the default short-clip policy: a clip whose duration yields zero
    whole segments cannot contribute an embedding step.
    """
    ts = manifest.embedding_meta.ts_seconds
    pool = manifest.clips if clips is None else clips
    kept = [c for c in pool if c.duration_s >= ts]
    dropped = len(pool) - len(kept)
    if dropped:
        warnings.warn(
            f"excluded {dropped} clip(s) shorter than ts_seconds={ts}", stacklevel=2
        )
    return kept


def _clip_to_json(clip: ClipRecord, base_dir: Path) -> dict:
    path = Path(clip.embedding_path)
    if not path.is_absolute():
        path = path.resolve()
    try:
        rel = path.relative_to(base_dir)
        path_str = rel.as_posix()
    except ValueError:
        path_str = path.as_posix()
    return {
        "clip_id": clip.clip_id,
        "labels": [int(v) for v in clip.labels],
        "observed_mask": [int(v) for v in clip.observed_mask],
        "split": clip.split,
        "fold": clip.fold,
        "embedding_path": path_str,
        "duration_s": float(clip.duration_s),
    }


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest JSON; embedding paths stored relative to the manifest."""
    path = Path(path)
    base = path.parent.resolve()
    doc = {
        "task": manifest.task,
        "class_names": list(manifest.class_names),
        "embedding_meta": {
            "model_id": manifest.embedding_meta.model_id,
            "ts_seconds": float(manifest.embedding_meta.ts_seconds),
            "n_layers": int(manifest.embedding_meta.n_layers),
            "dim": int(manifest.embedding_meta.dim),
        },
        "cv_folds": manifest.cv_folds,
        "clips": [_clip_to_json(c, base) for c in manifest.clips],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load a manifest JSON, resolving embedding paths against its directory."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("task", "class_names", "embedding_meta", "clips"):
        if key not in doc:
            raise ManifestError(f"{path}: missing required key {key!r}")
    meta = doc["embedding_meta"]
    for key in ("model_id", "ts_seconds", "n_layers", "dim"):
        if key not in meta:
            raise ManifestError(f"{path}: embedding_meta missing key {key!r}")
    base = path.parent.resolve()
    clips = []
    for entry in doc["clips"]:
        emb = Path(entry["embedding_path"])
        if not emb.is_absolute():
            emb = base / emb
        clips.append(
            ClipRecord(
                clip_id=entry["clip_id"],
                labels=entry["labels"],
                observed_mask=entry["observed_mask"],
                split=entry.get("split", "train"),
                fold=entry.get("fold"),
                embedding_path=str(emb),
                duration_s=float(entry["duration_s"]),
            )
        )
    return DatasetManifest(
        task=doc["task"],
        class_names=list(doc["class_names"]),
        clips=clips,
        embedding_meta=EmbeddingMeta(
            model_id=str(meta["model_id"]),
            ts_seconds=float(meta["ts_seconds"]),
            n_layers=int(meta["n_layers"]),
            dim=int(meta["dim"]),
        ),
        cv_folds=doc.get("cv_folds"),
    )


def validate_manifest(manifest: DatasetManifest, check_files: bool = True) -> None:
    """Raise ManifestError on the first schema or consistency violation.

    With check_files=True, every referenced embedding file must exist and its
    header must match embedding_meta (n_layers, dim).
    """
    if manifest.task not in TASKS:
        raise ManifestError(f"unknown task {manifest.task!r}, expected one of {TASKS}")
    if not manifest.class_names:
        raise ManifestError("class_names is empty")
    n_classes = manifest.n_classes
    meta = manifest.embedding_meta
    if meta.ts_seconds <= 0:
        raise ManifestError(f"embedding_meta.ts_seconds must be > 0, got {meta.ts_seconds}")
    if meta.n_layers < 1 or meta.dim < 1:
        raise ManifestError("embedding_meta.n_layers and dim must be >= 1")
    if manifest.cv_folds is not None and manifest.cv_folds < 2:
        raise ManifestError(f"cv_folds must be >= 2, got {manifest.cv_folds}")
    for clip in manifest.clips:
        cid = clip.clip_id
        if clip.labels.shape != (n_classes,):
            raise ManifestError(f"clip {cid}: labels length {clip.labels.shape} != {n_classes} classes")
        if clip.observed_mask.shape != (n_classes,):
            raise ManifestError(f"clip {cid}: observed_mask length != {n_classes}")
        if not np.isin(clip.labels, (0, 1)).all():
            raise ManifestError(f"clip {cid}: labels must be 0/1")
        if not np.isin(clip.observed_mask, (0, 1)).all():
            raise ManifestError(f"clip {cid}: observed_mask must be 0/1")
        if clip.split not in SPLITS:
            raise ManifestError(f"clip {cid}: unknown split {clip.split!r}")
        if clip.duration_s <= 0:
            raise ManifestError(f"clip {cid}: duration_s must be > 0")
        if manifest.task == "multiclass":
            if int(clip.labels.sum()) != 1:
                raise ManifestError(f"clip {cid}: multiclass clips need exactly one positive label")
            if not (clip.observed_mask == 1).all():
                raise ManifestError(f"clip {cid}: multiclass observed_mask must be all ones")
        if check_files:
            p = Path(clip.embedding_path)
            if not p.is_file():
                raise ManifestError(f"clip {cid}: embedding file not found: {p}")
            n_layers, n_steps, dim = read_embedding_header(p)
            if n_layers != meta.n_layers or dim != meta.dim:
                raise ManifestError(
                    f"clip {cid}: embedding dims {n_layers}x{n_steps}x{dim} disagree with "
                    f"embedding_meta {meta.n_layers}x*x{meta.dim}"
                )
