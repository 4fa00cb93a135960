"""Classification probe: layer combination, per-step prediction, temporal aggregation.

The probe maps a frozen embedding sequence to one clip-level prediction:
pick or mix layers, apply a linear classifier per step, squash to
probabilities per task, then reduce over time with mean pooling or learned
per-class attention over steps. All arithmetic runs in float64 regardless of
the stored embedding precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .store import EmbeddingTensor

AGGREGATIONS = ("mean", "attention")
LAYER_MODES = ("last", "weighted")


class ProbeError(ValueError):
    pass


@dataclass
class ProbeConfig:
    task: str  # "multilabel" | "multiclass"
    n_classes: int
    dim: int
    n_layers: int
    aggregation: str  # "mean" | "attention"
    layer_mode: str  # "last" | "weighted"

    def validate(self) -> "ProbeConfig":
        if self.task not in ("multilabel", "multiclass"):
            raise ProbeError(f"unknown task {self.task!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ProbeError(f"unknown aggregation {self.aggregation!r}")
        if self.layer_mode not in LAYER_MODES:
            raise ProbeError(f"unknown layer_mode {self.layer_mode!r}")
        if min(self.n_classes, self.dim, self.n_layers) < 1:
            raise ProbeError("n_classes, dim and n_layers must all be >= 1")
        if self.layer_mode == "weighted" and self.n_layers < 2:
            raise ProbeError("layer_mode='weighted' needs n_layers >= 2")
        return self


@dataclass
class ProbeParams:
    """Everything the probe learns. Attention and layer weights are optional:
    W_att/b_att exist only for attention aggregation, alpha only for weighted
    layer mode. alpha holds free logits; layer_combine softmax-normalizes."""

    W_cls: np.ndarray  # (n_classes, dim)
    b_cls: np.ndarray  # (n_classes,)
    W_att: np.ndarray | None = None  # (n_classes, dim)
    b_att: np.ndarray | None = None  # (n_classes,)
    alpha: np.ndarray | None = None  # (n_layers,)

    def arrays(self) -> dict[str, np.ndarray]:
        """Name -> array view of the present parameters, fixed order."""
        out = {"W_cls": self.W_cls, "b_cls": self.b_cls}
        if self.W_att is not None:
            out["W_att"] = self.W_att
            out["b_att"] = self.b_att
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out

    def copy(self) -> "ProbeParams":
        return ProbeParams(
            W_cls=self.W_cls.copy(),
            b_cls=self.b_cls.copy(),
            W_att=None if self.W_att is None else self.W_att.copy(),
            b_att=None if self.b_att is None else self.b_att.copy(),
            alpha=None if self.alpha is None else self.alpha.copy(),
        )

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            if not np.isfinite(arr).all():
                raise ProbeError(f"parameter {name} contains non-finite values")


@dataclass
class ClipPrediction:
    y_hat: np.ndarray  # (n_classes,), each in [0, 1]
    per_step: np.ndarray | None = None  # (n_steps, n_classes)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (saturates cleanly for huge logits)."""
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def init_params(config: ProbeConfig, seed: int) -> ProbeParams:
    """Seed-deterministic init: W ~ U[-s, s] with s = sqrt(6/(dim+n_classes)),
    zero biases, zero alpha (uniform layer softmax). Draw order is W_cls then
    W_att, so configs sharing a seed share the classifier start."""
    rng = np.random.default_rng(seed)
    s = np.sqrt(6.0 / (config.dim + config.n_classes))
    shape = (config.n_classes, config.dim)
    W_cls = rng.uniform(-s, s, size=shape)
    params = ProbeParams(W_cls=W_cls, b_cls=np.zeros(config.n_classes))
    if config.aggregation == "attention":
        params.W_att = rng.uniform(-s, s, size=shape)
        params.b_att = np.zeros(config.n_classes)
    if config.layer_mode == "weighted":
        params.alpha = np.zeros(config.n_layers)
    return params


def layer_combine(tensor: EmbeddingTensor, params: ProbeParams, config: ProbeConfig) -> np.ndarray:
    """Reduce (n_layers, T, dim) to the probe input sequence (T, dim).

    last: take the final captured layer. weighted: softmax(alpha)-weighted sum
    over layers. A single-layer tensor in weighted mode degenerates to the
    last-layer path (softmax over one logit is 1)."""
    if tensor.n_layers != config.n_layers:
        raise ProbeError(f"tensor has {tensor.n_layers} layers, config expects {config.n_layers}")
    if tensor.dim != config.dim:
        raise ProbeError(f"tensor dim {tensor.dim} != config dim {config.dim}")
    data = tensor.as_float64()
    if config.layer_mode == "last":
        return data[-1]
    if params.alpha is None or params.alpha.shape != (config.n_layers,):
        raise ProbeError("weighted layer mode needs alpha of shape (n_layers,)")
    weights = softmax(np.asarray(params.alpha, dtype=np.float64))
    return np.einsum("l,ltm->tm", weights, data)


def step_predictions(sequence: np.ndarray, params: ProbeParams, config: ProbeConfig) -> np.ndarray:
    """Per-step class probabilities, shape (T, n_classes): linear logits, then
    sigmoid (multilabel) or a per-step softmax over classes (multiclass)."""
    sequence = np.asarray(sequence, dtype=np.float64)
    if sequence.ndim != 2 or sequence.shape[1] != config.dim:
        raise ProbeError(f"sequence must be (T, {config.dim}), got {sequence.shape}")
    logits = sequence @ params.W_cls.T + params.b_cls
    if not np.isfinite(logits).all():
        raise ProbeError("non-finite classifier logits")
    if config.task == "multilabel":
        return sigmoid(logits)
    return softmax(logits, axis=1)


def aggregate_mean(step_preds: np.ndarray) -> ClipPrediction:
    """Mean temporal pooling: y_hat[l] = (1/T) sum_t step_preds[t, l]."""
    step_preds = np.asarray(step_preds, dtype=np.float64)
    if step_preds.ndim != 2 or step_preds.shape[0] < 1:
        raise ProbeError(f"step_preds must be (T>=1, n_classes), got {step_preds.shape}")
    return ClipPrediction(y_hat=step_preds.mean(axis=0), per_step=step_preds)


def attention_weights(sequence: np.ndarray, params: ProbeParams) -> np.ndarray:
    """Per-class softmax-over-time weights from the attention head, shape (T, L)."""
    if params.W_att is None or params.b_att is None:
        raise ProbeError("attention aggregation needs W_att/b_att")
    logits = np.asarray(sequence, dtype=np.float64) @ params.W_att.T + params.b_att
    if not np.isfinite(logits).all():
        raise ProbeError("non-finite attention logits")
    return softmax(logits, axis=0)


def aggregate_attention(
    sequence: np.ndarray, step_preds: np.ndarray, params: ProbeParams
) -> ClipPrediction:
    """Learned pooling: per class l, weights w[:, l] = softmax over steps of the
    attention head's logits; y_hat[l] = sum_t w[t, l] * step_preds[t, l]."""
    step_preds = np.asarray(step_preds, dtype=np.float64)
    w = attention_weights(sequence, params)
    if w.shape != step_preds.shape:
        raise ProbeError(f"attention weights {w.shape} vs step_preds {step_preds.shape}")
    return ClipPrediction(y_hat=np.sum(w * step_preds, axis=0), per_step=step_preds)


class ForwardTrace(NamedTuple):
    """Intermediates of one clip's forward pass; consumed by the gradient code."""

    sequence: np.ndarray  # (T, dim) combined probe input
    layer_weights: np.ndarray | None  # softmax(alpha) or None in last mode
    step_probs: np.ndarray  # (T, L)
    att_weights: np.ndarray | None  # (T, L) or None for mean pooling
    y_hat: np.ndarray  # (L,)
    att_norm: float | None  # simplex normalizer for multiclass attention, else None


def forward_trace(tensor: EmbeddingTensor, params: ProbeParams, config: ProbeConfig) -> ForwardTrace:
    data = tensor.as_float64()
    if config.layer_mode == "weighted":
        if params.alpha is None:
            raise ProbeError("weighted layer mode needs alpha")
        lw = softmax(np.asarray(params.alpha, dtype=np.float64))
        sequence = np.einsum("l,ltm->tm", lw, data)
    else:
        lw = None
        sequence = data[-1]
    probs = step_predictions(sequence, params, config)
    att_norm = None
    if config.aggregation == "attention":
        aw = attention_weights(sequence, params)
        y_hat = np.sum(aw * probs, axis=0)
        if config.task == "multiclass":
            # Per-class attention gives each class its own convex combination
            # over steps, so the raw aggregate need not sum to 1; renormalize
            # to keep multiclass predictions on the simplex.
            att_norm = float(y_hat.sum())
            y_hat = y_hat / att_norm
    else:
        aw = None
        y_hat = probs.mean(axis=0)
    return ForwardTrace(
        sequence=sequence,
        layer_weights=lw,
        step_probs=probs,
        att_weights=aw,
        y_hat=y_hat,
        att_norm=att_norm,
    )


def forward(tensor: EmbeddingTensor, params: ProbeParams, config: ProbeConfig) -> ClipPrediction:
    """Full pass: layer_combine -> step_predictions -> aggregation per config.

    For multiclass attention the aggregate is renormalized to the simplex
    (per-class time weights do not preserve the row sum on their own)."""
    if tensor.n_layers != config.n_layers:
        raise ProbeError(f"tensor has {tensor.n_layers} layers, config expects {config.n_layers}")
    if tensor.dim != config.dim:
        raise ProbeError(f"tensor dim {tensor.dim} != config dim {config.dim}")
    trace = forward_trace(tensor, params, config)
    y_hat = trace.y_hat
    if config.task == "multiclass" and abs(float(y_hat.sum()) - 1.0) > 1e-5:
        raise ProbeError(f"multiclass prediction drifted off the simplex: sum={y_hat.sum()!r}")
    if y_hat.min() < 0.0 or y_hat.max() > 1.0:
        raise ProbeError("prediction outside [0, 1]")
    return ClipPrediction(y_hat=y_hat, per_step=trace.step_probs)


# --- checkpoint serialization -------------------------------------------------
#
# A checkpoint is <stem>.json + <stem>.bin: the JSON carries the probe config
# and per-array (offset, shape) into the sidecar, which is the concatenation of
# the parameter arrays as little-endian float64. Layout is documented, not
# bit-normative.


def save_checkpoint(
    path: str | Path, params: ProbeParams, config: ProbeConfig, extra: dict | None = None
) -> None:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    sidecar = path.with_suffix(".bin")
    arrays = params.arrays()
    index = {}
    offset = 0
    blob = bytearray()
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        index[name] = {"offset": offset, "shape": list(data.shape)}
        blob.extend(data.tobytes())
        offset += data.nbytes
    doc = {
        "format": "tsprobe-checkpoint-v1",
        "config": {
            "task": config.task,
            "n_classes": config.n_classes,
            "dim": config.dim,
            "n_layers": config.n_layers,
            "aggregation": config.aggregation,
            "layer_mode": config.layer_mode,
        },
        "arrays": index,
        "sidecar": sidecar.name,
        "extra": extra or {},
    }
    with open(sidecar, "wb") as fh:
        fh.write(bytes(blob))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[ProbeParams, ProbeConfig, dict]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "tsprobe-checkpoint-v1":
        raise ProbeError(f"{path}: not a tsprobe checkpoint")
    cfg = doc["config"]
    config = ProbeConfig(
        task=cfg["task"],
        n_classes=int(cfg["n_classes"]),
        dim=int(cfg["dim"]),
        n_layers=int(cfg["n_layers"]),
        aggregation=cfg["aggregation"],
        layer_mode=cfg["layer_mode"],
    ).validate()
    sidecar = path.parent / doc["sidecar"]
    raw = sidecar.read_bytes()
    loaded: dict[str, np.ndarray] = {}
    for name, entry in doc["arrays"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start).reshape(shape)
        loaded[name] = arr.astype(np.float64)
    params = ProbeParams(
        W_cls=loaded["W_cls"],
        b_cls=loaded["b_cls"],
        W_att=loaded.get("W_att"),
        b_att=loaded.get("b_att"),
        alpha=loaded.get("alpha"),
    )
    params.check_finite()
    return params, config, doc.get("extra", {})
