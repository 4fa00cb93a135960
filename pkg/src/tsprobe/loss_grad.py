"""Losses with missing-label masking and exact gradients for the probe graph.

The probe graph is small and fixed (layer softmax -> linear -> sigmoid/softmax
-> optional attention softmax over steps -> masked BCE or CE), so gradients
are derived in closed form rather than through an autodiff engine. A central
finite-difference oracle (`finite_diff_grad`) arbitrates correctness; all
arithmetic is float64.

Masked entries never enter the arithmetic: per-element loss terms and output
gradients are selected with `np.where(mask, term, 0.0)`, so flipping a hidden
label leaves every downstream float bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .probe import ProbeConfig, ProbeParams, forward_trace
from .store import EmbeddingTensor

EPS = 1e-7  # probability clamp for the log terms


class LossGradError(ValueError):
    pass


@dataclass
class Batch:
    """A minibatch of clips. Step counts may differ per clip; layer count and
    embedding dim must not."""

    tensors: list[EmbeddingTensor]
    labels: np.ndarray  # (B, n_classes) in {0, 1}
    observed_mask: np.ndarray  # (B, n_classes) in {0, 1}

    def __post_init__(self):
        if not self.tensors:
            raise LossGradError("empty batch")
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.observed_mask = np.asarray(self.observed_mask, dtype=np.float64)
        b = len(self.tensors)
        if self.labels.ndim != 2 or self.labels.shape[0] != b:
            raise LossGradError(f"labels must be ({b}, n_classes), got {self.labels.shape}")
        if self.observed_mask.shape != self.labels.shape:
            raise LossGradError("observed_mask shape differs from labels")
        layers = {t.n_layers for t in self.tensors}
        dims = {t.dim for t in self.tensors}
        if len(layers) != 1 or len(dims) != 1:
            raise LossGradError(f"tensors disagree on layout: layers={layers}, dims={dims}")

    def __len__(self) -> int:
        return len(self.tensors)


@dataclass
class Gradients:
    """Mirror of ProbeParams; absent parameters have absent gradients."""

    d_W_cls: np.ndarray
    d_b_cls: np.ndarray
    d_W_att: np.ndarray | None = None
    d_b_att: np.ndarray | None = None
    d_alpha: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        """Keyed like ProbeParams.arrays() so optimizers can zip them."""
        out = {"W_cls": self.d_W_cls, "b_cls": self.d_b_cls}
        if self.d_W_att is not None:
            out["W_att"] = self.d_W_att
            out["b_att"] = self.d_b_att
        if self.d_alpha is not None:
            out["alpha"] = self.d_alpha
        return out

    def max_abs(self) -> float:
        return max(float(np.abs(a).max()) for a in self.arrays().values())


def _zeros_like_params(params: ProbeParams) -> Gradients:
    return Gradients(
        d_W_cls=np.zeros_like(params.W_cls),
        d_b_cls=np.zeros_like(params.b_cls),
        d_W_att=None if params.W_att is None else np.zeros_like(params.W_att),
        d_b_att=None if params.b_att is None else np.zeros_like(params.b_att),
        d_alpha=None if params.alpha is None else np.zeros_like(params.alpha),
    )


def masked_bce(y_hat: np.ndarray, y: np.ndarray, mask: np.ndarray) -> float:
    """Binary cross entropy over observed labels only, mean-reduced over the
    observed count; probabilities clamped to [EPS, 1-EPS]. All-masked input
    gives exactly 0 (empty-sum convention)."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not (y_hat.shape == y.shape == mask.shape):
        raise LossGradError("masked_bce inputs must share a shape")
    clamped = np.clip(y_hat, EPS, 1.0 - EPS)
    terms = -(y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped))
    observed = mask == 1.0
    selected = np.where(observed, terms, 0.0)
    denom = max(1.0, float(mask.sum()))
    return float(selected.sum() / denom)


def cross_entropy(y_hat: np.ndarray, y: np.ndarray) -> float:
    """-log of the true-class probability; lower-clamped at EPS so a zero
    prediction stays finite and a perfect one scores exactly 0."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise LossGradError("cross_entropy inputs must share a shape")
    positives = np.flatnonzero(y == 1.0)
    if len(positives) != 1:
        raise LossGradError(f"cross_entropy needs a one-hot target, got {int(len(positives))} positives")
    c = int(positives[0])
    return float(-np.log(max(float(y_hat[c]), EPS)))


def _clip_loss(y_hat: np.ndarray, y: np.ndarray, mask: np.ndarray, task: str) -> float:
    if task == "multilabel":
        return masked_bce(y_hat, y, mask)
    return cross_entropy(y_hat, y)


def _loss_grad_y(y_hat: np.ndarray, y: np.ndarray, mask: np.ndarray, task: str) -> np.ndarray:
    """dLoss/dy_hat for one clip, honoring the clamps (zero gradient where the
    clamp is active) and the mask (exact zeros, no arithmetic on hidden labels)."""
    if task == "multilabel":
        clamped = np.clip(y_hat, EPS, 1.0 - EPS)
        inside = (y_hat > EPS) & (y_hat < 1.0 - EPS)
        denom = max(1.0, float(mask.sum()))
        raw = -(y / clamped - (1.0 - y) / (1.0 - clamped)) / denom
        return np.where((mask == 1.0) & inside, raw, 0.0)
    g = np.zeros_like(y_hat)
    c = int(np.flatnonzero(y == 1.0)[0])
    if y_hat[c] > EPS:
        g[c] = -1.0 / y_hat[c]
    return g


def _backward_clip(
    tensor: EmbeddingTensor,
    y: np.ndarray,
    mask: np.ndarray,
    params: ProbeParams,
    config: ProbeConfig,
) -> tuple[float, Gradients]:
    trace = forward_trace(tensor, params, config)
    y_hat = trace.y_hat
    if not np.isfinite(y_hat).all():
        raise LossGradError("non-finite prediction")
    loss = _clip_loss(y_hat, y, mask, config.task)
    g_y = _loss_grad_y(y_hat, y, mask, config.task)

    E = trace.sequence  # (T, m)
    P = trace.step_probs  # (T, L)
    T = P.shape[0]
    grads = _zeros_like_params(params)

    if config.aggregation == "attention":
        if trace.att_norm is not None:
            # y = u / sum(u): dL/du = (dL/dy - <dL/dy, y>) / sum(u)
            g_y = (g_y - float(np.dot(g_y, y_hat))) / trace.att_norm
        W = trace.att_weights  # (T, L)
        dP = g_y[None, :] * W
        dW = g_y[None, :] * P
        # softmax over steps, per class
        dA = W * (dW - np.sum(W * dW, axis=0, keepdims=True))
        grads.d_W_att = dA.T @ E
        grads.d_b_att = dA.sum(axis=0)
        dE = dA @ params.W_att
    else:
        dP = np.broadcast_to(g_y / T, P.shape).copy()
        dE = np.zeros_like(E)

    if config.task == "multilabel":
        dU = dP * P * (1.0 - P)
    else:
        dU = P * (dP - np.sum(dP * P, axis=1, keepdims=True))
    grads.d_W_cls = dU.T @ E
    grads.d_b_cls = dU.sum(axis=0)
    dE = dE + dU @ params.W_cls

    if config.layer_mode == "weighted":
        s = trace.layer_weights
        data = tensor.as_float64()
        ds = np.einsum("tm,ltm->l", dE, data)
        grads.d_alpha = s * (ds - float(np.dot(s, ds)))
    return loss, grads


def backward(batch: Batch, params: ProbeParams, config: ProbeConfig) -> tuple[float, Gradients]:
    """Mean loss over the batch and its exact gradients w.r.t. every parameter.

    The loss value is computed through the same forward helpers as
    `probe.forward`, so it matches the forward->loss composition bit for bit.
    """
    if config.task == "multiclass" and not (batch.observed_mask == 1.0).all():
        raise LossGradError("multiclass batches must have an all-ones observed_mask")
    total = _zeros_like_params(params)
    losses = []
    for i, tensor in enumerate(batch.tensors):
        try:
            loss, grads = _backward_clip(tensor, batch.labels[i], batch.observed_mask[i], params, config)
        except (LossGradError, ValueError) as exc:
            raise LossGradError(f"clip index {i}: {exc}") from exc
        losses.append(loss)
        for name, acc in total.arrays().items():
            acc += grads.arrays()[name]
    n = float(len(batch))
    for acc in total.arrays().values():
        acc /= n
    mean_loss = float(np.mean(np.asarray(losses)))
    for name, arr in total.arrays().items():
        if not np.isfinite(arr).all():
            raise LossGradError(f"non-finite gradient in {name}")
    return mean_loss, total


def batch_loss(batch: Batch, params: ProbeParams, config: ProbeConfig) -> float:
    """Mean per-clip loss without gradients (validation path); identical
    arithmetic to the loss returned by `backward`."""
    losses = []
    for i, tensor in enumerate(batch.tensors):
        try:
            trace = forward_trace(tensor, params, config)
            losses.append(_clip_loss(trace.y_hat, batch.labels[i], batch.observed_mask[i], config.task))
        except (LossGradError, ValueError) as exc:
            raise LossGradError(f"clip index {i}: {exc}") from exc
    return float(np.mean(np.asarray(losses)))


def finite_diff_grad(
    batch: Batch, params: ProbeParams, config: ProbeConfig, h: float = 1e-5
) -> Gradients:
    """Central-difference gradients, (L(theta+h) - L(theta-h)) / 2h per scalar.

    Perturbs a private copy of the parameters; O(#params) loss evaluations.
    """
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    work = params.copy()
    out = _zeros_like_params(work)
    out_arrays = out.arrays()
    for name, arr in work.arrays().items():
        flat = arr.reshape(-1)
        grad = out_arrays[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = batch_loss(batch, work, config)
            flat[i] = orig - h
            minus = batch_loss(batch, work, config)
            flat[i] = orig
            grad[i] = (plus - minus) / (2.0 * h)
    return out


def gradient_agreement(a: Gradients, b: Gradients) -> float:
    """Max elementwise error |a-b| / max(1, |a|, |b|) across all parameters.

    The unit floor keeps near-zero components from inflating the ratio; for
    gradients of magnitude >= 1 this is the strict relative error.
    """
    worst = 0.0
    a_arrays, b_arrays = a.arrays(), b.arrays()
    if a_arrays.keys() != b_arrays.keys():
        raise LossGradError("gradient structures differ")
    for name in a_arrays:
        x, y = a_arrays[name], b_arrays[name]
        denom = np.maximum(1.0, np.maximum(np.abs(x), np.abs(y)))
        worst = max(worst, float((np.abs(x - y) / denom).max()))
    return worst
