"""Adam training loop with seeded shuffling and best-validation checkpointing.

One call to `train` is a single deterministic sequence: embeddings are read
once up front, epoch shuffles come from a generator derived from the config
seed, and the returned parameters are the snapshot from the epoch with the
lowest validation loss (ties keep the earliest epoch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import loss_grad, probe, store


class TrainerError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float
    batch_size: int
    max_epochs: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")


# Training recipes per task type: multilabel tagging uses lr 1e-4 / batch 128,
# single-label classification lr 1e-3 / batch 32.
TASK_RECIPES = {
    "multilabel": {"learning_rate": 1e-4, "batch_size": 128},
    "multiclass": {"learning_rate": 1e-3, "batch_size": 32},
}


def default_train_config(task: str, seed: int = 0, **overrides) -> TrainConfig:
    if task not in TASK_RECIPES:
        raise ValueError(f"unknown task {task!r}")
    kwargs: dict = dict(TASK_RECIPES[task])
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(seed=seed, **kwargs)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def init_adam_state(params: probe.ProbeParams) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(arr) for name, arr in params.arrays().items()},
        v={name: np.zeros_like(arr) for name, arr in params.arrays().items()},
        t=0,
    )


def adam_step(
    params: probe.ProbeParams,
    grads: loss_grad.Gradients,
    state: AdamState,
    config: TrainConfig,
) -> tuple[probe.ProbeParams, AdamState]:
    """One bias-corrected Adam update; functional (inputs untouched).

    t' = t+1; m' = b1*m + (1-b1)*g; v' = b2*v + (1-b2)*g^2;
    theta' = theta - lr * (m'/(1-b1^t')) / (sqrt(v'/(1-b2^t')) + eps)
    """
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    t = state.t + 1
    new_params = params.copy()
    new_m, new_v = {}, {}
    p_arrays = new_params.arrays()
    g_arrays = grads.arrays()
    if p_arrays.keys() != g_arrays.keys():
        raise TrainerError(f"gradient keys {sorted(g_arrays)} do not match params {sorted(p_arrays)}")
    for name, theta in p_arrays.items():
        g = g_arrays[name]
        with np.errstate(invalid="ignore", over="ignore"):  # finiteness checked below
            m = b1 * state.m[name] + (1.0 - b1) * g
            v = b2 * state.v[name] + (1.0 - b2) * (g * g)
            m_hat = m / (1.0 - b1**t)
            v_hat = v / (1.0 - b2**t)
            theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        if not np.isfinite(theta).all():
            raise TrainerError(f"non-finite update in {name} at step {t}")
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)


@dataclass
class TrainResult:
    best_params: probe.ProbeParams
    best_val_loss: float
    history: list[tuple[float, float]]  # (train_loss, val_loss) per epoch, 1-indexed
    best_epoch: int


def history_csv(result: TrainResult) -> str:
    lines = ["epoch,train_loss,val_loss"]
    for epoch, (train_loss, val_loss) in enumerate(result.history, start=1):
        lines.append(f"{epoch},{train_loss!r},{val_loss!r}")
    return "\n".join(lines) + "\n"


def _load_tensors(clips: list[store.ClipRecord]) -> list[store.EmbeddingTensor]:
    tensors = []
    for clip in clips:
        try:
            tensors.append(store.read_embedding(clip.embedding_path))
        except (OSError, ValueError) as exc:
            raise TrainerError(f"clip {clip.clip_id}: cannot read embedding: {exc}") from exc
    return tensors


def _label_matrices(clips: list[store.ClipRecord]) -> tuple[np.ndarray, np.ndarray]:
    labels = np.stack([c.labels for c in clips]).astype(np.float64)
    mask = np.stack([c.observed_mask for c in clips]).astype(np.float64)
    return labels, mask


def train(
    train_clips: list[store.ClipRecord],
    valid_clips: list[store.ClipRecord],
    probe_config: probe.ProbeConfig,
    config: TrainConfig,
) -> TrainResult:
    """Train a probe on the given clips; fully deterministic given (data, seed).

    Each epoch: one seeded shuffle, minibatches of batch_size (final partial
    batch kept), one Adam step per batch, then a full validation pass. The
    snapshot with the lowest validation loss wins.
    """
    probe_config.validate()
    if not train_clips:
        raise TrainerError("empty training split")
    if not valid_clips:
        raise TrainerError("empty validation split")

    train_tensors = _load_tensors(train_clips)
    valid_tensors = _load_tensors(valid_clips)
    train_labels, train_mask = _label_matrices(train_clips)
    valid_labels, valid_mask = _label_matrices(valid_clips)
    valid_batch = loss_grad.Batch(tensors=valid_tensors, labels=valid_labels, observed_mask=valid_mask)

    params = probe.init_params(probe_config, seed=config.seed)
    state = init_adam_state(params)
    shuffle_rng = np.random.default_rng((config.seed, 1))

    n = len(train_clips)
    history: list[tuple[float, float]] = []
    best_val = np.inf
    best_params = params.copy()
    best_epoch = 0

    for epoch in range(1, config.max_epochs + 1):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = loss_grad.Batch(
                tensors=[train_tensors[i] for i in idx],
                labels=train_labels[idx],
                observed_mask=train_mask[idx],
            )
            loss, grads = loss_grad.backward(batch, params, probe_config)
            params, state = adam_step(params, grads, state, config)
            epoch_loss += loss * len(idx)
        train_loss = epoch_loss / n
        val_loss = loss_grad.batch_loss(valid_batch, params, probe_config)
        history.append((train_loss, val_loss))
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch

    return TrainResult(
        best_params=best_params,
        best_val_loss=float(best_val),
        history=history,
        best_epoch=best_epoch,
    )
