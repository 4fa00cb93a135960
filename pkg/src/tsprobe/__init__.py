"""tsprobe: shallow-probe benchmarking of frozen audio embeddings under
varying temporal support."""

from .loss_grad import Batch, Gradients, backward, batch_loss, cross_entropy, finite_diff_grad, masked_bce
from .metrics import EvalResult, accuracy, average_precision, macro_map, mean_std
from .probe import (
    ClipPrediction,
    ProbeConfig,
    ProbeParams,
    aggregate_attention,
    aggregate_mean,
    forward,
    init_params,
    layer_combine,
    load_checkpoint,
    save_checkpoint,
    step_predictions,
)
from .runner import (
    ExperimentReport,
    ExperimentSpec,
    ReportRow,
    emit_report,
    generate_synthetic,
    load_spec,
    run_cv,
    run_experiment,
)
from .store import (
    ClipRecord,
    DatasetManifest,
    EmbeddingMeta,
    EmbeddingTensor,
    carve_validation,
    fold_splits,
    load_manifest,
    read_embedding,
    save_manifest,
    segment_count,
    validate_manifest,
    write_embedding,
)
from .trainer import AdamState, TrainConfig, TrainResult, adam_step, train

__version__ = "0.1.0"
