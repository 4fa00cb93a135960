"""Embedding-model adapters.

An adapter owns one pretrained network: its native sample rate, embedding
width, transformer block count, and an ``embed_segment`` that maps one
temporal-support segment of audio to an (n_layers, n_tokens, dim) float array.
``capture="last"`` yields one layer; ``capture="all"`` yields every
transformer block's token-mean (the published AST checkpoints expose 12).

The three published-checkpoint adapters (byola_v2, passt_s, beats_iter3plus)
import their upstream model code lazily and fail with ExtractorUnavailable
when it is not installed, so the rest of the pipeline stays usable and
testable without them. The stub adapters compute deterministic
waveform-statistics features and exist for pipeline and format testing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

LAYER_CAPTURES = ("last", "all")


class ExtractorError(RuntimeError):
    pass


class ExtractorUnavailable(ExtractorError):
    """The adapter's upstream model code or checkpoint is missing."""


@dataclass
class ExtractorSpec:
    model_id: str
    ts_seconds: float
    layer_capture: str = "last"
    checkpoint_path: str | None = None
    device: str = "cpu"
    pad_short: bool = False  # zero-pad clips shorter than one segment

    def validate(self) -> "ExtractorSpec":
        if self.ts_seconds <= 0:
            raise ExtractorError(f"ts_seconds must be > 0, got {self.ts_seconds}")
        if self.layer_capture not in LAYER_CAPTURES:
            raise ExtractorError(f"layer_capture must be one of {LAYER_CAPTURES}")
        if self.model_id not in ADAPTERS:
            raise ExtractorError(f"unknown model_id {self.model_id!r}; known: {sorted(ADAPTERS)}")
        return self


class ModelAdapter:
    model_id: str
    sample_rate: int
    dim: int
    n_blocks: int
    supports_all_layers: bool = True

    def layers_for(self, capture: str) -> int:
        return self.n_blocks if capture == "all" else 1

    def embed_segment(self, samples: np.ndarray, capture: str) -> np.ndarray:
        """One segment at the native rate -> (n_layers, n_tokens, dim)."""
        raise NotImplementedError


class TorchBlockCapture:
    """Collects each block's output via forward hooks, in registration order.

    Works with blocks that return tensors or tuples (first element taken).
    Use as a context manager around the model forward.
    """

    def __init__(self, blocks):
        self.blocks = list(blocks)
        self.outputs = []
        self._handles = []

    def _hook(self, _module, _inputs, output):
        if isinstance(output, tuple):
            output = output[0]
        self.outputs.append(output)

    def __enter__(self):
        self.outputs = []
        self._handles = [block.register_forward_hook(self._hook) for block in self.blocks]
        return self

    def __exit__(self, exc_type, exc, tb):
        for handle in self._handles:
            handle.remove()
        self._handles = []
        return False


class StubAdapter(ModelAdapter):
    """Deterministic test backend: per-token waveform statistics projected to
    the embedding width by fixed seeded matrices, one per block. No model
    weights involved; identical inputs give byte-identical outputs."""

    supports_all_layers = True

    def __init__(self, model_id: str, dim: int, n_blocks: int, tokens_per_second: float, sample_rate: int = 16000):
        self.model_id = model_id
        self.sample_rate = sample_rate
        self.dim = dim
        self.n_blocks = n_blocks
        self.tokens_per_second = tokens_per_second
        self._projections = [
            np.random.default_rng((9173, b)).standard_normal((6, dim)) for b in range(n_blocks)
        ]

    def _token_stats(self, chunk: np.ndarray) -> np.ndarray:
        chunk = chunk.astype(np.float64)
        diffs = np.abs(np.diff(chunk)) if chunk.size > 1 else np.zeros(1)
        return np.array(
            [
                chunk.mean(),
                chunk.std(),
                np.sqrt(np.mean(chunk**2)),
                chunk.max(),
                chunk.min(),
                diffs.mean(),
            ]
        )

    def embed_segment(self, samples: np.ndarray, capture: str) -> np.ndarray:
        seconds = samples.size / self.sample_rate
        n_tokens = max(1, int(round(self.tokens_per_second * seconds)))
        bounds = np.linspace(0, samples.size, n_tokens + 1).astype(int)
        stats = np.stack([self._token_stats(samples[a:b] if b > a else samples[a : a + 1]) for a, b in zip(bounds[:-1], bounds[1:])])
        blocks = range(self.n_blocks) if capture == "all" else [self.n_blocks - 1]
        layers = [stats @ self._projections[b] * (1.0 + 0.1 * b) for b in blocks]
        return np.stack(layers).astype(np.float32)


def _require_checkpoint(spec: ExtractorSpec) -> Path:
    if not spec.checkpoint_path:
        raise ExtractorUnavailable(f"{spec.model_id}: checkpoint_path is required")
    path = Path(spec.checkpoint_path)
    if not path.exists():
        raise ExtractorUnavailable(f"{spec.model_id}: checkpoint not found at {path}")
    return path


def _torch():
    try:
        import torch
    except ImportError as exc:
        raise ExtractorUnavailable("torch is required for the pretrained-model adapters") from exc
    return torch


class ByolaV2Adapter(ModelAdapter):
    """BYOL-A v2 CNN encoder; last-layer embeddings only (dim 3072)."""

    model_id = "byola_v2"
    sample_rate = 16000
    dim = 3072
    n_blocks = 1
    supports_all_layers = False  # CNN encoder, no transformer block stack

    def __init__(self, spec: ExtractorSpec):
        torch = _torch()
        ckpt = _require_checkpoint(spec)
        try:
            from byol_a2.models import AudioNTT2022
            import torchaudio
        except ImportError as exc:
            raise ExtractorUnavailable(
                "byola_v2 needs the upstream 'byol_a2' package (nttcslab byol-a, v2 branch) and torchaudio"
            ) from exc
        self._torch = torch
        self._device = spec.device
        self._model = AudioNTT2022(d=self.dim)
        self._model.load_state_dict(torch.load(ckpt, map_location="cpu"))
        self._model.to(spec.device).eval()
        self._melspec = torchaudio.transforms.MelSpectrogram(
            sample_rate=16000, n_fft=1024, win_length=1024, hop_length=160, n_mels=64, f_min=60, f_max=7800
        ).to(spec.device)

    def embed_segment(self, samples: np.ndarray, capture: str) -> np.ndarray:
        torch = self._torch
        if capture == "all":
            raise ExtractorError("byola_v2 has no transformer blocks; all-layer capture is unsupported")
        with torch.no_grad():
            wave = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32)).to(self._device)
            lms = (self._melspec(wave.unsqueeze(0)) + 1e-8).log()
            emb = self._model(lms.unsqueeze(0))
        return emb.squeeze(0).reshape(1, 1, self.dim).cpu().numpy().astype(np.float32)


class PasstSAdapter(ModelAdapter):
    """PaSST-S audio spectrogram transformer; token-mean per block (dim 768)."""

    model_id = "passt_s"
    sample_rate = 32000
    dim = 768
    n_blocks = 12

    def __init__(self, spec: ExtractorSpec):
        torch = _torch()
        try:
            from hear21passt.base import get_basic_model
        except ImportError as exc:
            raise ExtractorUnavailable("passt_s needs the upstream 'hear21passt' package") from exc
        self._torch = torch
        self._device = spec.device
        wrapper = get_basic_model(mode="embed_only")
        if spec.checkpoint_path:
            state = torch.load(_require_checkpoint(spec), map_location="cpu")
            wrapper.net.load_state_dict(state)
        self._model = wrapper.to(spec.device).eval()
        self._blocks = list(self._model.net.blocks)
        if len(self._blocks) != self.n_blocks:
            raise ExtractorError(f"expected {self.n_blocks} transformer blocks, found {len(self._blocks)}")

    def embed_segment(self, samples: np.ndarray, capture: str) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            wave = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32)).unsqueeze(0).to(self._device)
            with TorchBlockCapture(self._blocks) as cap:
                final = self._model(wave)
            if capture == "all":
                # token-mean of each block output, matching the final pooling
                layers = [out.mean(dim=1).squeeze(0) for out in cap.outputs]
            else:
                layers = [final.squeeze(0)[: self.dim]]
        stacked = torch.stack([layer[: self.dim] for layer in layers])
        return stacked.unsqueeze(1).cpu().numpy().astype(np.float32)


class BeatsAdapter(ModelAdapter):
    """BEATs iter3+ transformer; patch tokens are kept and later unrolled into
    extra time steps (dim 768 per token)."""

    model_id = "beats_iter3plus"
    sample_rate = 16000
    dim = 768
    n_blocks = 12

    def __init__(self, spec: ExtractorSpec):
        torch = _torch()
        ckpt = _require_checkpoint(spec)
        try:
            from BEATs import BEATs, BEATsConfig
        except ImportError as exc:
            raise ExtractorUnavailable(
                "beats_iter3plus needs the upstream 'BEATs' module (unilm/beats) on the path"
            ) from exc
        self._torch = torch
        self._device = spec.device
        payload = torch.load(ckpt, map_location="cpu")
        self._model = BEATs(BEATsConfig(payload["cfg"]))
        self._model.load_state_dict(payload["model"])
        self._model.to(spec.device).eval()
        self._blocks = list(self._model.encoder.layers)
        if len(self._blocks) != self.n_blocks:
            raise ExtractorError(f"expected {self.n_blocks} transformer blocks, found {len(self._blocks)}")

    def embed_segment(self, samples: np.ndarray, capture: str) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            wave = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32)).unsqueeze(0).to(self._device)
            with TorchBlockCapture(self._blocks) as cap:
                tokens, _ = self._model.extract_features(wave)
            if capture == "all":
                layers = [out.squeeze(0) if out.dim() == 3 else out for out in cap.outputs]
            else:
                layers = [tokens.squeeze(0)]
        stacked = torch.stack([layer for layer in layers])  # (n_layers, n_tokens, dim)
        return stacked.cpu().numpy().astype(np.float32)


ADAPTERS = {
    "byola_v2": ByolaV2Adapter,
    "passt_s": PasstSAdapter,
    "beats_iter3plus": BeatsAdapter,
    "stub": lambda spec: StubAdapter("stub", dim=16, n_blocks=1, tokens_per_second=1),
    "stub_ast": lambda spec: StubAdapter("stub_ast", dim=16, n_blocks=12, tokens_per_second=1),
    "stub_tokens": lambda spec: StubAdapter("stub_tokens", dim=8, n_blocks=2, tokens_per_second=4),
}


def build_adapter(spec: ExtractorSpec) -> ModelAdapter:
    spec.validate()
    adapter = ADAPTERS[spec.model_id](spec)
    if spec.layer_capture == "all" and not adapter.supports_all_layers:
        raise ExtractorError(f"{spec.model_id} does not support all-layer capture")
    return adapter
