"""tsextract: frozen-model embedding extraction at configurable temporal support."""

from .adapters import (
    ADAPTERS,
    ExtractorError,
    ExtractorSpec,
    ExtractorUnavailable,
    ModelAdapter,
    StubAdapter,
    TorchBlockCapture,
    build_adapter,
)
from .audio import AudioClip, load_audio, resample, write_wav
from .extract import expected_segments, extract_clip, extract_dataset
from .tseb import read_header, write_tensor

__version__ = "0.1.0"
