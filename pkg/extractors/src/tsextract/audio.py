"""Audio loading and resampling for the extraction pipeline.

WAV files are read with scipy (PCM and float encodings); FLAC needs the
optional soundfile package. Everything is converted to mono float32 in
[-1, 1]. Resampling uses scipy's polyphase filter (resample_poly with its
default Kaiser window), a documented high-quality setting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

AUDIO_SUFFIXES = (".wav", ".flac")


class AudioError(ValueError):
    pass


@dataclass
class AudioClip:
    """Mono waveform plus bookkeeping; samples are float32 in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    clip_id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise AudioError(f"clip {self.clip_id}: expected mono samples, got shape {self.samples.shape}")
        if self.samples.size < 1:
            raise AudioError(f"clip {self.clip_id}: empty waveform")
        if self.sample_rate <= 0:
            raise AudioError(f"clip {self.clip_id}: bad sample rate {self.sample_rate}")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def _to_float_mono(data: np.ndarray) -> np.ndarray:
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        scale = float(max(abs(info.min), info.max))
        data = data.astype(np.float32) / scale
    if data.ndim == 2:
        data = data.mean(axis=1)
    return data.astype(np.float32)


def load_audio(path: str | Path, clip_id: str | None = None) -> AudioClip:
    path = Path(path)
    if clip_id is None:
        clip_id = path.stem
    suffix = path.suffix.lower()
    if suffix == ".wav":
        rate, data = wavfile.read(path)
    elif suffix == ".flac":
        try:
            import soundfile
        except ImportError as exc:
            raise AudioError(
                f"{path}: reading FLAC needs the optional 'soundfile' package"
            ) from exc
        data, rate = soundfile.read(path, always_2d=False)
    else:
        raise AudioError(f"{path}: unsupported audio suffix {suffix!r}")
    return AudioClip(samples=_to_float_mono(np.asarray(data)), sample_rate=int(rate), clip_id=clip_id)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase resampling to the model's native rate; identity when rates match."""
    if target_rate <= 0:
        raise AudioError(f"bad target rate {target_rate}")
    if clip.sample_rate == target_rate:
        return clip
    g = math.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    samples = resample_poly(clip.samples.astype(np.float64), up, down).astype(np.float32)
    return AudioClip(samples=samples, sample_rate=target_rate, clip_id=clip.clip_id)


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int) -> None:
    """PCM16 writer, used by tests and fixtures."""
    scaled = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sample_rate, (scaled * 32767.0).astype(np.int16))
