import json

import numpy as np
import pytest

from tsextract import audio


def sine_clip(freq, seconds, rate=16000, amplitude=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return (amplitude * np.sin(2 * np.pi * freq * t)).astype(np.float32)


@pytest.fixture
def wav_dataset(tmp_path):
    """Six labelled wav clips (two classes by sine frequency) plus one
    unlabelled stray file."""
    audio_dir = tmp_path / "audio"
    audio_dir.mkdir()
    entries = {}
    for i in range(6):
        cls = i % 2
        clip_id = f"clip_{i}"
        # classes differ in frequency and amplitude so the stub's waveform
        # statistics separate them cleanly
        wave = sine_clip(freq=220 * (cls + 1), seconds=2.0 + i * 0.5, amplitude=0.5 - 0.3 * cls)
        audio.write_wav(audio_dir / f"{clip_id}.wav", wave, 16000)
        labels = [0, 0]
        labels[cls] = 1
        entries[clip_id] = {"labels": labels, "split": "test" if i >= 4 else "train"}
    audio.write_wav(audio_dir / "stray.wav", sine_clip(100, 1.0), 16000)

    labels_path = tmp_path / "labels.json"
    labels_path.write_text(
        json.dumps({"task": "multiclass", "class_names": ["low", "high"], "clips": entries})
    )
    return audio_dir, labels_path
