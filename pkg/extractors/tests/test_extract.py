import json

import numpy as np
import pytest

from tsextract import adapters, audio, extract, tseb

from conftest import sine_clip


def make_clip(seconds, rate=16000, freq=330, clip_id="c"):
    return audio.AudioClip(samples=sine_clip(freq, seconds, rate=rate), sample_rate=rate, clip_id=clip_id)


def spec_for(model="stub", ts=1.0, **kwargs):
    return adapters.ExtractorSpec(model_id=model, ts_seconds=ts, **kwargs).validate()


# --- segmentation ---------------------------------------------------------------


def test_expected_segments_matches_formula():
    assert extract.expected_segments(160000, 16000, 1.0) == 10
    assert extract.expected_segments(80000, 16000, 10.0) == 0
    assert extract.expected_segments(160000, 16000, 0.1) == 100


def test_extract_clip_step_count():
    clip = make_clip(2.5)
    tensor = extract.extract_clip(clip, spec_for(ts=1.0))
    assert tensor.shape == (1, 2, 16)  # 2 whole segments, tail dropped


def test_extract_clip_ten_seconds_at_one_second_support():
    clip = make_clip(10.0)
    tensor = extract.extract_clip(clip, spec_for(ts=1.0))
    assert tensor.shape[1] == 10


def test_extract_clip_too_short_raises():
    clip = make_clip(5.0)
    with pytest.raises(adapters.ExtractorError, match="shorter than one"):
        extract.extract_clip(clip, spec_for(ts=10.0))


def test_extract_clip_pad_short_opt_in():
    clip = make_clip(0.4)
    tensor = extract.extract_clip(clip, spec_for(ts=1.0, pad_short=True))
    assert tensor.shape == (1, 1, 16)


def test_extract_clip_resamples_to_adapter_rate():
    clip = make_clip(2.0, rate=32000)
    tensor = extract.extract_clip(clip, spec_for(ts=1.0))  # stub runs at 16 kHz
    assert tensor.shape == (1, 2, 16)


def test_extract_clip_deterministic():
    clip = make_clip(3.0)
    a = extract.extract_clip(clip, spec_for(ts=1.0))
    b = extract.extract_clip(clip, spec_for(ts=1.0))
    assert a.tobytes() == b.tobytes()


def test_extract_clip_all_layers_stub_ast():
    clip = make_clip(2.0)
    tensor = extract.extract_clip(clip, spec_for(model="stub_ast", ts=1.0, layer_capture="all"))
    assert tensor.shape == (12, 2, 16)
    # layers must differ (distinct per-block projections)
    assert np.abs(tensor[0] - tensor[11]).max() > 0


def test_extract_clip_token_unrolling():
    clip = make_clip(2.0)
    tensor = extract.extract_clip(clip, spec_for(model="stub_tokens", ts=1.0))
    # 2 segments x 4 tokens/second unroll to 8 steps
    assert tensor.shape == (1, 8, 8)


def test_all_layer_capture_rejected_for_cnn_adapter():
    spec = adapters.ExtractorSpec(model_id="byola_v2", ts_seconds=1.0, layer_capture="all")
    with pytest.raises(adapters.ExtractorError):
        adapters.build_adapter(spec)


def test_pretrained_adapters_fail_cleanly_without_upstream():
    spec = adapters.ExtractorSpec(model_id="passt_s", ts_seconds=1.0)
    with pytest.raises(adapters.ExtractorUnavailable):
        adapters.build_adapter(spec)
    spec = adapters.ExtractorSpec(model_id="beats_iter3plus", ts_seconds=1.0, checkpoint_path="/nope.pt")
    with pytest.raises(adapters.ExtractorUnavailable):
        adapters.build_adapter(spec)


# --- dataset extraction ------------------------------------------------------------


def test_extract_dataset_layout(wav_dataset, tmp_path):
    audio_dir, labels_path = wav_dataset
    out = tmp_path / "out"
    manifest, skipped = extract.extract_dataset(audio_dir, labels_path, spec_for(ts=1.0), out)
    assert len(manifest["clips"]) == 6
    assert [s[1] for s in skipped] == ["no label entry"]  # the stray file
    assert (out / "manifest.json").exists()
    for entry in manifest["clips"]:
        path = out / entry["embedding_path"]
        assert path.exists()
        n_layers, n_steps, dim = tseb.read_header(path)
        assert (n_layers, dim) == (1, 16)
        assert n_steps == int(entry["duration_s"])  # ts=1 s, 1 token/segment


def test_extract_dataset_resume_skips_existing(wav_dataset, tmp_path):
    audio_dir, labels_path = wav_dataset
    out = tmp_path / "out"
    extract.extract_dataset(audio_dir, labels_path, spec_for(ts=1.0), out)
    before = {p.name: p.stat().st_mtime_ns for p in (out / "emb").iterdir()}
    manifest, _ = extract.extract_dataset(audio_dir, labels_path, spec_for(ts=1.0), out)
    after = {p.name: p.stat().st_mtime_ns for p in (out / "emb").iterdir()}
    assert before == after  # nothing rewritten
    assert len(manifest["clips"]) == 6


def test_extract_dataset_short_clip_listed_not_fatal(wav_dataset, tmp_path):
    audio_dir, labels_path = wav_dataset
    out = tmp_path / "out"
    manifest, skipped = extract.extract_dataset(audio_dir, labels_path, spec_for(ts=3.0), out)
    # the 2.0s and 2.5s clips cannot fill a 3s segment
    short = [s for s in skipped if "shorter than one" in s[1]]
    assert len(short) == 2
    assert len(manifest["clips"]) == 4


def test_extract_dataset_unreadable_file_listed(wav_dataset, tmp_path):
    audio_dir, labels_path = wav_dataset
    (audio_dir / "clip_0.wav").write_bytes(b"not audio at all")
    out = tmp_path / "out"
    manifest, skipped = extract.extract_dataset(audio_dir, labels_path, spec_for(ts=1.0), out)
    reasons = {s[0].split("/")[-1]: s[1] for s in skipped}
    assert "unreadable" in reasons["clip_0.wav"]
    assert len(manifest["clips"]) == 5


def test_labels_file_validation(tmp_path, wav_dataset):
    audio_dir, _ = wav_dataset
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": "multiclass"}))
    with pytest.raises(adapters.ExtractorError, match="missing key"):
        extract.extract_dataset(audio_dir, bad, spec_for(), tmp_path / "o")


# --- TSEB writer ----------------------------------------------------------------------


def test_tseb_writer_byte_layout(tmp_path):
    data = np.arange(8, dtype=np.float32).reshape(1, 2, 4)
    path = tmp_path / "t.tseb"
    tseb.write_tensor(path, data)
    raw = path.read_bytes()
    assert raw[:4] == b"TSEB"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 1
    assert int.from_bytes(raw[12:16], "little") == 2
    assert int.from_bytes(raw[16:20], "little") == 4
    assert np.frombuffer(raw[20:], dtype="<f4").tolist() == list(range(8))


def test_tseb_writer_rejects_bad_input(tmp_path):
    with pytest.raises(tseb.TsebWriteError):
        tseb.write_tensor(tmp_path / "x.tseb", np.zeros((2, 2), dtype=np.float32))
    with pytest.raises(tseb.TsebWriteError):
        tseb.write_tensor(tmp_path / "x.tseb", np.full((1, 1, 2), np.nan, dtype=np.float32))
