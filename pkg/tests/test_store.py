import json
import struct

import numpy as np
import pytest

from tsprobe import store


def make_tensor(rng, n_layers, n_steps, dim):
    return store.EmbeddingTensor(rng.standard_normal((n_layers, n_steps, dim)).astype(np.float32))


def make_clips(n, n_classes=3, split="train", folds=None):
    clips = []
    for i in range(n):
        labels = np.zeros(n_classes, dtype=np.int8)
        labels[i % n_classes] = 1
        clips.append(
            store.ClipRecord(
                clip_id=f"c{i:04d}",
                labels=labels,
                observed_mask=np.ones(n_classes, dtype=np.int8),
                split=split,
                fold=None if folds is None else folds[i],
                embedding_path=f"emb/c{i:04d}.tseb",
                duration_s=10.0,
            )
        )
    return clips


def make_manifest(clips, task="multiclass", n_classes=3, ts=1.0, n_layers=1, dim=4):
    return store.DatasetManifest(
        task=task,
        class_names=[f"k{i}" for i in range(n_classes)],
        clips=clips,
        embedding_meta=store.EmbeddingMeta(model_id="m", ts_seconds=ts, n_layers=n_layers, dim=dim),
    )


# --- segment_count ------------------------------------------------------------


def test_segment_count_ten_second_clip_one_second_support():
    assert store.segment_count(160000, 16000, 1.0) == 10


def test_segment_count_whole_clip_segment():
    assert store.segment_count(160000, 16000, 10.0) == 1


def test_segment_count_clip_shorter_than_segment():
    assert store.segment_count(80000, 16000, 10.0) == 0


def test_segment_count_fp_noise_in_segment_length():
    # 0.1 * 16000 is not exactly 1600 in binary; the floor must still be 100
    assert store.segment_count(160000, 16000, 0.1) == 100


def test_segment_count_rejects_bad_args():
    with pytest.raises(ValueError):
        store.segment_count(0, 16000, 1.0)
    with pytest.raises(ValueError):
        store.segment_count(100, 0, 1.0)
    with pytest.raises(ValueError):
        store.segment_count(100, 16000, 0.0)


def test_segment_count_monotonicity():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 10**6))
        sr = float(rng.integers(1000, 48000))
        ts_a = float(rng.uniform(0.1, 10.0))
        ts_b = ts_a + float(rng.uniform(0.0, 5.0))
        assert store.segment_count(n, sr, ts_b) <= store.segment_count(n, sr, ts_a)
        assert store.segment_count(n + int(rng.integers(0, 1000)), sr, ts_a) >= store.segment_count(n, sr, ts_a)


# --- TSEB read/write ----------------------------------------------------------


def test_write_size_arithmetic(tmp_path):
    t = store.EmbeddingTensor(np.zeros((1, 1, 4), dtype=np.float32))
    path = tmp_path / "t.tseb"
    store.write_embedding(t, path)
    assert path.stat().st_size == 36  # 20-byte header + 16 payload bytes


def test_round_trip_bit_exact_random_shapes(tmp_path):
    rng = np.random.default_rng(1)
    for i in range(25):
        shape = (int(rng.integers(1, 9)), int(rng.integers(1, 65)), int(rng.integers(1, 513)))
        t = make_tensor(rng, *shape)
        path = tmp_path / f"t{i}.tseb"
        store.write_embedding(t, path)
        back = store.read_embedding(path)
        assert back.data.shape == t.data.shape
        assert back.data.tobytes() == t.data.tobytes()


def test_write_deterministic_bytes(tmp_path):
    rng = np.random.default_rng(2)
    t = make_tensor(rng, 2, 3, 5)
    a, b = tmp_path / "a.tseb", tmp_path / "b.tseb"
    store.write_embedding(t, a)
    store.write_embedding(t, b)
    assert a.read_bytes() == b.read_bytes()


def test_write_rejects_nan_without_creating_file(tmp_path):
    t = store.EmbeddingTensor(np.zeros((1, 2, 2), dtype=np.float32))
    t.data[0, 0, 0] = np.nan  # bypasses construction-time validation
    path = tmp_path / "bad.tseb"
    with pytest.raises(store.NonFiniteDataError):
        store.write_embedding(t, path)
    assert not path.exists()


def test_tensor_constructor_rejects_nonfinite():
    with pytest.raises(store.NonFiniteDataError):
        store.EmbeddingTensor(np.array([[[np.inf]]], dtype=np.float32))


def test_read_bad_magic(tmp_path):
    path = tmp_path / "x.tseb"
    path.write_bytes(b"XXXX" + struct.pack("<IIII", 1, 1, 1, 1) + b"\x00" * 4)
    with pytest.raises(store.TsebBadMagic):
        store.read_embedding(path)


def test_read_bad_version(tmp_path):
    path = tmp_path / "x.tseb"
    path.write_bytes(b"TSEB" + struct.pack("<IIII", 2, 1, 1, 1) + b"\x00" * 4)
    with pytest.raises(store.TsebBadVersion):
        store.read_embedding(path)


def test_read_truncated_payload(tmp_path):
    # header says 2x3x4 floats = 96 bytes, file carries 90
    path = tmp_path / "x.tseb"
    path.write_bytes(b"TSEB" + struct.pack("<IIII", 1, 2, 3, 4) + b"\x00" * 90)
    with pytest.raises(store.TsebTruncated):
        store.read_embedding(path)


def test_read_nonfinite_payload(tmp_path):
    path = tmp_path / "x.tseb"
    payload = np.array([np.inf, 0.0], dtype="<f4").tobytes()
    path.write_bytes(b"TSEB" + struct.pack("<IIII", 1, 1, 1, 2) + payload)
    with pytest.raises(store.NonFiniteDataError):
        store.read_embedding(path)


def test_read_header_only(tmp_path):
    rng = np.random.default_rng(3)
    t = make_tensor(rng, 3, 4, 5)
    path = tmp_path / "t.tseb"
    store.write_embedding(t, path)
    assert store.read_embedding_header(path) == (3, 4, 5)


# --- carve_validation ---------------------------------------------------------


def test_carve_cardinality_and_determinism():
    manifest = make_manifest(make_clips(100))
    a_train, a_valid = store.carve_validation(manifest, 0.15, seed=0)
    b_train, b_valid = store.carve_validation(manifest, 0.15, seed=0)
    assert len(a_train) == 85 and len(a_valid) == 15
    assert [c.clip_id for c in a_train] == [c.clip_id for c in b_train]
    assert [c.clip_id for c in a_valid] == [c.clip_id for c in b_valid]


def test_carve_rounding():
    manifest = make_manifest(make_clips(10))
    train, valid = store.carve_validation(manifest, 0.30, seed=0)
    assert len(train) == 7 and len(valid) == 3


def test_carve_seeds_differ():
    # oracle: run both seeds and compare membership directly
    manifest = make_manifest(make_clips(40))
    _, valid0 = store.carve_validation(manifest, 0.30, seed=0)
    _, valid1 = store.carve_validation(manifest, 0.30, seed=1)
    assert {c.clip_id for c in valid0} != {c.clip_id for c in valid1}


def test_carve_partition_property():
    manifest = make_manifest(make_clips(33))
    all_ids = {c.clip_id for c in manifest.clips}
    for seed in range(10):
        train, valid = store.carve_validation(manifest, 0.25, seed=seed)
        train_ids = {c.clip_id for c in train}
        valid_ids = {c.clip_id for c in valid}
        assert train_ids | valid_ids == all_ids
        assert not (train_ids & valid_ids)


def test_carve_rejects_bad_fraction_and_empty_split():
    manifest = make_manifest(make_clips(10))
    with pytest.raises(ValueError):
        store.carve_validation(manifest, 0.0, seed=0)
    empty = make_manifest(make_clips(5, split="test"))
    with pytest.raises(store.ManifestError):
        store.carve_validation(empty, 0.2, seed=0)


# --- fold_splits ---------------------------------------------------------------


def test_fold_splits_one_indexed_convention():
    # 2000 clips carrying fold labels 1..5 -> five 1600/400 pairs
    folds = [(i % 5) + 1 for i in range(2000)]
    manifest = make_manifest(make_clips(2000, folds=folds))
    pairs = store.fold_splits(manifest, 5)
    assert len(pairs) == 5
    for train, test in pairs:
        assert len(train) == 1600 and len(test) == 400
    tested = [c.clip_id for _, test in pairs for c in test]
    assert sorted(tested) == sorted(c.clip_id for c in manifest.clips)
    assert len(set(tested)) == 2000


def test_fold_splits_alternating_two_folds():
    folds = [i % 2 for i in range(40)]
    manifest = make_manifest(make_clips(40, folds=folds))
    pairs = store.fold_splits(manifest, 2)
    assert all(len(train) == 20 and len(test) == 20 for train, test in pairs)


def test_fold_splits_round_robin_when_unassigned():
    manifest = make_manifest(make_clips(10))
    pairs = store.fold_splits(manifest, 5)
    assert all(len(test) == 2 for _, test in pairs)
    tested = [c.clip_id for _, test in pairs for c in test]
    assert sorted(tested) == sorted(c.clip_id for c in manifest.clips)


def test_fold_splits_rejects_bad_inputs():
    manifest = make_manifest(make_clips(10))
    with pytest.raises(ValueError):
        store.fold_splits(manifest, 1)
    stray = make_manifest(make_clips(10, folds=[0, 1, 2, 3, 7, 0, 1, 2, 3, 4]))
    with pytest.raises(store.ManifestError):
        store.fold_splits(stray, 5)
    degenerate = make_manifest(make_clips(10, folds=[1] * 10))
    with pytest.raises(store.ManifestError):
        store.fold_splits(degenerate, 5)


# --- manifests -----------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    emb_dir = tmp_path / "emb"
    emb_dir.mkdir()
    clips = make_clips(6)
    for clip in clips:
        path = emb_dir / f"{clip.clip_id}.tseb"
        store.write_embedding(make_tensor(rng, 1, 2, 4), path)
        clip.embedding_path = str(path)
    manifest = make_manifest(clips)
    mpath = tmp_path / "manifest.json"
    store.save_manifest(manifest, mpath)

    doc = json.loads(mpath.read_text())
    assert doc["clips"][0]["embedding_path"] == "emb/c0000.tseb"  # stored relative

    loaded = store.load_manifest(mpath)
    assert loaded.task == manifest.task
    assert loaded.class_names == manifest.class_names
    assert [c.clip_id for c in loaded.clips] == [c.clip_id for c in manifest.clips]
    store.validate_manifest(loaded)


def test_validate_manifest_catches_dim_mismatch(tmp_path):
    rng = np.random.default_rng(5)
    clips = make_clips(1)
    path = tmp_path / "c.tseb"
    store.write_embedding(make_tensor(rng, 1, 2, 8), path)  # dim 8, meta says 4
    clips[0].embedding_path = str(path)
    manifest = make_manifest(clips, dim=4)
    with pytest.raises(store.ManifestError, match="disagree"):
        store.validate_manifest(manifest)


def test_validate_manifest_catches_missing_file():
    manifest = make_manifest(make_clips(1))
    with pytest.raises(store.ManifestError, match="not found"):
        store.validate_manifest(manifest)


def test_validate_manifest_multiclass_constraints():
    clips = make_clips(2)
    clips[0].labels = np.array([1, 1, 0], dtype=np.int8)
    manifest = make_manifest(clips)
    with pytest.raises(store.ManifestError, match="exactly one"):
        store.validate_manifest(manifest, check_files=False)


def test_usable_clips_warns_and_drops_short():
    clips = make_clips(4)
    clips[0].duration_s = 0.5
    manifest = make_manifest(clips, ts=1.0)
    with pytest.warns(UserWarning, match="excluded 1"):
        kept = store.usable_clips(manifest)
    assert len(kept) == 3
