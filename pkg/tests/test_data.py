import numpy as np
import pytest

from litdistill.data import (
    RECORD_BYTES,
    ColorBlurTransform,
    classification_splits,
    gen_synthetic_classification,
    gen_synthetic_translation,
    load_dataset,
    load_small_image_binary,
    save_dataset,
)
from litdistill.netgraph import FormatError


def test_classification_deterministic():
    a = gen_synthetic_classification(4, per_class=20)
    b = gen_synthetic_classification(4, per_class=20)
    assert a.inputs.tobytes() == b.inputs.tobytes()
    assert a.targets.tobytes() == b.targets.tobytes()
    c = gen_synthetic_classification(5, per_class=20)
    assert a.inputs.tobytes() != c.inputs.tobytes()


def test_classification_counts():
    ds = gen_synthetic_classification(0, classes=10, per_class=100)
    assert len(ds) == 1000
    np.testing.assert_array_equal(np.bincount(ds.targets), np.full(10, 100))
    assert ds.inputs.shape == (1000, 3, 16, 16)
    assert ds.targets.min() >= 0 and ds.targets.max() < 10


def test_classification_normalized():
    ds = gen_synthetic_classification(1, per_class=50)
    np.testing.assert_allclose(ds.inputs.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(ds.inputs.std(axis=(0, 2, 3)), 1, atol=1e-4)


def test_class_means_are_not_linearly_informative():
    # per-class mean images are nearly equal, so a linear model on raw pixels has little to use
    ds = gen_synthetic_classification(2, per_class=200)
    means = np.stack([ds.inputs[ds.targets == c].mean(axis=0) for c in range(10)])
    spread = np.abs(means - means.mean(axis=0)).mean()
    assert spread < 0.1 * ds.inputs.std()


def test_preconditions():
    with pytest.raises(ValueError):
        gen_synthetic_classification(0, classes=1)
    with pytest.raises(ValueError):
        gen_synthetic_classification(0, size=4)
    with pytest.raises(ValueError):
        gen_synthetic_translation(0, size=4)


def test_splits_partition():
    s = classification_splits(seed=3, train=300, val=40, test=60)
    assert (len(s.train), len(s.val), len(s.test)) == (300, 40, 60)
    assert (s.train.split, s.val.split, s.test.split) == ("train", "val", "test")
    again = classification_splits(seed=3, train=300, val=40, test=60)
    assert again.val.inputs.tobytes() == s.val.inputs.tobytes()


def test_translation_pairs():
    a = gen_synthetic_translation(3, size=8, n=20)
    b = gen_synthetic_translation(3, size=8, n=20)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.targets.tobytes() == b.targets.tobytes()
    assert a.inputs.shape == a.targets.shape == (20, 3, 8, 8)
    assert a.class_count is None


def test_translation_map_not_idempotent():
    f = ColorBlurTransform(0)
    x = np.random.default_rng(0).normal(size=(4, 3, 8, 8))
    once = f(x)
    assert np.max(np.abs(f(once) - once)) > 1e-2


def test_normalization_round_trip():
    ds = gen_synthetic_classification(0, per_class=10)
    raw = ds.denormalize(ds.inputs.astype(np.float64))
    np.testing.assert_allclose(ds.normalize(raw), ds.inputs, atol=1e-6)


def test_batches_order_depends_on_epoch():
    ds = gen_synthetic_classification(0, per_class=5)
    e0 = [y.tolist() for _, y in ds.batches(8, seed=1, epoch=0)]
    e0b = [y.tolist() for _, y in ds.batches(8, seed=1, epoch=0)]
    e1 = [y.tolist() for _, y in ds.batches(8, seed=1, epoch=1)]
    assert e0 == e0b and e0 != e1
    assert sum(len(b) for b in e0) == len(ds)


# ----------------------------------------------------------------------------- binary reader


def _records(n, rng, bad_label_at=None):
    out = bytearray()
    for i in range(n):
        label = 12 if i == bad_label_at else int(rng.integers(0, 10))
        out.append(label)
        out += rng.integers(0, 256, size=RECORD_BYTES - 1, dtype=np.uint8).tobytes()
    return bytes(out)


def test_binary_reader_parses_records(tmp_path):
    rng = np.random.default_rng(0)
    raw = _records(5, rng)
    path = tmp_path / "batch.bin"
    path.write_bytes(raw)
    ds = load_small_image_binary(path)
    assert len(ds) == 5 and ds.inputs.shape == (5, 3, 32, 32)
    assert ds.targets.tolist() == [raw[i * RECORD_BYTES] for i in range(5)]
    # channel-major layout: the second pixel byte is red channel, row 0, column 1
    first = np.frombuffer(raw[1:RECORD_BYTES], dtype=np.uint8).reshape(3, 32, 32) / 255.0
    np.testing.assert_allclose(ds.denormalize(ds.inputs[:1].astype(np.float64))[0], first, atol=1e-6)
    assert len(load_small_image_binary(path, limit=3)) == 3
    assert len(load_small_image_binary(path, limit=50)) == 5


def test_binary_reader_limit_zero(tmp_path):
    path = tmp_path / "b.bin"
    path.write_bytes(_records(2, np.random.default_rng(1)))
    assert len(load_small_image_binary(path, limit=0)) == 0


def test_binary_reader_truncated(tmp_path):
    path = tmp_path / "b.bin"
    path.write_bytes(_records(3, np.random.default_rng(1))[:-10])
    with pytest.raises(FormatError, match=f"offset {2 * RECORD_BYTES}"):
        load_small_image_binary(path)


def test_binary_reader_bad_label(tmp_path):
    path = tmp_path / "b.bin"
    path.write_bytes(_records(3, np.random.default_rng(1), bad_label_at=1))
    with pytest.raises(FormatError, match=f"offset {RECORD_BYTES}"):
        load_small_image_binary(path)


def test_dataset_cache_round_trip(tmp_path):
    ds = gen_synthetic_classification(0, per_class=3)
    save_dataset(ds, tmp_path / "d")
    back = load_dataset(tmp_path / "d")
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    np.testing.assert_array_equal(back.targets, ds.targets)
    assert back.class_count == 10
