import shutil

import numpy as np
import pytest

from harnet.data import (
    CHANNELS, CLASS_NAMES, N_FEATURES, Split, batches, channel_stats, epoch_order, load_dataset,
    model_layout, normalize_windows, subject_split,
)
from harnet.errors import AlignmentError, CorruptDataError, DegenerateChannelError, IngestError
from harnet.tensor import Tensor


def copy_fixture(src, tmp_path):
    dst = tmp_path / "release"
    shutil.copytree(src, dst)
    return dst


def test_fixture_loads(mini):
    assert len(mini.train) == 30 and len(mini.test) == 20
    ex = mini.train[0]
    assert ex.window.shape == (128, 9) and ex.features.shape == (N_FEATURES,)
    assert 0 <= ex.label <= 5 and 1 <= ex.subject <= 30
    assert sum(mini.test.class_counts()) == len(mini.test)
    assert not set(mini.train.subjects) & set(mini.test.subjects)
    assert mini.checksum and not mini.normalized


def test_label_mapping_and_channel_order():
    assert CLASS_NAMES == ("Walking", "Walking Upstairs", "Walking Downstairs", "Sitting", "Standing", "Laying")
    assert CHANNELS[:3] == ("body_acc_x", "body_acc_y", "body_acc_z")
    assert CHANNELS[6:] == ("total_acc_x", "total_acc_y", "total_acc_z")


def test_rows_are_aligned_by_line(fixture_root, mini):
    y = np.loadtxt(fixture_root / "train" / "y_train.txt", dtype=int)
    sig = np.loadtxt(fixture_root / "train" / "Inertial Signals" / "body_gyro_y_train.txt")
    assert np.array_equal(mini.train.labels, y - 1)
    assert np.array_equal(mini.train.windows[:, :, CHANNELS.index("body_gyro_y")], sig)


def test_checksum_is_deterministic(fixture_root, mini):
    assert load_dataset(fixture_root).checksum == mini.checksum


def test_truncated_signal_file_is_alignment_error(fixture_root, tmp_path):
    root = copy_fixture(fixture_root, tmp_path)
    path = root / "test" / "Inertial Signals" / "total_acc_z_test.txt"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(AlignmentError, match="total_acc_z_test"):
        load_dataset(root)


def test_missing_file_names_path(fixture_root, tmp_path):
    root = copy_fixture(fixture_root, tmp_path)
    (root / "train" / "subject_train.txt").unlink()
    with pytest.raises(IngestError, match="subject_train.txt"):
        load_dataset(root)
    with pytest.raises(IngestError):
        load_dataset(tmp_path / "nowhere")


@pytest.mark.parametrize("bad", ["7", "0"])
def test_label_out_of_range_is_corrupt(fixture_root, tmp_path, bad):
    root = copy_fixture(fixture_root, tmp_path)
    path = root / "train" / "y_train.txt"
    lines = path.read_text().splitlines()
    lines[3] = bad
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptDataError):
        load_dataset(root)


def test_feature_outside_unit_range_is_corrupt(fixture_root, tmp_path):
    root = copy_fixture(fixture_root, tmp_path)
    path = root / "test" / "X_test.txt"
    lines = path.read_text().splitlines()
    lines[0] = " 1.5" + lines[0][lines[0].index(" ", 1):]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(CorruptDataError, match=r"\[-1, 1\]"):
        load_dataset(root)


def test_normalization(mini):
    ds = normalize_windows(mini)
    flat = ds.train.windows.reshape(-1, 9)
    assert np.all(np.abs(flat.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(flat.std(axis=0) - 1.0) < 1e-9)
    assert ds.normalized
    # test split reuses train statistics, so its mean is not forced to zero
    assert np.any(np.abs(ds.test.windows.reshape(-1, 9).mean(axis=0)) > 1e-6)
    with pytest.raises(ValueError):
        normalize_windows(ds)


def test_constant_channel_is_degenerate(mini):
    from dataclasses import replace

    w = mini.train.windows.copy()
    w[:, :, 4] = 0.25
    train = replace(mini.train, windows=w)
    ds = replace(mini, train=train, channel_stats=channel_stats(train))
    with pytest.raises(DegenerateChannelError, match="body_gyro_y"):
        normalize_windows(ds)


def _fake_split(n):
    rng = np.random.default_rng(0)
    return Split(
        rng.standard_normal((n, 128, 9)).astype(np.float32).astype(np.float64),
        rng.uniform(-1, 1, (n, 3)),
        rng.integers(0, 6, n),
        rng.integers(1, 31, n),
    )


def test_batches_cover_official_train_size():
    split = _fake_split(7352)
    sizes, seen = [], []
    for b in batches(split, 64, seed=3):
        sizes.append(len(b.labels))
        seen.append(b.indices)
    assert len(sizes) == 115 and sizes[-1] == 56 and set(sizes[:-1]) == {64}
    assert np.array_equal(np.sort(np.concatenate(seen)), np.arange(7352))


def test_batches_layout_and_determinism():
    split = _fake_split(40)
    first = list(batches(split, 16, seed=9))
    again = list(batches(split, 16, seed=9))
    other = list(batches(split, 16, seed=10))
    assert all(np.array_equal(a.indices, b.indices) for a, b in zip(first, again))
    assert not all(np.array_equal(a.indices, b.indices) for a, b in zip(first, other))
    b = first[0]
    assert isinstance(b.windows, Tensor) and b.windows.shape == (16, 9, 1, 128)
    i = int(b.indices[2])
    assert np.array_equal(b.windows.numpy()[2, 5, 0], split.windows[i, :, 5])
    assert np.array_equal(b.features.numpy()[2], split.features[i])
    assert np.array_equal(b.labels, split.labels[b.indices])


def test_batches_with_empty_fusion_block():
    split = _fake_split(10)
    b = next(batches(split, 4, seed=0, fused=np.zeros((10, 0))))
    assert b.features.shape == (4, 0)


def test_epoch_order_varies_by_epoch():
    assert not np.array_equal(epoch_order(50, 1, 0), epoch_order(50, 1, 1))
    assert np.array_equal(epoch_order(50, 1, 2), epoch_order(50, 1, 2))


def test_model_layout():
    w = np.arange(2 * 128 * 9, dtype=float).reshape(2, 128, 9)
    out = model_layout(w)
    assert out.shape == (2, 9, 1, 128)
    assert np.array_equal(out[1, 3, 0], w[1, :, 3])


def test_subject_split_holds_out_whole_subjects(synthetic):
    tr, val = subject_split(synthetic.train, 0.2, seed=4)
    s_tr, s_val = set(synthetic.train.subjects[tr]), set(synthetic.train.subjects[val])
    assert s_val and not s_tr & s_val
    assert len(tr) + len(val) == len(synthetic.train)
    n = len(np.unique(synthetic.train.subjects))
    assert len(s_val) == round(0.2 * n)
    tr0, val0 = subject_split(synthetic.train, 0.0, seed=4)
    assert len(val0) == 0 and len(tr0) == len(synthetic.train)
