"""Dataset loaders, synthetic blobs, splitting, class subsetting."""

import struct

import numpy as np
import pytest

from ensyth.data import (
    CIFAR5_CLASSES,
    Dataset,
    SplitSpec,
    load_csv,
    load_idx,
    save_csv,
    split,
    subset_classes,
    synth_blobs,
)
from ensyth.errors import DataError, FormatError
from ensyth.tensor import DenseMatrix


class TestLoadCsv:
    def test_two_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1.0,2.0,0\n3.0,4.0,1\n")
        ds = load_csv(path)
        assert ds.features.shape == (2, 2)
        assert ds.features.data[:, 0].tolist() == [1.0, 2.0]
        assert ds.labels.tolist() == [0, 1]
        assert ds.class_count == 2

    def test_header_skipped(self, tmp_path):
        plain = tmp_path / "a.csv"
        headed = tmp_path / "b.csv"
        plain.write_text("1.0,2.0,0\n3.0,4.0,1\n")
        headed.write_text("f0,f1,label\n1.0,2.0,0\n3.0,4.0,1\n")
        a = load_csv(plain)
        b = load_csv(headed, has_header=True)
        assert a.features == b.features
        assert a.labels.tolist() == b.labels.tolist()

    def test_write_then_read_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(DenseMatrix(rng.normal(size=(3, 7))),
                     rng.integers(0, 4, size=7), 4, name="x")
        path = tmp_path / "rt.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert back.features == ds.features
        assert back.labels.tolist() == ds.labels.tolist()

    def test_ragged_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0,0\n1.0,1\n")
        with pytest.raises(DataError, match="line 2"):
            load_csv(path)

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,x,0\n")
        with pytest.raises(DataError, match="line 1"):
            load_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError):
            load_csv(path)


def _write_idx_pair(tmp_path, images, labels):
    n, rows, cols = images.shape
    img_path = tmp_path / "imgs.idx"
    lab_path = tmp_path / "labs.idx"
    img_path.write_bytes(struct.pack(">IIII", 0x803, n, rows, cols)
                         + images.astype(np.uint8).tobytes())
    lab_path.write_bytes(struct.pack(">II", 0x801, n)
                         + labels.astype(np.uint8).tobytes())
    return img_path, lab_path


class TestLoadIdx:
    def test_hand_built_pair(self, tmp_path):
        images = np.array([[[0, 51], [102, 255]]], dtype=np.uint8)
        labels = np.array([3], dtype=np.uint8)
        ds = load_idx(*_write_idx_pair(tmp_path, images, labels))
        assert ds.features.shape == (4, 1)
        assert ds.features.data[:, 0].tolist() == [0.0, 51 / 255, 102 / 255, 1.0]
        assert ds.labels.tolist() == [3]

    def test_byte_255_scales_to_one(self, tmp_path):
        images = np.full((2, 1, 1), 255, dtype=np.uint8)
        labels = np.array([0, 1], dtype=np.uint8)
        ds = load_idx(*_write_idx_pair(tmp_path, images, labels))
        assert (ds.features.data == 1.0).all()

    def test_bad_magic(self, tmp_path):
        img, lab = _write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8),
                                   np.zeros(1, dtype=np.uint8))
        raw = bytearray(img.read_bytes())
        raw[3] = 0x99
        img.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, _ = _write_idx_pair(tmp_path, np.zeros((2, 2, 2), dtype=np.uint8),
                                 np.zeros(2, dtype=np.uint8))
        lab = tmp_path / "short.idx"
        lab.write_bytes(struct.pack(">II", 0x801, 1) + b"\x00")
        with pytest.raises(FormatError, match="count"):
            load_idx(img, lab)

    def test_truncated_body(self, tmp_path):
        img, lab = _write_idx_pair(tmp_path, np.zeros((1, 2, 2), dtype=np.uint8),
                                   np.zeros(1, dtype=np.uint8))
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(FormatError):
            load_idx(img, lab)


class TestRealIdxFiles:
    def test_fashion_train_set_size(self):
        """Checks the published training-set size when the IDX pair is
        available locally (point ENSYTH_FASHION_DIR at it)."""
        import os
        root = os.environ.get("ENSYTH_FASHION_DIR")
        if not root:
            pytest.skip("ENSYTH_FASHION_DIR not set")
        images = os.path.join(root, "train-images-idx3-ubyte")
        labels = os.path.join(root, "train-labels-idx1-ubyte")
        if not (os.path.exists(images) and os.path.exists(labels)):
            pytest.skip("IDX files not found")
        ds = load_idx(images, labels)
        assert ds.sample_count == 60000
        assert ds.feature_dim == 28 * 28


class TestSynthBlobs:
    def test_deterministic(self):
        a = synth_blobs(seed=5, samples_per_class=10, classes=3, dim=4, spread=1.0)
        b = synth_blobs(seed=5, samples_per_class=10, classes=3, dim=4, spread=1.0)
        assert a.features.data.tobytes() == b.features.data.tobytes()
        assert a.labels.tolist() == b.labels.tolist()

    def test_single_class(self):
        ds = synth_blobs(seed=1, samples_per_class=5, classes=1, dim=3, spread=0.5)
        assert set(ds.labels.tolist()) == {0}

    def test_tiny_spread_sorts_by_nearest_centroid(self):
        ds = synth_blobs(seed=2, samples_per_class=20, classes=4, dim=6,
                         spread=1e-9)
        centroids = np.stack([
            ds.features.data[:, ds.labels == c].mean(axis=1) for c in range(4)
        ])
        dists = ((ds.features.data.T[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assert (np.argmin(dists, axis=1) == ds.labels).all()


class TestSplit:
    def _dataset(self, p=10):
        rng = np.random.default_rng(3)
        return Dataset(DenseMatrix(rng.normal(size=(2, p))),
                       rng.integers(0, 2, size=p), 2, name="d")

    def test_all_train(self):
        ds = self._dataset()
        tr, va, te = split(ds, SplitSpec(1.0, 0.0, 0.0, seed=0))
        assert tr.sample_count == ds.sample_count
        assert va is None and te is None

    def test_floor_arithmetic(self):
        ds = self._dataset(10)
        tr, va, te = split(ds, SplitSpec(0.8, 0.1, 0.1, seed=0))
        assert (tr.sample_count, va.sample_count, te.sample_count) == (8, 1, 1)

    def test_union_is_original_multiset(self):
        ds = self._dataset(23)
        tr, va, te = split(ds, SplitSpec(0.6, 0.2, 0.2, seed=9))
        columns = []
        for part in (tr, va, te):
            columns.extend(map(tuple, part.features.data.T))
        assert sorted(columns) == sorted(map(tuple, ds.features.data.T))

    def test_reproducible(self):
        ds = self._dataset(17)
        a = split(ds, SplitSpec(0.5, 0.25, 0.25, seed=4))
        b = split(ds, SplitSpec(0.5, 0.25, 0.25, seed=4))
        for pa, pb in zip(a, b):
            assert pa.features.data.tobytes() == pb.features.data.tobytes()

    def test_empty_train_rejected(self):
        spec = SplitSpec(0.05, 0.45, 0.5, seed=0)
        with pytest.raises(ValueError, match="train split is empty"):
            split(self._dataset(10), spec)

    def test_fractions_validated(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.2, 0.2, seed=0)
        with pytest.raises(ValueError):
            SplitSpec(0.0, 0.5, 0.5, seed=0)


class TestSubsetClasses:
    def _ten_class_fixture(self, per_class=60):
        rng = np.random.default_rng(8)
        p = per_class * 10
        labels = np.repeat(np.arange(10), per_class)
        return Dataset(DenseMatrix(rng.normal(size=(2, p))), labels, 10, name="c10")

    def test_keep_all_is_identity_up_to_label_map(self):
        ds = self._ten_class_fixture(per_class=5)
        sub = subset_classes(ds, list(range(10)))
        assert sub.features == ds.features
        assert sub.labels.tolist() == ds.labels.tolist()

    def test_five_animal_classes(self):
        ds = self._ten_class_fixture(per_class=60)
        sub = subset_classes(ds, CIFAR5_CLASSES)
        assert sub.sample_count == 60 * 5
        assert sub.class_count == 5
        assert set(sub.labels.tolist()) == set(range(5))

    def test_singleton_remap(self):
        ds = self._ten_class_fixture(per_class=4)
        sub = subset_classes(ds, [7])
        assert set(sub.labels.tolist()) == {0}
        assert sub.sample_count == 4

    def test_features_preserved_exactly(self):
        ds = self._ten_class_fixture(per_class=3)
        sub = subset_classes(ds, [2, 3])
        mask = np.isin(ds.labels, [2, 3])
        assert sub.features.data.tobytes() == \
            np.ascontiguousarray(ds.features.data[:, mask]).tobytes()

    def test_empty_keep_rejected(self):
        with pytest.raises(ValueError):
            subset_classes(self._ten_class_fixture(2), [])
