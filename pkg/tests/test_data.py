import os
import struct

import numpy as np
import pytest

from fedmark.data import (
    Dataset,
    DirichletNonIID,
    IID,
    PartitionSpec,
    PathologicalNonIID,
    load_fmds,
    load_idx,
    partition,
    resize_to,
    save_fmds,
    synth_dataset,
)
from fedmark.errors import ConfigurationError, FormatError, InputError


def write_idx_pair(tmp_path, images: np.ndarray, labels: np.ndarray,
                   image_magic=0x00000803, label_magic=0x00000801):
    n, h, w = images.shape
    img_path = os.path.join(tmp_path, "images-idx3-ubyte")
    lbl_path = os.path.join(tmp_path, "labels-idx1-ubyte")
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", image_magic, n, h, w))
        f.write(images.astype(np.uint8).tobytes())
    with open(lbl_path, "wb") as f:
        f.write(struct.pack(">II", label_magic, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())
    return img_path, lbl_path


class TestLoadIdx:
    def test_exact_pixels_recovered(self, tmp_path):
        imgs = np.array([[[0, 1], [2, 255]], [[10, 20], [30, 40]]], dtype=np.uint8)
        labels = np.array([3, 7], dtype=np.uint8)
        ip, lp = write_idx_pair(str(tmp_path), imgs, labels)
        ds = load_idx(ip, lp)
        assert len(ds) == 2
        assert ds.image_shape == (2, 2, 1)
        expected = imgs[0].astype(np.float32) / np.float32(255.0)
        np.testing.assert_array_equal(ds.images[0, :, :, 0], expected)
        np.testing.assert_array_equal(ds.labels, [3, 7])

    def test_wrong_image_magic(self, tmp_path):
        imgs = np.zeros((1, 2, 2), dtype=np.uint8)
        ip, lp = write_idx_pair(str(tmp_path), imgs, np.zeros(1), image_magic=0xDEAD)
        with pytest.raises(FormatError) as err:
            load_idx(ip, lp)
        assert err.value.offset == 0

    def test_wrong_label_magic_no_partial_dataset(self, tmp_path):
        imgs = np.zeros((1, 2, 2), dtype=np.uint8)
        ip, lp = write_idx_pair(str(tmp_path), imgs, np.zeros(1), label_magic=0xBEEF)
        with pytest.raises(FormatError):
            load_idx(ip, lp)

    def test_truncated_images(self, tmp_path):
        imgs = np.zeros((4, 3, 3), dtype=np.uint8)
        ip, lp = write_idx_pair(str(tmp_path), imgs, np.zeros(4))
        with open(ip, "r+b") as f:
            f.truncate(16 + 10)  # header + partial pixels
        with pytest.raises(FormatError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        imgs = np.zeros((2, 2, 2), dtype=np.uint8)
        ip, lp = write_idx_pair(str(tmp_path), imgs, np.zeros(2))
        with open(lp, "r+b") as f:
            f.seek(4)
            f.write(struct.pack(">I", 5))
        with pytest.raises(FormatError) as err:
            load_idx(ip, lp)
        assert "labels" in str(err.value)

    @pytest.mark.skipif(
        not os.path.exists("data/train-images-idx3-ubyte"),
        reason="real MNIST files not present in this environment",
    )
    def test_mnist_training_set_size(self):
        ds = load_idx("data/train-images-idx3-ubyte", "data/train-labels-idx1-ubyte")
        assert len(ds) == 60000
        assert ds.image_shape == (28, 28, 1)


class TestResize:
    def test_corners_preserved(self):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.random((3, 28, 28, 1), dtype=np.float32), np.zeros(3, dtype=np.int64), 1)
        out = resize_to(ds, 32, 32)
        for i in range(3):
            for r, c in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
                assert out.images[i, r, c, 0] == ds.images[i, r, c, 0]

    def test_identity(self):
        rng = np.random.default_rng(1)
        ds = Dataset(rng.random((2, 9, 7, 1), dtype=np.float32), np.zeros(2, dtype=np.int64), 1)
        out = resize_to(ds, 9, 7)
        assert np.array_equal(out.images, ds.images)

    def test_constant_image_stays_constant(self):
        ds = Dataset(np.full((1, 5, 5, 1), 0.37, dtype=np.float32), np.zeros(1, dtype=np.int64), 1)
        out = resize_to(ds, 11, 8)
        np.testing.assert_allclose(out.images, 0.37, rtol=1e-6)

    def test_labels_unchanged(self):
        ds = synth_dataset(3, 4, 8, 8, seed=0)
        out = resize_to(ds, 12, 12)
        np.testing.assert_array_equal(out.labels, ds.labels)

    def test_bad_target(self):
        ds = synth_dataset(2, 2, 4, 4, seed=0)
        with pytest.raises(InputError):
            resize_to(ds, 0, 5)


class TestSynth:
    def test_counts(self):
        ds = synth_dataset(10, 100, 8, 8, seed=0)
        assert len(ds) == 1000
        for c in range(10):
            assert (ds.labels == c).sum() == 100

    def test_deterministic(self):
        a = synth_dataset(5, 10, 8, 8, seed=3)
        b = synth_dataset(5, 10, 8, 8, seed=3)
        assert np.array_equal(a.images, b.images)

    def test_splits_share_prototypes_not_samples(self):
        a = synth_dataset(5, 10, 8, 8, seed=3, split=0)
        b = synth_dataset(5, 10, 8, 8, seed=3, split=1)
        assert not np.array_equal(a.images, b.images)

    def test_range(self):
        ds = synth_dataset(4, 20, 8, 8, seed=1)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_learnable_by_lenet_mini(self):
        from fedmark.nn import evaluate, init_model, lenet_mini, train_local

        train = synth_dataset(10, 100, 32, 32, seed=4, split=0)
        test = synth_dataset(10, 20, 32, 32, seed=4, split=1)
        m = init_model(lenet_mini(10), (32, 32, 1), seed=0)
        delta = train_local(m, train, 0.01, 5, 32, seed=1)
        trained = m.with_values(m.values - delta.values)
        assert evaluate(trained, test) >= 0.9


class TestPartition:
    def test_iid_exact_sizes(self):
        ds = synth_dataset(10, 100, 4, 4, seed=0)
        shards = partition(ds, PartitionSpec(IID(), 100, seed=1))
        assert all(c == 10 for c in shards.counts)

    @pytest.mark.parametrize(
        "kind", [IID(), DirichletNonIID(0.5), PathologicalNonIID(2)]
    )
    def test_union_equals_input(self, kind):
        ds = synth_dataset(10, 30, 4, 4, seed=2)
        shards = partition(ds, PartitionSpec(kind, 7, seed=3))
        all_idx = np.sort(np.concatenate(shards.indices))
        np.testing.assert_array_equal(all_idx, np.arange(len(ds)))
        assert sum(shards.counts) == len(ds)

    @pytest.mark.parametrize("seed", range(8))
    def test_pathological_label_bound(self, seed):
        ds = synth_dataset(10, 40, 4, 4, seed=5)
        shards = partition(ds, PartitionSpec(PathologicalNonIID(2), 10, seed=seed))
        for shard in shards.shards:
            assert len(np.unique(shard.labels)) <= 2

    def test_pathological_label_bound_uneven_classes(self):
        # class sizes that do not divide the part count still keep the bound
        rng = np.random.default_rng(0)
        labels = np.concatenate([np.full(37, 0), np.full(11, 1), np.full(52, 2)])
        images = rng.random((100, 4, 4, 1), dtype=np.float32)
        ds = Dataset(images, labels, 3)
        shards = partition(ds, PartitionSpec(PathologicalNonIID(2), 5, seed=9))
        for shard in shards.shards:
            assert len(np.unique(shard.labels)) <= 2

    def test_dirichlet_default_alpha_skews(self):
        ds = synth_dataset(10, 100, 4, 4, seed=1)
        shards = partition(ds, PartitionSpec(DirichletNonIID(0.1), 5, seed=2))
        # strong skew: some client should be far from the global 10% per class
        shares = []
        for shard in shards.shards:
            if len(shard) == 0:
                continue
            hist = np.bincount(shard.labels, minlength=10) / len(shard)
            shares.append(hist.max())
        assert max(shares) > 0.25

    def test_iid_histogram_matches_global(self):
        ds = synth_dataset(10, 500, 4, 4, seed=3)
        shards = partition(ds, PartitionSpec(IID(), 5, seed=4))
        expected = len(ds) / 5 / 10
        for shard in shards.shards:
            hist = np.bincount(shard.labels, minlength=10)
            chi2 = ((hist - expected) ** 2 / expected).sum()
            assert chi2 < 27.9  # chi-square 0.999 quantile, 9 dof

    def test_too_small(self):
        ds = synth_dataset(2, 1, 4, 4, seed=0)
        with pytest.raises(InputError):
            partition(ds, PartitionSpec(IID(), 3, seed=0))

    def test_bad_alpha(self):
        with pytest.raises(ConfigurationError):
            DirichletNonIID(0.0)

    def test_deterministic(self):
        ds = synth_dataset(5, 30, 4, 4, seed=0)
        a = partition(ds, PartitionSpec(DirichletNonIID(0.5), 4, seed=8))
        b = partition(ds, PartitionSpec(DirichletNonIID(0.5), 4, seed=8))
        for x, y in zip(a.indices, b.indices):
            np.testing.assert_array_equal(x, y)


class TestFMDS:
    def test_round_trip(self, tmp_path):
        ds = synth_dataset(4, 5, 6, 7, seed=0)
        path = str(tmp_path / "set.fmds")
        save_fmds(ds, path)
        back = load_fmds(path)
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert back.num_classes == ds.num_classes

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "bad.fmds")
        with open(path, "wb") as f:
            f.write(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_fmds(path)

    def test_truncated(self, tmp_path):
        ds = synth_dataset(3, 4, 4, 4, seed=1)
        path = str(tmp_path / "trunc.fmds")
        save_fmds(ds, path)
        size = os.path.getsize(path)
        with open(path, "r+b") as f:
            f.truncate(size - 10)
        with pytest.raises(FormatError):
            load_fmds(path)
