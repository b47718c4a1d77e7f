import gzip
import logging
import struct

import numpy as np
import pytest
import torch

from tpgan import data
from tpgan.data import Batch, ImageSet, ImbalanceSpec
from tpgan.datasets import GARMENT_CLASSES, load_idx_dataset, synthetic_garments
from tpgan.errors import BatchTooLarge, DataError, ImbalancedAssembly, InsufficientData, ValidationError

from conftest import toy_dataset


def test_table1_split_sizes(garment_split):
    train, test = garment_split
    assert train.class_counts().tolist() == [800, 80, 80]
    assert test.class_counts().tolist() == [200, 920, 920]


def test_split_is_disjoint_and_complete(garments32, garment_split):
    train, test = garment_split
    assert not set(train.uids) & set(test.uids)
    assert len(set(train.uids) | set(test.uids)) == len(garments32)


def test_split_deterministic(garments32, garment_spec):
    a_train, a_test = data.build_imbalanced_split(garments32, garment_spec)
    b_train, b_test = data.build_imbalanced_split(garments32, garment_spec)
    np.testing.assert_array_equal(a_train.uids, b_train.uids)
    np.testing.assert_array_equal(a_test.uids, b_test.uids)
    np.testing.assert_array_equal(a_train.images, b_train.images)


def test_split_seed_changes_draw(garments32):
    a, _ = data.build_imbalanced_split(garments32, ImbalanceSpec(0, (1, 2), 0.1, 800, seed=0))
    b, _ = data.build_imbalanced_split(garments32, ImbalanceSpec(0, (1, 2), 0.1, 800, seed=1))
    assert set(a.uids) != set(b.uids)


def test_split_balanced_ratio_one():
    ds = toy_dataset([30, 30, 30])
    train, test = data.build_imbalanced_split(ds, ImbalanceSpec(1, (0, 2), 1.0, 20))
    assert train.class_counts().tolist() == [20, 20, 20]
    assert test.class_counts().tolist() == [10, 10, 10]


def test_split_table4_counts():
    ds = toy_dataset([1500, 1500, 1500], size=2)
    train, _ = data.build_imbalanced_split(ds, ImbalanceSpec(0, (1, 2), 0.30, 1000))
    assert train.class_counts().tolist() == [1000, 300, 300]


def test_split_labels_reindexed():
    ds = toy_dataset([5, 20, 5, 20])
    train, test = data.build_imbalanced_split(ds, ImbalanceSpec(3, (1,), 0.5, 10))
    assert train.num_classes == 2
    assert train.class_counts().tolist() == [5, 10]
    assert data.minority_indices(ImbalanceSpec(3, (1,), 0.5, 10)) == [0]
    # images keep their identity through the re-indexing
    for s in train:
        assert ds.labels[s.uid] == (1 if s.label == 0 else 3)


def test_split_insufficient():
    with pytest.raises(InsufficientData):
        data.build_imbalanced_split(toy_dataset([10, 3]), ImbalanceSpec(0, (1,), 0.5, 8))


def test_ratio_fidelity():
    for ratio in (0.05, 0.1, 0.2, 0.3, 0.55, 1.0):
        for n in (12, 150, 800, 1000):
            spec = ImbalanceSpec(0, (1,), ratio, n)
            assert abs(spec.minority_count / n - ratio) <= 1 / n


def test_table6_count():
    assert ImbalanceSpec(0, (1,), 0.20, 800).minority_count == 160


def test_override_wins_and_warns(caplog):
    with caplog.at_level(logging.WARNING):
        spec = ImbalanceSpec(0, (1,), 0.4, 150, minority_count_override=50)
    assert spec.minority_count == 50
    assert "implies ratio" in caplog.text


@pytest.mark.parametrize("kwargs", [
    dict(majority_class=0, minority_classes=(0, 1), balanced_ratio=0.1, majority_count=10),
    dict(majority_class=0, minority_classes=(1,), balanced_ratio=0.0, majority_count=10),
    dict(majority_class=0, minority_classes=(1,), balanced_ratio=1.5, majority_count=10),
    dict(majority_class=0, minority_classes=(1,), balanced_ratio=0.01, majority_count=10),
    dict(majority_class=0, minority_classes=(1, 1), balanced_ratio=0.5, majority_count=10),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        ImbalanceSpec(**kwargs)


# -- batches ---------------------------------------------------------------------


def test_sample_actual_batch_size_and_determinism():
    ds = toy_dataset([50, 30])
    a = data.sample_actual_batch(ds, 20, np.random.default_rng(5))
    b = data.sample_actual_batch(ds, 20, np.random.default_rng(5))
    assert len(a) == 20 and a.images.shape == (20, 1, 8, 8)
    assert torch.equal(a.images, b.images) and torch.equal(a.labels, b.labels)
    assert not a.generated.any()


def test_sample_exhaustive_is_permutation():
    ds = toy_dataset([6, 4])
    batch = data.sample_actual_batch(ds, 10, np.random.default_rng(0))
    assert sorted(batch.labels.tolist()) == sorted(ds.labels.tolist())
    rows = {tuple(x.flatten().tolist()) for x in batch.images}
    assert len(rows) == 10


def test_sample_too_large():
    with pytest.raises(BatchTooLarge):
        data.sample_actual_batch(toy_dataset([3, 2]), 6, np.random.default_rng(0))


def test_generation_counts_examples():
    labels = np.repeat([0, 1, 2], [84, 8, 8])
    assert data.compute_generation_counts(labels, 3, [1, 2]).tolist() == [0, 76, 76]
    assert data.compute_generation_counts(np.repeat([0, 1, 2], 50), 3, [1, 2]).tolist() == [0, 0, 0]
    assert data.compute_generation_counts(np.zeros(10, int), 2, [1]).tolist() == [0, 10]
    with pytest.raises(ValidationError):
        data.compute_generation_counts([], 2, [1])


def _batch(counts, generated=False):
    labels = torch.from_numpy(np.repeat(np.arange(len(counts)), counts))
    flags = torch.full((len(labels),), generated)
    return Batch(torch.zeros(len(labels), 1, 2, 2), labels, flags)


def test_assemble_balanced():
    out = data.assemble_balanced_batch(_batch([84, 8, 8]), _batch([0, 76, 76], True), 3)
    assert len(out) == 252 and out.class_counts(3).tolist() == [84, 84, 84]
    assert out.generated.sum() == 152 and not out.generated[:100].any()


def test_assemble_identity_when_balanced():
    actual = _batch([5, 5])
    out = data.assemble_balanced_batch(actual, _batch([0, 0], True), 2)
    assert torch.equal(out.labels, actual.labels)


def test_assemble_rejects_imbalance():
    with pytest.raises(ImbalancedAssembly):
        data.assemble_balanced_batch(_batch([2, 1]), _batch([0, 2], True), 2)


def test_balance_invariant_random_batches():
    ds = toy_dataset([800, 80, 80], size=2)
    rng = np.random.default_rng(0)
    for _ in range(200):
        actual = data.sample_actual_batch(ds, 100, rng)
        m_g = data.compute_generation_counts(actual.labels.numpy(), 3, [1, 2])
        labels = torch.from_numpy(data.generation_labels(m_g))
        gen = Batch(torch.zeros(len(labels), 1, 2, 2), labels, torch.ones(len(labels), dtype=torch.bool))
        counts = data.assemble_balanced_batch(actual, gen, 3).class_counts(3)
        assert counts.var() == 0


def test_batch_shape_validation():
    with pytest.raises(ValidationError):
        Batch(torch.zeros(3, 1, 2, 2), torch.zeros(2, dtype=torch.long))


# -- image sets and I/O ----------------------------------------------------------------


def test_imageset_validation():
    with pytest.raises(ValidationError):
        ImageSet(np.zeros((2, 4, 4)), np.zeros(2, int), 1)
    with pytest.raises(ValidationError):
        ImageSet(np.zeros((2, 4, 4, 1)), np.array([0, 3]), 2)


def test_samples_roundtrip():
    ds = toy_dataset([3, 2])
    again = ImageSet.from_samples(list(ds), 2)
    np.testing.assert_array_equal(again.images, ds.images)
    np.testing.assert_array_equal(again.uids, ds.uids)


def test_normalization_roundtrip():
    pixels = np.arange(256, dtype=np.uint8)
    x = data.normalize_uint8(pixels)
    assert x.min() == -1.0 and x.max() == 1.0
    np.testing.assert_array_equal(data.denormalize_uint8(x), pixels)


def test_resize_bilinear_constant_image():
    img = np.full((2, 28, 28, 1), 0.3, np.float32)
    out = data.resize_images(img, 64)
    assert out.shape == (2, 64, 64, 1)
    np.testing.assert_allclose(out, 0.3, atol=1e-6)


def test_manifest_roundtrip(tmp_path):
    ds = toy_dataset([3, 4], size=6)
    manifest = data.export_image_folder(ds, tmp_path)
    records = data.read_manifest(manifest)
    assert [lab for _, lab in records] == ds.labels.tolist()
    loaded = data.load_manifest_dataset(manifest, size=6, channels=1)
    assert loaded.images.shape == ds.images.shape
    assert np.abs(loaded.images - ds.images).max() <= 1 / 127.5 + 1e-6
    assert loaded.images.min() >= -1 and loaded.images.max() <= 1


def test_manifest_errors(tmp_path):
    bad = tmp_path / "bad.manifest"
    bad.write_text("a.png\tx\n")
    with pytest.raises(DataError):
        data.read_manifest(bad)
    bad.write_text("justonefield\n")
    with pytest.raises(DataError):
        data.read_manifest(bad)
    empty = tmp_path / "empty.manifest"
    empty.write_text("# nothing\n")
    with pytest.raises(DataError):
        data.load_manifest_dataset(empty)


def test_manifest_resizes_rgb(tmp_path):
    from PIL import Image

    Image.fromarray(np.full((70, 90, 3), 200, np.uint8)).save(tmp_path / "x.png")
    data.write_manifest(tmp_path / "m", [("x.png", 0)])
    ds = data.load_manifest_dataset(tmp_path / "m", size=64, channels=3)
    assert ds.images.shape == (1, 64, 64, 3)
    np.testing.assert_allclose(ds.images, 200 / 127.5 - 1, atol=1e-6)


# -- bundled datasets -------------------------------------------------------------------


def test_synthetic_garments_shape_and_range():
    ds = synthetic_garments(20, seed=1)
    assert ds.images.shape == (60, 28, 28, 1)
    assert ds.class_names == GARMENT_CLASSES
    assert ds.images.min() >= -1 and ds.images.max() <= 1
    assert ds.class_counts().tolist() == [20, 20, 20]
    again = synthetic_garments(20, seed=1)
    np.testing.assert_array_equal(ds.images, again.images)


def test_synthetic_garments_classes_differ():
    ds = synthetic_garments(50, seed=2)
    means = [ds.images[ds.labels == c].mean(axis=0) for c in range(3)]
    assert min(np.abs(means[a] - means[b]).mean() for a, b in ((0, 1), (0, 2), (1, 2))) > 0.02


def _write_idx(path, array):
    header = struct.pack(">HBB", 0, 0x08, array.ndim) + struct.pack(">" + "I" * array.ndim, *array.shape)
    with gzip.open(path, "wb") as fh:
        fh.write(header + array.astype(np.uint8).tobytes())


def test_idx_loader(tmp_path):
    pixels = np.random.default_rng(0).integers(0, 256, (5, 28, 28), dtype=np.uint8)
    labels = np.array([0, 3, 9, 1, 0], np.uint8)
    _write_idx(tmp_path / "img.gz", pixels)
    _write_idx(tmp_path / "lab.gz", labels)
    ds = load_idx_dataset(tmp_path / "img.gz", tmp_path / "lab.gz")
    assert ds.num_classes == 10 and ds.labels.tolist() == labels.tolist()
    np.testing.assert_array_equal(data.denormalize_uint8(ds.images[..., 0]), pixels)
    small = load_idx_dataset(tmp_path / "img.gz", tmp_path / "lab.gz", size=32)
    assert small.images.shape == (5, 32, 32, 1)


def test_idx_loader_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"\x01\x02\x03\x04")
    with pytest.raises(DataError):
        load_idx_dataset(tmp_path / "x", tmp_path / "x")
