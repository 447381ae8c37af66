"""
Tests for splits, dataset generation, slicing and augmentation
"""

import os

import numpy as np
import pytest

from src.bcgan.augment import augment, bilinear_resize
from src.bcgan.dataset import (MANIFEST_NAME, SliceDataset, generate_dataset, load_split, make_splits,
                               normalized_volume, read_manifest, subject_ids)
from src.bcgan.errors import DatasetError, ShapeError


class TestSplits:
    def test_eighty_twenty(self):
        splits = make_splits(subject_ids(10), [0.8, 0.2], seed=0)
        assert len(splits["train"]) == 8 and len(splits["test"]) == 2

    def test_deterministic(self):
        ids = subject_ids(20)
        assert make_splits(ids, [0.8, 0.2], seed=4) == make_splits(ids, [0.8, 0.2], seed=4)
        assert make_splits(ids, [0.8, 0.2], seed=4) != make_splits(ids, [0.8, 0.2], seed=5)

    def test_partition(self):
        ids = subject_ids(12)
        splits = make_splits(ids, [0.5, 0.25, 0.25], seed=1)
        assert list(splits) == ["train", "calibration", "test"]
        members = [sid for split in splits.values() for sid in split]
        assert sorted(members) == ids

    def test_empty_split(self):
        with pytest.raises(DatasetError, match="empty"):
            make_splits(subject_ids(2), [0.9, 0.1], seed=0)

    def test_bad_ratios(self):
        with pytest.raises(DatasetError):
            make_splits(subject_ids(10), [0.5, 0.4], seed=0)


class TestGenerateDataset:
    def test_files_and_manifest(self, tiny_config, tmp_path):
        data_dir = str(tmp_path / "data")
        manifest = generate_dataset(tiny_config, data_dir)
        assert len(manifest.subjects) == 4
        assert {name: len(ids) for name, ids in manifest.splits.items()} == {"train": 2, "test": 2}
        for entry in manifest.subjects:
            assert len(entry.files) == 4
            for relative in entry.files.values():
                assert os.path.isfile(os.path.join(data_dir, relative))
        assert read_manifest(data_dir) == manifest

    def test_rerun_gives_identical_bytes(self, tiny_config, tmp_path):
        first, second = str(tmp_path / "a"), str(tmp_path / "b")
        generate_dataset(tiny_config, first)
        generate_dataset(tiny_config, second)
        for root, _, files in os.walk(first):
            for name in files:
                relative = os.path.relpath(os.path.join(root, name), first)
                with open(os.path.join(first, relative), "rb") as a, open(os.path.join(second, relative), "rb") as b:
                    assert a.read() == b.read(), relative

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError):
            read_manifest(str(tmp_path))

    def test_malformed_manifest(self, tmp_path):
        (tmp_path / MANIFEST_NAME).write_text('{"seed": "x"}')
        with pytest.raises(DatasetError, match="malformed"):
            read_manifest(str(tmp_path))

    def test_unknown_split(self, tiny_config, tmp_path):
        generate_dataset(tiny_config, str(tmp_path))
        with pytest.raises(DatasetError, match="calibration"):
            load_split(str(tmp_path), "calibration")


class TestSliceDataset:
    def test_from_subjects(self, tiny_config, tmp_path):
        generate_dataset(tiny_config, str(tmp_path))
        pairs = load_split(str(tmp_path), "train")
        dataset = SliceDataset.from_subjects(pairs)
        assert len(dataset) == 2 * 4
        assert dataset.sources.shape == (8, 32, 32)
        assert dataset.sources.min() >= 0.0 and dataset.sources.max() <= 1.0

    def test_batches_cover_every_slice(self, rng):
        sources = np.arange(5, dtype=np.float32)[:, None, None] * np.ones((5, 32, 32), dtype=np.float32)
        dataset = SliceDataset(sources, sources.copy())
        seen = []
        for source, target in dataset.batches(rng, batch_size=2, resize_to=34, crop_to=32):
            assert source.shape[1:] == (1, 32, 32)
            np.testing.assert_array_equal(source, target)
            seen.extend(round(float(v)) for v in source[:, 0, 0, 0])
        assert sorted(seen) == [0, 1, 2, 3, 4]

    def test_rejects_mismatched_stacks(self):
        with pytest.raises(DatasetError):
            SliceDataset(np.zeros((2, 4, 4)), np.zeros((3, 4, 4)))

    def test_normalized_volume_per_slice(self, rng):
        volume = rng.uniform(2.0, 5.0, size=(6, 6, 3))
        normalized = normalized_volume(volume)
        assert normalized.shape == volume.shape
        for k in range(3):
            assert normalized[:, :, k].min() == 0.0 and normalized[:, :, k].max() == 1.0


class TestAugment:
    def test_bilinear_middle_column(self):
        resized = bilinear_resize(np.array([[0.0, 1.0], [0.0, 1.0]]), 3)
        np.testing.assert_allclose(resized[:, 1], [0.5, 0.5, 0.5])
        np.testing.assert_allclose(resized[:, 0], 0.0)
        np.testing.assert_allclose(resized[:, 2], 1.0)

    def test_constant_stays_constant(self):
        np.testing.assert_allclose(bilinear_resize(np.full((32, 32), 0.4), 36), 0.4, rtol=1e-6)

    def test_shared_window(self, rng):
        image = rng.uniform(size=(32, 32))
        source, target = augment(image, image * 2.0, rng, resize_to=36, crop_to=32)
        assert source.shape == (32, 32)
        np.testing.assert_allclose(target, source * 2.0, rtol=1e-6)

    def test_crop_larger_than_resize(self, rng):
        with pytest.raises(ShapeError):
            augment(np.zeros((8, 8)), np.zeros((8, 8)), rng, resize_to=8, crop_to=10)
