from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from entities import Dataset, DatasetConfig
from entities.dataset import SPLIT_CODES
from src import datagen
from src.errors import ConfigError


class TestGenerate:
    def test_deterministic(self, dataset_config: DatasetConfig):
        a = datagen.generate(dataset_config)
        b = datagen.generate(dataset_config)
        assert a.equals(b)

    def test_seed_changes_data(self, dataset_config: DatasetConfig):
        a = datagen.generate(dataset_config)
        b = datagen.generate(replace(dataset_config, seed=dataset_config.seed + 1))
        assert not np.array_equal(a.inputs, b.inputs)

    def test_standardized_moments(self, dataset_config: DatasetConfig):
        inputs = datagen.generate(dataset_config).inputs
        np.testing.assert_allclose(inputs.mean(axis=0), 0.0, atol=1e-6)
        np.testing.assert_allclose(inputs.std(axis=0), 1.0, atol=1e-6)

    def test_constant_field_standardizes_to_zero(self, dataset_config: DatasetConfig):
        flat = replace(
            dataset_config, trend_amplitude=0.0, roi_signal=0.0, noise_sigma=1e-15
        )
        np.testing.assert_array_equal(datagen.generate(flat).inputs, 0.0)

    def test_standardize_idempotent(self, dataset: Dataset):
        again = datagen.standardize(dataset.inputs)
        assert np.max(np.abs(again - dataset.inputs)) <= 1e-9

    def test_labels_member_major(self, dataset_config: DatasetConfig):
        ds = datagen.generate(dataset_config)
        years = dataset_config.years
        assert ds.n_samples == dataset_config.members * years
        np.testing.assert_array_equal(ds.year_index[:years], np.arange(years))
        np.testing.assert_array_equal(ds.member_index[years : 2 * years], 1)
        np.testing.assert_array_equal(ds.class_label, ds.year_index // 5)

    def test_roi_carries_late_signal(self, dataset_config: DatasetConfig):
        raw = datagen.raw_fields(replace(dataset_config, trend_amplitude=0.5))
        late = np.abs(raw[:, -5:]).mean(axis=(0, 1))
        roi = np.zeros(dataset_config.grid, dtype=bool)
        r0, r1, c0, c1 = dataset_config.roi
        roi[r0:r1, c0:c1] = True
        assert late[roi].mean() > late[~roi].mean()

    def test_smoothed_noise(self, dataset_config: DatasetConfig):
        smooth = datagen.raw_fields(replace(dataset_config, noise_smoothing=1.5))
        plain = datagen.raw_fields(dataset_config)
        assert smooth.shape == plain.shape
        assert not np.array_equal(smooth, plain)

    def test_degenerate_config(self, dataset_config: DatasetConfig):
        with pytest.raises(ConfigError):
            _ = datagen.generate(replace(dataset_config, years=2, classes=4))

    def test_central_years(self):
        years = datagen.central_years(DatasetConfig())
        assert years.shape == (20,)
        assert years[0] == 1924.0
        assert years[-1] == 1920 + 19 * 8 + 4


class TestClassOf:
    @pytest.mark.parametrize(("year", "label"), [(0, 0), (159, 19), (8, 1)])
    def test_bins(self, year, label):
        assert datagen.class_of(year, DatasetConfig()) == label

    @pytest.mark.parametrize("year", [-1, 160])
    def test_out_of_range(self, year):
        with pytest.raises(ConfigError):
            _ = datagen.class_of(year, DatasetConfig())


class TestSplit:
    def test_quotas(self, dataset: Dataset):
        assert dataset.n_samples == 100
        assert dataset.indices("test").shape[0] == 20
        assert dataset.indices("train").shape[0] == 64
        assert dataset.indices("val").shape[0] == 16

    def test_partition(self, dataset: Dataset):
        ids = np.concatenate(
            [dataset.indices("train"), dataset.indices("val"), dataset.indices("test")]
        )
        np.testing.assert_array_equal(np.sort(ids), np.arange(dataset.n_samples))
        assert set(np.unique(dataset.split)) <= set(SPLIT_CODES.values())

    def test_deterministic(self, dataset_config: DatasetConfig):
        ds = datagen.generate(dataset_config)
        a = datagen.split(ds, 3)
        b = datagen.split(ds, 3)
        np.testing.assert_array_equal(a.split, b.split)
        assert not np.array_equal(a.split, datagen.split(ds, 4).split)
