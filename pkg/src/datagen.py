"""Synthetic ensemble of yearly temperature-like maps."""

from __future__ import annotations

import logging

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import gaussian_filter
from sklearn.model_selection import train_test_split

from entities import Dataset, DatasetConfig
from entities.dataset import SPLIT_CODES, UNASSIGNED
from src.errors import ConfigError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-12
TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


def global_pattern(
    config: DatasetConfig, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Smooth field: two cosine modes with seeded wavenumbers and phases."""
    v, h = config.grid
    rows = np.linspace(0.0, 1.0, v)[:, None]
    cols = np.linspace(0.0, 1.0, h)[None, :]
    field = np.zeros((v, h))
    for _ in range(2):
        kr, kc = rng.integers(1, 3, size=2)
        phase_r, phase_c = rng.uniform(0.0, 2 * np.pi, size=2)
        mode = np.cos(np.pi * kr * rows + phase_r) * np.cos(np.pi * kc * cols + phase_c)
        field += mode
    # Shift so warming is positive everywhere, peak 1.
    field = field - field.min() + 0.5
    return field / field.max()


def raw_fields(config: DatasetConfig) -> NDArray[np.float64]:
    """Unstandardized maps, shaped (members, years, v, h)."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    pattern = global_pattern(config, rng)
    v, h = config.grid
    r0, r1, c0, c1 = config.roi
    roi = np.zeros((v, h))
    roi[r0:r1, c0:c1] = 1.0

    t = np.arange(config.years, dtype=np.float64) / config.years
    signal = (
        config.trend_amplitude * t[:, None, None] * pattern
        + config.roi_signal * t[:, None, None] * roi
    )
    shape = (config.members, config.years, v, h)
    noise = rng.normal(0.0, config.noise_sigma, size=shape)
    if config.noise_smoothing > 0:
        noise = gaussian_filter(
            noise, sigma=(0, 0, config.noise_smoothing, config.noise_smoothing)
        )
    return signal[None] + noise


def standardize(x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Per-pixel zero mean / unit std over axis 0; constant pixels become 0."""
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    centered = x - mean
    safe = np.where(std < STD_FLOOR, 1.0, std)
    return np.where(std < STD_FLOOR, 0.0, centered / safe)


def class_of(year_index: int, config: DatasetConfig) -> int:
    if not 0 <= year_index < config.years:
        raise ConfigError("year_index", f"{year_index} outside [0, {config.years})")
    return year_index // config.bin_width


def central_years(config: DatasetConfig) -> NDArray[np.float64]:
    w = config.bin_width
    k = np.arange(config.classes, dtype=np.float64)
    return config.start_year + k * w + w / 2


def split(dataset: Dataset, seed: int) -> Dataset:
    """
    Assign 20% test, then 20% of the remainder as validation.

    For 100 samples this gives 20 test, 16 val and 64 train.
    """
    ids = np.arange(dataset.n_samples)
    state = np.random.SeedSequence(seed).generate_state(1)[0]
    rest, test = train_test_split(ids, test_size=TEST_FRACTION, random_state=int(state))
    train, val = train_test_split(rest, test_size=VAL_FRACTION, random_state=int(state))
    tags = np.full(dataset.n_samples, UNASSIGNED, dtype=np.uint8)
    tags[train] = SPLIT_CODES["train"]
    tags[val] = SPLIT_CODES["val"]
    tags[test] = SPLIT_CODES["test"]
    return dataset.with_split(tags)


def generate(config: DatasetConfig) -> Dataset:
    """
    Build the standardized dataset.

    Samples are member-major; splits are left unassigned until `split`.
    """
    raw = raw_fields(config)
    members, years, v, h = raw.shape
    inputs = standardize(raw.reshape(members * years, v, h))
    year_index = np.tile(np.arange(years, dtype=np.int64), members)
    member_index = np.repeat(np.arange(members, dtype=np.int64), years)
    labels = year_index // config.bin_width
    logger.debug(
        "generated ensemble", extra={"samples": members * years, "grid": f"{v}x{h}"}
    )
    return Dataset(
        config=config,
        inputs=inputs,
        year_index=year_index,
        class_label=labels.astype(np.int64),
        member_index=member_index,
        split=np.full(members * years, UNASSIGNED, dtype=np.uint8),
        central_year=central_years(config),
    )
