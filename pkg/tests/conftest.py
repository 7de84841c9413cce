"""Tiny shared fixtures so the suite runs in seconds."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from entities import (
    Dataset,
    DatasetConfig,
    MetricConfig,
    ModelSpec,
    PipelineConfig,
    TrainedModel,
    XaiConfig,
)
from src import datagen
from src.models import init_model

GRID = (8, 6)
CLASSES = 4


@pytest.fixture
def dataset_config() -> DatasetConfig:
    # 5 members x 20 years = 100 samples; bins of 5 years
    return DatasetConfig(
        grid=GRID,
        years=20,
        members=5,
        classes=CLASSES,
        roi=(2, 5, 1, 4),
        roi_signal=3.0,
        noise_sigma=0.3,
        seed=11,
    )


@pytest.fixture
def dataset(dataset_config: DatasetConfig) -> Dataset:
    return datagen.split(datagen.generate(dataset_config), seed=5)


@pytest.fixture
def mlp_spec() -> ModelSpec:
    return ModelSpec(arch="mlp", hidden=(8,), classes=CLASSES, input_shape=GRID)


@pytest.fixture
def cnn_spec() -> ModelSpec:
    return ModelSpec(
        arch="cnn",
        conv_channels=2,
        kernel=3,
        stride=1,
        pool=2,
        dense_width=6,
        classes=CLASSES,
        input_shape=GRID,
    )


@pytest.fixture
def linear_spec() -> ModelSpec:
    return ModelSpec(arch="mlp", hidden=(), classes=CLASSES, input_shape=GRID)


@pytest.fixture
def mlp(mlp_spec: ModelSpec) -> TrainedModel:
    return init_model(mlp_spec, seed=3)


@pytest.fixture
def cnn(cnn_spec: ModelSpec) -> TrainedModel:
    return init_model(cnn_spec, seed=3)


@pytest.fixture
def linear(linear_spec: ModelSpec) -> TrainedModel:
    return init_model(linear_spec, seed=3)


@pytest.fixture
def x() -> np.ndarray:
    return np.random.default_rng(42).normal(size=GRID)


@pytest.fixture
def tiny_xai() -> XaiConfig:
    return XaiConfig(
        sg_samples=4, ng_samples=2, fg_models=2, fg_inputs=2, ig_steps=8
    )


@pytest.fixture
def tiny_metrics() -> MetricConfig:
    return MetricConfig(
        robustness_samples=2,
        fc_runs=6,
        fc_subset=8,
        road_percentages=(5, 10, 20, 40),
        road_draws=3,
        road_draw_size=5,
        sample_budget=4,
        tolerance_years=20,
        sample_pool="all",
    )


@pytest.fixture
def tiny_pipeline(
    dataset_config: DatasetConfig,
    mlp_spec: ModelSpec,
    tiny_xai: XaiConfig,
    tiny_metrics: MetricConfig,
    tmp_path,
) -> PipelineConfig:
    config = PipelineConfig.default(seed=7)
    return replace(
        config,
        dataset=replace(dataset_config, seed=config.dataset.seed),
        model=replace(mlp_spec, hidden=(16,)),
        train=replace(
            config.train, epochs=15, batch_size=16, learning_rate=0.05, patience=5
        ),
        xai=tiny_xai,
        metrics=tiny_metrics,
        paths=replace(config.paths, out=str(tmp_path / "out")),
    ).aligned()
