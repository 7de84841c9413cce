from .config import (
    DatasetConfig,
    MetricConfig,
    ModelSpec,
    PipelineConfig,
    RankingConfig,
    TrainConfig,
    XaiConfig,
)
from .dataset import Dataset
from .explanation import Explanation, ExplanationBatch
from .network import EpochLog, Layer, LrpRule, ParamGrads, TrainedModel
from .scores import PropertyReport, ScoreSet

__all__ = [
    "Dataset",
    "DatasetConfig",
    "EpochLog",
    "Explanation",
    "ExplanationBatch",
    "Layer",
    "LrpRule",
    "MetricConfig",
    "ModelSpec",
    "ParamGrads",
    "PipelineConfig",
    "PropertyReport",
    "RankingConfig",
    "ScoreSet",
    "TrainConfig",
    "TrainedModel",
    "XaiConfig",
]
