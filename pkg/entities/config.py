from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from types import UnionType
from typing import Literal, TypeVar, Union, cast, get_args, get_origin, get_type_hints

import numpy as np

from src.errors import ConfigError

Arch = Literal["mlp", "cnn"]
Similarity = Literal["pearson", "spearman", "ssim"]

PROPERTIES = (
    "robustness",
    "faithfulness",
    "randomization",
    "complexity",
    "localization",
)

METHODS = (
    "gradient",
    "input_gradient",
    "integrated_gradients",
    "lrp_z",
    "lrp_alpha_beta",
    "lrp_composite",
    "smoothgrad",
    "noisegrad",
    "fusiongrad",
)

METRICS = (
    "avg_sensitivity",
    "local_lipschitz",
    "road",
    "faithfulness_correlation",
    "model_parameter_test",
    "random_logit",
    "complexity",
    "sparseness",
    "top_k",
    "rra",
)

# Stage tags mixed into the master seed to derive per-stage seeds.
_SEED_TAGS = {"dataset": 1, "split": 2, "train": 3}

_C = TypeVar("_C")


def derive_seed(master: int, stage: str) -> int:
    """Derive a 64-bit stage seed from the master seed."""
    state = np.random.SeedSequence([master, _SEED_TAGS[stage]]).generate_state(
        2, dtype=np.uint32
    )
    return int(state[0]) | (int(state[1]) << 32)


def _tuplify(value: object) -> object:
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in cast("list[object]", value))
    return value


def _matches(value: object, hint: object) -> bool:
    """Whether a JSON-decoded value fits a dataclass field annotation."""
    if hint is object:
        return True
    if hint is bool:
        return isinstance(value, bool)
    if hint is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if hint is float:
        return isinstance(value, int | float) and not isinstance(value, bool)
    if hint is str:
        return isinstance(value, str)
    if hint is type(None):
        return value is None
    origin, args = get_origin(hint), get_args(hint)
    if origin is Literal:
        return any(value == a and type(value) is type(a) for a in args)
    if origin in (Union, UnionType):
        return any(_matches(value, a) for a in args)
    if origin is tuple:
        if not isinstance(value, tuple):
            return False
        items = cast("tuple[object, ...]", value)
        if len(args) == 2 and args[1] is Ellipsis:
            return all(_matches(v, args[0]) for v in items)
        return len(items) == len(args) and all(map(_matches, items, args))
    if origin is dict:
        if not isinstance(value, dict):
            return False
        pairs = cast("dict[object, object]", value).items()
        return all(_matches(k, args[0]) and _matches(v, args[1]) for k, v in pairs)
    return isinstance(value, cast("type", origin or hint))


def _describe(hint: object) -> str:
    if isinstance(hint, type):
        return hint.__name__
    return str(hint).replace("typing.", "")


def _build(cls: type[_C], raw: object, section: str) -> _C:
    """
    Construct a config dataclass from JSON.

    Unknown keys and values that do not match the field annotations raise
    ConfigError naming the offending `section.key`.
    """
    if not isinstance(raw, dict):
        raise ConfigError(section, "expected a JSON object")
    data = cast("dict[str, object]", raw)
    known = {f.name for f in fields(cast("type", cls))}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{section}.{unknown[0]}", "unknown key")
    kwargs = {k: _tuplify(v) for k, v in data.items()}
    hints = get_type_hints(cls)
    for key, value in kwargs.items():
        if not _matches(value, hints[key]):
            raise ConfigError(
                f"{section}.{key}",
                f"expected {_describe(hints[key])}, got {json.dumps(data[key])}",
            )
        if hints[key] is float:
            kwargs[key] = float(cast("float", value))
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from exc


@dataclass(frozen=True)
class DatasetConfig:
    """
    Synthetic ensemble generator settings.

    `roi` is (row_start, row_stop, col_start, col_stop), half-open, in grid
    indices.
    """

    grid: tuple[int, int] = (36, 24)
    years: int = 160
    members: int = 10
    classes: int = 20
    trend_amplitude: float = 0.3
    roi: tuple[int, int, int, int] = (6, 14, 4, 12)
    roi_signal: float = 4.0
    noise_sigma: float = 0.3
    noise_smoothing: float = 0.0
    start_year: int = 1920
    seed: int = 0

    @property
    def bin_width(self) -> int:
        return self.years // self.classes

    def validate(self) -> None:
        v, h = self.grid
        if v <= 0 or h <= 0:
            raise ConfigError("dataset.grid", "extents must be positive")
        if self.members <= 0:
            raise ConfigError("dataset.members", "must be positive")
        if self.classes <= 0:
            raise ConfigError("dataset.classes", "must be positive")
        if self.years < self.classes:
            raise ConfigError("dataset.years", "fewer years than classes")
        if self.years % self.classes != 0:
            raise ConfigError("dataset.classes", "must divide the number of years")
        r0, r1, c0, c1 = self.roi
        if not (0 <= r0 < r1 <= v and 0 <= c0 < c1 <= h):
            raise ConfigError("dataset.roi", f"rectangle {self.roi} not inside grid")
        if not self.noise_sigma > 0:
            raise ConfigError("dataset.noise_sigma", "must be > 0")
        if self.noise_smoothing < 0:
            raise ConfigError("dataset.noise_smoothing", "must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("dataset.seed", "must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ModelSpec:
    """Classifier architecture. `classes`/`input_shape` follow the dataset."""

    arch: Arch = "mlp"
    hidden: tuple[int, ...] = (64, 64)
    conv_channels: int = 8
    kernel: int = 6
    stride: int = 2
    pool: int = 2
    dense_width: int = 32
    l2_coeff: float = 1e-4
    use_bias: bool = True
    classes: int = 20
    input_shape: tuple[int, int] = (36, 24)

    def validate(self) -> None:
        if self.arch not in ("mlp", "cnn"):
            raise ConfigError("model.arch", f"unknown architecture {self.arch!r}")
        if self.classes < 2:
            raise ConfigError("model.classes", "need at least two classes")
        if self.arch == "cnn":
            v, h = self.input_shape
            if v < self.kernel or h < self.kernel:
                raise ConfigError("model.kernel", "kernel larger than the input grid")
        if self.l2_coeff < 0:
            raise ConfigError("model.l2_coeff", "must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 0.001
    momentum: float = 0.9
    patience: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 0:
            raise ConfigError("train.epochs", "must be >= 0")
        if self.batch_size <= 0:
            raise ConfigError("train.batch_size", "must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("train.learning_rate", "must be positive")


@dataclass(frozen=True)
class XaiConfig:
    """
    Explanation hyperparameters.

    Noise widths ending in `_scale` are multiplied by the dataset value range
    (x_max - x_min); `ng_sigma` / `fg_ng_sigma` are multiplicative parameter
    noise widths.
    """

    sg_samples: int = 150
    sg_sigma_scale: float = 0.5
    ng_samples: int = 20
    ng_sigma: float = 0.25
    ng_perturb_bias: bool = False
    fg_models: int = 20
    fg_inputs: int = 20
    fg_sigma_scale: float = 0.25
    fg_ng_sigma: float = 0.125
    ig_steps: int = 64
    ig_baseline: float = 0.0
    lrp_alpha: float = 1.0
    lrp_beta: float = 0.0
    lrp_epsilon: float = 1e-6
    lrp_gamma: float = 0.25
    base_method: str = "gradient"

    def validate(self) -> None:
        for name in ("sg_samples", "ng_samples", "fg_models", "fg_inputs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"xai.{name}", "must be >= 0")
        if self.ig_steps < 1:
            raise ConfigError("xai.ig_steps", "must be >= 1")
        if self.base_method not in (
            "gradient",
            "input_gradient",
            "integrated_gradients",
            "lrp_z",
            "lrp_alpha_beta",
            "lrp_composite",
        ):
            raise ConfigError(
                "xai.base_method", f"{self.base_method!r} cannot be smoothed"
            )


@dataclass(frozen=True)
class MetricConfig:
    normalize: bool = True
    robustness_noise: float = 0.1
    robustness_samples: int = 10
    fc_runs: int = 50
    fc_subset: int = 40
    fc_baseline: Literal["uniform", "zero"] = "uniform"
    road_percentages: tuple[int, ...] = tuple(range(1, 51))
    road_noise: float = 0.01
    road_draws: int = 10
    road_draw_size: int = 50
    mpt_layer_order: Literal["bottom_up", "top_down"] = "bottom_up"
    mpt_sigma: float = 0.25
    mpt_similarity: Similarity = "pearson"
    rl_similarity: Similarity = "pearson"
    rl_classes: int | None = None
    topk_fraction: float = 0.1
    localization_abs: bool = True
    sample_budget: int = 50
    tolerance_years: int = 2
    sample_pool: Literal["test", "all"] = "test"

    def validate(self) -> None:
        p = self.road_percentages
        if len(p) < 2:
            raise ConfigError("metrics.road_percentages", "need at least two points")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ConfigError("metrics.road_percentages", "must be strictly increasing")
        if p[0] < 0 or p[-1] > 100:
            raise ConfigError("metrics.road_percentages", "must lie within 0..100")
        if self.robustness_samples < 1:
            raise ConfigError("metrics.robustness_samples", "must be >= 1")
        if self.sample_budget < 2:
            raise ConfigError("metrics.sample_budget", "need at least two samples")
        if self.road_draws < 2:
            raise ConfigError("metrics.road_draws", "need at least two draws")
        if not 0 < self.topk_fraction <= 1:
            raise ConfigError("metrics.topk_fraction", "must be in (0, 1]")


def _default_selection() -> dict[str, str]:
    return {
        "robustness": "local_lipschitz",
        "faithfulness": "faithfulness_correlation",
        "randomization": "model_parameter_test",
        "complexity": "sparseness",
        "localization": "rra",
    }


@dataclass(frozen=True)
class RankingConfig:
    """One metric per property for the final ranking and the spyder plot."""

    selection: dict[str, str] = field(default_factory=_default_selection)
    properties: tuple[str, ...] = PROPERTIES

    def validate(self) -> None:
        for prop, metric in self.selection.items():
            if prop not in PROPERTIES:
                raise ConfigError(f"ranking.selection.{prop}", "unknown property")
            if metric not in METRICS:
                raise ConfigError(
                    f"ranking.selection.{prop}", f"unknown metric {metric!r}"
                )
        for prop in self.properties:
            if prop not in self.selection:
                raise ConfigError(
                    "ranking.properties", f"{prop!r} has no selected metric"
                )


@dataclass(frozen=True)
class PathsConfig:
    out: str = "out"


@dataclass(frozen=True)
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    xai: XaiConfig = field(default_factory=XaiConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    ranking: RankingConfig = field(default_factory=RankingConfig)
    methods: tuple[str, ...] | None = None
    metric_ids: tuple[str, ...] = METRICS
    seed: int = 0
    split_seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)

    @staticmethod
    def default(seed: int = 0) -> PipelineConfig:
        return PipelineConfig().with_seed(seed)

    def with_seed(self, seed: int) -> PipelineConfig:
        """Set the master seed and re-derive every stage seed from it."""
        return replace(
            self,
            seed=seed,
            split_seed=derive_seed(seed, "split"),
            dataset=replace(self.dataset, seed=derive_seed(seed, "dataset")),
            train=replace(self.train, seed=derive_seed(seed, "train")),
        )

    def aligned(self) -> PipelineConfig:
        """Make the model spec follow the dataset's grid and class count."""
        return replace(
            self,
            model=replace(
                self.model,
                classes=self.dataset.classes,
                input_shape=self.dataset.grid,
            ),
        )

    @property
    def resolved_methods(self) -> tuple[str, ...]:
        if self.methods is not None:
            return self.methods
        if self.model.arch == "cnn":
            return METHODS
        return tuple(m for m in METHODS if m != "lrp_composite")

    def validate(self) -> None:
        self.dataset.validate()
        self.model.validate()
        self.train.validate()
        self.xai.validate()
        self.metrics.validate()
        self.ranking.validate()
        for m in self.resolved_methods:
            if m not in METHODS:
                raise ConfigError("methods", f"unknown method {m!r}")
        for m in self.metric_ids:
            if m not in METRICS:
                raise ConfigError("metric_ids", f"unknown metric {m!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")

    def to_dict(self) -> dict[str, object]:
        """Serialize to a plain dict for JSON storage."""
        data = asdict(self)
        return cast("dict[str, object]", json.loads(json.dumps(data)))

    @staticmethod
    def from_dict(data: dict[str, object]) -> PipelineConfig:
        """
        Reconstruct a config from JSON.

        Stage seeds missing from the file are derived from the master seed.
        """
        top = _build(_PipelineFields, data, "config")
        master = top.seed if top.seed is not None else 0
        raw_dataset = cast("dict[str, object]", top.dataset or {})
        raw_train = cast("dict[str, object]", top.train or {})
        dataset = _build(DatasetConfig, raw_dataset, "dataset")
        train = _build(TrainConfig, raw_train, "train")
        if "seed" not in raw_dataset:
            dataset = replace(dataset, seed=derive_seed(master, "dataset"))
        if "seed" not in raw_train:
            train = replace(train, seed=derive_seed(master, "train"))
        config = PipelineConfig(
            dataset=dataset,
            model=_build(ModelSpec, top.model or {}, "model"),
            train=train,
            xai=_build(XaiConfig, top.xai or {}, "xai"),
            metrics=_build(MetricConfig, top.metrics or {}, "metrics"),
            ranking=_build(RankingConfig, top.ranking or {}, "ranking"),
            methods=cast("tuple[str, ...] | None", top.methods),
            metric_ids=cast("tuple[str, ...]", top.metric_ids or METRICS),
            seed=master,
            split_seed=(
                top.split_seed
                if top.split_seed is not None
                else derive_seed(master, "split")
            ),
            paths=_build(PathsConfig, top.paths or {}, "paths"),
        )
        return config.aligned()

    def fingerprint(self) -> str:
        """SHA-256 of the canonical JSON form, excluding output paths."""
        data = self.to_dict()
        _ = data.pop("paths", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class _PipelineFields:
    """Top-level key set of the config file, before nested parsing."""

    dataset: object = None
    model: object = None
    train: object = None
    xai: object = None
    metrics: object = None
    ranking: object = None
    methods: tuple[str, ...] | None = None
    metric_ids: tuple[str, ...] | None = None
    seed: int | None = None
    split_seed: int | None = None
    paths: object = None
