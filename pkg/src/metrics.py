"""
Evaluation metrics for attribution maps, score normalization and
aggregation.

Sample metrics take an `explain` callable `(model, x, c, rng) -> map` so
they can re-explain perturbed inputs, models or classes.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.ndimage import convolve
from scipy.stats import ConstantInputWarning, entropy, pearsonr, spearmanr

from entities import MetricConfig, TrainedModel
from src.errors import ConfigError, ScoreError
from src.explainers import normalize_map
from src.models import logits, perturb_layers, predict_class

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]
ExplainFn = Callable[[TrainedModel, Array, int, np.random.Generator], Array]

SCORE_FLOOR = 1e-12
NEIGHBOURS = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class MetricInfo:
    property: str
    normalization: Literal["inverse", "max"]
    kind: Literal["sample", "dataset", "map", "roi"]
    code: int


METRIC_INFO: dict[str, MetricInfo] = {
    "avg_sensitivity": MetricInfo("robustness", "inverse", "sample", 11),
    "local_lipschitz": MetricInfo("robustness", "inverse", "sample", 12),
    "road": MetricInfo("faithfulness", "inverse", "dataset", 21),
    "faithfulness_correlation": MetricInfo("faithfulness", "max", "sample", 22),
    "model_parameter_test": MetricInfo("randomization", "inverse", "sample", 31),
    "random_logit": MetricInfo("randomization", "inverse", "sample", 32),
    "complexity": MetricInfo("complexity", "inverse", "map", 41),
    "sparseness": MetricInfo("complexity", "max", "map", 42),
    "top_k": MetricInfo("localization", "max", "roi", 51),
    "rra": MetricInfo("localization", "max", "roi", 52),
}


def _explain(
    explain: ExplainFn,
    model: TrainedModel,
    x: Array,
    c: int,
    rng: np.random.Generator,
    normalize: bool,
) -> Array:
    r = np.asarray(explain(model, x, c, rng), dtype=np.float64)
    return normalize_map(r) if normalize else r


# Similarity functions


def pearson(a: Array, b: Array) -> float:
    """Pearson r of the flattened maps; 1 for identical, 0 for other constant pairs."""
    a, b = a.ravel(), b.ravel()
    if np.std(a) == 0 or np.std(b) == 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    return float(pearsonr(a, b).statistic)


def spearman(a: Array, b: Array) -> float:
    a, b = a.ravel(), b.ravel()
    if np.std(a) == 0 or np.std(b) == 0:
        return 1.0 if np.array_equal(a, b) else 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConstantInputWarning)
        return float(spearmanr(a, b).statistic)


def ssim(a: Array, b: Array) -> float:
    """
    Single-window SSIM over the whole map.

    The data range is max - min over both maps together.
    """
    a, b = a.ravel(), b.ravel()
    data_range = float(max(a.max(), b.max()) - min(a.min(), b.min()))
    if data_range == 0:
        return 1.0
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = float(np.mean((a - mu_a) * (b - mu_b)))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(num / den)


SIMILARITIES: dict[str, Callable[[Array, Array], float]] = {
    "pearson": pearson,
    "spearman": spearman,
    "ssim": ssim,
}


# Robustness


def _perturbations(
    x: Array, cfg: MetricConfig, rng: np.random.Generator
) -> list[Array]:
    """Gaussian input perturbations; exact-zero draws are redrawn."""
    out: list[Array] = []
    while len(out) < cfg.robustness_samples:
        delta = rng.normal(0.0, cfg.robustness_noise, size=x.shape)
        if np.linalg.norm(delta) > 0:
            out.append(delta)
    return out


def avg_sensitivity(
    model: TrainedModel,
    explain: ExplainFn,
    x: Array,
    c: int,
    cfg: MetricConfig,
    rng: np.random.Generator,
    reference: Array | None = None,
) -> float:
    """Mean of ||phi(x) - phi(x + d)|| / ||x|| over the sampled perturbations."""
    x_norm = float(np.linalg.norm(x))
    if x_norm == 0:
        raise ScoreError("avg_sensitivity", "input has zero norm")
    noise_rng, *draw_rngs = rng.spawn(cfg.robustness_samples + 1)
    base = (
        _explain(explain, model, x, c, draw_rngs[0], cfg.normalize)
        if reference is None
        else reference
    )
    ratios: list[float] = []
    for d, r in zip(_perturbations(x, cfg, noise_rng), draw_rngs):
        moved = _explain(explain, model, x + d, c, r, cfg.normalize)
        ratios.append(float(np.linalg.norm(base - moved)) / x_norm)
    return float(np.mean(ratios))


def local_lipschitz(
    model: TrainedModel,
    explain: ExplainFn,
    x: Array,
    c: int,
    cfg: MetricConfig,
    rng: np.random.Generator,
    reference: Array | None = None,
    perturbations: Sequence[Array] | None = None,
) -> float:
    """Max of ||phi(x) - phi(x + d)|| / ||d|| over the sampled perturbations."""
    noise_rng, *draw_rngs = rng.spawn(cfg.robustness_samples + 1)
    base = (
        _explain(explain, model, x, c, draw_rngs[0], cfg.normalize)
        if reference is None
        else reference
    )
    deltas = list(perturbations) if perturbations is not None else _perturbations(
        x, cfg, noise_rng
    )
    if not deltas:
        raise ScoreError("local_lipschitz", "no perturbations")
    ratios: list[float] = []
    for i, d in enumerate(deltas):
        r = draw_rngs[i % len(draw_rngs)]
        moved = _explain(explain, model, x + d, c, r, cfg.normalize)
        ratios.append(float(np.linalg.norm(base - moved) / np.linalg.norm(d)))
    return float(max(ratios))


# Faithfulness


def faithfulness_correlation(
    model: TrainedModel,
    explain: ExplainFn,
    x: Array,
    c: int,
    cfg: MetricConfig,
    rng: np.random.Generator,
    reference: Array | None = None,
) -> float:
    """
    Pearson r between subset attribution sums and the logit drop when the
    subset is replaced by the baseline, over `fc_runs` random subsets.
    """
    phi = (
        _explain(explain, model, x, c, rng, cfg.normalize)
        if reference is None
        else reference
    )
    flat_x = x.ravel()
    flat_phi = phi.ravel()
    d = flat_x.shape[0]
    if cfg.fc_subset > d:
        raise ConfigError(
            "metrics.fc_subset", f"subset {cfg.fc_subset} exceeds {d} features"
        )

    perturbed = np.repeat(flat_x[None], cfg.fc_runs, axis=0)
    sums = np.empty(cfg.fc_runs)
    for run in range(cfg.fc_runs):
        subset = rng.choice(d, size=cfg.fc_subset, replace=False)
        if cfg.fc_baseline == "uniform":
            perturbed[run, subset] = rng.uniform(0.0, 1.0, size=cfg.fc_subset)
        else:
            perturbed[run, subset] = 0.0
        sums[run] = flat_phi[subset].sum()

    original = logits(model, x.reshape(model.spec.input_shape))[0, c]
    drops = original - logits(model, perturbed.reshape(cfg.fc_runs, *x.shape))[:, c]
    if np.std(sums) == 0 or np.std(drops) == 0:
        logger.warning(
            "degenerate correlation", extra={"metric": "faithfulness_correlation"}
        )
        return 0.0
    return float(pearsonr(sums, drops).statistic)


def noisy_linear_impute(
    x: Array, mask: NDArray[np.bool_], rng: np.random.Generator, noise: float
) -> Array:
    """
    Fill masked pixels with the mean of their known 4-neighbours, front by
    front from the mask boundary inwards, then add N(0, noise).
    """
    out = np.where(mask, 0.0, x)
    known = ~mask
    remaining = mask.copy()
    while remaining.any():
        totals = convolve(np.where(known, out, 0.0), NEIGHBOURS, mode="constant")
        counts = convolve(known.astype(np.float64), NEIGHBOURS, mode="constant")
        ready = remaining & (counts > 0)
        if not ready.any():
            break
        out[ready] = totals[ready] / counts[ready]
        known = known | ready
        remaining = remaining & ~ready
    out[mask] += rng.normal(0.0, noise, size=int(mask.sum()))
    return out


def top_indices(values: Array, k: int) -> NDArray[np.intp]:
    """Indices of the k largest entries; ties go to the lower index."""
    return np.argsort(-values.ravel(), kind="stable")[:k]


def road_retention(
    model: TrainedModel,
    xs: Array,
    maps: Array,
    cfg: MetricConfig,
    rngs: Sequence[np.random.Generator],
) -> Array:
    """
    (samples, percentages) matrix: 1 where the prediction survives masking
    the top-p% pixels by noisy linear imputation, else 0.
    """
    percentages = np.asarray(cfg.road_percentages)
    if np.any(percentages > 100) or np.any(np.diff(percentages) <= 0):
        raise ConfigError("metrics.road_percentages", "must be increasing and <= 100")
    n = xs.shape[0]
    d = int(np.prod(xs.shape[1:]))
    reference = predict_class(model, xs)
    out = np.zeros((n, percentages.shape[0]))
    for i in range(n):
        order = top_indices(maps[i], d)
        masked = []
        for p in percentages:
            mask = np.zeros(d, dtype=bool)
            mask[order[: int(d * p / 100)]] = True
            shaped = mask.reshape(xs[i].shape)
            masked.append(noisy_linear_impute(xs[i], shaped, rngs[i], cfg.road_noise))
        out[i] = predict_class(model, np.stack(masked)) == reference[i]
    return out


def road_auc(percentages: Sequence[float], curve: Array) -> float:
    """Trapezoidal area under the retention curve over p/100."""
    return float(np.trapezoid(curve, np.asarray(percentages, dtype=np.float64) / 100))


def road(
    model: TrainedModel,
    xs: Array,
    maps: Array,
    cfg: MetricConfig,
    rngs: Sequence[np.random.Generator],
) -> float:
    """AUC of the mean retention curve over all given samples."""
    retention = road_retention(model, xs, maps, cfg, rngs)
    return road_auc(cfg.road_percentages, retention.mean(axis=0))


def bootstrap_picks(
    n: int, cfg: MetricConfig, rng: np.random.Generator
) -> NDArray[np.int64]:
    """(road_draws, road_draw_size) sample indices, drawn with replacement."""
    return rng.integers(0, n, size=(cfg.road_draws, cfg.road_draw_size))


def road_draws(
    retention: Array, cfg: MetricConfig, picks: NDArray[np.int64]
) -> Array:
    """One AUC per row of `picks`; rows index into the retention matrix."""
    return np.array(
        [road_auc(cfg.road_percentages, retention[pick].mean(axis=0)) for pick in picks]
    )


# Randomization


def randomization_score(similarities: Sequence[float], metric: str) -> float:
    """Average over perturbed layers or alternative classes."""
    if len(similarities) == 0:
        raise ScoreError(metric, "nothing to average")
    return float(np.mean(similarities))


def model_parameter_test(
    model: TrainedModel,
    explain: ExplainFn,
    x: Array,
    c: int,
    cfg: MetricConfig,
    rng: np.random.Generator,
    reference: Array | None = None,
) -> float:
    """
    Mean similarity between the original map and maps of models with one
    parameterized layer perturbed by multiplicative N(1, sigma) noise.
    """
    rngs = rng.spawn(len(model.param_indices) * 2 + 1)
    base = (
        _explain(explain, model, x, c, rngs[-1], cfg.normalize)
        if reference is None
        else reference
    )
    order = model.param_indices
    if cfg.mpt_layer_order == "top_down":
        order = order[::-1]
    similarity = SIMILARITIES[cfg.mpt_similarity]
    scores = []
    for k, index in enumerate(order):
        perturbed = perturb_layers(model, rngs[2 * k], cfg.mpt_sigma, indices=(index,))
        moved = _explain(explain, perturbed, x, c, rngs[2 * k + 1], cfg.normalize)
        scores.append(similarity(base, moved))
    score = randomization_score(scores, "model_parameter_test")
    if math.isclose(score, 1.0, abs_tol=1e-9):
        logger.warning(
            "explanation insensitive to model parameters", extra={"class": c}
        )
    return score


def random_logit(
    model: TrainedModel,
    explain: ExplainFn,
    x: Array,
    c: int,
    cfg: MetricConfig,
    rng: np.random.Generator,
    reference: Array | None = None,
) -> float:
    """Mean similarity between the target-class map and maps of other classes."""
    classes = model.spec.classes
    if classes < 2:
        raise ScoreError("random_logit", "need at least two classes")
    others = np.array([k for k in range(classes) if k != c])
    pick_rng, base_rng, *class_rngs = rng.spawn(classes + 1)
    if cfg.rl_classes is not None and cfg.rl_classes < others.shape[0]:
        others = np.sort(pick_rng.choice(others, size=cfg.rl_classes, replace=False))
    base = (
        _explain(explain, model, x, c, base_rng, cfg.normalize)
        if reference is None
        else reference
    )
    similarity = SIMILARITIES[cfg.rl_similarity]
    scores = [
        similarity(
            base, _explain(explain, model, x, int(k), class_rngs[i], cfg.normalize)
        )
        for i, k in enumerate(others)
    ]
    return randomization_score(scores, "random_logit")


# Complexity


def _magnitudes(phi: Array, metric: str) -> Array:
    a = np.abs(np.asarray(phi, dtype=np.float64)).ravel()
    if a.sum() == 0:
        raise ScoreError(metric, "all-zero explanation")
    return a


def complexity_entropy(phi: Array) -> float:
    """Shannon entropy (nats) of |phi| / sum |phi|."""
    return float(entropy(_magnitudes(phi, "complexity")))


def sparseness_gini(phi: Array) -> float:
    """Gini index of the sorted magnitudes."""
    a = np.sort(_magnitudes(phi, "sparseness"))
    d = a.shape[0]
    i = np.arange(1, d + 1)
    return float(np.sum((2 * i - d - 1) * a) / (d * np.sum(a)))


# Localization


def _ranked(
    phi: Array, roi: NDArray[np.bool_], use_abs: bool, metric: str
) -> tuple[Array, NDArray[np.bool_]]:
    flat_roi = np.asarray(roi, dtype=bool).ravel()
    if not flat_roi.any():
        raise ScoreError(metric, "empty region of interest")
    values = np.asarray(phi, dtype=np.float64).ravel()
    return (np.abs(values) if use_abs else values), flat_roi


def default_k(d: int, fraction: float = 0.1) -> int:
    return max(1, int(fraction * d))


def top_k(
    phi: Array, roi: NDArray[np.bool_], k: int | None = None, use_abs: bool = True
) -> float:
    """Fraction of the k highest-ranked pixels that fall inside the ROI."""
    values, flat_roi = _ranked(phi, roi, use_abs, "top_k")
    k = default_k(values.shape[0]) if k is None else k
    if not 1 <= k <= values.shape[0]:
        raise ConfigError(
            "metrics.topk_fraction", f"k={k} outside 1..{values.shape[0]}"
        )
    return float(flat_roi[top_indices(values, k)].sum() / k)


def relevance_rank_accuracy(
    phi: Array, roi: NDArray[np.bool_], use_abs: bool = True
) -> float:
    """Overlap of the |roi| highest-ranked pixels with the ROI, over |roi|."""
    values, flat_roi = _ranked(phi, roi, use_abs, "rra")
    size = int(flat_roi.sum())
    return float(flat_roi[top_indices(values, size)].sum() / size)


# Normalization and aggregation


def normalize_inverse(scores: ArrayLike, axis: int = 0) -> Array:
    """q_min / q along `axis`; lower raw is better and maps to exactly 1."""
    q = np.asarray(scores, dtype=np.float64)
    if np.any(q <= 0):
        logger.warning(
            "nonpositive scores clamped",
            extra={"count": int(np.sum(q <= 0)), "floor": SCORE_FLOOR},
        )
        q = np.where(q <= 0, SCORE_FLOOR, q)
    return q.min(axis=axis, keepdims=True) / q


def normalize_max(scores: ArrayLike, axis: int = 0) -> Array:
    """q / q_max along `axis`; higher raw is better and the best maps to exactly 1."""
    q = np.asarray(scores, dtype=np.float64)
    top = q.max(axis=axis, keepdims=True)
    if np.any(top <= 0):
        raise ScoreError("normalize_max", "maximum score is not positive")
    return q / top


def normalize(scores: ArrayLike, metric: str, axis: int = 0) -> Array:
    if METRIC_INFO[metric].normalization == "inverse":
        return normalize_inverse(scores, axis)
    return normalize_max(scores, axis)


def normalize_columns(scores: ArrayLike, metric: str) -> Array:
    """
    Normalize a (methods, samples) matrix sample by sample.

    Under max-normalization negative scores count as 0, so every entry lies
    in [0, 1]; a sample on which no method scores above SCORE_FLOOR gets 0
    for every method.
    """
    q = np.asarray(scores, dtype=np.float64)
    if METRIC_INFO[metric].normalization == "inverse":
        return normalize(q, metric)
    negative = q < 0
    if negative.any():
        logger.warning(
            "negative scores clamped",
            extra={"metric": metric, "count": int(negative.sum())},
        )
        q = np.where(negative, 0.0, q)
    dead = q.max(axis=0) <= SCORE_FLOOR
    out = np.zeros_like(q)
    if dead.any():
        logger.warning(
            "no positive score for sample",
            extra={"metric": metric, "count": int(dead.sum())},
        )
    if not dead.all():
        out[:, ~dead] = normalize(q[:, ~dead], metric)
    return out


def aggregate(scores: ArrayLike, ddof: int = 0) -> tuple[float, float]:
    """Mean and standard error std / sqrt(I); `ddof=1` for the sample std."""
    q = np.asarray(scores, dtype=np.float64).ravel()
    if q.shape[0] < 2:
        raise ScoreError("aggregate", f"need at least 2 scores, got {q.shape[0]}")
    return float(q.mean()), float(q.std(ddof=ddof) / math.sqrt(q.shape[0]))
