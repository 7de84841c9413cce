"""
Evaluation fan-out, random baseline, SEM-aware ranking and property reports.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

import numpy as np
from numpy.typing import NDArray
from tqdm import tqdm

from entities import (
    Dataset,
    ExplanationBatch,
    MetricConfig,
    PipelineConfig,
    PropertyReport,
    RankingConfig,
    ScoreSet,
    TrainedModel,
    XaiConfig,
)
from entities.dataset import SplitName
from entities.explanation import BASELINE
from src import metrics as m
from src.errors import InsufficientSamplesError, ShapeMismatchError
from src.explainers import Explainer, normalize_map, random_baseline_map, task_rng
from src.models import correct_prediction_mask

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]
_T = TypeVar("_T")

RANDOMIZATION = ("model_parameter_test", "random_logit")
# Absorbs float rounding in mean differences, e.g. 0.65 - 0.61 > 0.04.
TIE_TOLERANCE = 1e-12


def _fan_out(
    fn: Callable[[int], _T], count: int, workers: int, desc: str, progress: bool
) -> list[_T]:
    """Map `fn` over range(count); results keep input order for any worker count."""
    items = range(count)
    if workers <= 1:
        return [fn(i) for i in tqdm(items, desc=desc, disable=not progress)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        mapped = pool.map(fn, items)
        return list(tqdm(mapped, total=count, desc=desc, disable=not progress))


def select_samples(
    model: TrainedModel, dataset: Dataset, cfg: MetricConfig, seed: int
) -> NDArray[np.int64]:
    """
    `sample_budget` correctly regressed samples from the configured pool,
    chosen by a seeded permutation and returned in ascending order.
    """
    mask = correct_prediction_mask(model, dataset, cfg.tolerance_years)
    if cfg.sample_pool == "test":
        pool: SplitName = "test"
        candidates = dataset.indices(pool)
    else:
        candidates = np.arange(dataset.n_samples, dtype=np.int64)
    eligible = candidates[mask[candidates]]
    if eligible.shape[0] < cfg.sample_budget:
        raise InsufficientSamplesError(cfg.sample_budget, int(eligible.shape[0]))
    rng = np.random.default_rng([seed, 7])
    picked = rng.permutation(eligible)[: cfg.sample_budget]
    return np.sort(picked).astype(np.int64)


def make_explainer(method: str, cfg: XaiConfig, dataset: Dataset) -> Explainer:
    return Explainer(method=method, cfg=cfg, data_range=dataset.data_range)


def random_baseline_explanations(
    count: int,
    shape: tuple[int, int],
    seed: int,
    sample_ids: NDArray[np.int64] | None = None,
    target_classes: NDArray[np.int64] | None = None,
) -> ExplanationBatch:
    """
    `count` i.i.d. U(0, 1) maps, one seeded stream per sample id.

    Ids default to 0..count-1. A sample gets the same map as the baseline
    explainer draws for it under `seed`.
    """
    ids = (
        np.arange(count, dtype=np.int64)
        if sample_ids is None
        else np.asarray(sample_ids, dtype=np.int64)
    )
    if ids.shape != (count,):
        raise ShapeMismatchError("baseline sample ids", (count,), ids.shape)
    targets = (
        np.zeros(count, dtype=np.int64)
        if target_classes is None
        else np.asarray(target_classes, dtype=np.int64)
    )
    maps = [random_baseline_map(shape, task_rng(seed, int(s), BASELINE)) for s in ids]
    return ExplanationBatch(
        method=BASELINE,
        sample_ids=ids,
        target_classes=targets,
        relevance=np.stack(maps) if maps else np.zeros((0, *shape)),
        seed=seed,
    )


def explain_samples(
    model: TrainedModel,
    dataset: Dataset,
    sample_ids: NDArray[np.int64],
    explainer: Explainer,
    seed: int,
    workers: int = 1,
    progress: bool = False,
) -> ExplanationBatch:
    """Explain the true class of every selected sample."""
    targets = dataset.class_label[sample_ids]
    if explainer.is_baseline:
        shape = dataset.config.grid
        ids = np.asarray(sample_ids, dtype=np.int64)
        return random_baseline_explanations(
            ids.shape[0], shape, seed, ids, targets.astype(np.int64)
        )

    def one(i: int) -> Array:
        sid = int(sample_ids[i])
        rng = task_rng(seed, sid, explainer.method)
        return explainer.relevance(model, dataset.inputs[sid], int(targets[i]), rng)

    maps = _fan_out(one, sample_ids.shape[0], workers, explainer.method, progress)
    return ExplanationBatch(
        method=explainer.method,
        sample_ids=np.asarray(sample_ids, dtype=np.int64),
        target_classes=targets.astype(np.int64),
        relevance=np.stack(maps),
        params=explainer.params,
        seed=seed,
    )


def _retained(reference: Array) -> m.ExplainFn:
    return lambda model, x, c, rng: reference


def _raw_scores(
    metric: str,
    model: TrainedModel,
    dataset: Dataset,
    batch: ExplanationBatch,
    explainer: Explainer,
    cfg: MetricConfig,
    seed: int,
    workers: int,
    progress: bool,
) -> tuple[NDArray[np.int64], Array]:
    """Raw scores and the ids they belong to (sample ids, or draw ids for ROAD)."""
    info = m.METRIC_INFO[metric]
    refs = batch.relevance
    if cfg.normalize:
        refs = np.stack([normalize_map(r) for r in refs])
    ids = batch.sample_ids
    n = ids.shape[0]

    if info.kind == "map":
        fn = m.complexity_entropy if metric == "complexity" else m.sparseness_gini
        return ids, np.array([fn(r) for r in refs])

    if info.kind == "roi":
        roi = dataset.roi_mask
        if metric == "top_k":
            k = m.default_k(roi.size, cfg.topk_fraction)
            scores = [m.top_k(r, roi, k, cfg.localization_abs) for r in refs]
        else:
            scores = [
                m.relevance_rank_accuracy(r, roi, cfg.localization_abs) for r in refs
            ]
        return ids, np.array(scores)

    if info.kind == "dataset":
        xs = dataset.inputs[ids]
        rngs = [task_rng(seed, int(sid), explainer.method, info.code) for sid in ids]
        retention = m.road_retention(model, xs, refs, cfg, rngs)
        pick_rng = np.random.default_rng([seed, 0, 0, info.code, 1])
        picks = m.bootstrap_picks(n, cfg, pick_rng)
        draws = np.arange(cfg.road_draws, dtype=np.int64)
        return draws, m.road_draws(retention, cfg, picks)

    fns: dict[str, Callable[..., float]] = {
        "avg_sensitivity": m.avg_sensitivity,
        "local_lipschitz": m.local_lipschitz,
        "faithfulness_correlation": m.faithfulness_correlation,
        "model_parameter_test": m.model_parameter_test,
        "random_logit": m.random_logit,
    }
    fn = fns[metric]

    def one(i: int) -> float:
        sid = int(ids[i])
        reference = refs[i]
        explain: m.ExplainFn = explainer.relevance
        # The baseline keeps its map under randomization tests.
        if explainer.is_baseline and metric in RANDOMIZATION:
            explain = _retained(reference)
        rng = task_rng(seed, sid, explainer.method, info.code)
        x = dataset.inputs[sid]
        return fn(model, explain, x, int(batch.target_classes[i]), cfg, rng, reference)

    desc = f"{metric}:{explainer.method}"
    return ids, np.array(_fan_out(one, n, workers, desc, progress))


def evaluate(
    model: TrainedModel,
    dataset: Dataset,
    batches: Mapping[str, ExplanationBatch],
    explainers: Mapping[str, Explainer],
    metric_ids: Sequence[str],
    cfg: MetricConfig,
    seed: int,
    workers: int = 1,
    progress: bool = False,
) -> list[ScoreSet]:
    """
    Score every method (baseline included) under every metric.

    Raw scores are normalized per sample across all methods, then
    aggregated to mean and SEM.
    """
    methods = list(batches)
    out: list[ScoreSet] = []
    for metric in metric_ids:
        raws: list[Array] = []
        ids: NDArray[np.int64] = np.zeros(0, dtype=np.int64)
        for method in methods:
            ids, raw = _raw_scores(
                metric,
                model,
                dataset,
                batches[method],
                explainers[method],
                cfg,
                seed,
                workers,
                progress,
            )
            raws.append(raw)
        matrix = np.stack(raws)
        normalized = m.normalize_columns(matrix, metric)
        for k, method in enumerate(methods):
            mean, sem = m.aggregate(normalized[k])
            out.append(
                ScoreSet(
                    method=method,
                    metric=metric,
                    sample_ids=ids,
                    raw=matrix[k],
                    normalized=normalized[k],
                    mean=mean,
                    sem=sem,
                )
            )
        logger.info("metric scored", extra={"metric": metric, "methods": len(methods)})
    return out


def rank_methods(
    scores: Mapping[str, tuple[float, float]], higher_is_better: bool = True
) -> dict[str, int]:
    """
    Dense ranks, 1 = best.

    Neighbours in sorted order share a rank when their means differ by at
    most the larger of their SEMs; ties chain.
    """
    order = sorted(scores, key=lambda k: scores[k][0], reverse=higher_is_better)
    ranks: dict[str, int] = {}
    rank = 0
    prev: tuple[float, float] | None = None
    for name in order:
        mean, sem = scores[name]
        if prev is None or abs(prev[0] - mean) > max(prev[1], sem) + TIE_TOLERANCE:
            rank += 1
        ranks[name] = rank
        prev = (mean, sem)
    return {name: ranks[name] for name in scores}


def baseline_passed(
    scores: Mapping[str, tuple[float, float]], baseline: tuple[float, float]
) -> bool:
    """Baseline strictly lowest and more than one SEM below the next method."""
    if not scores:
        return False
    name = min(scores, key=lambda k: scores[k][0])
    mean, sem = scores[name]
    return baseline[0] < mean and (mean - baseline[0]) > max(sem, baseline[1])


def build_reports(
    score_sets: Sequence[ScoreSet], ranking: RankingConfig
) -> list[PropertyReport]:
    """One report per property, from the metric selected for it."""
    by_key = {(s.metric, s.method): s for s in score_sets}
    reports: list[PropertyReport] = []
    for prop in ranking.properties:
        metric = ranking.selection[prop]
        sets = [s for s in score_sets if s.metric == metric]
        if not sets:
            logger.warning(
                "no scores for property", extra={"property": prop, "metric": metric}
            )
            continue
        scores = {s.method: (s.mean, s.sem) for s in sets if s.method != BASELINE}
        base = by_key.get((metric, BASELINE))
        base_pair = (base.mean, base.sem) if base is not None else (float("nan"), 0.0)
        reports.append(
            PropertyReport(
                property=prop,
                metric=metric,
                scores=scores,
                baseline=base_pair,
                baseline_passed=base is not None and baseline_passed(scores, base_pair),
                ranks=rank_methods(scores),
            )
        )
    return reports


def run_benchmark(
    model: TrainedModel,
    dataset: Dataset,
    methods: Sequence[str],
    metric_ids: Sequence[str],
    config: PipelineConfig,
    workers: int = 1,
    progress: bool = False,
) -> tuple[list[ScoreSet], list[PropertyReport]]:
    """Select samples, explain with every method and the baseline, score, rank."""
    seed = config.seed
    ids = select_samples(model, dataset, config.metrics, seed)
    explainers = {
        name: make_explainer(name, config.xai, dataset) for name in [*methods, BASELINE]
    }
    batches = {
        name: explain_samples(model, dataset, ids, explainer, seed, workers, progress)
        for name, explainer in explainers.items()
    }
    score_sets = evaluate(
        model,
        dataset,
        batches,
        explainers,
        metric_ids,
        config.metrics,
        seed,
        workers,
        progress,
    )
    return score_sets, build_reports(score_sets, config.ranking)
