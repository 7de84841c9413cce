"""
Pipeline stages behind the CLI.

Each stage reads its upstream artifacts from the output directory, writes
its own, and logs `stage`, `seed` and `wall_s` on completion.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import cast

from entities import Dataset, PipelineConfig, PropertyReport, ScoreSet, TrainedModel
from entities.explanation import BASELINE
from report import (
    ranks_frame,
    render_ranking_table,
    render_spyder_svg,
    scores_frame,
    spyder_frame,
    spyder_geometry,
    to_csv,
)
from src import __version__, datagen, models
from src.benchmark import build_reports, evaluate as evaluate_scores
from src.benchmark import explain_samples, make_explainer, select_samples
from src.errors import ArtifactError, StageOrderError
from src.storage import (
    ArtifactPaths,
    load_dataset,
    load_explanations,
    load_model,
    read_json,
    save_dataset,
    save_explanations,
    save_model,
    write_json,
    write_text_atomic,
)

logger = logging.getLogger(__name__)

BASELINE_NOTE = (
    "The random baseline takes part in the per-sample normalization of every "
    "metric, so all methods and the baseline share one normalized scale."
)


@dataclass(frozen=True)
class RunContext:
    config: PipelineConfig
    workers: int = 1
    progress: bool = False

    @property
    def paths(self) -> ArtifactPaths:
        return ArtifactPaths(self.config.paths.out)

    @property
    def stamp(self) -> dict[str, object]:
        """Provenance embedded in every artifact; contains no wall-clock data."""
        cfg = self.config
        return {
            "config_hash": cfg.fingerprint(),
            "seed": cfg.seed,
            "seeds": {
                "dataset": cfg.dataset.seed,
                "split": cfg.split_seed,
                "train": cfg.train.seed,
            },
            "version": __version__,
        }


@contextmanager
def _stage(name: str, ctx: RunContext) -> Iterator[None]:
    start = time.perf_counter()
    yield
    logger.info(
        "stage complete",
        extra={
            "stage": name,
            "seed": ctx.config.seed,
            "wall_s": round(time.perf_counter() - start, 3),
        },
    )


def _require(stage: str, *paths: Path) -> None:
    for path in paths:
        if not path.exists():
            raise StageOrderError(stage, str(path))


def generate(ctx: RunContext) -> Dataset:
    with _stage("generate", ctx):
        cfg = ctx.config
        dataset = datagen.split(datagen.generate(cfg.dataset), cfg.split_seed)
        save_dataset(ctx.paths, dataset, ctx.stamp)
    return dataset


def _dataset(stage: str, ctx: RunContext) -> Dataset:
    paths = ctx.paths
    _require(stage, paths.dataset_bin, paths.dataset_json)
    dataset = load_dataset(paths)
    if dataset.config != ctx.config.dataset:
        raise ArtifactError(
            str(paths.dataset_json), "dataset config differs from the run config"
        )
    return dataset


def _model(stage: str, ctx: RunContext) -> TrainedModel:
    paths = ctx.paths
    _require(stage, paths.model_bin, paths.model_json)
    model = load_model(paths)
    if model.spec != ctx.config.model:
        raise ArtifactError(
            str(paths.model_json), "model spec differs from the run config"
        )
    return model


def train(ctx: RunContext) -> TrainedModel:
    with _stage("train", ctx):
        dataset = _dataset("train", ctx)
        model = models.train(ctx.config.model, dataset, ctx.config.train)
        for split, values in model.performance.items():
            logger.info("performance", extra={"split": split, **values})
        save_model(ctx.paths, model, ctx.stamp)
    return model


def _all_methods(ctx: RunContext) -> list[str]:
    return [*ctx.config.resolved_methods, BASELINE]


def explain(ctx: RunContext) -> None:
    with _stage("explain", ctx):
        dataset = _dataset("explain", ctx)
        model = _model("explain", ctx)
        cfg = ctx.config
        ids = select_samples(model, dataset, cfg.metrics, cfg.seed)
        for method in _all_methods(ctx):
            explainer = make_explainer(method, cfg.xai, dataset)
            batch = explain_samples(
                model, dataset, ids, explainer, cfg.seed, ctx.workers, ctx.progress
            )
            save_explanations(ctx.paths, batch, ctx.stamp)
            logger.debug("explained", extra={"method": method, "samples": len(batch)})


def evaluate(ctx: RunContext) -> list[ScoreSet]:
    with _stage("evaluate", ctx):
        dataset = _dataset("evaluate", ctx)
        model = _model("evaluate", ctx)
        paths = ctx.paths
        cfg = ctx.config
        methods = _all_methods(ctx)
        for method in methods:
            bin_path = paths.explanation_bin(method)
            _require("evaluate", bin_path, paths.explanation_json(method))
        batches = {method: load_explanations(paths, method) for method in methods}
        explainers = {m: make_explainer(m, cfg.xai, dataset) for m in methods}
        score_sets = evaluate_scores(
            model,
            dataset,
            batches,
            explainers,
            cfg.metric_ids,
            cfg.metrics,
            cfg.seed,
            ctx.workers,
            ctx.progress,
        )
        scores_csv = to_csv(scores_frame(score_sets), ctx.stamp)
        write_text_atomic(paths.report / "scores.csv", scores_csv)
        write_json(
            paths.report / "scores.json",
            {**ctx.stamp, "scores": [s.to_dict() for s in score_sets]},
        )
    return score_sets


def _load_list(path: Path, key: str) -> list[dict[str, object]]:
    data = read_json(path).get(key)
    if not isinstance(data, list):
        raise ArtifactError(str(path), f"missing {key!r} list")
    return [cast("dict[str, object]", item) for item in data]


def rank(ctx: RunContext) -> list[PropertyReport]:
    with _stage("rank", ctx):
        paths = ctx.paths
        scores_json = paths.report / "scores.json"
        _require("rank", scores_json)
        score_sets = [ScoreSet.from_dict(d) for d in _load_list(scores_json, "scores")]
        reports = build_reports(score_sets, ctx.config.ranking)
        ranks_csv = to_csv(ranks_frame(reports), ctx.stamp)
        write_text_atomic(paths.report / "ranks.csv", ranks_csv)

        performance: dict[str, object] = {}
        if paths.model_json.exists():
            sidecar = read_json(paths.model_json)
            performance = cast("dict[str, object]", sidecar.get("performance", {}))
        write_json(
            paths.report / "summary.json",
            {
                **ctx.stamp,
                "baseline_note": BASELINE_NOTE,
                "methods": list(ctx.config.resolved_methods),
                "metrics": list(ctx.config.metric_ids),
                "selection": dict(ctx.config.ranking.selection),
                "performance": performance,
                "reports": [r.to_dict() for r in reports],
            },
        )
    return reports


def report(ctx: RunContext) -> None:
    with _stage("report", ctx):
        paths = ctx.paths
        summary = paths.report / "summary.json"
        _require("report", summary)
        reports = [PropertyReport.from_dict(d) for d in _load_list(summary, "reports")]
        properties = ctx.config.ranking.properties
        polygons = spyder_geometry(reports, properties)
        stamp = ctx.stamp
        description = f"config_hash={stamp['config_hash']} seed={stamp['seed']}"
        svg = render_spyder_svg(polygons, properties, description)
        write_text_atomic(paths.report / "spyder.svg", svg)
        write_text_atomic(
            paths.report / "spyder.csv",
            to_csv(spyder_frame(reports, polygons, properties), stamp),
        )
        write_text_atomic(
            paths.report / "ranking.txt", render_ranking_table(reports, properties)
        )


STAGES: dict[str, Callable[[RunContext], object]] = {
    "generate": generate,
    "train": train,
    "explain": explain,
    "evaluate": evaluate,
    "rank": rank,
    "report": report,
}


def run_all(ctx: RunContext) -> None:
    for stage in STAGES.values():
        _ = stage(ctx)
