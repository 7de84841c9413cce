"""Tabular report outputs."""

from __future__ import annotations

from collections.abc import Sequence

import pandas as pd

from entities import PropertyReport, ScoreSet
from entities.explanation import BASELINE

from .spyder import SpyderPolygon


def comment_header(stamp: dict[str, object]) -> str:
    return f"# config_hash={stamp['config_hash']} seed={stamp['seed']}\n"


def scores_frame(score_sets: Sequence[ScoreSet]) -> pd.DataFrame:
    """One row per (metric, method, sample or draw)."""
    rows = [
        {
            "metric": s.metric,
            "method": s.method,
            "sample_id": int(sid),
            "raw": float(raw),
            "normalized": float(norm),
        }
        for s in score_sets
        for sid, raw, norm in zip(s.sample_ids, s.raw, s.normalized)
    ]
    columns = ["metric", "method", "sample_id", "raw", "normalized"]
    return pd.DataFrame(rows, columns=columns)


def ranks_frame(reports: Sequence[PropertyReport]) -> pd.DataFrame:
    rows: list[dict[str, object]] = []
    for r in reports:
        for method, (mean, sem) in r.scores.items():
            rows.append(
                {
                    "property": r.property,
                    "metric": r.metric,
                    "method": method,
                    "mean": mean,
                    "sem": sem,
                    "rank": r.ranks[method],
                    "baseline_passed": "",
                }
            )
        rows.append(
            {
                "property": r.property,
                "metric": r.metric,
                "method": BASELINE,
                "mean": r.baseline[0],
                "sem": r.baseline[1],
                "rank": "",
                "baseline_passed": r.baseline_passed,
            }
        )
    columns = ["property", "metric", "method", "mean", "sem", "rank", "baseline_passed"]
    return pd.DataFrame(rows, columns=columns)


def spyder_frame(
    reports: Sequence[PropertyReport],
    polygons: Sequence[SpyderPolygon],
    properties: Sequence[str],
) -> pd.DataFrame:
    """methods x properties rows of normalized means and plotted radii."""
    by_prop = {r.property: r for r in reports}
    rows = [
        {
            "method": poly.method,
            "property": prop,
            "metric": by_prop[prop].metric,
            "mean": by_prop[prop].scores[poly.method][0],
            "sem": by_prop[prop].scores[poly.method][1],
            "radius": radius,
        }
        for poly in polygons
        for prop, radius in zip(properties, poly.radii)
    ]
    columns = ["method", "property", "metric", "mean", "sem", "radius"]
    return pd.DataFrame(rows, columns=columns)


def to_csv(frame: pd.DataFrame, stamp: dict[str, object]) -> str:
    body = frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")
    return comment_header(stamp) + body


def render_ranking_table(
    reports: Sequence[PropertyReport], properties: Sequence[str]
) -> str:
    """Methods as rows, properties as columns, ranks as cells."""
    by_prop = {r.property: r for r in reports}
    present = [p for p in properties if p in by_prop]
    methods = list(by_prop[present[0]].scores) if present else []
    table = pd.DataFrame(
        {p: [by_prop[p].ranks.get(m, "") for m in methods] for p in present},
        index=pd.Index(methods, name="method"),
    )
    header = " | ".join(f"{p}: {by_prop[p].metric}" for p in present)
    verdicts = ", ".join(
        f"{p}={'pass' if by_prop[p].baseline_passed else 'FAIL'}" for p in present
    )
    return f"{header}\n\n{table.to_string()}\n\nrandom baseline test: {verdicts}\n"
