from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """
    Scores of one method under one metric.

    `raw[i]` and `normalized[i]` belong to `sample_ids[i]`; for ROAD the
    entries are bootstrap draws and `sample_ids` holds draw indices.
    """

    method: str
    metric: str
    sample_ids: NDArray[np.int64]
    raw: NDArray[np.float64]
    normalized: NDArray[np.float64]
    mean: float
    sem: float

    def to_dict(self) -> dict[str, object]:
        return {
            "method": self.method,
            "metric": self.metric,
            "mean": self.mean,
            "sem": self.sem,
            "samples": int(self.raw.shape[0]),
        }

    @staticmethod
    def from_dict(data: dict[str, object]) -> ScoreSet:
        """Summary only: per-sample arrays are not in JSON and come back empty."""
        mean, sem = _parse_pair([data.get("mean"), data.get("sem")])
        empty = np.zeros(0)
        return ScoreSet(
            method=str(data.get("method", "")),
            metric=str(data.get("metric", "")),
            sample_ids=np.zeros(0, dtype=np.int64),
            raw=empty,
            normalized=empty,
            mean=mean,
            sem=sem,
        )


def _parse_pair(raw: object) -> tuple[float, float]:
    if isinstance(raw, (list, tuple)) and len(raw) == 2:
        a, b = raw
        if isinstance(a, (int, float)) and isinstance(b, (int, float)):
            return float(a), float(b)
    msg = f"Expected [mean, sem], got {raw!r}"
    raise ValueError(msg)


@dataclass(frozen=True)
class PropertyReport:
    """Ranking of the compared methods for one property."""

    property: str
    metric: str
    scores: dict[str, tuple[float, float]] = field(default_factory=dict)
    baseline: tuple[float, float] = (0.0, 0.0)
    baseline_passed: bool = False
    ranks: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        """Serialize to a plain dict for JSON storage."""
        return {
            "property": self.property,
            "metric": self.metric,
            "scores": {m: [mean, sem] for m, (mean, sem) in self.scores.items()},
            "baseline": list(self.baseline),
            "baseline_passed": self.baseline_passed,
            "ranks": self.ranks,
        }

    @staticmethod
    def from_dict(data: dict[str, object]) -> PropertyReport:
        raw_scores = data.get("scores")
        scores: dict[str, tuple[float, float]] = {}
        if isinstance(raw_scores, dict):
            for k, v in raw_scores.items():
                scores[str(k)] = _parse_pair(v)
        raw_ranks = data.get("ranks")
        ranks: dict[str, int] = {}
        if isinstance(raw_ranks, dict):
            ranks = {str(k): int(v) for k, v in raw_ranks.items()}
        return PropertyReport(
            property=str(data.get("property", "")),
            metric=str(data.get("metric", "")),
            scores=scores,
            baseline=_parse_pair(data.get("baseline", [0.0, 0.0])),
            baseline_passed=bool(data.get("baseline_passed", False)),
            ranks=ranks,
        )
