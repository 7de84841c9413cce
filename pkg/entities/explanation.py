from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

BASELINE = "random_baseline"


def _parse_params(raw: object) -> dict[str, object]:
    if isinstance(raw, dict):
        return {str(k): v for k, v in raw.items()}
    return {}


@dataclass(frozen=True, eq=False)
class Explanation:
    """A relevance map for one sample, shaped like the input grid (v, h)."""

    method: str
    target_class: int
    relevance: NDArray[np.float64]
    normalized: bool = False
    params: dict[str, object] = field(default_factory=dict)

    def with_relevance(
        self, relevance: NDArray[np.float64], normalized: bool | None = None
    ) -> Explanation:
        return replace(
            self,
            relevance=relevance,
            normalized=self.normalized if normalized is None else normalized,
        )


@dataclass(frozen=True, eq=False)
class ExplanationBatch:
    """
    Explanations of one method for a fixed sample selection.

    `relevance` is (n, v, h); row i belongs to dataset sample `sample_ids[i]`.
    """

    method: str
    sample_ids: NDArray[np.int64]
    target_classes: NDArray[np.int64]
    relevance: NDArray[np.float64]
    normalized: bool = False
    params: dict[str, object] = field(default_factory=dict)
    seed: int = 0

    def __len__(self) -> int:
        return int(self.sample_ids.shape[0])

    def sidecar(self) -> dict[str, object]:
        """Metadata written next to the binary payload."""
        return {
            "method": self.method,
            "params": self.params,
            "seed": self.seed,
            "normalized": self.normalized,
            "sample_ids": [int(i) for i in self.sample_ids],
            "target_classes": [int(c) for c in self.target_classes],
        }

    @staticmethod
    def from_sidecar(
        data: dict[str, object], relevance: NDArray[np.float64]
    ) -> ExplanationBatch:
        raw_ids = data.get("sample_ids")
        raw_targets = data.get("target_classes")
        raw_seed = data.get("seed")
        return ExplanationBatch(
            method=str(data.get("method", "")),
            sample_ids=np.array(
                raw_ids if isinstance(raw_ids, list) else [], dtype=np.int64
            ),
            target_classes=np.array(
                raw_targets if isinstance(raw_targets, list) else [], dtype=np.int64
            ),
            relevance=relevance,
            normalized=bool(data.get("normalized", False)),
            params=_parse_params(data.get("params")),
            seed=raw_seed if isinstance(raw_seed, int) else 0,
        )
