from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .config import DatasetConfig

SplitName = Literal["train", "val", "test"]

# Split tag values as stored in the dataset file.
SPLIT_CODES: dict[SplitName, int] = {"train": 0, "val": 1, "test": 2}
UNASSIGNED = 255


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Standardized ensemble maps with per-sample labels.

    Samples are ordered member-major: sample `i * T + t` is member `i`,
    year index `t`.
    """

    config: DatasetConfig
    inputs: NDArray[np.float64]
    year_index: NDArray[np.int64]
    class_label: NDArray[np.int64]
    member_index: NDArray[np.int64]
    split: NDArray[np.uint8]
    central_year: NDArray[np.float64]

    @property
    def n_samples(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def true_year(self) -> NDArray[np.float64]:
        return (self.config.start_year + self.year_index).astype(np.float64)

    @property
    def data_range(self) -> tuple[float, float]:
        """(x_min, x_max) over every sample; scales SmoothGrad noise."""
        return float(self.inputs.min()), float(self.inputs.max())

    @property
    def roi_mask(self) -> NDArray[np.bool_]:
        v, h = self.config.grid
        r0, r1, c0, c1 = self.config.roi
        mask = np.zeros((v, h), dtype=bool)
        mask[r0:r1, c0:c1] = True
        return mask

    def indices(self, split: SplitName) -> NDArray[np.int64]:
        return np.flatnonzero(self.split == SPLIT_CODES[split]).astype(np.int64)

    def with_split(self, split: NDArray[np.uint8]) -> Dataset:
        return replace(self, split=split)

    def equals(self, other: Dataset) -> bool:
        """Bitwise equality of every array plus the config."""
        return (
            self.config == other.config
            and np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.year_index, other.year_index)
            and np.array_equal(self.class_label, other.class_label)
            and np.array_equal(self.member_index, other.member_index)
            and np.array_equal(self.split, other.split)
            and np.array_equal(self.central_year, other.central_year)
        )
