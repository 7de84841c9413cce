from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .config import ModelSpec

LayerKind = Literal["dense", "conv2d", "maxpool2d", "relu", "softmax", "flatten"]
RuleName = Literal["z", "alpha_beta", "epsilon", "gamma", "zbox"]

PARAMETERIZED: tuple[LayerKind, ...] = ("dense", "conv2d")


def _frozen(a: NDArray[np.float64] | None) -> NDArray[np.float64] | None:
    if a is None:
        return None
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Layer:
    """
    One network layer.

    dense weights are (out, in); conv2d weights are (out_ch, in_ch, kh, kw).
    Parameter arrays are copied and made read-only on construction.
    """

    kind: LayerKind
    weight: NDArray[np.float64] | None = None
    bias: NDArray[np.float64] | None = None
    stride: int = 1
    pool: int = 2
    l2: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "weight", _frozen(self.weight))
        object.__setattr__(self, "bias", _frozen(self.bias))

    @property
    def has_params(self) -> bool:
        return self.kind in PARAMETERIZED

    @property
    def kernel(self) -> tuple[int, int]:
        assert self.kind == "conv2d" and self.weight is not None
        return int(self.weight.shape[2]), int(self.weight.shape[3])

    def with_params(
        self, weight: NDArray[np.float64], bias: NDArray[np.float64] | None
    ) -> Layer:
        return replace(self, weight=weight, bias=bias)


@dataclass(frozen=True)
class ParamGrads:
    weight: NDArray[np.float64]
    bias: NDArray[np.float64] | None = None


@dataclass(frozen=True)
class LrpRule:
    """
    Relevance propagation rule.

    `low`/`high` are the input bounds of the z-bounds rule.
    """

    name: RuleName = "z"
    alpha: float = 1.0
    beta: float = 0.0
    epsilon: float = 0.0
    gamma: float = 0.0
    low: float = 0.0
    high: float = 0.0

    @staticmethod
    def z() -> LrpRule:
        return LrpRule("z")

    @staticmethod
    def alpha_beta(alpha: float = 1.0, beta: float = 0.0) -> LrpRule:
        return LrpRule("alpha_beta", alpha=alpha, beta=beta)

    @staticmethod
    def eps(epsilon: float = 1e-6) -> LrpRule:
        return LrpRule("epsilon", epsilon=epsilon)

    @staticmethod
    def gamma_rule(gamma: float = 0.25) -> LrpRule:
        return LrpRule("gamma", gamma=gamma)

    @staticmethod
    def zbox(low: float, high: float) -> LrpRule:
        return LrpRule("zbox", low=low, high=high)

    def describe(self) -> str:
        if self.name == "alpha_beta":
            return f"alpha_beta(alpha={self.alpha}, beta={self.beta})"
        if self.name == "epsilon":
            return f"epsilon({self.epsilon})"
        if self.name == "gamma":
            return f"gamma({self.gamma})"
        if self.name == "zbox":
            return f"zbox(low={self.low}, high={self.high})"
        return "z"


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float

    def to_dict(self) -> dict[str, object]:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "train_accuracy": self.train_accuracy,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
        }

    @staticmethod
    def from_dict(data: dict[str, object]) -> EpochLog:
        return EpochLog(
            epoch=int(_num(data, "epoch")),
            train_loss=_num(data, "train_loss"),
            train_accuracy=_num(data, "train_accuracy"),
            val_loss=_num(data, "val_loss"),
            val_accuracy=_num(data, "val_accuracy"),
        )


def _num(data: dict[str, object], key: str) -> float:
    value = data.get(key)
    if not isinstance(value, (int, float)):
        msg = f"Missing or invalid {key}: {value!r}"
        raise ValueError(msg)
    return float(value)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """A network with fitted parameters; `layers[-1]` is the softmax."""

    spec: ModelSpec
    layers: tuple[Layer, ...]
    train_log: tuple[EpochLog, ...] = ()
    performance: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def param_indices(self) -> tuple[int, ...]:
        """Positions of parameterized layers, input side first."""
        return tuple(i for i, layer in enumerate(self.layers) if layer.has_params)

    def with_layers(self, layers: tuple[Layer, ...]) -> TrainedModel:
        return replace(self, layers=layers)

    def equals(self, other: TrainedModel) -> bool:
        if self.spec != other.spec or len(self.layers) != len(other.layers):
            return False
        for a, b in zip(self.layers, other.layers):
            if (a.kind, a.stride, a.pool, a.l2) != (b.kind, b.stride, b.pool, b.l2):
                return False
            for pa, pb in ((a.weight, b.weight), (a.bias, b.bias)):
                if (pa is None) != (pb is None):
                    return False
                if pa is not None and not np.array_equal(pa, pb):
                    return False
        return True
