"""Exception hierarchy shared by every stage."""

from __future__ import annotations


class XaiBenchError(Exception):
    """Base class. Subclasses store their structured fields as attributes."""

    code: str = "xaibench_error"
    message: str

    def __init__(self, message: str) -> None:
        self.message = message
        super().__init__(message)

    def fields(self) -> dict[str, object]:
        return {}

    def to_dict(self) -> dict[str, object]:
        """Machine-readable form printed by the CLI on failure."""
        return {"error": self.code, "message": self.message, **self.fields()}


class ShapeMismatchError(XaiBenchError):
    """Raised when a tensor does not have the shape a layer expects."""

    code = "shape_mismatch"
    expected: tuple[int, ...]
    actual: tuple[int, ...]

    def __init__(
        self, what: str, expected: tuple[int, ...], actual: tuple[int, ...]
    ) -> None:
        self.expected = tuple(expected)
        self.actual = tuple(actual)
        super().__init__(
            f"{what}: expected shape {self.expected}, got {self.actual}"
        )

    def fields(self) -> dict[str, object]:
        return {"expected": list(self.expected), "actual": list(self.actual)}


class UnsupportedOperationError(XaiBenchError):
    code = "unsupported_operation"
    operation: str
    kind: str

    def __init__(self, operation: str, kind: str) -> None:
        self.operation = operation
        self.kind = kind
        super().__init__(f"{operation} is not supported for layer kind {kind!r}")

    def fields(self) -> dict[str, object]:
        return {"operation": self.operation, "kind": self.kind}


class InvalidRuleError(XaiBenchError):
    code = "invalid_rule"
    rule: str
    reason: str

    def __init__(self, rule: str, reason: str) -> None:
        self.rule = rule
        self.reason = reason
        super().__init__(f"invalid LRP rule {rule!r}: {reason}")

    def fields(self) -> dict[str, object]:
        return {"rule": self.rule, "reason": self.reason}


class ConfigError(XaiBenchError):
    code = "config_error"
    field: str
    reason: str

    def __init__(self, field: str, reason: str) -> None:
        self.field = field
        self.reason = reason
        super().__init__(f"config field {field!r}: {reason}")

    def fields(self) -> dict[str, object]:
        return {"field": self.field, "reason": self.reason}


class TrainingFailureError(XaiBenchError):
    code = "training_failure"
    epoch: int
    loss: float

    def __init__(self, epoch: int, loss: float) -> None:
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")

    def fields(self) -> dict[str, object]:
        return {"epoch": self.epoch, "loss": repr(self.loss)}


class ScoreError(XaiBenchError):
    code = "score_error"
    metric: str
    reason: str

    def __init__(self, metric: str, reason: str) -> None:
        self.metric = metric
        self.reason = reason
        super().__init__(f"{metric}: {reason}")

    def fields(self) -> dict[str, object]:
        return {"metric": self.metric, "reason": self.reason}


class InsufficientSamplesError(XaiBenchError):
    code = "insufficient_samples"
    required: int
    available: int

    def __init__(self, required: int, available: int) -> None:
        self.required = required
        self.available = available
        super().__init__(
            f"need {required} correctly predicted samples, found {available} "
            f"(short by {required - available})"
        )

    def fields(self) -> dict[str, object]:
        return {
            "required": self.required,
            "available": self.available,
            "shortfall": self.required - self.available,
        }


class ArtifactError(XaiBenchError):
    code = "artifact_error"
    path: str
    reason: str

    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")

    def fields(self) -> dict[str, object]:
        return {"path": self.path, "reason": self.reason}


class StageOrderError(XaiBenchError):
    code = "stage_order"
    stage: str
    missing: str

    def __init__(self, stage: str, missing: str) -> None:
        self.stage = stage
        self.missing = missing
        super().__init__(
            f"stage {stage!r} needs {missing}; run the upstream stage first"
        )

    def fields(self) -> dict[str, object]:
        return {"stage": self.stage, "missing": self.missing}
