"""Artifact persistence: binary payloads with JSON sidecars, written atomically."""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import cast

import numpy as np
from numpy.typing import NDArray

from entities import (
    Dataset,
    DatasetConfig,
    EpochLog,
    ExplanationBatch,
    Layer,
    ModelSpec,
    TrainedModel,
)
from entities.network import LayerKind
from src.errors import ArtifactError

FORMAT_VERSION = 1
DATASET_MAGIC = b"XAIBDSET"
MODEL_MAGIC = b"XAIBMODL"
EXPLANATION_MAGIC = b"XAIBEXPL"

ARCH_IDS = {"mlp": 0, "cnn": 1}
KIND_IDS: dict[LayerKind, int] = {
    "dense": 0,
    "conv2d": 1,
    "maxpool2d": 2,
    "relu": 3,
    "softmax": 4,
    "flatten": 5,
}
# kind, stride, pool, l2, weight ndim, 4 weight dims, has bias, bias length
_LAYER_ROW = struct.Struct("<IIIdI4III")


class ArtifactPaths:
    """Where each stage reads and writes under the output directory."""

    def __init__(self, out: str | Path) -> None:
        self.out = Path(out)

    @property
    def dataset_bin(self) -> Path:
        return self.out / "dataset.bin"

    @property
    def dataset_json(self) -> Path:
        return self.out / "dataset.json"

    @property
    def model_bin(self) -> Path:
        return self.out / "model.bin"

    @property
    def model_json(self) -> Path:
        return self.out / "model.json"

    @property
    def explanations(self) -> Path:
        return self.out / "explanations"

    def explanation_bin(self, method: str) -> Path:
        return self.explanations / f"{method}.bin"

    def explanation_json(self, method: str) -> Path:
        return self.explanations / f"{method}.json"

    @property
    def report(self) -> Path:
        return self.out / "report"


def write_bytes_atomic(path: Path, data: bytes) -> None:
    """Write to a temporary file in the same directory, then rename over `path`."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            _ = f.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_text_atomic(path: Path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_json(path: Path, data: dict[str, object]) -> None:
    write_text_atomic(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path: Path) -> dict[str, object]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ArtifactError(str(path), "file not found") from None
    except json.JSONDecodeError as exc:
        raise ArtifactError(str(path), f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ArtifactError(str(path), "expected a JSON object")
    return cast("dict[str, object]", data)


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<II", FORMAT_VERSION, 0)


class _Reader:
    """Sequential little-endian reader that reports truncation as ArtifactError."""

    def __init__(self, path: Path, magic: bytes) -> None:
        self.path = path
        try:
            self.data = path.read_bytes()
        except FileNotFoundError:
            raise ArtifactError(str(path), "file not found") from None
        self.pos = 0
        if self.take(8) != magic:
            raise ArtifactError(str(path), "bad magic")
        version, _reserved = self.unpack("<II")
        if version != FORMAT_VERSION:
            raise ArtifactError(str(path), f"unsupported version {version}")

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ArtifactError(str(self.path), "truncated payload")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple[int | float, ...]:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def array(self, dtype: str, count: int) -> NDArray[np.generic]:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise ArtifactError(str(self.path), "trailing bytes after payload")


def _ints(values: tuple[int | float, ...]) -> list[int]:
    return [int(v) for v in values]


# Dataset


def encode_dataset(dataset: Dataset) -> bytes:
    cfg = dataset.config
    v, h = cfg.grid
    parts = [
        _header(DATASET_MAGIC),
        struct.pack("<5I", cfg.members, cfg.years, v, h, cfg.classes),
        dataset.inputs.astype("<f8").tobytes(),
        dataset.year_index.astype("<u4").tobytes(),
        dataset.class_label.astype("<u4").tobytes(),
        dataset.member_index.astype("<u4").tobytes(),
        dataset.central_year.astype("<f8").tobytes(),
        dataset.split.astype("u1").tobytes(),
    ]
    return b"".join(parts)


def save_dataset(
    paths: ArtifactPaths, dataset: Dataset, stamp: dict[str, object]
) -> None:
    write_bytes_atomic(paths.dataset_bin, encode_dataset(dataset))
    write_json(paths.dataset_json, {**stamp, "config": asdict(dataset.config)})


def load_dataset(paths: ArtifactPaths) -> Dataset:
    sidecar = read_json(paths.dataset_json)
    raw_config = sidecar.get("config")
    if not isinstance(raw_config, dict):
        raise ArtifactError(str(paths.dataset_json), "missing config")
    try:
        config = DatasetConfig(
            **{k: tuple(v) if isinstance(v, list) else v for k, v in raw_config.items()}
        )
    except TypeError as exc:
        raise ArtifactError(str(paths.dataset_json), f"bad config: {exc}") from exc

    r = _Reader(paths.dataset_bin, DATASET_MAGIC)
    members, years, v, h, classes = _ints(r.unpack("<5I"))
    if (members, years, (v, h), classes) != (
        config.members,
        config.years,
        tuple(config.grid),
        config.classes,
    ):
        raise ArtifactError(str(paths.dataset_bin), "dimensions disagree with sidecar")
    n = members * years
    inputs = r.array("<f8", n * v * h).reshape(n, v, h).astype(np.float64)
    year_index = r.array("<u4", n).astype(np.int64)
    class_label = r.array("<u4", n).astype(np.int64)
    member_index = r.array("<u4", n).astype(np.int64)
    central = r.array("<f8", classes).astype(np.float64)
    split = r.array("u1", n).astype(np.uint8)
    r.finish()
    return Dataset(
        config=config,
        inputs=inputs,
        year_index=year_index,
        class_label=class_label,
        member_index=member_index,
        split=split,
        central_year=central,
    )


# Model


def encode_model(model: TrainedModel) -> bytes:
    rows: list[bytes] = []
    payload: list[bytes] = []
    for layer in model.layers:
        dims = [0, 0, 0, 0]
        ndim = 0
        if layer.weight is not None:
            ndim = layer.weight.ndim
            dims[:ndim] = list(layer.weight.shape)
            payload.append(layer.weight.astype("<f8").tobytes())
        bias_len = 0
        if layer.bias is not None:
            bias_len = int(layer.bias.shape[0])
            payload.append(layer.bias.astype("<f8").tobytes())
        rows.append(
            _LAYER_ROW.pack(
                KIND_IDS[layer.kind],
                layer.stride,
                layer.pool,
                layer.l2,
                ndim,
                *dims,
                int(layer.bias is not None),
                bias_len,
            )
        )
    head = _header(MODEL_MAGIC) + struct.pack(
        "<II", ARCH_IDS[model.spec.arch], len(model.layers)
    )
    return head + b"".join(rows) + b"".join(payload)


def save_model(
    paths: ArtifactPaths, model: TrainedModel, stamp: dict[str, object]
) -> None:
    write_bytes_atomic(paths.model_bin, encode_model(model))
    write_json(
        paths.model_json,
        {
            **stamp,
            "spec": asdict(model.spec),
            "train_log": [e.to_dict() for e in model.train_log],
            "performance": model.performance,
        },
    )


def _spec_from(raw: object, path: Path) -> ModelSpec:
    if not isinstance(raw, dict):
        raise ArtifactError(str(path), "missing model spec")
    try:
        fields = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return ModelSpec(**fields)
    except TypeError as exc:
        raise ArtifactError(str(path), f"bad model spec: {exc}") from exc


def load_model(paths: ArtifactPaths) -> TrainedModel:
    sidecar = read_json(paths.model_json)
    spec = _spec_from(sidecar.get("spec"), paths.model_json)

    r = _Reader(paths.model_bin, MODEL_MAGIC)
    arch_id, count = _ints(r.unpack("<II"))
    if arch_id != ARCH_IDS[spec.arch]:
        raise ArtifactError(str(paths.model_bin), "architecture disagrees with sidecar")
    kinds = {v: k for k, v in KIND_IDS.items()}
    rows = [_LAYER_ROW.unpack(r.take(_LAYER_ROW.size)) for _ in range(count)]
    layers: list[Layer] = []
    for row in rows:
        kind_id, stride, pool, l2, ndim, d0, d1, d2, d3, has_bias, bias_len = row
        if int(kind_id) not in kinds:
            raise ArtifactError(str(paths.model_bin), f"unknown layer kind {kind_id}")
        weight = None
        if int(ndim) > 0:
            shape = tuple(int(d) for d in (d0, d1, d2, d3)[: int(ndim)])
            weight = r.array("<f8", int(np.prod(shape))).reshape(shape)
        bias = r.array("<f8", int(bias_len)) if has_bias else None
        layers.append(
            Layer(
                kinds[int(kind_id)],
                weight=None if weight is None else weight.astype(np.float64),
                bias=None if bias is None else bias.astype(np.float64),
                stride=int(stride),
                pool=int(pool),
                l2=float(l2),
            )
        )
    r.finish()

    raw_log = sidecar.get("train_log")
    log = tuple(
        EpochLog.from_dict(cast("dict[str, object]", e))
        for e in (raw_log if isinstance(raw_log, list) else [])
    )
    raw_perf = sidecar.get("performance")
    performance: dict[str, dict[str, float]] = {}
    if isinstance(raw_perf, dict):
        for split, values in raw_perf.items():
            if isinstance(values, dict):
                performance[str(split)] = {str(k): float(v) for k, v in values.items()}
    return TrainedModel(
        spec=spec, layers=tuple(layers), train_log=log, performance=performance
    )


# Explanations


def encode_explanations(batch: ExplanationBatch) -> bytes:
    n, v, h = batch.relevance.shape
    return (
        _header(EXPLANATION_MAGIC)
        + struct.pack("<3I", n, v, h)
        + batch.relevance.astype("<f8").tobytes()
    )


def save_explanations(
    paths: ArtifactPaths, batch: ExplanationBatch, stamp: dict[str, object]
) -> None:
    write_bytes_atomic(paths.explanation_bin(batch.method), encode_explanations(batch))
    write_json(paths.explanation_json(batch.method), {**stamp, **batch.sidecar()})


def load_explanations(paths: ArtifactPaths, method: str) -> ExplanationBatch:
    sidecar = read_json(paths.explanation_json(method))
    r = _Reader(paths.explanation_bin(method), EXPLANATION_MAGIC)
    n, v, h = _ints(r.unpack("<3I"))
    relevance = r.array("<f8", n * v * h).reshape(n, v, h).astype(np.float64)
    r.finish()
    batch = ExplanationBatch.from_sidecar(sidecar, relevance)
    if len(batch) != n or batch.method != method:
        raise ArtifactError(
            str(paths.explanation_json(method)), "sidecar disagrees with payload"
        )
    return batch
