"""MLP and CNN classifiers: construction, training and year regression."""

from __future__ import annotations

import logging
import math

import numpy as np
from numpy.typing import NDArray

from entities import Dataset, EpochLog, Layer, ModelSpec, TrainConfig, TrainedModel
from entities.dataset import SplitName
from src.errors import ShapeMismatchError, TrainingFailureError
from src.tensor_core import backward_input, backward_params, forward, softmax

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _dense(
    rng: np.random.Generator,
    fan_in: int,
    fan_out: int,
    spec: ModelSpec,
    l2: float = 0.0,
) -> Layer:
    return Layer(
        "dense",
        weight=_uniform(rng, (fan_out, fan_in), fan_in),
        bias=np.zeros(fan_out) if spec.use_bias else None,
        l2=l2,
    )


def build_layers(spec: ModelSpec, rng: np.random.Generator) -> tuple[Layer, ...]:
    """Freshly initialized layers for `spec`, input side first."""
    v, h = spec.input_shape
    if spec.arch == "mlp":
        layers: list[Layer] = [Layer("flatten")]
        width = v * h
        for hidden in spec.hidden:
            layers += [_dense(rng, width, hidden, spec), Layer("relu")]
            width = hidden
        layers += [_dense(rng, width, spec.classes, spec), Layer("softmax")]
        return tuple(layers)

    k, s, p = spec.kernel, spec.stride, spec.pool
    ch = spec.conv_channels
    conv = Layer(
        "conv2d",
        weight=_uniform(rng, (ch, 1, k, k), k * k),
        bias=np.zeros(ch) if spec.use_bias else None,
        stride=s,
    )
    rows = ((v - k) // s + 1) // p
    cols = ((h - k) // s + 1) // p
    flat = ch * rows * cols
    return (
        conv,
        Layer("relu"),
        Layer("maxpool2d", pool=p),
        Layer("flatten"),
        _dense(rng, flat, spec.dense_width, spec, l2=spec.l2_coeff),
        Layer("relu"),
        _dense(rng, spec.dense_width, spec.classes, spec),
        Layer("softmax"),
    )


def init_model(spec: ModelSpec, seed: int) -> TrainedModel:
    layers = build_layers(spec, np.random.default_rng(seed))
    return TrainedModel(spec=spec, layers=layers)


def as_batch(model: TrainedModel, x: Array) -> Array:
    """Reshape (v, h), (n, v, h) or (n, 1, v, h) input to (n, 1, v, h)."""
    v, h = model.spec.input_shape
    x = np.asarray(x, dtype=np.float64)
    if x.shape == (v, h):
        return x[None, None]
    if x.ndim == 3 and x.shape[1:] == (v, h):
        return x[:, None]
    if x.ndim == 4 and x.shape[1:] == (1, v, h):
        return x
    raise ShapeMismatchError("model input", (-1, 1, v, h), x.shape)


def trace(model: TrainedModel, x: Array) -> list[Array]:
    """
    Inputs of every layer up to the logits.

    Entry i is the input of `layers[i]`; the last entry is the logits.
    """
    acts = [as_batch(model, x)]
    for layer in model.layers[:-1]:
        acts.append(forward(layer, acts[-1]))
    return acts


def logits(model: TrainedModel, x: Array) -> Array:
    return trace(model, x)[-1]


def predict_proba(model: TrainedModel, x: Array) -> Array:
    return softmax(logits(model, x))


def predict_class(model: TrainedModel, x: Array) -> NDArray[np.int64]:
    return np.argmax(logits(model, x), axis=1).astype(np.int64)


def backprop(
    model: TrainedModel, acts: list[Array], upstream: Array
) -> tuple[Array, dict[int, tuple[Array, Array | None]]]:
    """Pull a logit-space gradient back to the input, collecting parameter grads."""
    grads: dict[int, tuple[Array, Array | None]] = {}
    g = upstream
    for i in range(len(model.layers) - 2, -1, -1):
        layer = model.layers[i]
        if layer.has_params:
            pg = backward_params(layer, acts[i], g)
            grads[i] = (pg.weight, pg.bias)
        g = backward_input(layer, acts[i], g)
    return g, grads


def logit_gradient(model: TrainedModel, x: Array, targets: NDArray[np.int64]) -> Array:
    """d logit[target] / d x per sample, shaped (n, 1, v, h)."""
    acts = trace(model, x)
    out = acts[-1]
    onehot = np.zeros_like(out)
    onehot[np.arange(out.shape[0]), targets] = 1.0
    g = onehot
    for i in range(len(model.layers) - 2, -1, -1):
        g = backward_input(model.layers[i], acts[i], g)
    return g


def _loss(model: TrainedModel, z: Array, labels: NDArray[np.int64]) -> float:
    shifted = z - z.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -float(log_p[np.arange(z.shape[0]), labels].mean())
    penalty = sum(
        layer.l2 * float(np.sum(layer.weight**2))
        for layer in model.layers
        if layer.has_params and layer.l2 and layer.weight is not None
    )
    return ce + penalty


def _evaluate_split(
    model: TrainedModel, x: Array, labels: NDArray[np.int64]
) -> tuple[float, float]:
    if x.shape[0] == 0:
        return float("nan"), float("nan")
    z = logits(model, x)
    return _loss(model, z, labels), float(np.mean(np.argmax(z, axis=1) == labels))


def train(spec: ModelSpec, dataset: Dataset, hyper: TrainConfig) -> TrainedModel:
    """
    Mini-batch SGD with momentum on cross-entropy, early stopping on
    validation loss. The parameters of the best validation epoch are kept.
    """
    rng = np.random.default_rng(hyper.seed)
    model = TrainedModel(spec=spec, layers=build_layers(spec, rng))

    train_idx = dataset.indices("train")
    val_idx = dataset.indices("val")
    x_train = as_batch(model, dataset.inputs[train_idx])
    y_train = dataset.class_label[train_idx]
    x_val = as_batch(model, dataset.inputs[val_idx])
    y_val = dataset.class_label[val_idx]

    velocity: dict[int, tuple[Array, Array | None]] = {
        i: (
            np.zeros_like(layer.weight),
            None if layer.bias is None else np.zeros_like(layer.bias),
        )
        for i, layer in enumerate(model.layers)
        if layer.has_params and layer.weight is not None
    }

    log: list[EpochLog] = []
    best = model
    best_loss = math.inf
    stale = 0
    n = x_train.shape[0]
    for epoch in range(1, hyper.epochs + 1):
        order = rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            acts = trace(model, x_train[batch])
            z = acts[-1]
            loss = _loss(model, z, y_train[batch])
            if not math.isfinite(loss):
                raise TrainingFailureError(epoch, loss)
            g = softmax(z)
            g[np.arange(batch.shape[0]), y_train[batch]] -= 1.0
            _, grads = backprop(model, acts, g / batch.shape[0])

            layers = list(model.layers)
            for i, (gw, gb) in grads.items():
                vw, vb = velocity[i]
                vw = hyper.momentum * vw - hyper.learning_rate * gw
                if vb is not None and gb is not None:
                    vb = hyper.momentum * vb - hyper.learning_rate * gb
                velocity[i] = (vw, vb)
                layer = layers[i]
                assert layer.weight is not None
                bias = None if layer.bias is None or vb is None else layer.bias + vb
                layers[i] = layer.with_params(layer.weight + vw, bias)
            model = model.with_layers(tuple(layers))

        train_loss, train_acc = _evaluate_split(model, x_train, y_train)
        val_loss, val_acc = _evaluate_split(model, x_val, y_val)
        if not math.isfinite(train_loss):
            raise TrainingFailureError(epoch, train_loss)
        log.append(EpochLog(epoch, train_loss, train_acc, val_loss, val_acc))
        logger.debug(
            "epoch done",
            extra={
                "epoch": epoch,
                "loss": round(train_loss, 6),
                "val_loss": round(val_loss, 6),
            },
        )

        monitored = val_loss if math.isfinite(val_loss) else train_loss
        if monitored < best_loss:
            best, best_loss, stale = model, monitored, 0
        else:
            stale += 1
            if stale >= hyper.patience:
                logger.info(
                    "early stop", extra={"epoch": epoch, "best_loss": best_loss}
                )
                break

    trained = TrainedModel(spec=spec, layers=best.layers, train_log=tuple(log))
    performance = evaluate_performance(trained, dataset)
    logger.info(
        "training finished",
        extra={
            "epochs": len(log),
            "val_accuracy": performance.get("val", {}).get("accuracy"),
            "test_accuracy": performance.get("test", {}).get("accuracy"),
        },
    )
    return TrainedModel(
        spec=spec, layers=best.layers, train_log=tuple(log), performance=performance
    )


def predict_year(proba: Array, central_years: Array) -> Array | float:
    """Probability-weighted year: sum_i y_i * Y_i. Accepts one vector or a batch."""
    years = np.asarray(central_years, dtype=np.float64)
    result = np.asarray(proba, dtype=np.float64) @ years
    if np.ndim(result) == 0:
        return float(result)
    return result


def predict_years(model: TrainedModel, x: Array, central_years: Array) -> Array:
    return np.asarray(predict_year(predict_proba(model, x), central_years))


def evaluate_performance(
    model: TrainedModel, dataset: Dataset
) -> dict[str, dict[str, float]]:
    """Accuracy and year RMSE for every non-empty split."""
    report: dict[str, dict[str, float]] = {}
    split_names: tuple[SplitName, ...] = ("train", "val", "test")
    for name in split_names:
        idx = dataset.indices(name)
        if idx.shape[0] == 0:
            continue
        proba = predict_proba(model, dataset.inputs[idx])
        years = np.asarray(predict_year(proba, dataset.central_year))
        accuracy = float(np.mean(np.argmax(proba, axis=1) == dataset.class_label[idx]))
        rmse = float(np.sqrt(np.mean((years - dataset.true_year[idx]) ** 2)))
        report[name] = {"accuracy": accuracy, "rmse": rmse}
    return report


def correct_prediction_mask(
    model: TrainedModel, dataset: Dataset, tolerance_years: float = 2
) -> NDArray[np.bool_]:
    """True where the regressed year is within `tolerance_years` of the truth."""
    years = predict_years(model, dataset.inputs, dataset.central_year)
    return np.abs(years - dataset.true_year) <= tolerance_years


def perturb_layers(
    model: TrainedModel,
    rng: np.random.Generator,
    sigma: float,
    indices: tuple[int, ...] | None = None,
    include_bias: bool = False,
) -> TrainedModel:
    """
    Copy of `model` with weights multiplied elementwise by N(1, sigma) noise.

    `indices` selects layers (default: every parameterized layer).
    """
    targets = model.param_indices if indices is None else indices
    layers = list(model.layers)
    for i in targets:
        layer = layers[i]
        assert layer.weight is not None
        weight = layer.weight * rng.normal(1.0, sigma, size=layer.weight.shape)
        bias = layer.bias
        if include_bias and bias is not None:
            bias = bias * rng.normal(1.0, sigma, size=bias.shape)
        layers[i] = layer.with_params(weight, bias)
    return model.with_layers(tuple(layers))
