"""
Layer primitives: forward, input/parameter gradients and relevance passes.

All functions are batched. Dense layers take (n, in); conv2d and maxpool2d
take (n, channels, rows, cols).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from entities.network import Layer, LrpRule, ParamGrads
from src.errors import InvalidRuleError, ShapeMismatchError, UnsupportedOperationError

Array = NDArray[np.float64]

STABILIZER = 1e-9


def output_shape(layer: Layer, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Forward output shape for an input of shape `in_shape`."""
    _check_input(layer, in_shape)
    n = in_shape[0]
    if layer.kind == "dense":
        assert layer.weight is not None
        return (n, int(layer.weight.shape[0]))
    if layer.kind == "conv2d":
        assert layer.weight is not None
        kh, kw = layer.kernel
        s = layer.stride
        return (
            n,
            int(layer.weight.shape[0]),
            (in_shape[2] - kh) // s + 1,
            (in_shape[3] - kw) // s + 1,
        )
    if layer.kind == "maxpool2d":
        p = layer.pool
        return (n, in_shape[1], in_shape[2] // p, in_shape[3] // p)
    if layer.kind == "flatten":
        return (n, int(np.prod(in_shape[1:])))
    return tuple(in_shape)


def _check_input(layer: Layer, shape: tuple[int, ...]) -> None:
    if layer.kind == "dense":
        assert layer.weight is not None
        fan_in = int(layer.weight.shape[1])
        if len(shape) != 2 or shape[1] != fan_in:
            raise ShapeMismatchError("dense input", (shape[0], fan_in), shape)
    elif layer.kind == "conv2d":
        assert layer.weight is not None
        in_ch = int(layer.weight.shape[1])
        kh, kw = layer.kernel
        if len(shape) != 4 or shape[1] != in_ch:
            raise ShapeMismatchError("conv2d input", (shape[0], in_ch, kh, kw), shape)
        if shape[2] < kh or shape[3] < kw:
            raise ShapeMismatchError("conv2d input", (shape[0], in_ch, kh, kw), shape)
    elif layer.kind == "maxpool2d":
        p = layer.pool
        if len(shape) != 4 or shape[2] < p or shape[3] < p:
            raise ShapeMismatchError("maxpool2d input", (shape[0], 1, p, p), shape)
    elif layer.kind == "softmax" and len(shape) != 2:
        raise ShapeMismatchError("softmax input", (shape[0], -1), shape)


def _check_upstream(layer: Layer, x: Array, upstream: Array) -> None:
    expected = output_shape(layer, x.shape)
    if upstream.shape != expected:
        raise ShapeMismatchError(f"{layer.kind} upstream", expected, upstream.shape)


# Linear maps with an explicit weight, bias excluded. The LRP rules reuse
# them with modified weights.


def _conv_windows(layer: Layer, x: Array) -> Array:
    kh, kw = layer.kernel
    s = layer.stride
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return windows[:, :, ::s, ::s]


def _linear(layer: Layer, x: Array, weight: Array) -> Array:
    if layer.kind == "dense":
        return x @ weight.T
    return np.einsum("ncijkl,ockl->noij", _conv_windows(layer, x), weight)


def _linear_t(layer: Layer, x_shape: tuple[int, ...], weight: Array, g: Array) -> Array:
    """Transpose of `_linear`: pulls `g` back to the input side."""
    if layer.kind == "dense":
        return g @ weight
    kh, kw = layer.kernel
    s = layer.stride
    oh, ow = g.shape[2], g.shape[3]
    out = np.zeros(x_shape, dtype=np.float64)
    for a in range(kh):
        for b in range(kw):
            out[:, :, a : a + s * (oh - 1) + 1 : s, b : b + s * (ow - 1) + 1 : s] += (
                np.einsum("noij,oc->ncij", g, weight[:, :, a, b])
            )
    return out


def _pool_blocks(layer: Layer, x: Array) -> tuple[Array, NDArray[np.intp]]:
    """Pool windows as (n, c, oh, ow, p*p) plus the winning position per window."""
    p = layer.pool
    n, c, rows, cols = x.shape
    oh, ow = rows // p, cols // p
    cropped = x[:, :, : oh * p, : ow * p]
    blocks = (
        cropped.reshape(n, c, oh, p, ow, p)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, oh, ow, p * p)
    )
    # argmax returns the first maximum, i.e. the lowest linear index
    return blocks, np.argmax(blocks, axis=-1)


def _pool_route(layer: Layer, x: Array, upstream: Array) -> Array:
    """Send each window's upstream value to its winning position."""
    p = layer.pool
    n, c, rows, cols = x.shape
    oh, ow = rows // p, cols // p
    _, winner = _pool_blocks(layer, x)
    onehot = np.arange(p * p) == winner[..., None]
    routed = (onehot * upstream[..., None]).reshape(n, c, oh, ow, p, p)
    out = np.zeros_like(x)
    out[:, :, : oh * p, : ow * p] = routed.transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, oh * p, ow * p
    )
    return out


def softmax(z: Array) -> Array:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def forward(layer: Layer, x: Array) -> Array:
    _check_input(layer, x.shape)
    if layer.kind in ("dense", "conv2d"):
        assert layer.weight is not None
        y = _linear(layer, x, layer.weight)
        if layer.bias is not None:
            if layer.kind == "dense":
                y = y + layer.bias
            else:
                y = y + layer.bias[None, :, None, None]
        return y
    if layer.kind == "maxpool2d":
        blocks, _ = _pool_blocks(layer, x)
        return blocks.max(axis=-1)
    if layer.kind == "relu":
        return np.maximum(x, 0.0)
    if layer.kind == "softmax":
        return softmax(x)
    return x.reshape(x.shape[0], -1)


def backward_input(layer: Layer, x: Array, upstream: Array) -> Array:
    """Gradient of the loss with respect to the layer input."""
    _check_upstream(layer, x, upstream)
    if layer.kind in ("dense", "conv2d"):
        assert layer.weight is not None
        return _linear_t(layer, x.shape, layer.weight, upstream)
    if layer.kind == "maxpool2d":
        return _pool_route(layer, x, upstream)
    if layer.kind == "relu":
        return upstream * (x > 0)
    if layer.kind == "softmax":
        s = softmax(x)
        return s * (upstream - (upstream * s).sum(axis=1, keepdims=True))
    return upstream.reshape(x.shape)


def backward_params(layer: Layer, x: Array, upstream: Array) -> ParamGrads:
    """Weight and bias gradients, with 2·l2·w added to the weight gradient."""
    if not layer.has_params:
        raise UnsupportedOperationError("backward_params", layer.kind)
    _check_upstream(layer, x, upstream)
    assert layer.weight is not None
    if layer.kind == "dense":
        gw = upstream.T @ x
        gb = upstream.sum(axis=0)
    else:
        gw = np.einsum("ncijkl,noij->ockl", _conv_windows(layer, x), upstream)
        gb = upstream.sum(axis=(0, 2, 3))
    if layer.l2:
        gw = gw + 2.0 * layer.l2 * layer.weight
    return ParamGrads(weight=gw, bias=gb if layer.bias is not None else None)


def _stabilize(z: Array, eps: float = STABILIZER) -> Array:
    return z + np.where(z >= 0, 1.0, -1.0) * eps


def _with_bias(layer: Layer, z: Array, bias: Array | None) -> Array:
    if bias is None:
        return z
    if layer.kind == "dense":
        return z + bias
    return z + bias[None, :, None, None]


def _share(
    layer: Layer,
    r: Array,
    terms: list[tuple[Array, Array, float]],
    eps: float = STABILIZER,
    bias: Array | None = None,
) -> Array:
    """
    Proportional redistribution of `r`.

    Each term (a, w, sign) contributes sign * a_i w_ij to z_ij; relevance
    flows back in proportion to each term's share of z_j. `bias` enters z_j
    but keeps its share, so layer sums are conserved only for zero biases.
    """
    shape = terms[0][0].shape
    z = sum(sign * _linear(layer, a, w) for a, w, sign in terms)
    z = _with_bias(layer, np.asarray(z), bias)
    s = r / _stabilize(z, eps)
    out = np.zeros(shape, dtype=np.float64)
    for a, w, sign in terms:
        out += sign * a * _linear_t(layer, shape, w, s)
    return out


def _check_rule(rule: LrpRule) -> None:
    if rule.name == "alpha_beta":
        if rule.alpha < 0 or rule.beta < 0:
            raise InvalidRuleError("alpha_beta", "alpha and beta must be >= 0")
        if abs(rule.alpha + rule.beta - 1.0) > 1e-12:
            raise InvalidRuleError(
                "alpha_beta",
                f"alpha + beta must equal 1 (got {rule.alpha} + {rule.beta})",
            )
    elif rule.name == "epsilon" and rule.epsilon < 0:
        raise InvalidRuleError("epsilon", "epsilon must be >= 0")
    elif rule.name == "gamma" and rule.gamma < 0:
        raise InvalidRuleError("gamma", "gamma must be >= 0")
    elif rule.name == "zbox" and rule.low > rule.high:
        raise InvalidRuleError("zbox", "low bound exceeds high bound")
    elif rule.name not in ("z", "alpha_beta", "epsilon", "gamma", "zbox"):
        raise InvalidRuleError(rule.name, "unknown rule")


def relevance_backward(
    layer: Layer, x: Array, relevance: Array, rule: LrpRule
) -> Array:
    """
    Input-side relevance of one layer.

    Parameterless layers ignore `rule`: relu and flatten pass relevance
    through, maxpool routes it to the window winner. Biases count in the
    denominators (positive and negative parts separately for alpha-beta)
    but never pass relevance down, so LRP-z equals input times gradient on
    ReLU networks.
    """
    _check_rule(rule)
    if layer.kind == "softmax":
        raise UnsupportedOperationError("relevance_backward", "softmax")
    _check_upstream(layer, x, relevance)
    if layer.kind == "relu":
        return relevance
    if layer.kind == "flatten":
        return relevance.reshape(x.shape)
    if layer.kind == "maxpool2d":
        return _pool_route(layer, x, relevance)

    assert layer.weight is not None
    w = layer.weight
    w_pos = np.maximum(w, 0.0)
    w_neg = np.minimum(w, 0.0)
    b = layer.bias

    if rule.name == "z":
        return _share(layer, relevance, [(x, w, 1.0)], bias=b)
    if rule.name == "epsilon":
        eps = max(rule.epsilon, STABILIZER)
        return _share(layer, relevance, [(x, w, 1.0)], eps, bias=b)
    if rule.name == "gamma":
        gb = None if b is None else b + rule.gamma * np.maximum(b, 0.0)
        return _share(layer, relevance, [(x, w + rule.gamma * w_pos, 1.0)], bias=gb)
    if rule.name == "zbox":
        low = np.full_like(x, rule.low)
        high = np.full_like(x, rule.high)
        return _share(
            layer,
            relevance,
            [(x, w, 1.0), (low, w_pos, -1.0), (high, w_neg, -1.0)],
            bias=b,
        )

    x_pos = np.maximum(x, 0.0)
    x_neg = np.minimum(x, 0.0)
    b_pos = None if b is None else np.maximum(b, 0.0)
    b_neg = None if b is None else np.minimum(b, 0.0)
    positive = _share(
        layer, relevance, [(x_pos, w_pos, 1.0), (x_neg, w_neg, 1.0)], bias=b_pos
    )
    if rule.beta == 0:
        return rule.alpha * positive
    negative = _share(
        layer, relevance, [(x_pos, w_neg, 1.0), (x_neg, w_pos, 1.0)], bias=b_neg
    )
    return rule.alpha * positive + rule.beta * negative
