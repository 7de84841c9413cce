"""
Attribution methods.

Every method explains the pre-softmax logit of the target class and
returns a map shaped like the input grid (v, h).
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from entities import Explanation, LrpRule, TrainedModel, XaiConfig
from entities.config import METHODS
from entities.explanation import BASELINE
from src.errors import ConfigError, InvalidRuleError, UnsupportedOperationError
from src.models import as_batch, logit_gradient, perturb_layers, trace
from src.tensor_core import relevance_backward

Array = NDArray[np.float64]

# Stable integer ids for seeding; never reorder.
METHOD_CODES: dict[str, int] = {m: i + 1 for i, m in enumerate(METHODS)}
METHOD_CODES[BASELINE] = 100

LRP_KINDS = ("dense", "conv2d", "maxpool2d", "relu", "flatten")


def task_rng(
    master: int, sample: int, method: str, metric: int = 0, draw: int = 0
) -> np.random.Generator:
    """Counter-based generator keyed on (master, sample, method, metric, draw)."""
    return np.random.default_rng([master, sample, METHOD_CODES[method], metric, draw])


def _targets(c: int | NDArray[np.int64], n: int) -> NDArray[np.int64]:
    return np.broadcast_to(np.asarray(c, dtype=np.int64), (n,)).copy()


def _grid(model: TrainedModel, batch: Array) -> Array:
    v, h = model.spec.input_shape
    return batch.reshape(batch.shape[0], v, h)


# Batched base methods: xs is (n, v, h), result is (n, v, h).


def gradient_maps(model: TrainedModel, xs: Array, c: int | NDArray[np.int64]) -> Array:
    batch = as_batch(model, xs)
    return _grid(model, logit_gradient(model, batch, _targets(c, batch.shape[0])))


def input_gradient_maps(
    model: TrainedModel, xs: Array, c: int | NDArray[np.int64]
) -> Array:
    grid = _grid(model, as_batch(model, xs))
    return gradient_maps(model, grid, c) * grid


def integrated_gradients_maps(
    model: TrainedModel,
    xs: Array,
    c: int | NDArray[np.int64],
    baseline: Array | float = 0.0,
    steps: int = 64,
) -> Array:
    """(x - x') times the midpoint-rule average of gradients along the path."""
    grid = _grid(model, as_batch(model, xs))
    n = grid.shape[0]
    ref = np.broadcast_to(np.asarray(baseline, dtype=np.float64), grid.shape)
    alphas = (np.arange(steps, dtype=np.float64) + 0.5) / steps
    path = ref[:, None] + alphas[None, :, None, None] * (grid - ref)[:, None]
    targets = np.repeat(_targets(c, n), steps)
    grads = gradient_maps(model, path.reshape(n * steps, *grid.shape[1:]), targets)
    avg = grads.reshape(n, steps, *grid.shape[1:]).mean(axis=1)
    return (grid - ref) * avg


def composite_rules(
    model: TrainedModel,
    bounds: tuple[float, float],
    conv_rule: LrpRule | None = None,
    dense_rule: LrpRule | None = None,
) -> dict[int, LrpRule]:
    """Input layer -> z-bounds, other conv -> gamma, other dense -> epsilon."""
    rules: dict[int, LrpRule] = {}
    for i in model.param_indices:
        if i == model.param_indices[0]:
            rules[i] = LrpRule.zbox(*bounds)
        elif model.layers[i].kind == "conv2d":
            rules[i] = conv_rule or LrpRule.gamma_rule()
        else:
            rules[i] = dense_rule or LrpRule.eps()
    return rules


def lrp_maps(
    model: TrainedModel,
    xs: Array,
    c: int | NDArray[np.int64],
    rule: LrpRule | dict[int, LrpRule],
) -> Array:
    """
    Layer-wise relevance from the target logit down to the input.

    `rule` is one rule for every layer or a per-layer-index mapping; layers
    missing from the mapping use the z rule.
    """
    acts = trace(model, xs)
    out = acts[-1]
    n = out.shape[0]
    r = np.zeros_like(out)
    rows = np.arange(n)
    targets = _targets(c, n)
    r[rows, targets] = out[rows, targets]
    for i in range(len(model.layers) - 2, -1, -1):
        layer = model.layers[i]
        if layer.kind not in LRP_KINDS:
            raise UnsupportedOperationError("lrp", f"{layer.kind} (layer {i})")
        layer_rule = rule if isinstance(rule, LrpRule) else rule.get(i, LrpRule.z())
        r = relevance_backward(layer, acts[i], r, layer_rule)
    return _grid(model, r)


BaseFn = Callable[[TrainedModel, Array, "int | NDArray[np.int64]"], Array]


def base_function(
    method: str, cfg: XaiConfig, bounds: tuple[float, float] = (-1.0, 1.0)
) -> BaseFn:
    """Batched map function for a non-smoothed method."""
    if method == "gradient":
        return gradient_maps
    if method == "input_gradient":
        return input_gradient_maps
    if method == "integrated_gradients":
        return lambda m, xs, c: integrated_gradients_maps(
            m, xs, c, baseline=cfg.ig_baseline, steps=cfg.ig_steps
        )
    if method == "lrp_z":
        return lambda m, xs, c: lrp_maps(m, xs, c, LrpRule.z())
    if method == "lrp_alpha_beta":
        rule = LrpRule.alpha_beta(cfg.lrp_alpha, cfg.lrp_beta)
        return lambda m, xs, c: lrp_maps(m, xs, c, rule)
    if method == "lrp_composite":
        conv_rule = LrpRule.gamma_rule(cfg.lrp_gamma)
        dense_rule = LrpRule.eps(cfg.lrp_epsilon)
        return lambda m, xs, c: lrp_maps(
            m, xs, c, composite_rules(m, bounds, conv_rule, dense_rule)
        )
    raise ConfigError("method", f"{method!r} is not a base method")


def smoothgrad_map(
    model: TrainedModel,
    x: Array,
    c: int,
    base: BaseFn,
    samples: int,
    sigma: float,
    rng: np.random.Generator,
) -> Array:
    """Mean of base maps over x and `samples` Gaussian-perturbed copies."""
    if samples == 0 or sigma == 0:
        return base(model, x[None], c)[0]
    noise = rng.normal(0.0, sigma, size=(samples, *x.shape))
    xs = np.concatenate([x[None], x[None] + noise])
    return base(model, xs, c).mean(axis=0)


def noisegrad_map(
    model: TrainedModel,
    x: Array,
    c: int,
    base: BaseFn,
    samples: int,
    sigma: float,
    rng: np.random.Generator,
    include_bias: bool = False,
) -> Array:
    """Mean of base maps over the model and `samples` weight-perturbed copies."""
    if samples == 0 or sigma == 0:
        return base(model, x[None], c)[0]
    maps = [base(model, x[None], c)[0]]
    for _ in range(samples):
        noisy = perturb_layers(model, rng, sigma, include_bias=include_bias)
        maps.append(base(noisy, x[None], c)[0])
    return np.stack(maps).mean(axis=0)


def fusiongrad_map(
    model: TrainedModel,
    x: Array,
    c: int,
    base: BaseFn,
    models: int,
    inputs: int,
    input_sigma: float,
    param_sigma: float,
    input_rng: np.random.Generator,
    param_rng: np.random.Generator,
    include_bias: bool = False,
) -> Array:
    """
    Mean over (models + 1) x (inputs + 1) maps; index 0 on either axis is
    the unperturbed model/input. The input noise is shared across models.
    """
    if (models == 0 or param_sigma == 0) and (inputs == 0 or input_sigma == 0):
        return base(model, x[None], c)[0]
    if inputs == 0 or input_sigma == 0:
        xs = x[None]
    else:
        noise = input_rng.normal(0.0, input_sigma, size=(inputs, *x.shape))
        xs = np.concatenate([x[None], x[None] + noise])
    nets = [model]
    if models > 0 and param_sigma != 0:
        nets += [
            perturb_layers(model, param_rng, param_sigma, include_bias=include_bias)
            for _ in range(models)
        ]
    maps = np.concatenate([base(net, xs, c) for net in nets])
    return maps.mean(axis=0)


def normalize_map(r: Array) -> Array:
    """
    Scale positive entries by the max and negative entries by |min|.

    Zero stays zero, so sign and argmax are preserved.
    """
    pos_max = float(r.max(initial=0.0))
    neg_min = float(r.min(initial=0.0))
    out = np.zeros_like(r)
    if pos_max > 0:
        out = np.where(r > 0, r / pos_max, out)
    if neg_min < 0:
        out = np.where(r < 0, r / -neg_min, out)
    return out


def minmax_normalize(e: Explanation) -> Explanation:
    """All-zero maps come back unchanged but flagged normalized."""
    return e.with_relevance(normalize_map(e.relevance), normalized=True)


def random_baseline_map(shape: tuple[int, ...], rng: np.random.Generator) -> Array:
    return rng.uniform(0.0, 1.0, size=shape)


@dataclass(frozen=True)
class Explainer:
    """
    A configured method, callable as `explainer(model, x, c, rng)`.

    `data_range` is (x_min, x_max) of the dataset; it scales the input noise
    of smoothgrad/fusiongrad and bounds the composite input rule.
    """

    method: str
    cfg: XaiConfig
    data_range: tuple[float, float] = (-1.0, 1.0)

    @property
    def is_baseline(self) -> bool:
        return self.method == BASELINE

    @property
    def params(self) -> dict[str, object]:
        cfg = self.cfg
        span = self.data_range[1] - self.data_range[0]
        if self.method == "smoothgrad":
            return {
                "base": cfg.base_method,
                "samples": cfg.sg_samples,
                "sigma": cfg.sg_sigma_scale * span,
            }
        if self.method == "noisegrad":
            return {
                "base": cfg.base_method,
                "samples": cfg.ng_samples,
                "sigma": cfg.ng_sigma,
                "perturb_bias": cfg.ng_perturb_bias,
            }
        if self.method == "fusiongrad":
            return {
                "base": cfg.base_method,
                "models": cfg.fg_models,
                "inputs": cfg.fg_inputs,
                "input_sigma": cfg.fg_sigma_scale * span,
                "param_sigma": cfg.fg_ng_sigma,
            }
        if self.method == "integrated_gradients":
            return {"steps": cfg.ig_steps, "baseline": cfg.ig_baseline}
        if self.method == "lrp_alpha_beta":
            return {"alpha": cfg.lrp_alpha, "beta": cfg.lrp_beta}
        if self.method == "lrp_composite":
            return {
                "epsilon": cfg.lrp_epsilon,
                "gamma": cfg.lrp_gamma,
                "low": self.data_range[0],
                "high": self.data_range[1],
            }
        return {}

    def __call__(
        self, model: TrainedModel, x: Array, c: int, rng: np.random.Generator
    ) -> Explanation:
        v, h = model.spec.input_shape
        x = np.asarray(x, dtype=np.float64).reshape(v, h)
        return Explanation(
            method=self.method,
            target_class=int(c),
            relevance=self.relevance(model, x, c, rng),
            params=self.params,
        )

    def relevance(
        self, model: TrainedModel, x: Array, c: int, rng: np.random.Generator
    ) -> Array:
        cfg = self.cfg
        span = self.data_range[1] - self.data_range[0]
        if self.is_baseline:
            return random_baseline_map(x.shape, rng)
        if self.method in ("smoothgrad", "noisegrad", "fusiongrad"):
            base = base_function(cfg.base_method, cfg, self.data_range)
            input_rng, param_rng = rng.spawn(2)
            if self.method == "smoothgrad":
                sigma = cfg.sg_sigma_scale * span
                return smoothgrad_map(
                    model, x, c, base, cfg.sg_samples, sigma, input_rng
                )
            if self.method == "noisegrad":
                return noisegrad_map(
                    model,
                    x,
                    c,
                    base,
                    cfg.ng_samples,
                    cfg.ng_sigma,
                    param_rng,
                    include_bias=cfg.ng_perturb_bias,
                )
            return fusiongrad_map(
                model,
                x,
                c,
                base,
                cfg.fg_models,
                cfg.fg_inputs,
                cfg.fg_sigma_scale * span,
                cfg.fg_ng_sigma,
                input_rng,
                param_rng,
                include_bias=cfg.ng_perturb_bias,
            )
        return base_function(self.method, cfg, self.data_range)(model, x[None], c)[0]


# Single-sample conveniences.


def gradient(model: TrainedModel, x: Array, c: int) -> Explanation:
    return Explanation("gradient", c, gradient_maps(model, np.asarray(x)[None], c)[0])


def input_gradient(model: TrainedModel, x: Array, c: int) -> Explanation:
    return Explanation(
        "input_gradient", c, input_gradient_maps(model, np.asarray(x)[None], c)[0]
    )


def integrated_gradients(
    model: TrainedModel,
    x: Array,
    c: int,
    baseline: Array | float = 0.0,
    steps: int = 64,
) -> Explanation:
    relevance = integrated_gradients_maps(
        model, np.asarray(x)[None], c, baseline=baseline, steps=steps
    )[0]
    return Explanation("integrated_gradients", c, relevance, params={"steps": steps})


def lrp(
    model: TrainedModel,
    x: Array,
    c: int,
    rule: LrpRule | str = "z",
    bounds: tuple[float, float] = (-1.0, 1.0),
) -> Explanation:
    """`rule` is an LrpRule, "z" or "composite" (bounded by `bounds`)."""
    if isinstance(rule, LrpRule):
        resolved: LrpRule | dict[int, LrpRule] = rule
        name = rule.describe()
    elif rule == "z":
        resolved, name = LrpRule.z(), "z"
    elif rule == "composite":
        resolved, name = composite_rules(model, bounds), "composite"
    else:
        raise InvalidRuleError(rule, "expected an LrpRule, 'z' or 'composite'")
    relevance = lrp_maps(model, np.asarray(x)[None], c, resolved)[0]
    return Explanation("lrp", c, relevance, params={"rule": name})
