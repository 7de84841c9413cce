from __future__ import annotations

import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest

from entities import MetricConfig, TrainedModel
from src import explainers as ex
from src import metrics as m
from src.errors import ConfigError, ScoreError
from src.models import logits

RAW = MetricConfig(normalize=False)


def _gradient(model, x, c, rng):
    return ex.gradient_maps(model, x[None], c)[0]


def _input_gradient(model, x, c, rng):
    return ex.input_gradient_maps(model, x[None], c)[0]


def _ones(model, x, c, rng):
    return np.ones_like(x)


def _identity(model, x, c, rng):
    return np.array(x, copy=True)


def _square(model, x, c, rng):
    return x**2


def _scaled(model, x, c, rng):
    return 5.0 * x


def _noisy(model, x, c, rng):
    return rng.normal(size=x.shape)


class TestSimilarities:
    def test_pearson_negation(self):
        a = np.random.default_rng(0).normal(size=(8, 6))
        assert m.pearson(a, -a) == pytest.approx(-1.0)

    def test_pearson_constant_maps(self):
        assert m.pearson(np.ones(4), np.ones(4)) == 1.0
        assert m.pearson(np.ones(4), np.arange(4.0)) == 0.0

    def test_spearman_monotone(self):
        a = np.arange(10.0)
        assert m.spearman(a, a**3) == pytest.approx(1.0)

    def test_ssim_self(self):
        a = np.random.default_rng(1).normal(size=(8, 6))
        assert m.ssim(a, a) == pytest.approx(1.0)
        assert m.ssim(np.zeros(3), np.zeros(3)) == 1.0

    @pytest.mark.parametrize("name", ["pearson", "spearman", "ssim"])
    def test_bounded(self, name):
        rng = np.random.default_rng(2)
        fn = m.SIMILARITIES[name]
        for _ in range(50):
            a, b = rng.normal(size=(2, 20))
            assert -1.0 - 1e-12 <= fn(a, b) <= 1.0 + 1e-12


class TestAvgSensitivity:
    def test_constant_map(self, mlp: TrainedModel, x):
        cfg = replace(RAW, robustness_samples=3)
        score = m.avg_sensitivity(mlp, _ones, x, 0, cfg, np.random.default_rng(0))
        assert score == 0.0

    def test_linear_gradient(self, linear: TrainedModel, x):
        cfg = MetricConfig(robustness_samples=3)
        score = m.avg_sensitivity(
            linear, _gradient, x, 0, cfg, np.random.default_rng(0)
        )
        assert score == pytest.approx(0.0, abs=1e-12)

    def test_two_pixel_formula(self, mlp: TrainedModel):
        x = np.array([1.0, 2.0])
        cfg = replace(RAW, robustness_samples=1, robustness_noise=0.3)
        score = m.avg_sensitivity(mlp, _square, x, 0, cfg, np.random.default_rng(5))
        noise_rng, _ = np.random.default_rng(5).spawn(2)
        d = noise_rng.normal(0.0, 0.3, size=2)
        expected = np.linalg.norm(x**2 - (x + d) ** 2) / np.linalg.norm(x)
        assert score == pytest.approx(expected)

    def test_zero_input(self, mlp: TrainedModel):
        with pytest.raises(ScoreError):
            _ = m.avg_sensitivity(
                mlp, _ones, np.zeros((8, 6)), 0, RAW, np.random.default_rng(0)
            )

    def test_reference_reused(self, mlp: TrainedModel, x):
        cfg = replace(RAW, robustness_samples=2)
        ref = np.ones_like(x)
        score = m.avg_sensitivity(
            mlp, _ones, x, 0, cfg, np.random.default_rng(0), reference=ref
        )
        assert score == 0.0


class TestLocalLipschitz:
    def test_constant_map(self, mlp: TrainedModel, x):
        cfg = replace(RAW, robustness_samples=3)
        assert m.local_lipschitz(mlp, _ones, x, 0, cfg, np.random.default_rng(0)) == 0

    def test_identity_explainer(self, mlp: TrainedModel, x):
        cfg = replace(RAW, robustness_samples=4)
        score = m.local_lipschitz(mlp, _identity, x, 0, cfg, np.random.default_rng(1))
        assert score == pytest.approx(1.0)

    def test_max_over_given_perturbations(self, mlp: TrainedModel):
        x = np.array([1.0, -1.0])
        deltas = [np.array([0.1, 0.0]), np.array([0.0, -0.5]), np.array([0.2, 0.2])]
        score = m.local_lipschitz(
            mlp, _square, x, 0, RAW, np.random.default_rng(0), perturbations=deltas
        )
        ratios = [
            np.linalg.norm(x**2 - (x + d) ** 2) / np.linalg.norm(d) for d in deltas
        ]
        assert score == pytest.approx(max(ratios))

    def test_positive_for_nonlinear_map(self, mlp, x):
        cfg = replace(RAW, robustness_samples=3)
        score = m.local_lipschitz(mlp, _square, x, 0, cfg, np.random.default_rng(2))
        assert score > 0

    def test_perturbation_radius(self):
        cfg = replace(RAW, robustness_samples=50, robustness_noise=0.1)
        deltas = np.stack(
            m._perturbations(np.zeros((8, 6)), cfg, np.random.default_rng(3))
        )
        assert deltas.shape == (50, 8, 6)
        assert np.std(deltas) == pytest.approx(0.1, rel=0.05)
        assert abs(np.mean(deltas)) < 0.01

    def test_compares_normalized_maps(self, mlp: TrainedModel, x):
        cfg = MetricConfig(robustness_samples=3)
        plain = m.local_lipschitz(mlp, _identity, x, 0, cfg, np.random.default_rng(4))
        scaled = m.local_lipschitz(mlp, _scaled, x, 0, cfg, np.random.default_rng(4))
        assert scaled == pytest.approx(plain, rel=1e-9)
        raw = replace(cfg, normalize=False)
        plain = m.local_lipschitz(mlp, _identity, x, 0, raw, np.random.default_rng(4))
        scaled = m.local_lipschitz(mlp, _scaled, x, 0, raw, np.random.default_rng(4))
        assert scaled == pytest.approx(5.0 * plain, rel=1e-9)

    def test_stable_explainer_normalizes_higher(self, mlp: TrainedModel, x):
        cfg = replace(RAW, robustness_samples=4)
        stable = m.local_lipschitz(mlp, _identity, x, 0, cfg, np.random.default_rng(5))
        noisy = m.local_lipschitz(mlp, _noisy, x, 0, cfg, np.random.default_rng(5))
        q = m.normalize_columns([[stable], [noisy]], "local_lipschitz")
        assert q[0, 0] == 1.0
        assert 0.0 < q[1, 0] < 0.2


class TestFaithfulnessCorrelation:
    def test_linear_input_gradient(self, linear: TrainedModel, x):
        cfg = replace(RAW, fc_baseline="zero", fc_runs=20, fc_subset=5)
        score = m.faithfulness_correlation(
            linear, _input_gradient, x, 1, cfg, np.random.default_rng(0)
        )
        assert score == pytest.approx(1.0, abs=1e-9)

    def test_negated_map(self, linear: TrainedModel, x):
        cfg = replace(RAW, fc_baseline="zero", fc_runs=20, fc_subset=5)

        def negated(model, xx, c, rng):
            return -_input_gradient(model, xx, c, rng)

        score = m.faithfulness_correlation(
            linear, negated, x, 1, cfg, np.random.default_rng(0)
        )
        assert score == pytest.approx(-1.0, abs=1e-9)

    def test_subset_larger_than_input(self, linear: TrainedModel, x):
        cfg = replace(RAW, fc_subset=49)
        with pytest.raises(ConfigError):
            _ = m.faithfulness_correlation(
                linear, _gradient, x, 0, cfg, np.random.default_rng(0)
            )

    def test_constant_sums_are_degenerate(self, linear: TrainedModel, x):
        cfg = replace(RAW, fc_runs=10, fc_subset=48)
        score = m.faithfulness_correlation(
            linear, _ones, x, 0, cfg, np.random.default_rng(0)
        )
        assert score == 0.0

    def test_uniform_baseline_in_range(self, mlp: TrainedModel, x):
        cfg = MetricConfig(fc_runs=10, fc_subset=8)
        score = m.faithfulness_correlation(
            mlp, _gradient, x, 0, cfg, np.random.default_rng(3)
        )
        assert -1.0 <= score <= 1.0


class TestImputation:
    def test_center_pixel_is_neighbour_mean(self):
        x = np.arange(9.0).reshape(3, 3)
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        out = m.noisy_linear_impute(x, mask, np.random.default_rng(0), 0.0)
        assert out[1, 1] == pytest.approx((1 + 3 + 5 + 7) / 4)
        np.testing.assert_array_equal(out[~mask], x[~mask])

    def test_corner_uses_available_neighbours(self):
        x = np.arange(9.0).reshape(3, 3)
        mask = np.zeros((3, 3), dtype=bool)
        mask[0, 0] = True
        out = m.noisy_linear_impute(x, mask, np.random.default_rng(0), 0.0)
        assert out[0, 0] == pytest.approx((1 + 3) / 2)

    def test_fills_inward(self):
        x = np.ones((5, 5))
        mask = np.zeros((5, 5), dtype=bool)
        mask[1:4, 1:4] = True
        out = m.noisy_linear_impute(x, mask, np.random.default_rng(0), 0.0)
        np.testing.assert_allclose(out, 1.0)

    def test_noise_only_on_masked(self):
        x = np.zeros((4, 4))
        mask = np.zeros((4, 4), dtype=bool)
        mask[2, 2] = True
        out = m.noisy_linear_impute(x, mask, np.random.default_rng(0), 0.01)
        assert out[2, 2] != 0.0
        assert np.count_nonzero(out) == 1


class TestRoad:
    def test_trapezoid(self):
        assert m.road_auc([1, 50], np.array([1.0, 0.5])) == pytest.approx(0.3675)

    def test_nothing_masked(self, mlp: TrainedModel, dataset):
        # 1% and 2% of 48 pixels both round down to zero pixels
        cfg = replace(RAW, road_percentages=(1, 2))
        xs = dataset.inputs[:3]
        maps = np.random.default_rng(0).normal(size=xs.shape)
        rngs = [np.random.default_rng(i) for i in range(3)]
        retention = m.road_retention(mlp, xs, maps, cfg, rngs)
        np.testing.assert_array_equal(retention, 1.0)
        assert m.road(mlp, xs, maps, cfg, rngs) == pytest.approx(0.01)

    @pytest.mark.parametrize("grid", [(10, 5), (50, 120), (5, 5)])
    def test_bad_grid(self, grid, mlp: TrainedModel, dataset):
        cfg = replace(RAW, road_percentages=grid)
        xs = dataset.inputs[:1]
        with pytest.raises(ConfigError):
            _ = m.road_retention(mlp, xs, xs, cfg, [np.random.default_rng(0)])

    def test_retention_is_binary(self, mlp: TrainedModel, dataset, tiny_metrics):
        xs = dataset.inputs[:4]
        maps = np.abs(xs)
        rngs = [np.random.default_rng(i) for i in range(4)]
        retention = m.road_retention(mlp, xs, maps, tiny_metrics, rngs)
        assert retention.shape == (4, len(tiny_metrics.road_percentages))
        assert set(np.unique(retention)) <= {0.0, 1.0}

    def test_top_indices_ties_to_lower_index(self):
        values = np.array([1.0, 3.0, 3.0, 2.0])
        np.testing.assert_array_equal(m.top_indices(values, 3), [1, 2, 3])

    def test_bootstrap_picks(self, tiny_metrics: MetricConfig):
        picks = m.bootstrap_picks(7, tiny_metrics, np.random.default_rng(0))
        assert picks.shape == (tiny_metrics.road_draws, tiny_metrics.road_draw_size)
        assert picks.min() >= 0
        assert picks.max() < 7

    def test_draws_use_picked_rows(self):
        cfg = replace(RAW, road_percentages=(1, 50))
        retention = np.array([[1.0, 1.0], [1.0, 0.0]])
        picks = np.array([[0, 0], [0, 1], [1, 1]])
        np.testing.assert_allclose(
            m.road_draws(retention, cfg, picks),
            [0.49, 0.3675, 0.245],
        )


class TestRandomization:
    def test_zero_sigma(self, mlp: TrainedModel, x):
        cfg = MetricConfig(mpt_sigma=0.0)
        score = m.model_parameter_test(
            mlp, _gradient, x, 0, cfg, np.random.default_rng(0)
        )
        assert score == pytest.approx(1.0)

    def test_model_independent_explainer(self, cnn: TrainedModel, x, caplog):
        score = m.model_parameter_test(
            cnn, _identity, x, 0, MetricConfig(), np.random.default_rng(0)
        )
        assert score == pytest.approx(1.0)
        assert "insensitive to model parameters" in caplog.text

    def test_gradient_changes_with_weights(self, cnn: TrainedModel, x):
        cfg = MetricConfig(mpt_sigma=1.0)
        score = m.model_parameter_test(
            cnn, _gradient, x, 0, cfg, np.random.default_rng(0)
        )
        assert score < 1.0

    @pytest.mark.parametrize("order", ["bottom_up", "top_down"])
    def test_layer_order(self, order, mlp: TrainedModel, x):
        cfg = MetricConfig(mpt_layer_order=order)
        score = m.model_parameter_test(
            mlp, _gradient, x, 0, cfg, np.random.default_rng(0)
        )
        assert -1.0 <= score <= 1.0

    def test_average(self):
        assert m.randomization_score([0.4, 0.6], "model_parameter_test") == 0.5

    def test_nothing_to_average(self):
        with pytest.raises(ScoreError):
            _ = m.randomization_score([], "random_logit")

    def test_random_logit_class_independent(self, mlp: TrainedModel, x):
        score = m.random_logit(
            mlp, _identity, x, 0, MetricConfig(), np.random.default_rng(0)
        )
        assert score == pytest.approx(1.0)

    def test_random_logit_linear_rows(self, linear: TrainedModel, x):
        w = linear.layers[1].weight
        assert w is not None
        score = m.random_logit(linear, _gradient, x, 2, RAW, np.random.default_rng(0))
        expected = np.mean([m.pearson(w[2], w[k]) for k in (0, 1, 3)])
        assert score == pytest.approx(expected)

    def test_random_logit_subset(self, linear: TrainedModel, x):
        cfg = replace(RAW, rl_classes=1, rl_similarity="ssim")
        score = m.random_logit(linear, _gradient, x, 0, cfg, np.random.default_rng(4))
        w = linear.layers[1].weight
        assert w is not None
        candidates = [m.ssim(w[0], w[k]) for k in (1, 2, 3)]
        assert any(score == pytest.approx(v) for v in candidates)


class TestComplexity:
    def test_entropy_uniform(self):
        assert m.complexity_entropy(np.ones((8, 6))) == pytest.approx(math.log(48))

    def test_entropy_one_hot(self):
        phi = np.zeros(10)
        phi[3] = -2.0
        assert m.complexity_entropy(phi) == pytest.approx(0.0)

    def test_entropy_two_pixels(self):
        assert m.complexity_entropy(np.array([1.0, 3.0])) == pytest.approx(
            0.5623, abs=1e-4
        )

    def test_gini_constant(self):
        assert m.sparseness_gini(np.full(12, 0.3)) == pytest.approx(0.0)

    @pytest.mark.parametrize("d", [2, 5, 48])
    def test_gini_one_hot(self, d):
        phi = np.zeros(d)
        phi[0] = 1.0
        assert m.sparseness_gini(phi) == pytest.approx((d - 1) / d)

    def test_gini_two_pixels(self):
        assert m.sparseness_gini(np.array([3.0, -1.0])) == pytest.approx(0.25)

    @pytest.mark.parametrize("fn", [m.complexity_entropy, m.sparseness_gini])
    def test_all_zero(self, fn):
        with pytest.raises(ScoreError):
            _ = fn(np.zeros((3, 3)))

    def test_invariances(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            phi = rng.normal(size=20)
            perm = rng.permutation(20)
            scale = rng.uniform(0.1, 10.0)
            for fn in (m.complexity_entropy, m.sparseness_gini):
                base = fn(phi)
                assert fn(phi[perm]) == pytest.approx(base, abs=1e-12)
                assert fn(phi * scale) == pytest.approx(base, abs=1e-12)
            assert 0.0 <= m.sparseness_gini(phi) < 1.0
            assert 0.0 <= m.complexity_entropy(phi) <= math.log(20) + 1e-12


def _roi(shape=(8, 6)) -> np.ndarray:
    roi = np.zeros(shape, dtype=bool)
    roi[2:5, 1:4] = True
    return roi


class TestLocalization:
    def test_default_k(self):
        assert m.default_k(864) == 86
        assert m.default_k(5) == 1

    def test_top_k_inside(self):
        roi = _roi()
        phi = np.where(roi, 5.0, 0.1)
        assert m.top_k(phi, roi, k=4) == 1.0

    def test_top_k_disjoint(self):
        roi = _roi()
        phi = np.where(roi, 0.0, 1.0)
        assert m.top_k(phi, roi, k=4) == 0.0

    def test_top_k_signed(self):
        roi = _roi()
        phi = np.where(roi, -5.0, 0.1)
        assert m.top_k(phi, roi, k=4, use_abs=True) == 1.0
        assert m.top_k(phi, roi, k=4, use_abs=False) == 0.0

    def test_bad_k(self):
        with pytest.raises(ConfigError):
            _ = m.top_k(np.ones((8, 6)), _roi(), k=49)

    @pytest.mark.parametrize("fn", [m.top_k, m.relevance_rank_accuracy])
    def test_empty_roi(self, fn):
        with pytest.raises(ScoreError):
            _ = fn(np.ones((8, 6)), np.zeros((8, 6), dtype=bool))

    def test_rra_exact(self):
        roi = _roi()
        assert m.relevance_rank_accuracy(np.where(roi, 2.0, 1.0), roi) == 1.0

    def test_rra_lowest_half(self):
        roi = _roi()
        assert m.relevance_rank_accuracy(np.where(roi, 0.0, 1.0), roi) == 0.0

    def test_random_map_expectation(self):
        rng = np.random.default_rng(7)
        roi = _roi()
        scores = [
            m.relevance_rank_accuracy(rng.uniform(size=(8, 6)), roi)
            for _ in range(2000)
        ]
        assert np.mean(scores) == pytest.approx(roi.sum() / roi.size, abs=0.02)

    def test_joint_permutation_and_scale(self):
        rng = np.random.default_rng(8)
        roi = _roi().ravel()
        for _ in range(1000):
            phi = rng.normal(size=48)
            perm = rng.permutation(48)
            scale = rng.uniform(0.1, 10.0)
            for fn in (m.top_k, m.relevance_rank_accuracy):
                base = fn(phi, roi)
                assert fn(phi[perm], roi[perm]) == base
                assert fn(phi * scale, roi) == base


class TestNormalization:
    def test_inverse(self):
        np.testing.assert_allclose(m.normalize_inverse([2, 4, 8]), [1, 0.5, 0.25])
        np.testing.assert_array_equal(m.normalize_inverse([3.0]), [1.0])
        np.testing.assert_array_equal(m.normalize_inverse([2.0, 2.0]), [1.0, 1.0])

    def test_inverse_clamps_nonpositive(self, caplog):
        out = m.normalize_inverse([0.0, 2.0])
        assert out[0] == 1.0
        assert out[1] == pytest.approx(m.SCORE_FLOOR / 2.0)
        assert "nonpositive scores clamped" in caplog.text

    def test_max(self):
        np.testing.assert_allclose(m.normalize_max([0.2, 0.4, 0.8]), [0.25, 0.5, 1])
        np.testing.assert_array_equal(m.normalize_max([-0.5, 1.0]), [-0.5, 1.0])
        np.testing.assert_array_equal(m.normalize_max([0.7]), [1.0])

    def test_max_needs_positive(self):
        with pytest.raises(ScoreError):
            _ = m.normalize_max([0.0, 0.0])

    def test_best_maps_to_one_and_order_kept(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            q = rng.uniform(0.01, 5.0, size=6)
            inv = m.normalize_inverse(q)
            mx = m.normalize_max(q)
            assert inv[np.argmin(q)] == 1.0
            assert mx[np.argmax(q)] == 1.0
            np.testing.assert_array_equal(np.argsort(inv), np.argsort(-q))
            np.testing.assert_array_equal(np.argsort(mx), np.argsort(q))

    def test_dispatch(self):
        np.testing.assert_allclose(m.normalize([2.0, 4.0], "complexity"), [1, 0.5])
        np.testing.assert_allclose(m.normalize([2.0, 4.0], "sparseness"), [0.5, 1])

    def test_per_sample_columns(self):
        # (methods, samples)
        q = np.array([[1.0, 4.0], [2.0, 8.0]])
        np.testing.assert_allclose(
            m.normalize_columns(q, "avg_sensitivity"), [[1.0, 1.0], [0.5, 0.5]]
        )

    def test_dead_column(self, caplog):
        q = np.array([[-1.0, 0.5], [-2.0, 1.0]])
        out = m.normalize_columns(q, "faithfulness_correlation")
        np.testing.assert_allclose(out, [[0.0, 0.5], [0.0, 1.0]])
        assert "no positive score for sample" in caplog.text

    def test_negative_correlations_stay_bounded(self, caplog):
        # a tiny positive column max used to blow -0.9 up to -90
        q = np.array(
            [
                [-0.9, 0.02, 0.6],
                [0.01, -0.4, 0.3],
                [0.005, 0.01, -0.2],
            ]
        )
        out = m.normalize_columns(q, "faithfulness_correlation")
        np.testing.assert_allclose(
            out, [[0.0, 1.0, 1.0], [1.0, 0.0, 0.5], [0.5, 0.5, 0.0]]
        )
        assert "negative scores clamped" in caplog.text

    def test_max_columns_within_unit_interval(self):
        rng = np.random.default_rng(21)
        for _ in range(200):
            q = rng.normal(0.0, 0.3, size=(8, 50))
            out = m.normalize_columns(q, "faithfulness_correlation")
            assert out.min() >= 0.0
            assert out.max() <= 1.0
            live = q.max(axis=0) > m.SCORE_FLOOR
            np.testing.assert_array_equal(out.max(axis=0)[live], 1.0)

    def test_aggregate(self):
        mean, sem = m.aggregate([0.3, 0.3, 0.3])
        assert mean == pytest.approx(0.3)
        assert sem == pytest.approx(0.0, abs=1e-12)

    def test_aggregate_two_points(self):
        mean, sem = m.aggregate([0.0, 1.0])
        assert mean == 0.5
        assert sem == pytest.approx(0.5 / math.sqrt(2))
        assert sem == pytest.approx(0.3536, abs=1e-4)

    def test_aggregate_sample_std(self):
        _, sem = m.aggregate([0.0, 1.0], ddof=1)
        assert sem == pytest.approx(0.5)

    def test_aggregate_needs_two(self):
        with pytest.raises(ScoreError):
            _ = m.aggregate([1.0])


class TestMetricInfo:
    def test_two_metrics_per_property(self):
        counts = Counter(info.property for info in m.METRIC_INFO.values())
        assert set(counts.values()) == {2}
        assert len(counts) == 5

    def test_codes_unique(self):
        codes = [info.code for info in m.METRIC_INFO.values()]
        assert len(set(codes)) == len(codes)

    def test_logits_shape(self, mlp: TrainedModel, x):
        assert logits(mlp, x).shape == (1, 4)
