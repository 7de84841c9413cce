from __future__ import annotations

import json
from dataclasses import replace

import pytest

from entities import DatasetConfig, PipelineConfig
from entities.config import METHODS, METRICS, derive_seed
from src.errors import ConfigError


class TestDefaults:
    def test_xai_defaults(self):
        xai = PipelineConfig().xai
        assert (xai.sg_samples, xai.sg_sigma_scale) == (150, 0.5)
        assert (xai.ng_samples, xai.ng_sigma) == (20, 0.25)
        assert (xai.fg_models, xai.fg_inputs) == (20, 20)
        assert (xai.fg_sigma_scale, xai.fg_ng_sigma) == (0.25, 0.125)
        assert (xai.lrp_alpha, xai.lrp_beta) == (1.0, 0.0)
        assert xai.base_method == "gradient"

    def test_metric_defaults(self):
        m = PipelineConfig().metrics
        assert (m.robustness_noise, m.robustness_samples) == (0.1, 10)
        assert (m.fc_runs, m.fc_subset, m.fc_baseline) == (50, 40, "uniform")
        assert m.road_percentages == tuple(range(1, 51))
        assert m.mpt_layer_order == "bottom_up"
        assert m.topk_fraction == 0.1
        assert m.normalize
        assert m.sample_budget == 50

    def test_roi_dominated_defaults(self):
        config = PipelineConfig.default()
        assert config.model.use_bias
        assert config.dataset.trend_amplitude == 0.3
        assert config.dataset.roi_signal == 4.0
        assert config.dataset.noise_sigma == 0.3

    def test_cnn_defaults(self):
        spec = PipelineConfig().model
        assert (spec.kernel, spec.stride, spec.pool) == (6, 2, 2)

    def test_composite_only_for_cnn(self):
        config = PipelineConfig()
        assert "lrp_composite" not in config.resolved_methods
        cnn = replace(config, model=replace(config.model, arch="cnn"))
        assert cnn.resolved_methods == METHODS


class TestSeeds:
    def test_with_seed_rederives_every_stage(self):
        config = PipelineConfig.default(seed=5)
        assert config.seed == 5
        assert config.dataset.seed == derive_seed(5, "dataset")
        assert config.train.seed == derive_seed(5, "train")
        assert config.split_seed == derive_seed(5, "split")
        assert len({config.dataset.seed, config.train.seed, config.split_seed}) == 3

    def test_missing_subseeds_derive_from_master(self):
        config = PipelineConfig.from_dict({"seed": 9})
        assert config.dataset.seed == derive_seed(9, "dataset")
        assert config.split_seed == derive_seed(9, "split")

    def test_explicit_subseed_kept(self):
        config = PipelineConfig.from_dict({"seed": 9, "dataset": {"seed": 123}})
        assert config.dataset.seed == 123


class TestSerialization:
    def test_round_trip(self):
        config = PipelineConfig.default(seed=3)
        text = json.dumps(config.to_dict())
        assert PipelineConfig.from_dict(json.loads(text)) == config

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError) as exc:
            _ = PipelineConfig.from_dict({"datset": {}})
        assert exc.value.field == "config.datset"

    def test_unknown_nested_key(self):
        with pytest.raises(ConfigError) as exc:
            _ = PipelineConfig.from_dict({"metrics": {"fc_run": 3}})
        assert exc.value.field == "metrics.fc_run"

    @pytest.mark.parametrize(
        ("data", "field"),
        [
            ({"dataset": {"years": "160"}}, "dataset.years"),
            ({"metrics": {"sample_budget": "50"}}, "metrics.sample_budget"),
            ({"metrics": {"fc_runs": True}}, "metrics.fc_runs"),
            ({"dataset": {"grid": [36, 24.5]}}, "dataset.grid"),
            ({"dataset": {"roi": [1, 2, 3]}}, "dataset.roi"),
            ({"model": {"arch": "rnn"}}, "model.arch"),
            ({"model": {"use_bias": 1}}, "model.use_bias"),
            ({"methods": "gradient"}, "config.methods"),
        ],
    )
    def test_wrong_type(self, data, field):
        with pytest.raises(ConfigError) as exc:
            _ = PipelineConfig.from_dict(data)
        assert exc.value.field == field
        assert "expected" in exc.value.reason

    def test_int_accepted_for_float(self):
        config = PipelineConfig.from_dict({"dataset": {"noise_sigma": 1}})
        assert config.dataset.noise_sigma == 1.0
        assert isinstance(config.dataset.noise_sigma, float)

    def test_aligned_follows_dataset(self):
        config = PipelineConfig.from_dict(
            {
                "dataset": {
                    "grid": [10, 8],
                    "classes": 4,
                    "years": 20,
                    "roi": [1, 3, 1, 3],
                }
            }
        )
        assert config.model.input_shape == (10, 8)
        assert config.model.classes == 4


class TestFingerprint:
    def test_ignores_output_path(self):
        config = PipelineConfig.default()
        moved = replace(config, paths=replace(config.paths, out="elsewhere"))
        assert config.fingerprint() == moved.fingerprint()

    def test_changes_with_seed(self):
        first = PipelineConfig.default(1).fingerprint()
        assert first != PipelineConfig.default(2).fingerprint()

    def test_is_sha256_hex(self):
        digest = PipelineConfig.default().fingerprint()
        assert len(digest) == 64
        int(digest, 16)


class TestValidation:
    def test_defaults_valid(self):
        PipelineConfig.default().validate()

    @pytest.mark.parametrize(
        ("changes", "field"),
        [
            ({"years": 10, "classes": 20}, "dataset.years"),
            ({"years": 21, "classes": 4}, "dataset.classes"),
            ({"grid": (0, 5)}, "dataset.grid"),
            ({"roi": (0, 40, 0, 4)}, "dataset.roi"),
            ({"noise_sigma": 0.0}, "dataset.noise_sigma"),
        ],
    )
    def test_bad_dataset(self, changes, field):
        with pytest.raises(ConfigError) as exc:
            replace(DatasetConfig(), **changes).validate()
        assert exc.value.field == field

    def test_unknown_method(self):
        config = replace(PipelineConfig(), methods=("occlusion",))
        with pytest.raises(ConfigError):
            config.validate()

    def test_unknown_metric(self):
        config = replace(PipelineConfig(), metric_ids=(*METRICS, "infidelity"))
        with pytest.raises(ConfigError):
            config.validate()

    def test_road_grid_must_increase(self):
        config = PipelineConfig()
        bad = replace(config, metrics=replace(config.metrics, road_percentages=(5, 3)))
        with pytest.raises(ConfigError):
            bad.validate()

    def test_road_grid_within_100(self):
        config = PipelineConfig()
        bad = replace(
            config, metrics=replace(config.metrics, road_percentages=(50, 120))
        )
        with pytest.raises(ConfigError):
            bad.validate()

    def test_selection_needs_known_metric(self):
        config = PipelineConfig()
        selection = {**config.ranking.selection, "robustness": "stability"}
        bad = replace(config, ranking=replace(config.ranking, selection=selection))
        with pytest.raises(ConfigError):
            bad.validate()

    def test_error_to_dict(self):
        err = ConfigError("dataset.grid", "extents must be positive")
        assert err.to_dict() == {
            "error": "config_error",
            "message": err.message,
            "field": "dataset.grid",
            "reason": "extents must be positive",
        }
