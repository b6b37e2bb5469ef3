import pytest
import torch
import yaml

from difscil.config import (
    ConfigError,
    PRESETS,
    RunConfig,
    load_config,
    preset_config,
    toy_run_config,
)
from difscil.data import (
    TOY_CLASS_NAMES,
    SampleRef,
    ToyShapesDataset,
    augment_image,
    render_toy_image,
)


class TestToyData:
    def test_fourteen_single_word_classes(self):
        assert len(TOY_CLASS_NAMES) == 14
        assert len(set(TOY_CLASS_NAMES)) == 14
        assert all(" " not in name for name in TOY_CLASS_NAMES)

    def test_render_deterministic(self):
        a = render_toy_image(3, 17, 32)
        b = render_toy_image(3, 17, 32)
        assert torch.equal(a, b)
        assert a.shape == (3, 32, 32)
        assert float(a.min()) >= 0.0 and float(a.max()) <= 1.0

    def test_render_varies_with_seed_and_class(self):
        base = render_toy_image(3, 17, 32)
        assert not torch.equal(base, render_toy_image(3, 18, 32))
        assert not torch.equal(base, render_toy_image(4, 17, 32))

    def test_red_and_blue_channels_dominate(self):
        red = render_toy_image(0, 5, 32)  # redsquare
        blue = render_toy_image(1, 5, 32)  # bluesquare
        assert float(red[0].sum()) > float(red[2].sum())
        assert float(blue[2].sum()) > float(blue[0].sum())

    def test_refs_and_sample_ids_disjoint(self):
        ds = ToyShapesDataset(16, train_per_class=5, test_per_class=3)
        train_ids = {r.sample_id for c in range(14) for r in ds.train_refs(c)}
        test_ids = {r.sample_id for c in range(14) for r in ds.test_refs(c)}
        assert len(train_ids) == 70 and len(test_ids) == 42
        assert not train_ids & test_ids

    def test_shots_subset_is_prefix(self):
        ds = ToyShapesDataset(16)
        assert ds.train_refs(2, 5) == ds.train_refs(2)[:5]

    def test_image_lookup_matches_renderer(self):
        ds = ToyShapesDataset(16)
        ref = SampleRef(6, 2, "test")
        assert torch.equal(ds.image(ref), render_toy_image(6, ref.sample_id, 16))

    def test_all_train_tensors_shape(self):
        ds = ToyShapesDataset(16, train_per_class=3, test_per_class=1)
        images, labels = ds.all_train_tensors()
        assert images.shape == (42, 3, 16, 16)
        assert labels.tolist() == [c for c in range(14) for _ in range(3)]

    def test_augment_deterministic_and_bounded(self):
        img = render_toy_image(0, 0, 32)
        a = augment_image(img, 9)
        b = augment_image(img, 9)
        c = augment_image(img, 10)
        assert torch.equal(a, b)
        assert not torch.equal(a, c)
        assert float(a.min()) >= 0.0 and float(a.max()) <= 1.0
        assert a.shape == img.shape


class TestRunConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_inv_cannot_be_disabled(self):
        cfg = RunConfig()
        cfg.features.inv = False
        with pytest.raises(ConfigError, match="features.inv"):
            cfg.validate()

    def test_m_grid_lower_bound_named_in_error(self):
        cfg = RunConfig(m=1)
        with pytest.raises(ConfigError, match="m: timestep grid needs m > 1"):
            cfg.validate()

    def test_single_t_bypasses_m_check(self):
        RunConfig(m=1, single_t=0.5).validate()

    def test_single_t_range(self):
        with pytest.raises(ConfigError, match="single_t"):
            RunConfig(single_t=1.5).validate()

    def test_beta_init_range(self):
        with pytest.raises(ConfigError, match="beta_init"):
            RunConfig(beta_init=-0.2).validate()

    def test_multiple_problems_all_reported(self):
        cfg = RunConfig(m=0, beta_init=2.0)
        with pytest.raises(ConfigError) as exc:
            cfg.validate()
        assert len(exc.value.problems) == 2

    def test_hash_stable_and_sensitive(self):
        a, b = RunConfig(), RunConfig()
        assert a.config_hash() == b.config_hash()
        b.seed = 1
        assert a.config_hash() != b.config_hash()

    def test_load_yaml_nested_merge(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text(
            yaml.safe_dump(
                {"m": 6, "features": {"gen": False}, "prompt": {"iters": 12}}
            )
        )
        cfg = load_config(path, {"seed": 5})
        assert cfg.m == 6 and cfg.seed == 5
        assert cfg.features.gen is False and cfg.features.inv is True
        assert cfg.prompt.iters == 12 and cfg.prompt.lr == 1e-4

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("bogus_knob: 3\n")
        with pytest.raises(ConfigError, match="bogus_knob"):
            load_config(path)


class TestPresets:
    def test_component_ablations_differ_only_in_toggles(self):
        base = toy_run_config().to_dict()
        expected_toggles = {
            "ablation_a": {"inv": True, "syn": False, "aug": False, "gen": False},
            "ablation_b": {"inv": True, "syn": True, "aug": False, "gen": False},
            "ablation_c": {"inv": True, "syn": True, "aug": False, "gen": True},
            "ablation_d": {"inv": True, "syn": True, "aug": True, "gen": True},
        }
        for name, toggles in expected_toggles.items():
            d = preset_config(name).to_dict()
            assert d["features"] == toggles
            for key, value in base.items():
                if key != "features":
                    assert d[key] == value, f"{name} changed {key}"

    def test_beta_presets(self):
        assert preset_config("beta_zero").no_distill is True
        assert preset_config("beta_init_0.5").beta_init == 0.5

    def test_noise_interval_presets(self):
        assert preset_config("m2").m == 2
        assert preset_config("m6").m == 6
        assert preset_config("single_t_03").single_t == 0.3
        assert preset_config("single_t_07").single_t == 0.7

    def test_efficiency_preset(self):
        cfg = preset_config("eff")
        assert cfg.efficiency.generation_steps == 4
        assert cfg.efficiency.max_iters == 15

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            preset_config("nope")

    def test_all_presets_validate(self):
        for name in PRESETS:
            preset_config(name)
