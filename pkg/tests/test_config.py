"""Experiment configuration loading, validation, and overrides."""

import json

import pytest

from dreamprm import config as cfg
from dreamprm.training import TrainConfig


class TestDefaults:
    def test_default_mixture_shape(self):
        c = cfg.ExperimentConfig()
        assert c.domain_names() == ["informative-a", "informative-b", "noisy", "trivial"]
        assert c.feature_dim == 8
        assert c.total_steps == 5
        assert c.num_rollouts == 8
        assert c.variant == cfg.DREAMPRM

    def test_default_roles(self):
        roles = cfg.domain_roles(cfg.ExperimentConfig())
        assert roles == {
            "informative-a": cfg.ROLE_INFORMATIVE,
            "informative-b": cfg.ROLE_INFORMATIVE,
            "noisy": cfg.ROLE_NOISY,
            "trivial": cfg.ROLE_TRIVIAL,
        }

    def test_noisy_domain_knob(self):
        c = cfg.ExperimentConfig()
        by_name = {d.name: d for d in c.train_domains}
        assert by_name["noisy"].label_noise == 0.5
        assert by_name["trivial"].triviality == 0.9
        # sloppy-but-successful steps: the trivial domain is flaw-heavy
        assert by_name["trivial"].flaw_rate == 0.7
        assert by_name["informative-a"].flaw_rate == 0.3
        assert by_name["informative-a"].label_noise == 0.0

    def test_meta_and_eval_clean(self):
        c = cfg.ExperimentConfig()
        for spec in (c.meta_domain, c.eval_domain):
            assert spec.label_noise == 0.0
            assert spec.triviality == 0.0

    def test_paper_scale_preset(self):
        t = cfg.paper_scale_train()
        assert t.inner_optimizer == "adamw"
        assert t.inner_lr == pytest.approx(5e-7)
        assert t.total_outer_iterations == 10_000
        # outer settings shared with the default recipe
        assert t.outer_lr == 0.01 and t.outer_weight_decay == 1e-3


class TestValidation:
    def test_duplicate_domain_names(self):
        base = cfg.default_train_domains()
        with pytest.raises(cfg.ConfigError, match="duplicate"):
            cfg.ExperimentConfig(train_domains=[base[0], base[0]])

    def test_feature_dim_mismatch(self):
        import dataclasses

        base = cfg.default_train_domains()
        odd = dataclasses.replace(base[1], feature_dim=16)
        with pytest.raises(cfg.ConfigError, match="feature_dim"):
            cfg.ExperimentConfig(train_domains=[base[0], odd])

    def test_bad_variant(self):
        with pytest.raises(cfg.ConfigError, match="variant"):
            cfg.ExperimentConfig(variant="frobnicate")

    def test_wrong_schema_version(self):
        with pytest.raises(cfg.ConfigError, match="schema_version"):
            cfg.ExperimentConfig(schema_version=99)

    def test_problems_accumulate(self):
        with pytest.raises(cfg.ConfigError) as err:
            cfg.config_from_dict({"variant": "nope", "num_rollouts": 0, "mystery": 1})
        text = str(err.value)
        assert "variant" in text and "num_rollouts" in text and "mystery" in text


class TestDictRoundTrip:
    def test_round_trip(self):
        c = cfg.ExperimentConfig(seed=5, variant=cfg.VANILLA)
        assert cfg.config_from_dict(cfg.config_to_dict(c)) == c

    def test_sparse_dict_fills_defaults(self):
        c = cfg.config_from_dict({"seed": 9})
        assert c.seed == 9
        assert c.domain_names() == cfg.ExperimentConfig().domain_names()

    def test_nested_train_table(self):
        c = cfg.config_from_dict({"train": {"unroll_steps": 3, "inner_lr": 0.01}})
        assert c.train.unroll_steps == 3
        assert c.train.inner_lr == 0.01
        assert c.train.outer_lr == TrainConfig().outer_lr

    def test_unknown_nested_field(self):
        with pytest.raises(cfg.ConfigError, match="train.warmup"):
            cfg.config_from_dict({"train": {"warmup": 10}})

    def test_domain_list_replaces_roster(self):
        c = cfg.config_from_dict(
            {"train_domains": [{"name": "solo", "num_questions": 4}]}
        )
        assert c.domain_names() == ["solo"]


class TestFileLoading:
    def test_toml(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text('seed = 4\nvariant = "no_afl"\n\n[train]\nunroll_steps = 2\n')
        c = cfg.load_config(path)
        assert c.seed == 4 and c.variant == cfg.NO_AFL and c.train.unroll_steps == 2

    def test_json_mirror(self, tmp_path):
        path = tmp_path / "exp.json"
        path.write_text(json.dumps({"seed": 4, "variant": "orm_only"}))
        c = cfg.load_config(path)
        assert c.seed == 4 and c.variant == cfg.ORM_ONLY

    def test_missing_file(self, tmp_path):
        with pytest.raises(cfg.ConfigError, match="not found"):
            cfg.load_config(tmp_path / "nope.toml")

    def test_malformed_toml(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("seed = = 3\n")
        with pytest.raises(cfg.ConfigError, match="invalid TOML"):
            cfg.load_config(path)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{broken")
        with pytest.raises(cfg.ConfigError, match="invalid JSON"):
            cfg.load_config(path)


class TestResolve:
    def test_flag_beats_env_beats_file(self):
        c = cfg.ExperimentConfig(seed=1)
        env = {cfg.SEED_ENV_VAR: "2"}
        assert cfg.resolve(c, env={}).seed == 1
        assert cfg.resolve(c, env=env).seed == 2
        assert cfg.resolve(c, seed=3, env=env).seed == 3

    def test_seed_threads_into_trainer(self):
        c = cfg.resolve(cfg.ExperimentConfig(), seed=17, env={})
        assert c.train.seed == 17

    def test_bad_env_seed(self):
        with pytest.raises(cfg.ConfigError, match=cfg.SEED_ENV_VAR):
            cfg.resolve(cfg.ExperimentConfig(), env={cfg.SEED_ENV_VAR: "soon"})

    def test_variant_case_insensitive(self):
        c = cfg.resolve(cfg.ExperimentConfig(), variant="VANILLA", env={})
        assert c.variant == cfg.VANILLA

    def test_bad_variant_flag(self):
        with pytest.raises(cfg.ConfigError, match="variant"):
            cfg.resolve(cfg.ExperimentConfig(), variant="turbo", env={})

    def test_out_dir_override(self):
        c = cfg.resolve(cfg.ExperimentConfig(), out_dir="/tmp/elsewhere", env={})
        assert c.out_dir == "/tmp/elsewhere"
