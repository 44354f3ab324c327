"""Tests for app.config — preset, file, environment and override layering."""

import json

import pytest

from app.config import FIELD_NAMES, RunConfig, load_presets, load_run_config
from app.errors import ConfigError


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    """Ensure DECONFOUND_* variables never leak in from the shell."""
    for name in FIELD_NAMES:
        monkeypatch.delenv(f"DECONFOUND_{name.upper()}", raising=False)


def _forge(tmp_path, presets: dict):
    path = tmp_path / "forge.json"
    path.write_text(json.dumps({"presets": presets}))
    return path


class TestDefaults:
    def test_published_hyperparameters(self):
        cfg = load_run_config(environ={})
        assert cfg.horizon == 100
        assert cfg.beta == 0.001
        assert cfg.lr_inference == 0.0001
        assert cfg.lr_policy == 0.001
        assert cfg.batch_episodes == 100
        assert cfg.train_steps == 5000
        assert cfg.seeds == tuple(range(10))
        assert cfg.resample_expert is True

    def test_num_latents_defaults_to_the_family(self):
        cfg = RunConfig(workers=1)
        assert cfg.elbo(family_latents=5).num_latents == 5
        assert RunConfig(workers=1, num_latents=3).elbo(5).num_latents == 3

    def test_elbo_carries_exploration_episodes(self):
        cfg = RunConfig(workers=1, batch_episodes=20, exploration_episodes=8)
        elbo = cfg.elbo(family_latents=5)
        assert (elbo.batch_episodes, elbo.exploration_episodes) == (20, 8)

    def test_rollout(self):
        rollout = RunConfig(workers=1, horizon=7).rollout(seed=4, episodes=9)
        assert (rollout.horizon, rollout.seed, rollout.episodes) == (7, 4, 9)

    def test_to_dict_lists_seeds(self):
        assert RunConfig(workers=1, seeds=(1, 2)).to_dict()["seeds"] == [1, 2]


class TestValidation:
    @pytest.mark.parametrize(
        "field, value, match",
        [
            ("horizon", 0, "horizon"),
            ("seeds", (), "seeds"),
            ("beta", -0.1, "beta"),
            ("lr_policy", 0.0, "learning rates"),
            ("bc_latent_mode", "median", "bc_latent_mode"),
            ("exploration", "greedy", "exploration"),
            ("log_level", "LOUD", "log_level"),
            ("merge_tolerance", -1.0, "merge_tolerance"),
        ],
    )
    def test_rejects(self, field, value, match):
        with pytest.raises(ConfigError, match=match):
            RunConfig(workers=1, **{field: value})


class TestLayering:
    def test_bundled_presets(self):
        presets = load_presets()
        assert {"full", "desk", "smoke"} <= set(presets)

    def test_preset(self, tmp_path):
        forge = _forge(tmp_path, {"tiny": {"horizon": 5, "seeds": "3,4"}})
        cfg = load_run_config(preset="tiny", environ={}, forge_json=forge)
        assert cfg.horizon == 5
        assert cfg.seeds == (3, 4)

    def test_unknown_preset(self, tmp_path):
        forge = _forge(tmp_path, {"tiny": {}})
        with pytest.raises(ConfigError, match="Available: tiny"):
            load_run_config(preset="huge", environ={}, forge_json=forge)

    def test_config_file(self, tmp_path):
        path = tmp_path / "run.env"
        path.write_text("HORIZON=12\nRESAMPLE_EXPERT=false\nbeta=0.5\n")
        cfg = load_run_config(config_path=path, environ={})
        assert cfg.horizon == 12
        assert cfg.resample_expert is False
        assert cfg.beta == 0.5

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(config_path=tmp_path / "nope.env", environ={})

    def test_environment(self):
        cfg = load_run_config(environ={"DECONFOUND_HORIZON": "30", "UNRELATED": "x"})
        assert cfg.horizon == 30

    def test_process_environment_is_read(self, monkeypatch):
        monkeypatch.setenv("DECONFOUND_TRAIN_STEPS", "17")
        assert load_run_config().train_steps == 17

    def test_precedence(self, tmp_path):
        forge = _forge(tmp_path, {"p": {"horizon": 1, "train_steps": 1, "log_every": 1, "eval_every": 1}})
        path = tmp_path / "run.env"
        path.write_text("TRAIN_STEPS=2\nLOG_EVERY=2\nEVAL_EVERY=2\n")
        cfg = load_run_config(
            preset="p",
            config_path=path,
            overrides={"eval_every": 4, "horizon": None},
            environ={"DECONFOUND_LOG_EVERY": "3", "DECONFOUND_EVAL_EVERY": "3"},
            forge_json=forge,
        )
        assert (cfg.horizon, cfg.train_steps, cfg.log_every, cfg.eval_every) == (1, 2, 3, 4)

    def test_dashed_override_keys(self):
        assert load_run_config(overrides={"train-steps": "9"}, environ={}).train_steps == 9

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key 'gamma'"):
            load_run_config(overrides={"gamma": 0.9}, environ={})

    @pytest.mark.parametrize(
        "key, value",
        [("horizon", "ten"), ("horizon", 2.5), ("resample_expert", "maybe"), ("seeds", "1,x")],
    )
    def test_uncoercible(self, key, value):
        with pytest.raises(ConfigError, match="cannot read"):
            load_run_config(overrides={key: value}, environ={})

    def test_seed_forms(self):
        assert load_run_config(overrides={"seeds": "0, 2,5"}, environ={}).seeds == (0, 2, 5)
        assert load_run_config(overrides={"seeds": 7}, environ={}).seeds == (7,)
        assert load_run_config(overrides={"seeds": [1, 2]}, environ={}).seeds == (1, 2)
