"""Tests for the learn trainers, datasets, checkpoints and composite policies."""

import numpy as np
import pytest

from app.belief.inference import EvidenceMode
from app.env.bandit import make_confounded_bandit
from app.env.models import RolloutConfig, Trajectory
from app.env.rollout import generate_expert_dataset, rollout_batch
from app.errors import ConfigError, DimensionMismatchError, NumericalAbort, SpecValidationError
from app.learn.baseline import fit_offline_model, naive_bc_baseline
from app.learn.composite import LearnedPolicy, policy_from_checkpoint
from app.learn.config import ElboConfig
from app.learn.dataset import (
    DatasetCycler,
    ExpertDataset,
    ExpertSampler,
    held_out_expert_dataset,
)
from app.learn.elbo import ModelGradient
from app.learn.model import (
    CategoricalLatentModel,
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from app.learn.tier2 import train_tier2
from app.learn.training import LOG_COLUMNS, TrainingLog, check_finite, init_model


def _dataset(episodes: int = 10, horizon: int = 10, seed: int = 0) -> ExpertDataset:
    family, expert = make_confounded_bandit()
    trajs = generate_expert_dataset(family, expert, RolloutConfig(horizon=horizon, seed=seed, episodes=episodes))
    return ExpertDataset.for_family(family, trajs)


def _config(**overrides) -> ElboConfig:
    values = dict(batch_episodes=5, exploration_episodes=5, train_steps=3, horizon=10, num_latents=5, log_every=1)
    values.update(overrides)
    return ElboConfig(**values)


def _fake_evaluator(step, model):
    return {"online_best_arm_count": float(step), "eval_best_arm_prob": 0.5}


class TestElboConfig:
    def test_defaults_are_the_published_hyperparameters(self):
        config = ElboConfig()
        assert (config.beta, config.lr_inference, config.lr_policy) == (0.001, 0.0001, 0.001)
        assert (config.batch_episodes, config.train_steps, config.horizon) == (100, 5000, 100)

    @pytest.mark.parametrize(
        "overrides, match",
        [
            ({"beta": -1.0}, "beta"),
            ({"lr_policy": 0.0}, "learning rates"),
            ({"num_latents": 0}, "num_latents"),
            ({"bc_latent_mode": "mode"}, "bc_latent_mode"),
            ({"exploration": "greedy"}, "exploration"),
            ({"exploration_episodes": 0}, "exploration_episodes"),
        ],
    )
    def test_rejects_bad_values(self, overrides, match):
        with pytest.raises(ConfigError, match=match):
            ElboConfig(**overrides)

    def test_evaluation_schedule(self):
        config = _config(train_steps=10, eval_every=4)
        assert [s for s in range(1, 11) if config.should_evaluate(s)] == [4, 8, 10]
        assert [s for s in range(1, 11) if _config(train_steps=10).should_evaluate(s)] == [10]

    def test_online_steps_default_to_train_steps(self):
        assert _config(train_steps=7).effective_online_steps == 7
        assert _config(train_steps=7, online_steps=2).effective_online_steps == 2


class TestExpertDataset:
    def test_rejects_empty(self):
        with pytest.raises(SpecValidationError, match="empty"):
            ExpertDataset((), 2, 5)

    def test_rejects_out_of_range_actions(self):
        with pytest.raises(DimensionMismatchError, match="action"):
            ExpertDataset((Trajectory.from_steps(0, [(6, 1)]),), 2, 5)

    def test_initial_state_distribution(self):
        np.testing.assert_allclose(_dataset().initial_state_distribution(), [1.0, 0.0])

    def test_file_round_trip(self, tmp_path):
        from app.env.io import save_trajectories

        data = _dataset(episodes=4)
        path = tmp_path / "expert.jsonl"
        save_trajectories(path, data)
        family, _ = make_confounded_bandit()
        loaded = ExpertDataset.from_file(path, family)
        assert len(loaded) == 4
        assert loaded.has_latents

    def test_cycler_wraps(self):
        data = _dataset(episodes=4)
        cycler = DatasetCycler(data)
        batch = cycler(1, 3)
        assert [t.steps for t in batch] == [data.trajectories[i].steps for i in (3, 0, 1)]
        assert len(cycler(0, 10)) == 4

    def test_sampler_is_fresh_and_reproducible(self):
        family, expert = make_confounded_bandit()
        sampler = ExpertSampler(family, expert, horizon=8, seed=3)
        first = sampler(0, 4)
        assert [t.steps for t in first] == [t.steps for t in sampler(0, 4)]
        assert [t.steps for t in first] != [t.steps for t in sampler(1, 4)]

    def test_held_out_differs_from_training_data(self):
        family, expert = make_confounded_bandit()
        train = _dataset(episodes=5, horizon=10, seed=2)
        held = held_out_expert_dataset(family, expert, 10, 2, 5)
        assert [t.steps for t in held] != [t.steps for t in train]


class TestTrainingPlumbing:
    def test_check_finite_names_the_block(self):
        with pytest.raises(NumericalAbort) as info:
            check_finite(12, [("prior_logits", np.zeros(3)), ("dynamics_logits", np.array([np.inf]))])
        assert info.value.step == 12
        assert info.value.block == "dynamics_logits"

    def test_training_log_columns(self):
        log = TrainingLog("unit", log_every=0)
        log.record(1, -1.0, 2.0)
        log.record(2, -0.5, 1.5, {"online_best_arm_count": 3.0, "eval_best_arm_prob": 0.4})
        frame = log.frame()
        assert list(frame.columns) == LOG_COLUMNS
        assert np.isnan(frame.loc[0, "online_best_arm_count"])
        assert frame.loc[1, "eval_best_arm_prob"] == pytest.approx(0.4)

    def test_init_is_seeded(self):
        a, b = init_model(5, 2, 5, seed=4), init_model(5, 2, 5, seed=4)
        np.testing.assert_array_equal(a.dynamics_logits, b.dynamics_logits)
        assert not np.all(a.prior_logits == a.prior_logits[0])


class TestTier2:
    def test_runs_and_logs(self):
        family, _ = make_confounded_bandit()
        model, log = train_tier2(family, _dataset(), _config(), seed=0, evaluator=_fake_evaluator)
        assert list(log.columns) == LOG_COLUMNS
        assert log["step"].tolist() == [1, 2, 3]
        assert np.all(np.isfinite(log["elbo"]))
        assert np.all(log["imitation_loss"] > 0)
        assert log["online_best_arm_count"].isna().tolist() == [True, True, False]
        assert model.is_finite()

    def test_deterministic(self):
        family, _ = make_confounded_bandit()
        a, _ = train_tier2(family, _dataset(), _config(), seed=1)
        b, _ = train_tier2(family, _dataset(), _config(), seed=1)
        np.testing.assert_array_equal(a.policy_logits, b.policy_logits)
        np.testing.assert_array_equal(a.dynamics_logits, b.dynamics_logits)

    def test_seed_changes_the_result(self):
        family, _ = make_confounded_bandit()
        a, _ = train_tier2(family, _dataset(), _config(), seed=1)
        b, _ = train_tier2(family, _dataset(), _config(), seed=2)
        assert not np.array_equal(a.policy_logits, b.policy_logits)

    def test_variants(self):
        family, expert = make_confounded_bandit()
        config = _config(bc_latent_mode="sample", exploration="imitator")
        sampler = ExpertSampler(family, expert, horizon=10, seed=0)
        model, log = train_tier2(family, _dataset(), config, seed=0, batches=sampler)
        assert len(log) == 3
        assert model.is_finite()

    def test_exploration_batch_size_is_its_own_setting(self, monkeypatch):
        import app.learn.tier2 as tier2

        family, _ = make_confounded_bandit()
        seen = []
        real = tier2.generate_exploration_batch

        def recording(family, config, action_tables=None, start_index=0):
            trajs = real(family, config, action_tables=action_tables, start_index=start_index)
            seen.append((len(trajs), start_index))
            return trajs

        monkeypatch.setattr(tier2, "generate_exploration_batch", recording)
        train_tier2(family, _dataset(), _config(exploration_episodes=7, exploration="imitator"), seed=0)
        assert seen == [(7, 0), (7, 7), (7, 14)]

    def test_numerical_abort(self, monkeypatch):
        family, _ = make_confounded_bandit()

        def poisoned(model, batch, beta, targets=None):
            grad = ModelGradient.zeros_like(model)
            grad.prior[0] = np.nan
            return 0.0, grad

        monkeypatch.setattr("app.learn.tier2.elbo_online_batch", poisoned)
        with pytest.raises(NumericalAbort, match="prior_logits"):
            train_tier2(family, _dataset(), _config(), seed=0)

    def test_single_latent_reduces_to_behaviour_cloning(self):
        family, expert = make_confounded_bandit()
        trajs = rollout_batch(
            family, expert.policy, 200, seed=4, episodes=100, latents=np.full(100, 2), tables_by_latent=True
        )
        data = ExpertDataset.for_family(family, trajs)
        config = _config(
            num_latents=1, batch_episodes=100, horizon=200, train_steps=300, lr_policy=5e-5, lr_inference=1e-5
        )
        model, _ = train_tier2(family, data, config, seed=0)

        states = np.concatenate([t.states[: len(t)] for t in trajs])
        actions = np.concatenate([t.actions for t in trajs]).astype(np.int64)
        policy = LearnedPolicy(model, EvidenceMode.INTERVENTIONAL)
        for s in range(2):
            frequencies = np.bincount(actions[states == s], minlength=5) / np.sum(states == s)
            learned = policy.action_dist(Trajectory(s))
            assert 0.5 * np.abs(learned - frequencies).sum() < 0.02
            assert 0.5 * np.abs(learned - expert.policy[2, s]).sum() < 0.02

    def test_zero_steps_returns_initial_model(self):
        family, _ = make_confounded_bandit()
        model, log = train_tier2(family, _dataset(), _config(train_steps=0), seed=5)
        np.testing.assert_array_equal(model.prior_logits, init_model(5, 2, 5, seed=5).prior_logits)
        assert log.empty


class TestOfflineFit:
    def test_fit_logs_every_step(self):
        model, log = fit_offline_model(_dataset(), _config(), seed=0, evaluator=_fake_evaluator)
        assert log["step"].tolist() == [1, 2, 3]
        assert log["online_best_arm_count"].iloc[-1] == pytest.approx(3.0)
        assert model.is_finite()

    def test_elbo_improves_with_training(self):
        data = _dataset(episodes=20, horizon=20)
        config = _config(train_steps=60, batch_episodes=20, horizon=20, lr_inference=0.001, lr_policy=0.001)
        _, log = fit_offline_model(data, config, seed=0)
        assert log["elbo"].iloc[-1] > log["elbo"].iloc[0]

    def test_naive_bc_acts_conditionally(self):
        policy = naive_bc_baseline(_dataset(), _config(), seed=0)
        assert isinstance(policy, LearnedPolicy)
        assert policy.mode is EvidenceMode.CONDITIONAL


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path):
        model = init_model(5, 2, 5, seed=9)
        online = init_model(5, 2, 5, seed=10)
        path = save_checkpoint(tmp_path / "ckpt" / "checkpoint.json", Checkpoint("tier1", 9, model, {"beta": 0.001}, online))
        loaded = load_checkpoint(path)
        assert loaded.algo == "tier1"
        assert loaded.config == {"beta": 0.001}
        np.testing.assert_array_equal(loaded.model.dynamics_logits, model.dynamics_logits)
        np.testing.assert_array_equal(loaded.online.prior_logits, online.prior_logits)

    def test_bytes_are_reproducible(self, tmp_path):
        model = init_model(3, 2, 2, seed=1)
        a = save_checkpoint(tmp_path / "a.json", Checkpoint("tier2", 1, model))
        b = save_checkpoint(tmp_path / "b.json", Checkpoint("tier2", 1, model.copy()))
        assert a.read_bytes() == b.read_bytes()

    def test_schema_version_checked(self):
        data = Checkpoint("tier2", 0, init_model(2, 2, 2, seed=0)).to_dict()
        data["schema_version"] = 99
        with pytest.raises(SpecValidationError, match="schema_version"):
            Checkpoint.from_dict(data)

    def test_k_mismatch(self):
        data = init_model(2, 2, 2, seed=0).to_dict()
        data["K"] = 3
        with pytest.raises(SpecValidationError, match="K"):
            CategoricalLatentModel.from_dict(data)


class TestLearnedPolicy:
    def _true_model(self) -> CategoricalLatentModel:
        family, expert = make_confounded_bandit()
        return CategoricalLatentModel.from_probabilities(family.latent_prior, family.transitions, expert.policy)

    def test_true_model_reproduces_the_oracle(self):
        from app.oracle.policies import act_interventional

        family, expert = make_confounded_bandit()
        traj = generate_expert_dataset(family, expert, RolloutConfig(horizon=8, seed=1))[0]
        policy = LearnedPolicy(self._true_model(), EvidenceMode.INTERVENTIONAL)
        dists = policy.prefix_action_dists(traj)
        for t in range(len(traj)):
            np.testing.assert_allclose(dists[t], act_interventional(family, expert, traj.prefix(t)), atol=1e-12)

    def test_sampling_mode_reports_exact_marginal(self):
        policy = LearnedPolicy(self._true_model(), "interventional", sampling=True, seed=2)
        policy.begin_episode(np.random.default_rng(0))
        policy.action_dist(Trajectory(0))
        np.testing.assert_allclose(policy.step_info()["marginal"], 0.2)
        assert "sampled_latent" in policy.step_info()

    def test_checkpoint_uses_online_block(self):
        offline = init_model(5, 2, 5, seed=0)
        online = self._true_model()
        policy = policy_from_checkpoint(Checkpoint("tier1", 0, offline, online=online))
        np.testing.assert_allclose(policy.model.dynamics(), online.dynamics())
        assert policy.mode is EvidenceMode.INTERVENTIONAL

    def test_naive_bc_checkpoint_is_conditional(self):
        policy = policy_from_checkpoint(Checkpoint("naive-bc", 0, init_model(5, 2, 5, seed=0)))
        assert policy.mode is EvidenceMode.CONDITIONAL

    def test_unknown_algorithm(self):
        with pytest.raises(KeyError, match="tier2"):
            policy_from_checkpoint(Checkpoint("dagger", 0, init_model(2, 2, 2, seed=0)))
