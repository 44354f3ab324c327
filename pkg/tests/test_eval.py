"""Tests for app.eval — deployment, metrics, aggregation and report comparison."""

import json
import math

import numpy as np
import pandas as pd
import pytest

from app.belief.inference import EvidenceMode
from app.env.bandit import make_confounded_bandit
from app.env.models import RolloutConfig
from app.env.rollout import generate_expert_dataset
from app.errors import SpecValidationError
from app.eval.deploy import deploy
from app.eval.metrics import (
    metric_best_arm_prob_on_expert,
    metric_imitation_loss,
    metric_kl_to_expert,
    metric_online_series,
    policy_prefix_dists,
    raster_frame,
    smooth,
    total_variation_series,
)
from app.eval.report import (
    EvalReport,
    _mean_sem,
    aggregate_reports,
    check_thresholds,
    compare_summaries,
    evaluate_policy,
    load_summary,
    summary_json,
    training_evaluator,
    write_report,
)
from app.learn.training import init_model
from app.oracle.registry import get_policy

# KL(expert row ‖ uniform) on the bandit: 0.6·ln 3 + 0.4·ln 0.5
KL_EXPERT_VS_UNIFORM = 0.6 * math.log(3.0) + 0.4 * math.log(0.5)
# H(0.6, 0.1, 0.1, 0.1, 0.1) ≈ 1.2275 nats
EXPERT_ENTROPY = -(0.6 * math.log(0.6) + 0.4 * math.log(0.1))


def _bandit():
    return make_confounded_bandit()


def _expert_data(episodes: int = 8, horizon: int = 12, seed: int = 0):
    family, expert = _bandit()
    return generate_expert_dataset(family, expert, RolloutConfig(horizon=horizon, seed=seed, episodes=episodes))


def _report(seed: int, level: float, horizon: int = 10) -> EvalReport:
    series = np.full(horizon, level)
    return EvalReport(
        policy="unit",
        seed=seed,
        episodes=4,
        horizon=horizon,
        expert_best_arm=series,
        online_best_arm=series,
        imitation_loss=series + 1.0,
        imitation_loss_mean=level + 1.0,
        best_arm_count=np.array([2, 3, 3, 4]),
        kl_to_expert=series / 10,
    )


def _summary(**overrides) -> dict:
    data = {
        "schema_version": 1,
        "horizon": 10,
        "expert_best_arm_final": 0.5,
        "expert_best_arm_final_sem": 0.01,
        "online_best_arm_final": 0.5,
        "online_best_arm_final_sem": 0.01,
        "best_arm_count_mean": 5.0,
        "best_arm_count_mean_sem": 0.1,
        "imitation_loss_mean": 1.3,
        "imitation_loss_mean_sem": 0.0,
        "kl_to_expert_final": 0.1,
        "kl_to_expert_final_sem": 0.0,
    }
    data.update(overrides)
    return data


class TestDeploy:
    def test_workers_do_not_change_results(self):
        family, expert = _bandit()
        config = RolloutConfig(horizon=15, seed=2, episodes=6)
        policy = get_policy("thompson-interventional", family, expert, seed=2)
        trajs_1, traces_1 = deploy(policy, family, expert, config, workers=1)
        trajs_3, traces_3 = deploy(policy, family, expert, config, workers=3)
        assert [t.steps for t in trajs_1] == [t.steps for t in trajs_3]
        assert [t.latent_truth for t in trajs_1] == [t.latent_truth for t in trajs_3]
        for a, b in zip(traces_1, traces_3):
            np.testing.assert_array_equal(a.sampled_latents, b.sampled_latents)

    def test_none_deploys_the_expert(self):
        family, expert = _bandit()
        _, traces = deploy(None, family, expert, RolloutConfig(horizon=200, seed=0, episodes=20))
        series, _ = metric_online_series(traces, expert)
        assert np.mean(series) == pytest.approx(0.6, abs=0.05)

    def test_needs_policy_or_expert(self):
        family, _ = _bandit()
        with pytest.raises(ValueError, match="policy or an expert"):
            deploy(None, family, None, RolloutConfig(horizon=3, seed=0))


class TestMetrics:
    def test_random_policy_best_arm_is_a_fifth(self):
        family, expert = _bandit()
        series = metric_best_arm_prob_on_expert(get_policy("random", family, expert), _expert_data(), expert)
        np.testing.assert_allclose(series, 0.2)

    def test_oracle_starts_uniform(self):
        family, expert = _bandit()
        policy = get_policy("oracle-interventional", family, expert)
        series = metric_best_arm_prob_on_expert(policy, _expert_data(), expert)
        assert series[0] == pytest.approx(0.2)
        assert series.shape == (12,)

    def test_needs_latents(self):
        family, expert = _bandit()
        data = [t.without_latent() for t in _expert_data()]
        with pytest.raises(SpecValidationError, match="latent_truth"):
            metric_best_arm_prob_on_expert(get_policy("random", family, expert), data, expert)

    def test_random_imitation_loss_is_log_num_actions(self):
        family, expert = _bandit()
        loss = metric_imitation_loss(get_policy("random", family, expert), _expert_data())
        assert loss.mean == pytest.approx(math.log(5))
        np.testing.assert_allclose(loss.series, math.log(5))
        assert not loss.flagged

    def test_zero_probability_actions_are_flagged(self):
        family, expert = _bandit()
        model = init_model(5, 2, 5, seed=0)
        model.policy_logits[:, :, 0] = -np.inf
        from app.learn.composite import LearnedPolicy

        data = [t for t in _expert_data(episodes=20) if 0 in t.actions]
        loss = metric_imitation_loss(LearnedPolicy(model, EvidenceMode.INTERVENTIONAL), data)
        assert loss.flagged
        assert loss.mean == float("inf")

    def test_kl_for_uniform_play(self):
        family, expert = _bandit()
        _, traces = deploy(get_policy("random", family, expert), family, expert, RolloutConfig(horizon=8, seed=1, episodes=4))
        np.testing.assert_allclose(metric_kl_to_expert(traces, expert), KL_EXPERT_VS_UNIFORM)

    def test_online_counts(self):
        family, expert = _bandit()
        _, traces = deploy(get_policy("random", family, expert), family, expert, RolloutConfig(horizon=8, seed=1, episodes=4))
        series, counts = metric_online_series(traces, expert)
        assert series.shape == (8,)
        assert counts.shape == (4,)
        assert np.all((counts >= 0) & (counts <= 8))

    def test_total_variation(self):
        family, expert = _bandit()
        data = _expert_data()
        oracle = get_policy("oracle-interventional", family, expert)
        np.testing.assert_allclose(total_variation_series(oracle, oracle, data), 0.0, atol=1e-12)
        tv = total_variation_series(oracle, get_policy("oracle-conditional", family, expert), data)
        assert tv[0] == pytest.approx(0.0, abs=1e-12)
        assert np.nanmax(tv) > 0

    def test_truth_conditioned_expert_loss_is_its_entropy(self):
        _, expert = _bandit()
        assert EXPERT_ENTROPY == pytest.approx(1.2275, abs=1e-4)
        loss = metric_imitation_loss(expert, _expert_data(episodes=100, horizon=200))
        assert loss.mean == pytest.approx(EXPERT_ENTROPY, abs=0.03)

    def test_conditional_oracle_leads_on_expert_data_early(self):
        family, expert = _bandit()
        data = _expert_data(episodes=1000, horizon=6, seed=3)
        cond = metric_best_arm_prob_on_expert(get_policy("oracle-conditional", family, expert), data, expert)
        inter = metric_best_arm_prob_on_expert(get_policy("oracle-interventional", family, expert), data, expert)
        assert cond[0] == pytest.approx(inter[0], abs=1e-12)
        assert np.all(cond[1:6] > inter[1:6])

    def test_expert_online_best_arm_is_point_six(self):
        family, expert = _bandit()
        _, traces = deploy(None, family, expert, RolloutConfig(horizon=100, seed=6, episodes=100))
        hits = np.concatenate([tr.actions == tr.latent_truth for tr in traces])
        sigma = math.sqrt(0.6 * 0.4 / hits.size)
        assert abs(hits.mean() - 0.6) <= 3 * sigma

    def test_expert_raster_rows_favour_the_latent(self):
        family, expert = _bandit()
        _, traces = deploy(None, family, expert, RolloutConfig(horizon=100, seed=2, episodes=50))
        frame = raster_frame(traces)
        actions = frame.drop(columns="latent").to_numpy()
        modal = [np.bincount(row, minlength=5).argmax() for row in actions]
        assert modal == frame["latent"].tolist()

    def test_step_by_step_actors_never_see_the_latent(self):
        seen = []

        def peeking(history):
            seen.append(history.latent_truth)
            return np.full(5, 0.2)

        traj = _expert_data(episodes=1, horizon=6)[0]
        assert traj.latent_truth is not None
        dists = policy_prefix_dists(peeking, traj)
        assert dists.shape == (6, 5)
        assert seen == [None] * 6

    def test_latent_aware_actor_is_told_the_latent(self):
        _, expert = _bandit()

        class LatentAware:
            def __init__(self):
                self.latent = None

            def set_latent(self, latent):
                self.latent = latent

            def begin_episode(self, rng=None):
                pass

            def action_dist(self, history):
                assert history.latent_truth is None
                return expert.policy[self.latent, history.current_state]

            def observe(self, state, action, next_state):
                pass

        traj = _expert_data(episodes=1, horizon=6)[0]
        dists = policy_prefix_dists(LatentAware(), traj)
        np.testing.assert_allclose(dists, expert.policy[traj.latent_truth, traj.states[:6]])

    def test_smooth(self):
        np.testing.assert_allclose(smooth(np.array([1.0, 2.0, 3.0, 4.0]), 2), [1.0, 1.5, 2.5, 3.5])
        np.testing.assert_allclose(smooth(np.array([1.0, 5.0]), 1), [1.0, 5.0])
        with pytest.raises(ValueError, match="window"):
            smooth(np.zeros(3), 0)

    def test_raster(self):
        family, expert = _bandit()
        _, traces = deploy(get_policy("random", family, expert), family, expert, RolloutConfig(horizon=5, seed=0, episodes=3))
        frame = raster_frame(traces)
        assert list(frame.columns) == ["t0", "t1", "t2", "t3", "t4", "latent"]
        assert frame.shape == (3, 6)
        assert frame["t0"].tolist() == [int(tr.actions[0]) for tr in traces]


class TestEvaluatePolicy:
    def test_report_and_raster(self, tmp_path):
        family, expert = _bandit()
        config = RolloutConfig(horizon=10, seed=0, episodes=5)
        report, traces = evaluate_policy(
            get_policy("random", family, expert),
            family,
            expert,
            _expert_data(horizon=10),
            config,
            name="random",
            raster_path=tmp_path / "raster.csv",
        )
        assert report.policy == "random"
        assert report.online_best_arm.shape == (10,)
        assert report.imitation_loss_mean == pytest.approx(math.log(5))
        assert len(traces) == 5
        assert pd.read_csv(tmp_path / "raster.csv").shape == (5, 11)


class TestAggregation:
    def test_mean_sem(self):
        mean, sem = _mean_sem(np.array([[1.0], [3.0]]))
        assert mean[0] == pytest.approx(2.0)
        assert sem[0] == pytest.approx(1.0)

    def test_single_seed_has_zero_sem(self):
        _, sem = _mean_sem(np.array([[1.0, 2.0]]))
        np.testing.assert_array_equal(sem, 0.0)

    def test_aggregate(self):
        agg = aggregate_reports([_report(0, 0.4), _report(1, 0.6)])
        assert agg.seeds == [0, 1]
        np.testing.assert_allclose(agg.mean["online_best_arm"], 0.5)
        assert agg.scalars["online_best_arm_final"][0] == pytest.approx(0.5)
        assert agg.scalars["online_best_arm_final"][1] == pytest.approx(0.1)
        assert agg.scalars["best_arm_count_mean"] == pytest.approx((3.0, 0.0))
        assert agg.count_histogram[3] == pytest.approx(0.5)
        assert agg.count_histogram.sum() == pytest.approx(1.0)

    def test_horizon_mismatch(self):
        with pytest.raises(SpecValidationError, match="horizon"):
            aggregate_reports([_report(0, 0.4), _report(1, 0.6, horizon=12)])

    def test_nothing_to_aggregate(self):
        with pytest.raises(ValueError):
            aggregate_reports([])

    def test_summary_keys(self):
        summary = summary_json(aggregate_reports([_report(0, 0.4)]))
        assert summary["schema_version"] == 1
        assert summary["final_window"] == [8, 10]
        for key in ("expert_best_arm_final", "kl_to_expert_final_sem", "imitation_loss_mean"):
            assert key in summary


class TestReportFiles:
    def test_write_and_load(self, tmp_path):
        agg = aggregate_reports([_report(0, 0.4), _report(1, 0.6)])
        paths = write_report(agg, tmp_path / "out")
        assert sorted(p.name for p in paths) == [
            "best_arm_count.csv",
            "expert_best_arm.csv",
            "imitation_loss.csv",
            "kl_to_expert.csv",
            "online_best_arm.csv",
            "summary.json",
        ]
        frame = pd.read_csv(tmp_path / "out" / "online_best_arm.csv")
        assert list(frame.columns) == ["t", "online_best_arm", "online_best_arm_sem"]
        assert load_summary(tmp_path / "out")["policy"] == "unit"

    def test_smoothing_column(self, tmp_path):
        write_report(aggregate_reports([_report(0, 0.4)]), tmp_path, smoothing_window=3)
        frame = pd.read_csv(tmp_path / "kl_to_expert.csv")
        assert "kl_to_expert_smooth" in frame.columns

    def test_load_rejects_other_schema(self, tmp_path):
        path = tmp_path / "summary.json"
        path.write_text(json.dumps({"schema_version": 2}))
        with pytest.raises(SpecValidationError, match="schema_version"):
            load_summary(path)


class TestComparison:
    def test_significance(self):
        diffs = {d.metric: d for d in compare_summaries(_summary(online_best_arm_final=0.7), _summary())}
        assert diffs["online_best_arm_final"].diff == pytest.approx(0.2)
        assert diffs["online_best_arm_final"].significant
        assert not diffs["expert_best_arm_final"].significant

    def test_horizon_mismatch(self):
        with pytest.raises(SpecValidationError, match="horizons"):
            compare_summaries(_summary(), _summary(horizon=20))

    def test_missing_metric(self):
        partial = _summary()
        del partial["kl_to_expert_final"]
        with pytest.raises(SpecValidationError, match="kl_to_expert_final"):
            compare_summaries(partial, _summary())

    def test_thresholds(self):
        diffs = compare_summaries(_summary(online_best_arm_final=0.7), _summary())
        assert check_thresholds(diffs, {"online_best_arm_final": 0.1}) == []
        assert check_thresholds(diffs, {"online_best_arm_final": 0.3}) != []
        assert check_thresholds(diffs, max_abs_diff={"imitation_loss_mean": 0.01}) == []
        assert check_thresholds(diffs, {"nonsense": 0.0}) == ["unknown metric 'nonsense'"]


class TestTrainingEvaluator:
    def test_returns_both_metrics(self):
        family, expert = _bandit()
        evaluate = training_evaluator(
            family, expert, _expert_data(horizon=6), EvidenceMode.INTERVENTIONAL, RolloutConfig(horizon=6, seed=0, episodes=3)
        )
        metrics = evaluate(1, init_model(5, 2, 5, seed=0))
        assert set(metrics) == {"online_best_arm_count", "eval_best_arm_prob"}
        assert 0.0 <= metrics["online_best_arm_count"] <= 6.0
        assert 0.0 <= metrics["eval_best_arm_prob"] <= 1.0
