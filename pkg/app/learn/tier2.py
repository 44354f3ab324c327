"""Tier-2 imitator: latent inference learned from exploration, then BC.

Each step:
  1. roll out latent-blind exploration episodes under the true dynamics,
  2. ascend the online ELBO on the prior and dynamics logits,
  3. infer a whole-episode interventional latent for every expert episode,
  4. descend the latent-conditioned BC loss on the policy logits.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
import pandas as pd

from app.env.models import MdpFamilySpec, RolloutConfig, TrajectoryBatch
from app.env.rng import Stream, episode_rng, sample_categorical_rows
from app.env.rollout import generate_exploration_batch
from app.errors import SpecValidationError
from app.learn.config import ElboConfig
from app.learn.dataset import BatchSource, DatasetCycler, ExpertDataset
from app.learn.elbo import bc_loss, elbo_online_batch, episode_posteriors
from app.learn.model import CategoricalLatentModel
from app.learn.training import (
    BC_SAMPLE_STREAM,
    EXPLORATION_LATENT_STREAM,
    Evaluator,
    TrainingLog,
    ascend_inference,
    check_finite,
    evaluate_if_due,
    init_model,
    sample_one_hot,
)

logger = logging.getLogger("deconfound.learn.tier2")


def exploration_tables(
    model: CategoricalLatentModel,
    config: ElboConfig,
    episodes: int,
    rng: np.random.Generator,
) -> Optional[np.ndarray]:
    """Action tables for one exploration batch.

    ``random`` → None (uniform); ``imitator`` → π_η(·|·, θ̂) with
    θ̂ ~ p(θ̂) drawn per episode.
    """
    if config.exploration == "random":
        return None
    prior_cdf = np.broadcast_to(np.cumsum(model.prior()), (episodes, model.num_latent_categories))
    latents = sample_categorical_rows(prior_cdf, rng.random(episodes))
    return model.policy()[latents]


def bc_step(
    model: CategoricalLatentModel,
    batch: TrajectoryBatch,
    config: ElboConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> tuple[float, int]:
    """One BC update on the policy logits; returns (summed NLL, step count)."""
    posterior = episode_posteriors(model, batch, conditional=False)
    if config.bc_latent_mode == "sample":
        weights = sample_one_hot(posterior, rng)
    else:
        weights = posterior
    loss, grad, steps = bc_loss(model, batch, weights)
    check_finite(step, [("policy_logits", grad)])
    model.policy_logits -= config.lr_policy * grad
    return loss, steps


def train_tier2(
    family: MdpFamilySpec,
    dataset: ExpertDataset,
    config: ElboConfig,
    seed: int,
    batches: Optional[BatchSource] = None,
    evaluator: Optional[Evaluator] = None,
) -> tuple[CategoricalLatentModel, pd.DataFrame]:
    """Train prior, dynamics and policy; returns (model, training log).

    *family* is only used to simulate exploration episodes.  *batches*
    defaults to cycling through *dataset*; pass an ``ExpertSampler`` to draw
    fresh expert episodes every step.
    """
    if len(dataset) == 0:
        raise SpecValidationError("expert dataset is empty")
    batches = batches or DatasetCycler(dataset)
    model = init_model(config.num_latents, family.num_states, family.num_actions, seed)
    bc_rng = episode_rng(seed, BC_SAMPLE_STREAM, Stream.MODEL)
    explore_rng = episode_rng(seed, EXPLORATION_LATENT_STREAM, Stream.MODEL)
    log = TrainingLog("tier2", config.log_every)
    explore_config = RolloutConfig(horizon=config.horizon, seed=seed, episodes=config.exploration_episodes)

    logger.info(
        "Tier-2 training: K=%d, %d steps, batch %d, exploration %d, beta=%g (seed %d)",
        config.num_latents, config.train_steps, config.batch_episodes,
        config.exploration_episodes, config.beta, seed,
    )
    for step in range(1, config.train_steps + 1):
        # 1 ── Exploration data
        tables = exploration_tables(model, config, config.exploration_episodes, explore_rng)
        explore = generate_exploration_batch(
            family,
            explore_config,
            action_tables=tables,
            start_index=(step - 1) * config.exploration_episodes,
        )
        explore_batch = TrajectoryBatch.from_trajectories(explore)

        # 2 ── Latent inference (online ELBO)
        elbo, grad = elbo_online_batch(model, explore_batch, config.beta)
        check_finite(step, grad.blocks())
        ascend_inference(model, grad, config.lr_inference)

        # 3-4 ── Infer expert latents, behaviour cloning
        expert_batch = TrajectoryBatch.from_trajectories(batches(step - 1, config.batch_episodes))
        loss, steps = bc_step(model, expert_batch, config, bc_rng, step)

        metrics = evaluate_if_due(evaluator, step, config.should_evaluate(step), model)
        log.record(
            step,
            elbo / max(int(explore_batch.mask.sum()), 1),
            loss / max(steps, 1),
            metrics,
        )

    logger.info("Tier-2 training finished after %d steps", config.train_steps)
    return model, log.frame()
