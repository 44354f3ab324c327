"""Offline ELBO fit and the naive behavioural-cloning baseline.

The offline fit explains expert trajectories with a latent that drives
both dynamics and actions.  Acting with its conditional posterior gives
the deluded imitator naive BC converges to.
"""

from __future__ import annotations

import logging
from typing import Optional

import pandas as pd

from app.belief.inference import EvidenceMode
from app.env.models import TrajectoryBatch
from app.errors import SpecValidationError
from app.learn.composite import LearnedPolicy
from app.learn.config import ElboConfig
from app.learn.dataset import BatchSource, DatasetCycler, ExpertDataset
from app.learn.elbo import bc_loss, elbo_offline_batch, episode_posteriors
from app.learn.model import CategoricalLatentModel
from app.learn.training import (
    Evaluator,
    TrainingLog,
    ascend_all,
    check_finite,
    evaluate_if_due,
    init_model,
)

logger = logging.getLogger("deconfound.learn.baseline")


def fit_offline_model(
    dataset: ExpertDataset,
    config: ElboConfig,
    seed: int,
    batches: Optional[BatchSource] = None,
    evaluator: Optional[Evaluator] = None,
    name: str = "offline",
) -> tuple[CategoricalLatentModel, pd.DataFrame]:
    """Ascend the whole-trajectory ELBO on expert episodes.

    Trains prior, dynamics and policy jointly.  The logged imitation loss
    is the BC loss under the model's conditional episode posterior.
    """
    if len(dataset) == 0:
        raise SpecValidationError("expert dataset is empty")
    batches = batches or DatasetCycler(dataset)
    model = init_model(config.num_latents, dataset.num_states, dataset.num_actions, seed)
    log = TrainingLog(name, config.log_every)

    logger.info(
        "Offline ELBO fit (%s): K=%d, %d steps, batch %d (seed %d)",
        name, config.num_latents, config.train_steps, config.batch_episodes, seed,
    )
    for step in range(1, config.train_steps + 1):
        batch = TrajectoryBatch.from_trajectories(batches(step - 1, config.batch_episodes))
        n_steps = max(int(batch.mask.sum()), 1)

        posterior = episode_posteriors(model, batch, conditional=True)
        loss, _, _ = bc_loss(model, batch, posterior)

        elbo, grad = elbo_offline_batch(model, batch, config.beta)
        check_finite(step, grad.blocks())
        ascend_all(model, grad, config.lr_inference, config.lr_policy)

        metrics = evaluate_if_due(evaluator, step, config.should_evaluate(step), model)
        log.record(step, elbo / n_steps, loss / n_steps, metrics)

    return model, log.frame()


def naive_bc_baseline(
    dataset: ExpertDataset,
    config: ElboConfig,
    seed: int,
    batches: Optional[BatchSource] = None,
) -> LearnedPolicy:
    """Fit the offline model and act with its conditional posterior."""
    model, _ = fit_offline_model(dataset, config, seed, batches, name="naive-bc")
    return LearnedPolicy(model, EvidenceMode.CONDITIONAL)
