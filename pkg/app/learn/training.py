"""Shared training plumbing: SGD steps, NaN guards and the training log."""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional

import numpy as np
import pandas as pd

from app.env.rng import Stream, episode_rng, sample_categorical_rows
from app.errors import NumericalAbort
from app.learn.elbo import ModelGradient
from app.learn.model import CategoricalLatentModel

logger = logging.getLogger("deconfound.learn")

LOG_COLUMNS = ["step", "elbo", "imitation_loss", "online_best_arm_count", "eval_best_arm_prob"]

# (step, model) → {"online_best_arm_count": ..., "eval_best_arm_prob": ...}
Evaluator = Callable[[int, CategoricalLatentModel], dict]

# Per-run model streams (index within Stream.MODEL).
INIT_STREAM = 0
BC_SAMPLE_STREAM = 1
EXPLORATION_LATENT_STREAM = 2
SYNTHETIC_LATENT_STREAM = 3


def init_model(
    num_latents: int, num_states: int, num_actions: int, seed: int
) -> CategoricalLatentModel:
    return CategoricalLatentModel.initialize(
        num_latents, num_states, num_actions, episode_rng(seed, INIT_STREAM, Stream.MODEL)
    )


def check_finite(step: int, blocks: Iterable[tuple[str, np.ndarray]], what: str = "gradient") -> None:
    """Raise ``NumericalAbort`` naming the first non-finite block."""
    for name, values in blocks:
        if not np.all(np.isfinite(values)):
            logger.error("Numerical abort at step %d: non-finite %s in %s", step, what, name)
            raise NumericalAbort(step, name, f"non-finite {what}")


def ascend_inference(model: CategoricalLatentModel, grad: ModelGradient, lr: float) -> None:
    """Gradient ascent on the prior and dynamics logits."""
    model.prior_logits += lr * grad.prior
    model.dynamics_logits += lr * grad.dynamics


def ascend_all(
    model: CategoricalLatentModel, grad: ModelGradient, lr_inference: float, lr_policy: float
) -> None:
    ascend_inference(model, grad, lr_inference)
    model.policy_logits += lr_policy * grad.policy


def sample_one_hot(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``(E, K)`` probabilities, one-hot encoded."""
    draws = sample_categorical_rows(np.cumsum(probs, axis=-1), rng.random(probs.shape[0]))
    return np.eye(probs.shape[1])[draws]


class TrainingLog:
    """Accumulates per-step rows; evaluation columns stay NaN between evaluations."""

    def __init__(self, name: str, log_every: int) -> None:
        self.name = name
        self.log_every = log_every
        self._rows: list[dict] = []

    def record(
        self,
        step: int,
        elbo: float,
        imitation_loss: float,
        metrics: Optional[dict] = None,
    ) -> None:
        metrics = metrics or {}
        row = {
            "step": step,
            "elbo": elbo,
            "imitation_loss": imitation_loss,
            "online_best_arm_count": metrics.get("online_best_arm_count", np.nan),
            "eval_best_arm_prob": metrics.get("eval_best_arm_prob", np.nan),
        }
        self._rows.append(row)
        if self.log_every > 0 and step % self.log_every == 0:
            logger.info(
                "[%s] step %d  elbo=%.4f  imitation_loss=%.4f  best_arm_count=%s",
                self.name,
                step,
                elbo,
                imitation_loss,
                "-" if np.isnan(row["online_best_arm_count"]) else f"{row['online_best_arm_count']:.2f}",
            )

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self._rows, columns=LOG_COLUMNS)


def evaluate_if_due(
    evaluator: Optional[Evaluator],
    step: int,
    should_evaluate: bool,
    model: CategoricalLatentModel,
) -> dict:
    if evaluator is None or not should_evaluate:
        return {}
    return dict(evaluator(step, model))
