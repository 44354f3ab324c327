"""Test-time agents built from a learned model, and checkpoint resolution.

A ``LearnedPolicy`` infers the model's latent from its own history and
conditions π_η on it.  Exact mode plays the belief mixture of π_η;
sampling mode draws θ̂ from the belief each step and plays π_η(·|s, θ̂).
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from app.belief.inference import EvidenceMode
from app.env.models import Trajectory
from app.learn.model import CategoricalLatentModel, Checkpoint
from app.oracle.policies import ExactPolicy, posterior_sampling_actor

# Which posterior each trained algorithm acts with.
ALGO_MODES: dict[str, EvidenceMode] = {
    "tier2": EvidenceMode.INTERVENTIONAL,
    "tier1": EvidenceMode.INTERVENTIONAL,
    "tier1-mle": EvidenceMode.INTERVENTIONAL,
    "naive-bc": EvidenceMode.CONDITIONAL,
}


class LearnedPolicy:
    """Latent-inferring composite policy over a ``CategoricalLatentModel``."""

    def __init__(
        self,
        model: CategoricalLatentModel,
        mode: EvidenceMode | str = EvidenceMode.INTERVENTIONAL,
        sampling: bool = False,
        seed: int = 0,
    ) -> None:
        self.model = model
        self.mode = EvidenceMode(mode)
        self.sampling = sampling
        prior, dynamics, policy = model.prior(), model.dynamics(), model.policy()
        self.exact = ExactPolicy(prior, dynamics, policy, self.mode)
        self._actor = (
            posterior_sampling_actor(prior, dynamics, policy, self.mode, seed) if sampling else None
        )

    @property
    def _active(self):
        return self._actor if self._actor is not None else self.exact

    def begin_episode(self, rng: Optional[np.random.Generator] = None) -> None:
        self._active.begin_episode(rng)

    def action_dist(self, history: Trajectory) -> np.ndarray:
        return self._active.action_dist(history)

    def observe(self, state: int, action: int, next_state: int) -> None:
        self._active.observe(state, action, next_state)

    def step_info(self) -> dict:
        return self._active.step_info()

    def prefix_action_dists(self, trajectory: Trajectory) -> np.ndarray:
        """Exact marginal action distributions at every prefix (never sampled)."""
        return self.exact.prefix_action_dists(trajectory)


def policy_from_checkpoint(
    checkpoint: Checkpoint, sampling: bool = False, seed: int = 0
) -> LearnedPolicy:
    """Composite policy for a trained checkpoint.

    Tier-1 pairs the online inference model (prior and dynamics) with the
    offline π_η, both stored in the ``online`` block.
    """
    if checkpoint.algo not in ALGO_MODES:
        raise KeyError(
            f"Unknown algorithm '{checkpoint.algo}'. Available: {', '.join(ALGO_MODES)}"
        )
    model = checkpoint.online if checkpoint.online is not None else checkpoint.model
    return LearnedPolicy(model, ALGO_MODES[checkpoint.algo], sampling=sampling, seed=seed)
