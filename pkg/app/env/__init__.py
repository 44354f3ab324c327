"""Latent-confounded MDP families, the confounded bandit and seeded rollouts."""

from app.env.bandit import get_environment, make_confounded_bandit, random_family
from app.env.models import (
    ExpertSpec,
    MdpFamilySpec,
    RolloutConfig,
    Trajectory,
    TrajectoryBatch,
)
from app.env.rollout import generate_expert_dataset, rollout, rollout_batch
from app.env.validate import validate_spec

__all__ = [
    "ExpertSpec",
    "MdpFamilySpec",
    "RolloutConfig",
    "Trajectory",
    "TrajectoryBatch",
    "generate_expert_dataset",
    "get_environment",
    "make_confounded_bandit",
    "random_family",
    "rollout",
    "rollout_batch",
    "validate_spec",
]
