"""Policy registry — maps CLI policy names to policy builders.

Checkpoint-backed policies are resolved in ``app.learn.composite``; the
names here only need the true family and expert.
"""

from __future__ import annotations

from typing import Callable

from app.belief.inference import EvidenceMode
from app.env.models import ExpertSpec, MdpFamilySpec
from app.env.policy import PolicyProtocol, TruthConditionedExpert, UniformPolicy
from app.oracle.policies import ExactPolicy, posterior_sampling_actor

PolicyBuilder = Callable[[MdpFamilySpec, ExpertSpec, int], PolicyProtocol]


POLICY_REGISTRY: dict[str, PolicyBuilder] = {
    "expert": lambda family, expert, seed: TruthConditionedExpert(expert),
    "oracle-conditional": lambda family, expert, seed: ExactPolicy.from_family(
        family, expert, EvidenceMode.CONDITIONAL
    ),
    "oracle-interventional": lambda family, expert, seed: ExactPolicy.from_family(
        family, expert, EvidenceMode.INTERVENTIONAL
    ),
    "thompson-conditional": lambda family, expert, seed: posterior_sampling_actor(
        family.latent_prior, family.transitions, expert.policy, EvidenceMode.CONDITIONAL, seed
    ),
    "thompson-interventional": lambda family, expert, seed: posterior_sampling_actor(
        family.latent_prior, family.transitions, expert.policy, EvidenceMode.INTERVENTIONAL, seed
    ),
    "random": lambda family, expert, seed: UniformPolicy(family.num_states, family.num_actions),
}


def get_policy(name: str, family: MdpFamilySpec, expert: ExpertSpec, seed: int = 0) -> PolicyProtocol:
    """Look up and build a reference policy by registry key.

    Raises ``KeyError`` if the name is not registered.
    """
    if name not in POLICY_REGISTRY:
        raise KeyError(
            f"Unknown policy '{name}'. "
            f"Available: {', '.join(POLICY_REGISTRY.keys())}, checkpoint"
        )
    return POLICY_REGISTRY[name](family, expert, seed)
