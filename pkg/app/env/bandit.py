"""Family factories — the confounded bandit and random small families.

The bandit has |A| = |Θ| = 5 arms/latents and |S| = 2 outcome states.  The
expert pulls arm θ with probability 0.6 (0.1 otherwise) and the special
arm yields outcome 1 with probability 3/4 (1/4 otherwise).

Initial state: the source setup never fixes p(s₀|θ).  The bandit's state
only carries the last outcome and neither the expert nor the dynamics
depend on it, so s₀ = 0 for every θ; no posterior depends on this choice.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from app.env.models import ExpertSpec, MdpFamilySpec

BANDIT_ARMS = 5
BANDIT_STATES = 2
EXPERT_BEST_ARM_PROB = 0.6
EXPERT_OTHER_ARM_PROB = 0.1
SPECIAL_ARM_SUCCESS = 0.75
OTHER_ARM_SUCCESS = 0.25


def make_confounded_bandit() -> tuple[MdpFamilySpec, ExpertSpec]:
    """Build the 5-armed confounded bandit family and its expert."""
    k, s_count, a_count = BANDIT_ARMS, BANDIT_STATES, BANDIT_ARMS

    special = np.eye(k, a_count, dtype=bool)  # [θ, a] → a == θ

    success = np.where(special, SPECIAL_ARM_SUCCESS, OTHER_ARM_SUCCESS)
    transitions = np.empty((k, s_count, a_count, s_count))
    transitions[..., 1] = success[:, None, :]
    transitions[..., 0] = 1.0 - success[:, None, :]

    policy = np.where(special, EXPERT_BEST_ARM_PROB, EXPERT_OTHER_ARM_PROB)
    policy = np.broadcast_to(policy[:, None, :], (k, s_count, a_count))

    initial = np.zeros((k, s_count))
    initial[:, 0] = 1.0

    family = MdpFamilySpec(
        num_states=s_count,
        num_actions=a_count,
        num_latents=k,
        latent_prior=np.full(k, 1.0 / k),
        transitions=transitions,
        initial_dist=initial,
    )
    return family, ExpertSpec(policy=policy)


def random_family(
    num_states: int,
    num_actions: int,
    num_latents: int,
    seed: int = 0,
    concentration: float = 1.0,
) -> tuple[MdpFamilySpec, ExpertSpec]:
    """Draw a valid family and expert with Dirichlet rows (for tests)."""
    rng = np.random.default_rng(seed)
    alpha_s = np.full(num_states, concentration)
    alpha_a = np.full(num_actions, concentration)
    family = MdpFamilySpec(
        num_states=num_states,
        num_actions=num_actions,
        num_latents=num_latents,
        latent_prior=rng.dirichlet(np.full(num_latents, concentration)),
        transitions=rng.dirichlet(alpha_s, size=(num_latents, num_states, num_actions)),
        initial_dist=rng.dirichlet(alpha_s, size=num_latents),
    )
    expert = ExpertSpec(policy=rng.dirichlet(alpha_a, size=(num_latents, num_states)))
    return family, expert


# ── Registry ─────────────────────────────────────────────────────────────


ENVIRONMENT_REGISTRY: dict[str, Callable[[], tuple[MdpFamilySpec, ExpertSpec]]] = {
    "bandit": make_confounded_bandit,
}


def get_environment(name: str) -> tuple[MdpFamilySpec, ExpertSpec]:
    """Look up and build a registered family by name.

    Raises ``KeyError`` if the name is not registered.
    """
    if name not in ENVIRONMENT_REGISTRY:
        raise KeyError(
            f"Unknown environment '{name}'. "
            f"Available: {', '.join(ENVIRONMENT_REGISTRY.keys())}"
        )
    return ENVIRONMENT_REGISTRY[name]()
