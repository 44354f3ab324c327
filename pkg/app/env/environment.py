"""Gymnasium environment for one member of a latent-confounded MDP family.

Reward-free: every step returns reward 0.0.  Random draws follow a fixed
consumption order so the vectorised batch rollout can reproduce them:
reset draws (latent, s₀) variates, each step draws (action, next state).
"""

from __future__ import annotations

import logging
from typing import Any, Optional

import gymnasium as gym
import numpy as np
from gymnasium import spaces

from app.env.models import MdpFamilySpec
from app.env.rng import inverse_cdf
from app.errors import DimensionMismatchError

logger = logging.getLogger("deconfound.env")


class ConfoundedMdpEnv(gym.Env):
    """Samples θ ~ p(θ) (or takes it from ``options``) and hides it.

    The latent is exposed only through ``info["latent"]`` so harness code
    can score episodes; policies never receive ``info``.
    """

    metadata = {"render_modes": []}

    def __init__(self, family: MdpFamilySpec, horizon: int) -> None:
        super().__init__()
        self.family = family
        self.horizon = int(horizon)
        self.observation_space = spaces.Discrete(family.num_states)
        self.action_space = spaces.Discrete(family.num_actions)

        self._prior_cdf = np.cumsum(family.latent_prior)
        self._initial_cdf = np.cumsum(family.initial_dist, axis=-1)
        self._transition_cdf = np.cumsum(family.transitions, axis=-1)

        self._latent = 0
        self._state = 0
        self._t = 0

    # ── Gym interface ────────────────────────────────────────────────────

    def reset(
        self,
        *,
        seed: Optional[int] = None,
        options: Optional[dict[str, Any]] = None,
    ) -> tuple[int, dict]:
        super().reset(seed=seed)
        options = options or {}

        u_latent, u_state = self.np_random.random(2)
        latent = options.get("latent")
        if latent is None:
            latent = inverse_cdf(self._prior_cdf, u_latent)
        elif not 0 <= int(latent) < self.family.num_latents:
            raise DimensionMismatchError(
                f"latent {latent} out of range [0, {self.family.num_latents})"
            )

        self._latent = int(latent)
        self._state = inverse_cdf(self._initial_cdf[self._latent], u_state)
        self._t = 0
        return self._state, {"latent": self._latent, "t": 0}

    def step(self, action: int) -> tuple[int, float, bool, bool, dict]:
        if not 0 <= int(action) < self.family.num_actions:
            raise DimensionMismatchError(
                f"action {action} out of range [0, {self.family.num_actions})"
            )
        u = self.np_random.random()
        cdf = self._transition_cdf[self._latent, self._state, int(action)]
        self._state = inverse_cdf(cdf, u)
        self._t += 1
        truncated = self._t >= self.horizon
        return self._state, 0.0, False, truncated, {"latent": self._latent, "t": self._t}

    # ── Accessors ────────────────────────────────────────────────────────

    @property
    def latent(self) -> int:
        return self._latent

    @property
    def state(self) -> int:
        return self._state
