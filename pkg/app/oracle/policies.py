"""Ground-truth policies: expert, conditional, interventional, Thompson actor.

``ExactPolicy`` is the exact marginal policy
    π(a|history) = Σ_θ p_mode(θ|history) · π(a|s, θ)
and ``PosteriorSamplingActor`` acts by sampling θ̂ from the same belief and
playing π(·|s, θ̂).  Marginalised over θ̂ the two coincide, so exact
probabilities feed the probability curves while the actor feeds rasters.

Both take raw tables, so learned models reuse them unchanged.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from app.belief.inference import (
    Belief,
    BeliefTracker,
    EvidenceMode,
    batch_posterior,
    prefix_posteriors,
    update,
)
from app.env.models import ExpertSpec, MdpFamilySpec, Trajectory
from app.env.rng import inverse_cdf
from app.errors import DimensionMismatchError

logger = logging.getLogger("deconfound.oracle")

_FOLLOW_CAPACITY = 128


# ── Pure functions ───────────────────────────────────────────────────────


def expert_action_dist(expert: ExpertSpec, s: int, latent: int) -> np.ndarray:
    """Row π_exp(·|s, θ)."""
    k, n_s, _ = expert.policy.shape
    if not (0 <= latent < k and 0 <= s < n_s):
        raise DimensionMismatchError(f"(state={s}, latent={latent}) out of range")
    return expert.policy[latent, s]


def mixture_action_dist(belief: Belief, policy: ExpertSpec | np.ndarray, s: int) -> np.ndarray:
    """Σ_θ exp(belief[θ]) · π(·|s, θ)."""
    table = policy.policy if isinstance(policy, ExpertSpec) else np.asarray(policy)
    if table.shape[0] != belief.num_latents:
        raise DimensionMismatchError(
            f"belief over {belief.num_latents} latents, policy over {table.shape[0]}"
        )
    return belief.probs() @ table[:, s, :]


# ── Exact marginal policies ──────────────────────────────────────────────


class ExactPolicy:
    """Exact conditional or interventional marginal policy (no sampling).

    Inside an episode the posterior is folded forward by ``observe``;
    a history it has not followed is scored from scratch, so the same
    instance can score datasets and act online.
    """

    def __init__(
        self,
        latent_prior: np.ndarray,
        dynamics: np.ndarray,
        policy_table: np.ndarray,
        mode: EvidenceMode | str = EvidenceMode.INTERVENTIONAL,
    ) -> None:
        self.latent_prior = np.asarray(latent_prior, dtype=np.float64)
        self.dynamics = np.asarray(dynamics, dtype=np.float64)
        self.policy_table = np.asarray(policy_table, dtype=np.float64)
        self.mode = EvidenceMode(mode)
        self._last: Optional[tuple[Belief, np.ndarray]] = None
        self._running: Optional[Belief] = None
        self._forget()

    @classmethod
    def from_family(
        cls, family: MdpFamilySpec, expert: ExpertSpec, mode: EvidenceMode | str
    ) -> "ExactPolicy":
        return cls(family.latent_prior, family.transitions, expert.policy, mode)

    def posterior(self, history: Trajectory) -> Belief:
        return batch_posterior(
            self.latent_prior, history, self.dynamics, self.mode, self.policy_table
        )

    def __call__(self, history: Trajectory) -> np.ndarray:
        return self.action_dist(history)

    def action_dist(self, history: Trajectory) -> np.ndarray:
        if self._follows(history):
            belief = self._running
        else:
            belief = self.posterior(history)
            self._running = belief
            self._remember(history)
        dist = mixture_action_dist(belief, self.policy_table, history.current_state)
        self._last = (belief, dist)
        return dist

    def prefix_action_dists(self, trajectory: Trajectory) -> np.ndarray:
        """(T, A) action distributions at every prefix of *trajectory*."""
        t = len(trajectory)
        log_b = prefix_posteriors(
            self.latent_prior, trajectory, self.dynamics, self.mode, self.policy_table
        )[:t]
        states = trajectory.states[:t]
        # [t, k] · [k, t, a] → [t, a]
        return np.einsum("tk,kta->ta", np.exp(log_b), self.policy_table[:, states, :])

    def step_info(self) -> dict:
        if self._last is None:
            return {}
        belief, dist = self._last
        return {"belief": belief.probs(), "marginal": dist}

    def begin_episode(self, rng: Optional[np.random.Generator] = None) -> None:
        self._last = None
        self._running = None
        self._forget()

    def observe(self, state: int, action: int, next_state: int) -> None:
        if self._running is None:
            return
        self._running = update(
            self._running, state, action, next_state, self.dynamics, self.mode, self.policy_table
        )
        n = self._steps
        if n == self._actions.shape[0]:
            self._actions = np.concatenate((self._actions, np.empty_like(self._actions)))
            self._next_states = np.concatenate((self._next_states, np.empty_like(self._next_states)))
        self._actions[n] = action
        self._next_states[n] = next_state
        self._steps = n + 1

    # ── Followed history ──

    def _forget(self) -> None:
        self._initial: Optional[int] = None
        self._steps = 0
        self._actions = np.empty(_FOLLOW_CAPACITY, dtype=np.int64)
        self._next_states = np.empty(_FOLLOW_CAPACITY, dtype=np.int64)

    def _remember(self, history: Trajectory) -> None:
        n = len(history)
        size = max(_FOLLOW_CAPACITY, 2 * n)
        self._initial = int(history.initial_state)
        self._steps = n
        self._actions = np.empty(size, dtype=np.int64)
        self._next_states = np.empty(size, dtype=np.int64)
        self._actions[:n] = history.actions
        self._next_states[:n] = history.next_states

    def _follows(self, history: Trajectory) -> bool:
        """True when *history* is exactly the path the running belief has seen."""
        n = self._steps
        if self._running is None or self._initial != history.initial_state or n != len(history):
            return False
        return np.array_equal(history.actions, self._actions[:n]) and np.array_equal(
            history.next_states, self._next_states[:n]
        )


def act_conditional(family: MdpFamilySpec, expert: ExpertSpec, history: Trajectory) -> np.ndarray:
    """π_cond(·|history): actions are evidence for θ."""
    return ExactPolicy.from_family(family, expert, EvidenceMode.CONDITIONAL).action_dist(history)


def act_interventional(family: MdpFamilySpec, expert: ExpertSpec, history: Trajectory) -> np.ndarray:
    """π_int(·|history): past actions are interventions, only transitions count."""
    return ExactPolicy.from_family(family, expert, EvidenceMode.INTERVENTIONAL).action_dist(history)


# ── Posterior-sampling actor ─────────────────────────────────────────────


class PosteriorSamplingActor:
    """Thompson-style actor: sample θ̂ ~ belief, play π(·|s, θ̂), update.

    Stateful and single-owner; ``begin_episode`` resets the belief and
    installs the episode's generator.
    """

    def __init__(
        self,
        tracker: BeliefTracker,
        policy_table: np.ndarray,
        seed: int = 0,
    ) -> None:
        self.tracker = tracker
        self.policy_table = np.asarray(policy_table, dtype=np.float64)
        if self.policy_table.shape[0] != tracker.prior.num_latents:
            raise DimensionMismatchError("policy table and belief disagree on latent count")
        self._rng = np.random.default_rng(seed)
        self._info: dict = {}

    def begin_episode(self, rng: Optional[np.random.Generator] = None) -> None:
        if rng is not None:
            self._rng = rng
        self.tracker.reset()
        self._info = {}

    def sample_latent(self) -> int:
        return inverse_cdf(np.cumsum(self.tracker.belief.probs()), self._rng.random())

    def action_dist(self, history: Trajectory) -> np.ndarray:
        belief = self.tracker.belief
        s = history.current_state
        latent = self.sample_latent()
        dist = self.policy_table[latent, s]
        self._info = {
            "belief": belief.probs(),
            "sampled_latent": latent,
            "marginal": mixture_action_dist(belief, self.policy_table, s),
        }
        return dist

    def observe(self, state: int, action: int, next_state: int) -> None:
        self.tracker.observe(state, action, next_state)

    def step_info(self) -> dict:
        return dict(self._info)


def posterior_sampling_actor(
    latent_prior: np.ndarray,
    dynamics: np.ndarray,
    policy_table: np.ndarray,
    mode: EvidenceMode | str = EvidenceMode.INTERVENTIONAL,
    seed: int = 0,
) -> PosteriorSamplingActor:
    """Build a Thompson actor whose belief engine runs in *mode*."""
    tracker = BeliefTracker(latent_prior, dynamics, mode, policy_table)
    return PosteriorSamplingActor(tracker, policy_table, seed=seed)
