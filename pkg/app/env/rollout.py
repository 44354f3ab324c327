"""Seeded rollout generation for arbitrary policies.

Two paths produce bit-identical trajectories for Markov policies:

* ``rollout`` drives ``ConfoundedMdpEnv`` one step at a time and accepts
  any history-conditioned policy.
* ``rollout_batch`` vectorises across episodes for Markov action tables
  (expert data, random exploration, synthetic data) so long recurrent
  episodes stay cheap.

Both consume each episode's stream as: (latent, s₀) at reset, then
(action, next state) per step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from app.env.environment import ConfoundedMdpEnv
from app.env.models import (
    ExpertSpec,
    HistoryBuffer,
    MdpFamilySpec,
    RolloutConfig,
    Trajectory,
)
from app.env.policy import PolicyProtocol, as_policy
from app.env.rng import Stream, episode_rng, inverse_cdf, sample_categorical_rows
from app.errors import DimensionMismatchError

logger = logging.getLogger("deconfound.env.rollout")

_BATCH_CHUNK = 4096
_DIST_TOL = 1e-9


@dataclass
class StepRecord:
    """What the policy reported before acting at one step."""

    action_dist: np.ndarray
    marginal_dist: np.ndarray
    belief: Optional[np.ndarray] = None
    sampled_latent: int = -1


@dataclass
class EpisodeResult:
    trajectory: Trajectory
    records: list[StepRecord] = field(default_factory=list)


def _check_dist(dist: np.ndarray, num_actions: int) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (num_actions,):
        raise DimensionMismatchError(
            f"policy returned shape {dist.shape}, family has {num_actions} actions"
        )
    if np.any(dist < 0) or abs(dist.sum() - 1.0) > _DIST_TOL:
        raise DimensionMismatchError(f"policy returned an invalid distribution {dist}")
    return dist


def run_episode(
    family: MdpFamilySpec,
    policy: Any,
    latent: Optional[int],
    horizon: int,
    env_rng: np.random.Generator,
    policy_rng: Optional[np.random.Generator] = None,
    record: bool = False,
) -> EpisodeResult:
    """Roll out one episode; ``latent=None`` samples θ from the prior."""
    actor: PolicyProtocol = as_policy(policy)
    env = ConfoundedMdpEnv(family, horizon)
    env.np_random = env_rng
    options = None if latent is None else {"latent": int(latent)}
    state, info = env.reset(options=options)
    true_latent = info["latent"]

    if hasattr(actor, "set_latent"):
        actor.set_latent(true_latent)
    actor.begin_episode(policy_rng)

    history = HistoryBuffer(state, horizon)
    records: list[StepRecord] = []
    for _ in range(horizon):
        dist = _check_dist(actor.action_dist(history.view()), family.num_actions)
        if record:
            info_fn = getattr(actor, "step_info", None)
            extra = info_fn() if info_fn is not None else {}
            records.append(
                StepRecord(
                    action_dist=dist,
                    marginal_dist=np.asarray(extra.get("marginal", dist), dtype=np.float64),
                    belief=extra.get("belief"),
                    sampled_latent=int(extra.get("sampled_latent", -1)),
                )
            )
        action = inverse_cdf(np.cumsum(dist), env.np_random.random())
        next_state, _, _, _, _ = env.step(action)
        actor.observe(state, action, next_state)
        history.append(action, next_state)
        state = next_state

    return EpisodeResult(history.view(true_latent), records)


def rollout(
    family: MdpFamilySpec,
    policy: Any,
    latent: Optional[int],
    config: RolloutConfig,
    episode: int = 0,
    stream: int = Stream.EXPERT,
) -> Trajectory:
    """Sample one trajectory of ``config.horizon`` steps.

    Deterministic in ``(config.seed, stream, episode)``; the policy gets its
    own actor stream for any internal sampling.
    """
    if latent is not None and not 0 <= latent < family.num_latents:
        raise DimensionMismatchError(
            f"latent {latent} out of range [0, {family.num_latents})"
        )
    result = run_episode(
        family,
        policy,
        latent,
        config.horizon,
        env_rng=episode_rng(config.seed, episode, stream),
        policy_rng=episode_rng(config.seed, episode, Stream.ACTOR),
    )
    return result.trajectory


# ── Vectorised Markov rollouts ───────────────────────────────────────────


def rollout_batch(
    family: MdpFamilySpec,
    action_tables: np.ndarray,
    horizon: int,
    seed: int,
    episodes: int,
    stream: int = Stream.EXPERT,
    start_index: int = 0,
    latents: Optional[np.ndarray] = None,
    tables_by_latent: bool = False,
) -> list[Trajectory]:
    """Roll out *episodes* Markov episodes at once.

    ``action_tables`` is either one ``(S, A)`` table shared by all episodes,
    an ``(E, S, A)`` stack (one per episode) or, with ``tables_by_latent``,
    a ``(K, S, A)`` stack indexed by each episode's true latent (the expert).
    Episode ``e`` uses stream ``(seed, stream, start_index + e)`` and matches
    ``rollout`` on the same index bit-for-bit.
    """
    k, s_count, a_count = family.num_latents, family.num_states, family.num_actions
    tables = np.asarray(action_tables, dtype=np.float64)
    if tables.shape[-2:] != (s_count, a_count):
        raise DimensionMismatchError(
            f"action tables of shape {tables.shape} do not match (S={s_count}, A={a_count})"
        )

    if episodes == 0:
        return []
    rngs = [episode_rng(seed, start_index + e, stream) for e in range(episodes)]
    head = np.stack([r.random(2) for r in rngs])

    if latents is None:
        prior_cdf = np.broadcast_to(np.cumsum(family.latent_prior), (episodes, k))
        latents = sample_categorical_rows(prior_cdf, head[:, 0])
    else:
        latents = np.asarray(latents, dtype=np.int64)
        if latents.shape != (episodes,) or np.any((latents < 0) | (latents >= k)):
            raise DimensionMismatchError("latents must be one valid id per episode")

    initial_cdf = np.cumsum(family.initial_dist, axis=-1)[latents]
    states = sample_categorical_rows(initial_cdf, head[:, 1])
    initial_states = states.copy()

    if tables_by_latent:
        policy_cdf = np.cumsum(tables, axis=-1)[latents]
    elif tables.ndim == 2:
        policy_cdf = np.broadcast_to(np.cumsum(tables, axis=-1), (episodes, s_count, a_count))
    else:
        if tables.shape[0] != episodes:
            raise DimensionMismatchError("need one action table per episode")
        policy_cdf = np.cumsum(tables, axis=-1)
    transition_cdf = np.cumsum(family.transitions, axis=-1)[latents]

    dtype = np.min_scalar_type(max(s_count, a_count))
    actions = np.zeros((episodes, horizon), dtype=dtype)
    next_states = np.zeros((episodes, horizon), dtype=dtype)
    rows = np.arange(episodes)

    for start in range(0, horizon, _BATCH_CHUNK):
        stop = min(start + _BATCH_CHUNK, horizon)
        u = np.stack([r.random((stop - start, 2)) for r in rngs])
        for t in range(start, stop):
            acts = sample_categorical_rows(policy_cdf[rows, states], u[:, t - start, 0])
            states = sample_categorical_rows(transition_cdf[rows, states, acts], u[:, t - start, 1])
            actions[:, t] = acts
            next_states[:, t] = states

    logger.debug("Rolled out %d episodes of %d steps (stream %d)", episodes, horizon, stream)
    out = []
    for e in range(episodes):
        a_row, s_row = actions[e], next_states[e]
        a_row.setflags(write=False)
        s_row.setflags(write=False)
        out.append(Trajectory(int(initial_states[e]), a_row, s_row, int(latents[e])))
    return out


def generate_expert_dataset(
    family: MdpFamilySpec,
    expert: ExpertSpec,
    config: RolloutConfig,
    stream: int = Stream.EXPERT,
    start_index: int = 0,
) -> list[Trajectory]:
    """Expert demonstrations with θ ~ p(θ) per episode (latent recorded)."""
    return rollout_batch(
        family,
        expert.policy,
        config.horizon,
        config.seed,
        config.episodes,
        stream=stream,
        start_index=start_index,
        tables_by_latent=True,
    )


def generate_exploration_batch(
    family: MdpFamilySpec,
    config: RolloutConfig,
    action_tables: Optional[np.ndarray] = None,
    start_index: int = 0,
) -> list[Trajectory]:
    """Latent-blind exploration data (uniform policy unless tables given)."""
    if action_tables is None:
        action_tables = np.full(
            (family.num_states, family.num_actions), 1.0 / family.num_actions
        )
    return rollout_batch(
        family,
        action_tables,
        config.horizon,
        config.seed,
        config.episodes,
        stream=Stream.EXPLORATION,
        start_index=start_index,
    )
