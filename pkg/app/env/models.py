"""Env data models — latent-indexed MDP families, experts and trajectories.

All probability tensors are dense, row-major and indexed with 0-based ids:

* ``transitions[latent, state, action, next_state]``
* ``initial_dist[latent, state]``
* ``policy[latent, state, action]``
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

from app.errors import ConfigError, DimensionMismatchError


def _frozen(array) -> np.ndarray:
    """Copy *array* to float64 and mark it read-only."""
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


def _frozen_ids(array) -> np.ndarray:
    out = np.array(array, dtype=np.int64).reshape(-1)
    out.setflags(write=False)
    return out


# ── Family / expert ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class MdpFamilySpec:
    """A family {M_θ} of reward-free MDPs indexed by a hidden latent.

    Immutable after construction, so instances are safe to share across
    threads.  Shape consistency is checked by ``validate_spec``, not here,
    so that broken specs can still be constructed and reported on.
    """

    num_states: int
    num_actions: int
    num_latents: int
    latent_prior: np.ndarray
    transitions: np.ndarray
    initial_dist: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "latent_prior", _frozen(self.latent_prior))
        object.__setattr__(self, "transitions", _frozen(self.transitions))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))


@dataclass(frozen=True)
class ExpertSpec:
    """Per-latent Markov expert π_exp(a|s,θ)."""

    policy: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "policy", _frozen(self.policy))

    @property
    def num_latents(self) -> int:
        return int(self.policy.shape[0])

    def best_actions(self) -> np.ndarray:
        """Modal expert action per (latent, state); ties go to the smallest id."""
        return np.argmax(self.policy, axis=-1)


# ── Trajectories ─────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Trajectory:
    """s₀ followed by (aₜ, sₜ₊₁) pairs.

    ``latent_truth`` is kept for evaluation only; imitators never read it.
    """

    initial_state: int
    actions: np.ndarray = field(default_factory=lambda: _frozen_ids([]))
    next_states: np.ndarray = field(default_factory=lambda: _frozen_ids([]))
    latent_truth: Optional[int] = None

    def __post_init__(self) -> None:
        actions = self.actions
        next_states = self.next_states
        if not (isinstance(actions, np.ndarray) and not actions.flags.writeable):
            actions = _frozen_ids(actions)
        if not (isinstance(next_states, np.ndarray) and not next_states.flags.writeable):
            next_states = _frozen_ids(next_states)
        if actions.shape != next_states.shape:
            raise DimensionMismatchError(
                f"{actions.shape[0]} actions but {next_states.shape[0]} next states"
            )
        object.__setattr__(self, "initial_state", int(self.initial_state))
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "next_states", next_states)
        if self.latent_truth is not None:
            object.__setattr__(self, "latent_truth", int(self.latent_truth))

    @classmethod
    def from_steps(
        cls,
        initial_state: int,
        steps: Iterable[tuple[int, int]],
        latent_truth: Optional[int] = None,
    ) -> "Trajectory":
        pairs = list(steps)
        actions = [a for a, _ in pairs]
        next_states = [s for _, s in pairs]
        return cls(initial_state, _frozen_ids(actions), _frozen_ids(next_states), latent_truth)

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @property
    def steps(self) -> list[tuple[int, int]]:
        return list(zip(self.actions.tolist(), self.next_states.tolist()))

    @property
    def states(self) -> np.ndarray:
        """All visited states s₀ … s_T (length T + 1)."""
        return np.concatenate(([self.initial_state], self.next_states)).astype(np.int64)

    @property
    def current_state(self) -> int:
        if len(self) == 0:
            return self.initial_state
        return int(self.next_states[-1])

    def prefix(self, t: int) -> "Trajectory":
        """The first *t* steps as a trajectory (array views, no copy)."""
        return Trajectory(
            self.initial_state, self.actions[:t], self.next_states[:t], self.latent_truth
        )

    def without_latent(self) -> "Trajectory":
        return Trajectory(self.initial_state, self.actions, self.next_states, None)


class HistoryBuffer:
    """Growable trajectory used while an episode is being rolled out."""

    def __init__(self, initial_state: int, capacity: int) -> None:
        self._s0 = int(initial_state)
        self._actions = np.zeros(max(capacity, 0), dtype=np.int64)
        self._next = np.zeros(max(capacity, 0), dtype=np.int64)
        self._len = 0

    def append(self, action: int, next_state: int) -> None:
        self._actions[self._len] = action
        self._next[self._len] = next_state
        self._len += 1

    def view(self, latent_truth: Optional[int] = None) -> Trajectory:
        actions = self._actions[: self._len]
        next_states = self._next[: self._len]
        actions.setflags(write=False)
        next_states.setflags(write=False)
        return Trajectory(self._s0, actions, next_states, latent_truth)


@dataclass(frozen=True)
class TrajectoryBatch:
    """Equal-capacity stack of trajectories for vectorised computations.

    Shorter trajectories are right-padded; ``mask[e, t]`` marks real steps.
    """

    initial_states: np.ndarray  # (E,)
    actions: np.ndarray  # (E, H)
    next_states: np.ndarray  # (E, H)
    mask: np.ndarray  # (E, H) bool
    latents: np.ndarray  # (E,) -1 when unknown

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory]) -> "TrajectoryBatch":
        trajs = list(trajectories)
        if not trajs:
            raise DimensionMismatchError("cannot batch an empty list of trajectories")
        horizon = max(len(t) for t in trajs)
        n = len(trajs)
        actions = np.zeros((n, horizon), dtype=np.int64)
        next_states = np.zeros((n, horizon), dtype=np.int64)
        mask = np.zeros((n, horizon), dtype=bool)
        for e, traj in enumerate(trajs):
            length = len(traj)
            actions[e, :length] = traj.actions
            next_states[e, :length] = traj.next_states
            mask[e, :length] = True
        return cls(
            initial_states=np.array([t.initial_state for t in trajs], dtype=np.int64),
            actions=actions,
            next_states=next_states,
            mask=mask,
            latents=np.array(
                [-1 if t.latent_truth is None else t.latent_truth for t in trajs],
                dtype=np.int64,
            ),
        )

    @property
    def num_episodes(self) -> int:
        return int(self.actions.shape[0])

    @property
    def horizon(self) -> int:
        return int(self.actions.shape[1])

    @property
    def states(self) -> np.ndarray:
        """(E, H) state at which each action was taken."""
        states = np.concatenate((self.initial_states[:, None], self.next_states[:, :-1]), axis=1)
        return states[:, : self.horizon]

    def trajectories(self) -> Iterator[Trajectory]:
        for e in range(self.num_episodes):
            length = int(self.mask[e].sum())
            latent = int(self.latents[e])
            yield Trajectory(
                int(self.initial_states[e]),
                _frozen_ids(self.actions[e, :length]),
                _frozen_ids(self.next_states[e, :length]),
                None if latent < 0 else latent,
            )


@dataclass(frozen=True)
class RolloutConfig:
    """Rollout plumbing: horizon H, seed and number of episodes.

    ``horizon == 0`` is accepted as the degenerate initial-state-only case.
    """

    horizon: int = 100
    seed: int = 0
    episodes: int = 1

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ConfigError(f"horizon must be >= 0, got {self.horizon}")
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
