"""Policy protocol and the latent-blind / latent-aware reference policies.

Defines the interface every actor (oracle, learned, baseline) satisfies so
that rollouts and evaluation never need to know which one they drive.
"""

from __future__ import annotations

from typing import Any, Callable, Optional, Protocol, runtime_checkable

import numpy as np

from app.env.models import ExpertSpec, Trajectory


@runtime_checkable
class PolicyProtocol(Protocol):
    """Interface that all history-conditioned policies must satisfy.

    ``begin_episode`` is called once per episode with the policy's own
    generator stream; ``observe`` after every transition.
    """

    def begin_episode(self, rng: Optional[np.random.Generator] = None) -> None:
        ...

    def action_dist(self, history: Trajectory) -> np.ndarray:
        """Distribution over actions at ``history.current_state``."""
        ...

    def observe(self, state: int, action: int, next_state: int) -> None:
        ...


class CallablePolicy:
    """Adapts a plain ``history -> action distribution`` callable."""

    def __init__(self, fn: Callable[[Trajectory], np.ndarray]) -> None:
        self._fn = fn

    def begin_episode(self, rng: Optional[np.random.Generator] = None) -> None:
        pass

    def action_dist(self, history: Trajectory) -> np.ndarray:
        return np.asarray(self._fn(history), dtype=np.float64)

    def observe(self, state: int, action: int, next_state: int) -> None:
        pass


class MarkovTablePolicy:
    """Stateless policy reading a fixed ``table[state, action]``."""

    def __init__(self, table: np.ndarray) -> None:
        self.table = np.asarray(table, dtype=np.float64)

    def begin_episode(self, rng: Optional[np.random.Generator] = None) -> None:
        pass

    def action_dist(self, history: Trajectory) -> np.ndarray:
        return self.table[history.current_state]

    def observe(self, state: int, action: int, next_state: int) -> None:
        pass

    def prefix_action_dists(self, trajectory: Trajectory) -> np.ndarray:
        return self.table[trajectory.states[: len(trajectory)]]


class UniformPolicy(MarkovTablePolicy):
    """Latent-blind uniform exploration policy."""

    def __init__(self, num_states: int, num_actions: int) -> None:
        super().__init__(np.full((num_states, num_actions), 1.0 / num_actions))


class ExpertPolicy(MarkovTablePolicy):
    """The expert for a fixed latent θ: π_exp(·|s, θ)."""

    def __init__(self, expert: ExpertSpec, latent: int) -> None:
        super().__init__(expert.policy[latent])
        self.latent = int(latent)


class TruthConditionedExpert:
    """The expert that reads the episode's true latent (evaluation only).

    On datasets it uses ``trajectory.latent_truth``; online, ``deploy``
    hands it the sampled latent through ``set_latent``.
    """

    def __init__(self, expert: ExpertSpec) -> None:
        self.expert = expert
        self._latent: Optional[int] = None

    def set_latent(self, latent: int) -> None:
        self._latent = int(latent)

    def begin_episode(self, rng: Optional[np.random.Generator] = None) -> None:
        pass

    def action_dist(self, history: Trajectory) -> np.ndarray:
        latent = history.latent_truth if history.latent_truth is not None else self._latent
        if latent is None:
            raise ValueError("truth-conditioned expert needs the episode latent")
        return self.expert.policy[latent, history.current_state]

    def observe(self, state: int, action: int, next_state: int) -> None:
        pass

    def prefix_action_dists(self, trajectory: Trajectory) -> np.ndarray:
        latent = trajectory.latent_truth
        if latent is None:
            raise ValueError("truth-conditioned expert needs latent_truth on the dataset")
        return self.expert.policy[latent, trajectory.states[: len(trajectory)]]


def as_policy(policy: Any) -> PolicyProtocol:
    """Wrap experts and bare callables so every caller can rely on the protocol."""
    if isinstance(policy, PolicyProtocol):
        return policy
    if isinstance(policy, ExpertSpec):
        return TruthConditionedExpert(policy)
    if callable(policy):
        return CallablePolicy(policy)
    raise TypeError(f"{type(policy).__name__} is neither a policy nor a callable")
