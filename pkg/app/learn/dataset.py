"""Expert datasets and the per-step batch sources trainers draw from."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Protocol, Sequence

import numpy as np

from app.env.io import load_trajectories
from app.env.models import (
    ExpertSpec,
    MdpFamilySpec,
    RolloutConfig,
    Trajectory,
    TrajectoryBatch,
)
from app.env.rng import Stream
from app.env.rollout import generate_expert_dataset
from app.errors import DimensionMismatchError, SpecValidationError

logger = logging.getLogger("deconfound.learn.dataset")

# Resampled and held-out expert episodes start far past any persisted dataset index.
RESAMPLE_INDEX_OFFSET = 1 << 40
HELD_OUT_INDEX_OFFSET = 1 << 41


@dataclass(frozen=True)
class ExpertDataset:
    """Expert trajectories over a known (|S|, |A|).

    ``latent_truth`` stays on the trajectories for evaluation; trainers
    never read it.
    """

    trajectories: tuple[Trajectory, ...]
    num_states: int
    num_actions: int

    def __post_init__(self) -> None:
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if not trajs:
            raise SpecValidationError("expert dataset is empty")
        for i, traj in enumerate(trajs):
            states = traj.states
            if states.min() < 0 or states.max() >= self.num_states:
                raise DimensionMismatchError(f"trajectory {i} has a state outside [0, {self.num_states})")
            if len(traj) and (traj.actions.min() < 0 or traj.actions.max() >= self.num_actions):
                raise DimensionMismatchError(f"trajectory {i} has an action outside [0, {self.num_actions})")

    @classmethod
    def for_family(cls, family: MdpFamilySpec, trajectories: Sequence[Trajectory]) -> "ExpertDataset":
        return cls(tuple(trajectories), family.num_states, family.num_actions)

    @classmethod
    def from_file(cls, path: str | Path, family: MdpFamilySpec) -> "ExpertDataset":
        dataset = cls.for_family(family, load_trajectories(path))
        logger.info("Loaded %d expert trajectories from %s", len(dataset), path)
        return dataset

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    @property
    def has_latents(self) -> bool:
        return all(t.latent_truth is not None for t in self.trajectories)

    def batch(self) -> TrajectoryBatch:
        return TrajectoryBatch.from_trajectories(self.trajectories)

    def initial_state_distribution(self) -> np.ndarray:
        """Empirical p(s₀) over the dataset."""
        counts = np.bincount(
            [t.initial_state for t in self.trajectories], minlength=self.num_states
        ).astype(np.float64)
        return counts / counts.sum()

    def subset(self, indices: Sequence[int]) -> list[Trajectory]:
        return [self.trajectories[i] for i in indices]


# ── Batch sources ────────────────────────────────────────────────────────


class BatchSource(Protocol):
    """Yields the expert episodes used at training step ``step`` (0-based)."""

    def __call__(self, step: int, size: int) -> list[Trajectory]:
        ...


class DatasetCycler:
    """Deterministic minibatches cycling through a fixed dataset."""

    def __init__(self, dataset: ExpertDataset) -> None:
        self.dataset = dataset

    def __call__(self, step: int, size: int) -> list[Trajectory]:
        n = len(self.dataset)
        if size >= n:
            return list(self.dataset.trajectories)
        start = (step * size) % n
        return self.dataset.subset((start + np.arange(size)) % n)


class ExpertSampler:
    """Fresh expert episodes every step, simulated from the registered family."""

    def __init__(self, family: MdpFamilySpec, expert: ExpertSpec, horizon: int, seed: int) -> None:
        self.family = family
        self.expert = expert
        self.horizon = horizon
        self.seed = seed

    def __call__(self, step: int, size: int) -> list[Trajectory]:
        return generate_expert_dataset(
            self.family,
            self.expert,
            RolloutConfig(horizon=self.horizon, seed=self.seed, episodes=size),
            stream=Stream.EXPERT,
            start_index=RESAMPLE_INDEX_OFFSET + step * size,
        )


def held_out_expert_dataset(
    family: MdpFamilySpec, expert: ExpertSpec, horizon: int, seed: int, episodes: int
) -> ExpertDataset:
    """Expert episodes disjoint from training and resampled data, for evaluation."""
    trajectories = generate_expert_dataset(
        family,
        expert,
        RolloutConfig(horizon=horizon, seed=seed, episodes=episodes),
        stream=Stream.EXPERT,
        start_index=HELD_OUT_INDEX_OFFSET,
    )
    return ExpertDataset.for_family(family, trajectories)
