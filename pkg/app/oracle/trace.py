"""Per-episode policy traces (feed rasters, online curves and KL series)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from app.env.rollout import EpisodeResult
from app.errors import DimensionMismatchError


@dataclass(frozen=True)
class PolicyTrace:
    """What a policy believed and did at every step of one episode.

    ``action_dists`` are the distributions actions were drawn from;
    ``marginal_dists`` the exact marginal policy at the same step (equal to
    ``action_dists`` for exact policies, the belief mixture for actors).
    """

    latent_truth: int
    states: np.ndarray  # (T,) state before acting
    actions: np.ndarray  # (T,)
    action_dists: np.ndarray  # (T, A)
    marginal_dists: np.ndarray  # (T, A)
    beliefs: Optional[np.ndarray] = None  # (T, K) probabilities before acting
    sampled_latents: Optional[np.ndarray] = None  # (T,), -1 when not sampling

    def __post_init__(self) -> None:
        t = self.actions.shape[0]
        if self.states.shape[0] != t or self.action_dists.shape[0] != t:
            raise DimensionMismatchError("trace arrays disagree on episode length")

    def __len__(self) -> int:
        return int(self.actions.shape[0])

    @classmethod
    def from_episode(cls, result: EpisodeResult) -> "PolicyTrace":
        traj = result.trajectory
        t = len(traj)
        records = result.records
        if len(records) != t:
            raise DimensionMismatchError(f"{len(records)} step records for {t} steps")
        num_actions = records[0].action_dist.shape[0] if records else 0
        beliefs = None
        if records and all(r.belief is not None for r in records):
            beliefs = np.stack([np.asarray(r.belief) for r in records])
        sampled = np.array([r.sampled_latent for r in records], dtype=np.int64)
        return cls(
            latent_truth=int(traj.latent_truth),
            states=traj.states[:t],
            actions=np.asarray(traj.actions, dtype=np.int64),
            action_dists=np.stack([r.action_dist for r in records]) if records else np.zeros((0, num_actions)),
            marginal_dists=np.stack([r.marginal_dist for r in records]) if records else np.zeros((0, num_actions)),
            beliefs=beliefs,
            sampled_latents=sampled if np.any(sampled >= 0) else None,
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "latent": self.latent_truth,
            "states": self.states.tolist(),
            "actions": self.actions.tolist(),
            "action_dists": np.round(self.action_dists, 10).tolist(),
            "beliefs": None if self.beliefs is None else np.round(self.beliefs, 10).tolist(),
            "sampled_latents": None if self.sampled_latents is None else self.sampled_latents.tolist(),
        }


def save_traces_jsonl(path: str | Path, traces: Iterable[PolicyTrace]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for trace in traces:
            f.write(json.dumps(trace.to_dict(), separators=(",", ":")) + "\n")
    return path
