"""Tier-1 imitators: expert demonstrations only, no environment access.

Two routes:

* ``train_tier1_offline`` fits the latent model with the offline ELBO,
  simulates synthetic episodes from the learned dynamics and fits a second,
  online inference parameterisation on them.
* ``tier1_mle_identify`` estimates each recurrent chain by counting, then
  groups chains with matching laws into mixture components.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from app.belief.inference import EvidenceMode
from app.env.models import Trajectory, TrajectoryBatch
from app.env.rng import Stream
from app.env.rollout import rollout_batch
from app.errors import SpecValidationError
from app.learn.baseline import fit_offline_model
from app.learn.config import ElboConfig
from app.learn.dataset import BatchSource, DatasetCycler, ExpertDataset
from app.learn.elbo import bc_loss, elbo_online_batch, episode_posteriors
from app.learn.model import CategoricalLatentModel
from app.learn.training import (
    Evaluator,
    TrainingLog,
    ascend_inference,
    check_finite,
    evaluate_if_due,
)
from app.oracle.policies import ExactPolicy

logger = logging.getLogger("deconfound.learn.tier1")

DEFAULT_MERGE_TOLERANCE = 0.05
PROBABILITY_FLOOR = 1e-12


# ── Offline ELBO + synthetic online inference ────────────────────────────


def train_tier1_offline(
    dataset: ExpertDataset,
    config: ElboConfig,
    seed: int,
    batches: Optional[BatchSource] = None,
    evaluator: Optional[Evaluator] = None,
) -> tuple[CategoricalLatentModel, CategoricalLatentModel, pd.DataFrame]:
    """Returns (offline model, online inference model, training log).

    The online model starts from the offline prior and dynamics so its
    categories stay aligned with π_η, which it carries unchanged.  Synthetic
    episodes start from the empirical expert initial-state distribution and
    act uniformly.
    """
    batches = batches or DatasetCycler(dataset)

    # 1 ── Offline fit on expert data
    offline, offline_log = fit_offline_model(
        dataset, config, seed, batches, evaluator=evaluator, name="tier1-offline"
    )

    # 2 ── Synthetic data from the learned dynamics
    synthetic_family = offline.as_family(dataset.initial_state_distribution())
    uniform = np.full((dataset.num_states, dataset.num_actions), 1.0 / dataset.num_actions)

    # 3 ── Online inference model
    online = offline.copy()
    log = TrainingLog("tier1-online", config.log_every)
    online_steps = config.effective_online_steps
    logger.info("Tier-1 online inference fit: %d steps on synthetic episodes", online_steps)
    for step in range(1, online_steps + 1):
        synthetic = rollout_batch(
            synthetic_family,
            uniform,
            config.horizon,
            seed,
            config.batch_episodes,
            stream=Stream.SYNTHETIC,
            start_index=(step - 1) * config.batch_episodes,
        )
        synthetic_batch = TrajectoryBatch.from_trajectories(synthetic)
        elbo, grad = elbo_online_batch(online, synthetic_batch, config.beta)
        check_finite(config.train_steps + step, grad.blocks())
        ascend_inference(online, grad, config.lr_inference)

        expert_batch = TrajectoryBatch.from_trajectories(batches(step - 1, config.batch_episodes))
        weights = episode_posteriors(online, expert_batch, conditional=False)
        loss, _, n_expert = bc_loss(online, expert_batch, weights)

        due = step == online_steps or (config.eval_every > 0 and step % config.eval_every == 0)
        metrics = evaluate_if_due(evaluator, config.train_steps + step, due, online)
        log.record(
            config.train_steps + step,
            elbo / max(int(synthetic_batch.mask.sum()), 1),
            loss / max(n_expert, 1),
            metrics,
        )

    frame = pd.concat([offline_log, log.frame()], ignore_index=True)
    return offline, online, frame


# ── Maximum-likelihood identification of recurrent chains ────────────────


@dataclass(frozen=True)
class ChainEstimate:
    """Transition and action counts of one trajectory (or a pool of them)."""

    transition_counts: np.ndarray  # (S, A, S)
    action_counts: np.ndarray  # (S, A)

    @classmethod
    def from_trajectory(cls, trajectory: Trajectory, num_states: int, num_actions: int) -> "ChainEstimate":
        t = len(trajectory)
        states = trajectory.states[:t]
        actions = np.asarray(trajectory.actions, dtype=np.int64)
        nxt = np.asarray(trajectory.next_states, dtype=np.int64)
        s, a = num_states, num_actions
        transitions = np.bincount((states * a + actions) * s + nxt, minlength=s * a * s)
        return cls(
            transition_counts=transitions.reshape(s, a, s).astype(np.float64),
            action_counts=np.bincount(states * a + actions, minlength=s * a).reshape(s, a).astype(np.float64),
        )

    def __add__(self, other: "ChainEstimate") -> "ChainEstimate":
        return ChainEstimate(
            self.transition_counts + other.transition_counts,
            self.action_counts + other.action_counts,
        )

    @property
    def visited_dynamics(self) -> np.ndarray:
        """(S, A) mask of rows with at least one observed transition."""
        return self.transition_counts.sum(axis=-1) > 0

    @property
    def visited_policy(self) -> np.ndarray:
        return self.action_counts.sum(axis=-1) > 0

    @property
    def dynamics(self) -> np.ndarray:
        """Row-normalised MLE; unvisited rows are uniform (see ``visited_dynamics``)."""
        return _normalise_rows(self.transition_counts)

    @property
    def policy(self) -> np.ndarray:
        return _normalise_rows(self.action_counts)


def _normalise_rows(counts: np.ndarray) -> np.ndarray:
    totals = counts.sum(axis=-1, keepdims=True)
    uniform = np.full_like(counts, 1.0 / counts.shape[-1])
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, counts / totals, uniform)


def chain_distance(a: ChainEstimate, b: ChainEstimate) -> float:
    """Sup-norm distance between two chains over the rows both visited.

    Chains sharing no visited row are infinitely far apart.
    """
    both_dyn = a.visited_dynamics & b.visited_dynamics
    both_pol = a.visited_policy & b.visited_policy
    if not both_dyn.any() and not both_pol.any():
        return float("inf")
    dist = 0.0
    if both_dyn.any():
        dist = max(dist, float(np.abs(a.dynamics - b.dynamics)[both_dyn].max()))
    if both_pol.any():
        dist = max(dist, float(np.abs(a.policy - b.policy)[both_pol].max()))
    return dist


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    pooled: ChainEstimate
    members: tuple[int, ...]

    @property
    def dynamics(self) -> np.ndarray:
        return self.pooled.dynamics

    @property
    def policy(self) -> np.ndarray:
        return self.pooled.policy

    @property
    def visited_dynamics(self) -> np.ndarray:
        return self.pooled.visited_dynamics

    @property
    def visited_policy(self) -> np.ndarray:
        return self.pooled.visited_policy


@dataclass(frozen=True)
class Tier1Estimate:
    """Per-trajectory MLE tables and the recovered mixture over chain laws."""

    chains: tuple[ChainEstimate, ...]
    components: tuple[MixtureComponent, ...]
    merge_tolerance: float

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def unvisited(self) -> list[str]:
        """Human-readable flags for rows no trajectory of a component visited."""
        flags = []
        for i, comp in enumerate(self.components):
            for s, a in zip(*np.nonzero(~comp.visited_dynamics)):
                flags.append(f"component {i}: dynamics row (s={s}, a={a}) unvisited")
            for s in np.flatnonzero(~comp.visited_policy):
                flags.append(f"component {i}: policy row s={s} unvisited")
        return flags


def tier1_mle_identify(
    dataset: ExpertDataset, merge_tolerance: float = DEFAULT_MERGE_TOLERANCE
) -> Tier1Estimate:
    """Count-based MLE per trajectory, then greedy sup-norm agglomeration.

    Each trajectory joins the closest existing component (by pooled MLE)
    when within *merge_tolerance*, otherwise it opens a new one.  Weights
    are trajectory fractions.
    """
    if len(dataset) == 0:
        raise SpecValidationError("expert dataset is empty")
    chains = tuple(
        ChainEstimate.from_trajectory(t, dataset.num_states, dataset.num_actions) for t in dataset
    )

    pooled: list[ChainEstimate] = []
    members: list[list[int]] = []
    for i, chain in enumerate(chains):
        distances = [chain_distance(chain, p) for p in pooled]
        best = int(np.argmin(distances)) if distances else -1
        if best >= 0 and distances[best] <= merge_tolerance:
            pooled[best] = pooled[best] + chain
            members[best].append(i)
        else:
            pooled.append(chain)
            members.append([i])

    n = len(chains)
    components = tuple(
        MixtureComponent(weight=len(m) / n, pooled=p, members=tuple(m))
        for p, m in zip(pooled, members)
    )
    estimate = Tier1Estimate(chains, components, merge_tolerance)
    unvisited = estimate.unvisited()
    logger.info(
        "Identified %d mixture component(s) from %d trajectories (%d unvisited rows)",
        estimate.num_components, n, len(unvisited),
    )
    for flag in unvisited[:10]:
        logger.debug(flag)
    return estimate


def _completed_tables(estimate: Tier1Estimate) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(weights, dynamics, policy) with component gaps filled from the pooled data.

    Raises when some (s, a) row was never visited by any trajectory.
    """
    total = estimate.components[0].pooled
    for comp in estimate.components[1:]:
        total = total + comp.pooled
    never = ~total.visited_dynamics
    if never.any():
        rows = ", ".join(f"(s={s}, a={a})" for s, a in zip(*np.nonzero(never)))
        raise SpecValidationError(
            f"dynamics rows {rows} are unvisited in every component",
            violations=estimate.unvisited(),
        )
    dynamics = np.stack([
        np.where(c.visited_dynamics[..., None], c.dynamics, total.dynamics)
        for c in estimate.components
    ])
    policy = np.stack([
        np.where(c.visited_policy[:, None], c.policy, total.policy)
        for c in estimate.components
    ])
    return estimate.weights, dynamics, policy


def interventional_policy_from_estimate(estimate: Tier1Estimate) -> ExactPolicy:
    """Treat the recovered mixture as (p(θ), dynamics, expert) and act interventionally."""
    weights, dynamics, policy = _completed_tables(estimate)
    return ExactPolicy(weights, dynamics, policy, EvidenceMode.INTERVENTIONAL)


def estimate_to_model(estimate: Tier1Estimate) -> CategoricalLatentModel:
    """Logit model of the recovered mixture (zero probabilities floored)."""
    weights, dynamics, policy = _completed_tables(estimate)

    def floored(p: np.ndarray) -> np.ndarray:
        p = np.maximum(p, PROBABILITY_FLOOR)
        return p / p.sum(axis=-1, keepdims=True)

    return CategoricalLatentModel.from_probabilities(floored(weights), floored(dynamics), floored(policy))
