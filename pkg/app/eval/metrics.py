"""Evaluation metrics — pure functions over policies, datasets and traces.

Series are indexed by timestep t = 0 … H−1 and average over the episodes
that reach t.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd
from scipy.special import rel_entr

from app.env.models import ExpertSpec, Trajectory
from app.env.policy import as_policy
from app.errors import SpecValidationError
from app.oracle.trace import PolicyTrace

logger = logging.getLogger("deconfound.eval")


# ── Helpers ──────────────────────────────────────────────────────────────


def policy_prefix_dists(policy: Any, trajectory: Trajectory) -> np.ndarray:
    """(T, A) action distributions the policy assigns along a fixed trajectory.

    Exact policies answer in one pass.  Anything else is driven step by step
    on latent-free prefixes; only actors with ``set_latent`` learn the truth,
    as in ``run_episode``.  Actors that report a marginal (posterior-sampling)
    contribute that marginal rather than their sampled row.
    """
    actor = as_policy(policy)
    fast = getattr(actor, "prefix_action_dists", None)
    if fast is not None:
        return np.asarray(fast(trajectory), dtype=np.float64)
    if hasattr(actor, "set_latent") and trajectory.latent_truth is not None:
        actor.set_latent(trajectory.latent_truth)
    actor.begin_episode(None)
    blind = trajectory.without_latent()
    states = trajectory.states
    dists = []
    for t, (action, next_state) in enumerate(trajectory.steps):
        dist = actor.action_dist(blind.prefix(t))
        info = getattr(actor, "step_info", None)
        marginal = info().get("marginal") if info is not None else None
        dists.append(np.asarray(dist if marginal is None else marginal, dtype=np.float64))
        actor.observe(int(states[t]), action, next_state)
    return np.stack(dists) if dists else np.zeros((0, 0))


def _stack_series(rows: Sequence[np.ndarray], horizon: int) -> np.ndarray:
    """Mean over ragged per-episode rows, NaN where no episode reaches t."""
    total = np.zeros(horizon)
    count = np.zeros(horizon)
    for row in rows:
        n = len(row)
        total[:n] += row
        count[:n] += 1
    with np.errstate(invalid="ignore"):
        return total / count


def _horizon(items: Iterable[Any]) -> int:
    return max((len(i) for i in items), default=0)


def _require_latents(dataset: Sequence[Trajectory]) -> None:
    if any(t.latent_truth is None for t in dataset):
        raise SpecValidationError("metric needs latent_truth on every trajectory")


# ── Metrics ──────────────────────────────────────────────────────────────


def metric_best_arm_prob_on_expert(
    policy: Any, dataset: Sequence[Trajectory], expert: ExpertSpec
) -> np.ndarray:
    """Per-t mean probability the policy puts on the best action for the true latent."""
    dataset = list(dataset)
    _require_latents(dataset)
    best = expert.best_actions()
    rows = []
    for traj in dataset:
        t = len(traj)
        dists = policy_prefix_dists(policy, traj)
        targets = best[traj.latent_truth, traj.states[:t]]
        rows.append(dists[np.arange(t), targets])
    return _stack_series(rows, _horizon(dataset))


def metric_online_series(
    traces: Sequence[PolicyTrace], expert: ExpertSpec
) -> tuple[np.ndarray, np.ndarray]:
    """(per-t best-action frequency, per-episode best-action count)."""
    best = expert.best_actions()
    hits = [tr.actions == best[tr.latent_truth, tr.states] for tr in traces]
    series = _stack_series([h.astype(np.float64) for h in hits], _horizon(traces))
    counts = np.array([int(h.sum()) for h in hits], dtype=np.int64)
    return series, counts


@dataclass(frozen=True)
class ImitationLoss:
    series: np.ndarray  # per-t mean NLL (inf when any episode scored 0)
    mean: float  # mean NLL per step over the whole dataset
    infinite_steps: int  # expert actions the policy gave probability 0

    @property
    def flagged(self) -> bool:
        return self.infinite_steps > 0


def metric_imitation_loss(policy: Any, dataset: Sequence[Trajectory]) -> ImitationLoss:
    """Per-step −log policy(a_t | prefix) on expert data."""
    dataset = list(dataset)
    rows = []
    for traj in dataset:
        t = len(traj)
        dists = policy_prefix_dists(policy, traj)
        probs = dists[np.arange(t), np.asarray(traj.actions, dtype=np.int64)]
        with np.errstate(divide="ignore"):
            rows.append(-np.log(probs))
    flat = np.concatenate(rows) if rows else np.zeros(0)
    infinite = int(np.sum(np.isinf(flat)))
    if infinite:
        logger.warning("Policy gave probability 0 to %d expert actions; loss is +inf", infinite)
    mean = float(flat.mean()) if flat.size else float("nan")
    return ImitationLoss(_stack_series(rows, _horizon(dataset)), mean, infinite)


def metric_kl_to_expert(traces: Sequence[PolicyTrace], expert: ExpertSpec) -> np.ndarray:
    """Per-t mean KL(π_exp(·|s_t, θ*) ‖ policy marginal at t)."""
    rows = []
    for tr in traces:
        target = expert.policy[tr.latent_truth, tr.states]
        rows.append(rel_entr(target, tr.marginal_dists).sum(axis=-1))
    return _stack_series(rows, _horizon(traces))


def total_variation_series(
    policy_a: Any, policy_b: Any, dataset: Sequence[Trajectory]
) -> np.ndarray:
    """Per-t mean total-variation distance between two policies on expert prefixes."""
    dataset = list(dataset)
    rows = [
        0.5 * np.abs(policy_prefix_dists(policy_a, t) - policy_prefix_dists(policy_b, t)).sum(axis=-1)
        for t in dataset
    ]
    return _stack_series(rows, _horizon(dataset))


def smooth(series: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    return pd.Series(series).rolling(window, min_periods=1).mean().to_numpy()


# ── Raster ───────────────────────────────────────────────────────────────


def raster_frame(traces: Sequence[PolicyTrace]) -> pd.DataFrame:
    """Rows = episodes, columns t0 … t{H−1} = action ids, plus ``latent``."""
    horizon = _horizon(traces)
    grid = np.full((len(traces), horizon), -1, dtype=np.int64)
    for e, tr in enumerate(traces):
        grid[e, : len(tr)] = tr.actions
    frame = pd.DataFrame(grid, columns=[f"t{t}" for t in range(horizon)])
    frame["latent"] = [tr.latent_truth for tr in traces]
    return frame


def export_raster(traces: Sequence[PolicyTrace], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raster_frame(traces).to_csv(path, index=False)
    logger.info("Raster (%d episodes) → %s", len(traces), path)
    return path
