"""Exact recursive posterior inference over a finite latent.

Two evidence modes:

* interventional: only transitions are evidence,
  log b[θ] += log p(s'|s,a,θ)
* conditional: actions are evidence too,
  log b[θ] += log p(s'|s,a,θ) + log π(a|s,θ)

Works against any dynamics/policy tables (true or learned).  All arithmetic
stays in log space and is renormalised with log-sum-exp after every step.
A belief whose entries all become −∞ is an error, never re-uniformised.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from app.env.models import Trajectory
from app.errors import DimensionMismatchError, ImpossibleEvidenceError

logger = logging.getLogger("deconfound.belief")

NORMALIZATION_TOL = 1e-10


class EvidenceMode(str, Enum):
    INTERVENTIONAL = "interventional"
    CONDITIONAL = "conditional"


@dataclass(frozen=True)
class Belief:
    """Normalised log-probability vector over latent categories."""

    log_probs: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.log_probs, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "log_probs", arr)

    @property
    def num_latents(self) -> int:
        return int(self.log_probs.shape[0])

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def is_normalized(self, tol: float = NORMALIZATION_TOL) -> bool:
        return abs(float(logsumexp(self.log_probs))) <= tol


def _log(table: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(table, dtype=np.float64))


def _normalize(log_unnorm: np.ndarray, what: str = "evidence") -> np.ndarray:
    """Renormalise along the last axis; raise if any row is all −∞."""
    log_z = logsumexp(log_unnorm, axis=-1, keepdims=True)
    if np.any(~np.isfinite(log_z)):
        raise ImpossibleEvidenceError(f"{what} has zero likelihood under every latent")
    return log_unnorm - log_z


def _mode(mode: EvidenceMode | str) -> EvidenceMode:
    return EvidenceMode(mode)


# ── Operations ───────────────────────────────────────────────────────────


def prior_belief(latent_prior: np.ndarray, tol: float = 1e-12) -> Belief:
    """Belief equal to the log of a normalised prior."""
    prior = np.asarray(latent_prior, dtype=np.float64)
    if prior.ndim != 1 or np.any(prior < 0) or abs(prior.sum() - 1.0) > tol:
        raise ValueError(f"latent prior is not a normalized probability vector: {prior}")
    return Belief(_log(prior))


def update(
    belief: Belief,
    s: int,
    a: int,
    s_next: int,
    dynamics: np.ndarray,
    mode: EvidenceMode | str = EvidenceMode.INTERVENTIONAL,
    expert_policy: Optional[np.ndarray] = None,
) -> Belief:
    """Fold one observed transition into *belief*.

    ``dynamics`` is a probability tensor ``[K, S, A, S]``; ``expert_policy``
    ``[K, S, A]`` is required in conditional mode.
    """
    mode = _mode(mode)
    _check_tables(belief.num_latents, dynamics, mode, expert_policy)
    _check_index(dynamics, s, a, s_next)
    log_unnorm = belief.log_probs + _log(dynamics[:, s, a, s_next])
    if mode is EvidenceMode.CONDITIONAL:
        log_unnorm = log_unnorm + _log(expert_policy[:, s, a])
    return Belief(_normalize(log_unnorm, f"transition ({s}, {a}, {s_next})"))


def _evidence_terms(
    trajectory: Trajectory,
    dynamics: np.ndarray,
    mode: EvidenceMode,
    expert_policy: Optional[np.ndarray],
) -> np.ndarray:
    """Per-step log-likelihood contributions, shape ``(T, K)``."""
    t = len(trajectory)
    if t == 0:
        return np.zeros((0, dynamics.shape[0]))
    states = trajectory.states[:t]
    actions = np.asarray(trajectory.actions, dtype=np.int64)
    nxt = np.asarray(trajectory.next_states, dtype=np.int64)
    _check_index(dynamics, states, actions, nxt)
    terms = _log(dynamics[:, states, actions, nxt]).T
    if mode is EvidenceMode.CONDITIONAL:
        terms = terms + _log(expert_policy[:, states, actions]).T
    return terms


def batch_posterior(
    prior: np.ndarray | Belief,
    trajectory: Trajectory,
    dynamics: np.ndarray,
    mode: EvidenceMode | str = EvidenceMode.INTERVENTIONAL,
    expert_policy: Optional[np.ndarray] = None,
) -> Belief:
    """Posterior after the whole trajectory, summed in log space in one pass."""
    mode = _mode(mode)
    start = prior if isinstance(prior, Belief) else prior_belief(prior)
    _check_tables(start.num_latents, dynamics, mode, expert_policy)
    terms = _evidence_terms(trajectory, dynamics, mode, expert_policy)
    log_unnorm = start.log_probs + terms.sum(axis=0)
    return Belief(_normalize(log_unnorm, "trajectory"))


def prefix_posteriors(
    prior: np.ndarray | Belief,
    trajectory: Trajectory,
    dynamics: np.ndarray,
    mode: EvidenceMode | str = EvidenceMode.INTERVENTIONAL,
    expert_policy: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Log posteriors after every prefix, shape ``(T + 1, K)``.

    Row ``t`` conditions on the first ``t`` steps (row 0 is the prior).
    """
    mode = _mode(mode)
    start = prior if isinstance(prior, Belief) else prior_belief(prior)
    _check_tables(start.num_latents, dynamics, mode, expert_policy)
    terms = _evidence_terms(trajectory, dynamics, mode, expert_policy)
    cumulative = np.vstack((np.zeros((1, start.num_latents)), np.cumsum(terms, axis=0)))
    return _normalize(start.log_probs + cumulative, "trajectory prefix")


def belief_diagnostics(belief: Belief) -> tuple[float, float, int]:
    """(entropy in nats, max probability, argmax) with ties to the smallest id."""
    probs = belief.probs()
    finite = probs > 0
    entropy = float(-np.sum(probs[finite] * belief.log_probs[finite]))
    argmax = int(np.argmax(probs))
    return max(entropy, 0.0), float(probs[argmax]), argmax


def to_probabilities(belief: Belief) -> list[float]:
    """Probability snapshot for JSON traces."""
    return belief.probs().tolist()


# ── Stateful tracker ─────────────────────────────────────────────────────


class BeliefTracker:
    """Holds the current belief for one episode and folds observations in.

    Single-owner: create one per episode (or call ``reset``).
    """

    def __init__(
        self,
        latent_prior: np.ndarray,
        dynamics: np.ndarray,
        mode: EvidenceMode | str = EvidenceMode.INTERVENTIONAL,
        expert_policy: Optional[np.ndarray] = None,
    ) -> None:
        self.mode = _mode(mode)
        self.prior = prior_belief(latent_prior, tol=1e-9)
        self.dynamics = np.asarray(dynamics, dtype=np.float64)
        self.expert_policy = None if expert_policy is None else np.asarray(expert_policy, dtype=np.float64)
        _check_tables(self.prior.num_latents, self.dynamics, self.mode, self.expert_policy)
        self.belief = self.prior
        self.steps = 0

    def reset(self) -> Belief:
        self.belief = self.prior
        self.steps = 0
        return self.belief

    def observe(self, s: int, a: int, s_next: int) -> Belief:
        self.belief = update(self.belief, s, a, s_next, self.dynamics, self.mode, self.expert_policy)
        self.steps += 1
        return self.belief


# ── Checks ───────────────────────────────────────────────────────────────


def _check_tables(
    num_latents: int,
    dynamics: np.ndarray,
    mode: EvidenceMode,
    expert_policy: Optional[np.ndarray],
) -> None:
    if dynamics.ndim != 4 or dynamics.shape[0] != num_latents:
        raise DimensionMismatchError(
            f"dynamics shape {dynamics.shape} does not match {num_latents} latents"
        )
    if mode is EvidenceMode.CONDITIONAL:
        if expert_policy is None:
            raise ValueError("conditional evidence mode requires an expert policy table")
        if expert_policy.shape != dynamics.shape[:3]:
            raise DimensionMismatchError(
                f"policy shape {expert_policy.shape} does not match dynamics {dynamics.shape}"
            )


def _check_index(dynamics: np.ndarray, s, a, s_next) -> None:
    _, n_s, n_a, _ = dynamics.shape
    for name, value, bound in (("state", s, n_s), ("action", a, n_a), ("next state", s_next, n_s)):
        arr = np.asarray(value)
        if arr.size and (arr.min() < 0 or arr.max() >= bound):
            raise DimensionMismatchError(f"{name} index out of range [0, {bound})")
