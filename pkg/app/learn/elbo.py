"""Exact categorical ELBOs with analytic gradients.

Online objective at step t of an episode (q is the interventional posterior
after the first t transitions, r the log-likelihood of transition t):

    L_t = E_q[r] − β·KL(q ‖ p) = Σ_k q_k (r_k − β·ll_k) + β·log Σ_k p_k e^{ll_k}

where ll_k is the evidence log-likelihood.  Differentiating through the
softmax that defines q:

    ∂L/∂ll_k    = q_k (g_k − ḡ),          g = r − β·ll
    ∂L/∂log p_k = q_k (g_k − ḡ) + β q_k
    ∂L/∂r_k     = q_k

The offline objective is the same expression with r = ll = the whole
trajectory's dynamics + policy log-likelihood (conditional posterior).
Gradients reach the logits through ``onehot − softmax`` row Jacobians.

Everything is vectorised over a ``TrajectoryBatch``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.special import logsumexp

from app.env.models import Trajectory, TrajectoryBatch
from app.errors import DimensionMismatchError
from app.learn.model import CategoricalLatentModel


@dataclass
class ModelGradient:
    """Gradient blocks matching ``CategoricalLatentModel``'s logits."""

    prior: np.ndarray
    dynamics: np.ndarray
    policy: np.ndarray

    @classmethod
    def zeros_like(cls, model: CategoricalLatentModel) -> "ModelGradient":
        return cls(
            np.zeros_like(model.prior_logits),
            np.zeros_like(model.dynamics_logits),
            np.zeros_like(model.policy_logits),
        )

    def __add__(self, other: "ModelGradient") -> "ModelGradient":
        return ModelGradient(
            self.prior + other.prior, self.dynamics + other.dynamics, self.policy + other.policy
        )

    def blocks(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "prior_logits", self.prior
        yield "dynamics_logits", self.dynamics
        yield "policy_logits", self.policy

    def first_non_finite(self) -> Optional[str]:
        for name, block in self.blocks():
            if not np.all(np.isfinite(block)):
                return name
        return None


# ── Shared pieces ────────────────────────────────────────────────────────


def _as_batch(data: Trajectory | TrajectoryBatch | list[Trajectory]) -> TrajectoryBatch:
    if isinstance(data, TrajectoryBatch):
        return data
    if isinstance(data, Trajectory):
        return TrajectoryBatch.from_trajectories([data])
    return TrajectoryBatch.from_trajectories(data)


def _check_dims(model: CategoricalLatentModel, batch: TrajectoryBatch) -> None:
    s, a = model.num_states, model.num_actions
    if batch.num_episodes == 0 or batch.horizon == 0:
        return
    valid = batch.mask
    states = batch.states[valid]
    if (
        batch.initial_states.max() >= s
        or states.max() >= s
        or batch.next_states[valid].max() >= s
        or batch.actions[valid].max() >= a
    ):
        raise DimensionMismatchError(
            f"trajectory ids exceed model dimensions (S={s}, A={a})"
        )


def transition_logliks(model: CategoricalLatentModel, batch: TrajectoryBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per-step log p_ψ and log π_η for every category, each ``(E, H, K)``.

    Padded steps contribute exactly 0.
    """
    states = batch.states
    lik_dyn = model.log_dynamics()[:, states, batch.actions, batch.next_states]
    lik_pol = model.log_policy()[:, states, batch.actions]
    valid = batch.mask[..., None]
    lik_dyn = np.where(valid, np.moveaxis(lik_dyn, 0, -1), 0.0)
    lik_pol = np.where(valid, np.moveaxis(lik_pol, 0, -1), 0.0)
    return lik_dyn, lik_pol


def _weighted_counts(flat_index: np.ndarray, weights: np.ndarray, size: int) -> np.ndarray:
    """``out[k, i] = Σ weights[..., k]`` over entries whose flat index is ``i``."""
    k = weights.shape[-1]
    idx = flat_index.ravel()
    w = weights.reshape(-1, k)
    return np.stack([np.bincount(idx, weights=w[:, j], minlength=size) for j in range(k)])


def dynamics_gradient(model: CategoricalLatentModel, batch: TrajectoryBatch, weights: np.ndarray) -> np.ndarray:
    """∂/∂dynamics_logits of Σ weights[e,t,k] · log p_ψ(s_{t+1}|s_t,a_t,k)."""
    s, a = model.num_states, model.num_actions
    w = weights * batch.mask[..., None]
    flat = (batch.states * a + batch.actions) * s + batch.next_states
    counts = _weighted_counts(flat, w, s * a * s).reshape(model.dynamics_logits.shape)
    return counts - counts.sum(axis=-1, keepdims=True) * model.dynamics()


def policy_gradient(model: CategoricalLatentModel, batch: TrajectoryBatch, weights: np.ndarray) -> np.ndarray:
    """∂/∂policy_logits of Σ weights[e,t,k] · log π_η(a_t|s_t,k)."""
    s, a = model.num_states, model.num_actions
    w = weights * batch.mask[..., None]
    flat = batch.states * a + batch.actions
    counts = _weighted_counts(flat, w, s * a).reshape(model.policy_logits.shape)
    return counts - counts.sum(axis=-1, keepdims=True) * model.policy()


def prior_gradient(model: CategoricalLatentModel, grad_log_prior: np.ndarray) -> np.ndarray:
    """Chain ∂L/∂log p(θ̂) through the prior's log-softmax."""
    return grad_log_prior - model.prior() * grad_log_prior.sum()


# ── Online ELBO ──────────────────────────────────────────────────────────


def elbo_online_batch(
    model: CategoricalLatentModel,
    data: Trajectory | TrajectoryBatch | list[Trajectory],
    beta: float,
    targets: Optional[np.ndarray] = None,
) -> tuple[float, ModelGradient]:
    """Σ of online ELBO terms over every (episode, step) selected by *targets*.

    ``targets`` defaults to all real steps.  q at step t conditions on the
    first t transitions only (interventional: actions are not evidence).
    """
    batch = _as_batch(data)
    _check_dims(model, batch)
    lik_dyn, _ = transition_logliks(model, batch)
    selected = batch.mask if targets is None else (np.asarray(targets, dtype=bool) & batch.mask)

    # Exclusive prefix sum: evidence before step t.
    evidence = np.cumsum(lik_dyn, axis=1) - lik_dyn
    logits = model.log_prior() + evidence
    log_z = logsumexp(logits, axis=-1, keepdims=True)
    q = np.exp(logits - log_z)

    g = lik_dyn - beta * evidence
    g_bar = np.sum(q * g, axis=-1, keepdims=True)
    per_step = np.sum(q * g, axis=-1) + beta * log_z[..., 0]
    value = float(np.sum(per_step[selected]))

    m = selected[..., None].astype(np.float64)
    a_term = m * q * (g - g_bar)
    grad_log_prior = np.sum(a_term + beta * m * q, axis=(0, 1))
    later = np.cumsum(a_term[:, ::-1], axis=1)[:, ::-1] - a_term
    weights = m * q + later

    grad = ModelGradient(
        prior=prior_gradient(model, grad_log_prior),
        dynamics=dynamics_gradient(model, batch, weights),
        policy=np.zeros_like(model.policy_logits),
    )
    return value, grad


def elbo_online(
    model: CategoricalLatentModel,
    trajectory: Trajectory,
    t: int,
    beta: float = 0.0,
) -> tuple[float, ModelGradient]:
    """Online ELBO for predicting transition *t* from the first *t* transitions."""
    length = len(trajectory)
    if length == 0 and t > 0:
        raise DimensionMismatchError(f"empty trajectory has no prefix of length {t}")
    if not 0 <= t < length:
        raise DimensionMismatchError(f"t={t} outside [0, {length})")
    batch = TrajectoryBatch.from_trajectories([trajectory])
    targets = np.zeros_like(batch.mask)
    targets[0, t] = True
    return elbo_online_batch(model, batch, beta, targets)


def elbo_online_episode(
    model: CategoricalLatentModel, trajectory: Trajectory, beta: float = 0.0
) -> tuple[float, ModelGradient]:
    """Σ_t elbo_online(model, trajectory, t) in one pass."""
    return elbo_online_batch(model, trajectory, beta)


# ── Offline ELBO ─────────────────────────────────────────────────────────


def elbo_offline_batch(
    model: CategoricalLatentModel,
    data: Trajectory | TrajectoryBatch | list[Trajectory],
    beta: float,
) -> tuple[float, ModelGradient]:
    """Σ over episodes of the whole-trajectory ELBO with a conditional posterior."""
    batch = _as_batch(data)
    _check_dims(model, batch)
    lik_dyn, lik_pol = transition_logliks(model, batch)
    loglik = np.sum(lik_dyn + lik_pol, axis=1)  # (E, K)

    logits = model.log_prior() + loglik
    log_z = logsumexp(logits, axis=-1, keepdims=True)
    q = np.exp(logits - log_z)

    g = (1.0 - beta) * loglik
    g_bar = np.sum(q * g, axis=-1, keepdims=True)
    value = float(np.sum(np.sum(q * g, axis=-1) + beta * log_z[:, 0]))

    centred = q * (g - g_bar)
    grad_log_prior = np.sum(centred + beta * q, axis=0)
    d_loglik = q + centred  # (E, K)
    weights = np.broadcast_to(d_loglik[:, None, :], lik_dyn.shape)

    grad = ModelGradient(
        prior=prior_gradient(model, grad_log_prior),
        dynamics=dynamics_gradient(model, batch, weights),
        policy=policy_gradient(model, batch, weights),
    )
    return value, grad


def elbo_offline(
    model: CategoricalLatentModel, trajectory: Trajectory, beta: float = 0.0
) -> tuple[float, ModelGradient]:
    """Whole-trajectory ELBO (dynamics and expert actions both decoded)."""
    if len(trajectory) == 0:
        raise DimensionMismatchError("offline ELBO needs a non-empty trajectory")
    return elbo_offline_batch(model, trajectory, beta)


# ── Posteriors and behavioural cloning ───────────────────────────────────


def episode_posteriors(
    model: CategoricalLatentModel,
    data: Trajectory | TrajectoryBatch | list[Trajectory],
    conditional: bool = False,
) -> np.ndarray:
    """Full-episode posterior over categories per episode, ``(E, K)``."""
    batch = _as_batch(data)
    _check_dims(model, batch)
    lik_dyn, lik_pol = transition_logliks(model, batch)
    evidence = lik_dyn + lik_pol if conditional else lik_dyn
    logits = model.log_prior() + evidence.sum(axis=1)
    return np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))


def bc_loss(
    model: CategoricalLatentModel,
    data: Trajectory | TrajectoryBatch | list[Trajectory],
    latent_weights: np.ndarray,
) -> tuple[float, np.ndarray, int]:
    """Behavioural-cloning NLL −Σ w_k log π_η(a|s,k) and its policy-logit gradient.

    ``latent_weights`` is ``(E, K)``: a posterior (exact expectation) or
    one-hot samples.  Returns (total loss, ∂loss/∂policy_logits, step count).
    """
    batch = _as_batch(data)
    _, lik_pol = transition_logliks(model, batch)
    weights = np.broadcast_to(np.asarray(latent_weights)[:, None, :], lik_pol.shape)
    loss = -float(np.sum(weights * lik_pol))
    grad = -policy_gradient(model, batch, weights)
    return loss, grad, int(batch.mask.sum())
