"""Categorical latent-variable model: prior p(θ̂), dynamics p_ψ, policy π_η.

All three are stored as logits and read through (log-)softmaxes.  The
inference distribution q is never parameterised separately: it is the
exact posterior under the current prior and dynamics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import log_softmax, softmax

from app.env.models import MdpFamilySpec
from app.errors import SpecValidationError

INIT_SCALE = 0.01
CHECKPOINT_SCHEMA_VERSION = 1


@dataclass
class CategoricalLatentModel:
    """Learnable logits for a K-category latent model.

    ``dynamics_logits[k, s, a, s']`` and ``policy_logits[k, s, a]``.
    """

    prior_logits: np.ndarray
    dynamics_logits: np.ndarray
    policy_logits: np.ndarray

    @classmethod
    def initialize(
        cls,
        num_latent_categories: int,
        num_states: int,
        num_actions: int,
        rng: np.random.Generator,
        scale: float = INIT_SCALE,
    ) -> "CategoricalLatentModel":
        """Uniform(−scale, scale) logits; never the symmetric all-zero saddle."""
        k, s, a = num_latent_categories, num_states, num_actions
        return cls(
            prior_logits=rng.uniform(-scale, scale, size=k),
            dynamics_logits=rng.uniform(-scale, scale, size=(k, s, a, s)),
            policy_logits=rng.uniform(-scale, scale, size=(k, s, a)),
        )

    @classmethod
    def from_probabilities(
        cls,
        prior: np.ndarray,
        dynamics: np.ndarray,
        policy: np.ndarray,
    ) -> "CategoricalLatentModel":
        """Logits reproducing the given (strictly positive) tables exactly up to softmax."""
        with np.errstate(divide="ignore"):
            return cls(np.log(prior), np.log(dynamics), np.log(policy))

    # ── Shapes ───────────────────────────────────────────────────────────

    @property
    def num_latent_categories(self) -> int:
        return int(self.prior_logits.shape[0])

    @property
    def num_states(self) -> int:
        return int(self.dynamics_logits.shape[1])

    @property
    def num_actions(self) -> int:
        return int(self.dynamics_logits.shape[2])

    # ── Distributions ────────────────────────────────────────────────────

    def log_prior(self) -> np.ndarray:
        return log_softmax(self.prior_logits)

    def log_dynamics(self) -> np.ndarray:
        return log_softmax(self.dynamics_logits, axis=-1)

    def log_policy(self) -> np.ndarray:
        return log_softmax(self.policy_logits, axis=-1)

    def prior(self) -> np.ndarray:
        return softmax(self.prior_logits)

    def dynamics(self) -> np.ndarray:
        return softmax(self.dynamics_logits, axis=-1)

    def policy(self) -> np.ndarray:
        return softmax(self.policy_logits, axis=-1)

    def as_family(self, initial_dist: np.ndarray) -> MdpFamilySpec:
        """The learned dynamics as a family (initial states given per state)."""
        k = self.num_latent_categories
        init = np.broadcast_to(np.asarray(initial_dist, dtype=np.float64), (k, self.num_states))
        return MdpFamilySpec(
            num_states=self.num_states,
            num_actions=self.num_actions,
            num_latents=k,
            latent_prior=self.prior(),
            transitions=self.dynamics(),
            initial_dist=init,
        )

    # ── Copies / symmetry ────────────────────────────────────────────────

    def copy(self) -> "CategoricalLatentModel":
        return CategoricalLatentModel(
            self.prior_logits.copy(), self.dynamics_logits.copy(), self.policy_logits.copy()
        )

    def permuted(self, perm: np.ndarray) -> "CategoricalLatentModel":
        """Relabel latent categories: new category i is old ``perm[i]``."""
        perm = np.asarray(perm)
        return CategoricalLatentModel(
            self.prior_logits[perm].copy(),
            self.dynamics_logits[perm].copy(),
            self.policy_logits[perm].copy(),
        )

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("prior_logits", self.prior_logits),
            ("dynamics_logits", self.dynamics_logits),
            ("policy_logits", self.policy_logits),
        ]

    def is_finite(self) -> bool:
        return bool(
            np.all(np.isfinite(self.prior_logits))
            and np.all(np.isfinite(self.dynamics_logits))
            and np.all(np.isfinite(self.policy_logits))
        )

    # ── Serialisation ────────────────────────────────────────────────────

    def to_dict(self) -> dict:
        return {
            "K": self.num_latent_categories,
            "prior_logits": self.prior_logits.tolist(),
            "dynamics_logits": self.dynamics_logits.tolist(),
            "policy_logits": self.policy_logits.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CategoricalLatentModel":
        try:
            model = cls(
                np.asarray(data["prior_logits"], dtype=np.float64),
                np.asarray(data["dynamics_logits"], dtype=np.float64),
                np.asarray(data["policy_logits"], dtype=np.float64),
            )
        except KeyError as exc:
            raise SpecValidationError(f"checkpoint model block is missing {exc}") from exc
        if int(data.get("K", model.num_latent_categories)) != model.num_latent_categories:
            raise SpecValidationError("checkpoint K disagrees with prior_logits length")
        return model


# ── Checkpoints ──────────────────────────────────────────────────────────


@dataclass
class Checkpoint:
    """A trained model plus everything needed to rebuild its policy."""

    algo: str
    seed: int
    model: CategoricalLatentModel
    config: dict = field(default_factory=dict)
    online: Optional[CategoricalLatentModel] = None

    def to_dict(self) -> dict:
        data = {
            "schema_version": CHECKPOINT_SCHEMA_VERSION,
            "algo": self.algo,
            "seed": self.seed,
            "config": self.config,
            **self.model.to_dict(),
        }
        if self.online is not None:
            data["online"] = self.online.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Checkpoint":
        if data.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
            raise SpecValidationError(
                f"unsupported checkpoint schema_version {data.get('schema_version')!r}"
            )
        online = data.get("online")
        return cls(
            algo=str(data["algo"]),
            seed=int(data["seed"]),
            model=CategoricalLatentModel.from_dict(data),
            config=dict(data.get("config", {})),
            online=None if online is None else CategoricalLatentModel.from_dict(online),
        )


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    """JSON with full float precision (``json`` writes shortest round-trip reprs)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint.to_dict(), sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    return Checkpoint.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
