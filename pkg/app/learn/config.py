"""Training hyperparameters for the latent-inference imitators."""

from __future__ import annotations

from dataclasses import dataclass

from app.errors import ConfigError

BC_LATENT_MODES = ("mean", "sample")
EXPLORATION_MODES = ("random", "imitator")


@dataclass(frozen=True)
class ElboConfig:
    """Optimiser and loop settings shared by every trainer.

    ``lr_inference`` drives the prior and dynamics logits, ``lr_policy``
    the policy logits.  Gradients are summed over the batch, not averaged.
    """

    beta: float = 0.001
    lr_inference: float = 0.0001
    lr_policy: float = 0.001
    batch_episodes: int = 100
    train_steps: int = 5000
    num_latents: int = 5
    exploration_episodes: int = 100

    horizon: int = 100
    bc_latent_mode: str = "mean"
    exploration: str = "random"
    online_steps: int = 0  # 0 → train_steps
    log_every: int = 100
    eval_every: int = 0  # 0 → only after the last step

    def __post_init__(self) -> None:
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.lr_inference <= 0 or self.lr_policy <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.num_latents < 1:
            raise ConfigError(f"num_latents must be >= 1, got {self.num_latents}")
        if self.batch_episodes < 1 or self.exploration_episodes < 1 or self.horizon < 1:
            raise ConfigError("batch_episodes, exploration_episodes and horizon must be >= 1")
        if self.train_steps < 0 or self.online_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.bc_latent_mode not in BC_LATENT_MODES:
            raise ConfigError(
                f"bc_latent_mode must be one of {BC_LATENT_MODES}, got {self.bc_latent_mode!r}"
            )
        if self.exploration not in EXPLORATION_MODES:
            raise ConfigError(
                f"exploration must be one of {EXPLORATION_MODES}, got {self.exploration!r}"
            )

    @property
    def effective_online_steps(self) -> int:
        return self.online_steps or self.train_steps

    def should_evaluate(self, step: int) -> bool:
        """True on evaluation steps (1-based) and always on the final one."""
        if step == self.train_steps:
            return True
        return self.eval_every > 0 and step % self.eval_every == 0
