"""DeconfoundLab — run configuration.

Sources, lowest to highest precedence:

1. ``RunConfig`` defaults (the published hyperparameters)
2. a named preset from ``forge.json["presets"]``
3. a flat ``KEY=value`` config file (parsed with python-dotenv)
4. ``DECONFOUND_<FIELD>`` environment variables
5. explicit overrides (CLI flags)

Every value is coerced to the field's type; unknown keys are rejected.
"""

from __future__ import annotations

import json
import os
import pathlib
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping, Optional, get_type_hints

from dotenv import dotenv_values

from app.env.models import RolloutConfig
from app.errors import ConfigError
from app.learn.config import BC_LATENT_MODES, EXPLORATION_MODES, ElboConfig

ENV_PREFIX = "DECONFOUND_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

_FORGE_JSON = pathlib.Path(__file__).resolve().parent.parent / "forge.json"


def _default_workers() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RunConfig:
    """Typed configuration for one experiment (all seeds)."""

    environment: str = "bandit"
    horizon: int = 100
    expert_episodes: int = 100
    exploration_episodes: int = 100
    eval_episodes: int = 1000
    seeds: tuple[int, ...] = tuple(range(10))

    beta: float = 0.001
    lr_inference: float = 0.0001
    lr_policy: float = 0.001
    batch_episodes: int = 100
    train_steps: int = 5000
    num_latents: int = 0  # 0 → the family's latent count
    bc_latent_mode: str = "mean"
    exploration: str = "random"
    resample_expert: bool = True
    merge_tolerance: float = 0.05
    online_steps: int = 0  # 0 → train_steps
    log_every: int = 100
    eval_every: int = 0

    output_dir: str = "runs"
    smoothing_window: int = 20
    workers: int = field(default_factory=_default_workers)
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        positive = {
            "horizon": self.horizon,
            "expert_episodes": self.expert_episodes,
            "exploration_episodes": self.exploration_episodes,
            "eval_episodes": self.eval_episodes,
            "batch_episodes": self.batch_episodes,
            "smoothing_window": self.smoothing_window,
            "workers": self.workers,
        }
        for name, value in positive.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.lr_inference <= 0 or self.lr_policy <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.num_latents < 0 or self.train_steps < 0 or self.online_steps < 0:
            raise ConfigError("num_latents, train_steps and online_steps must be >= 0")
        if self.merge_tolerance < 0:
            raise ConfigError(f"merge_tolerance must be >= 0, got {self.merge_tolerance}")
        if self.bc_latent_mode not in BC_LATENT_MODES:
            raise ConfigError(f"bc_latent_mode must be one of {BC_LATENT_MODES}")
        if self.exploration not in EXPLORATION_MODES:
            raise ConfigError(f"exploration must be one of {EXPLORATION_MODES}")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level must be one of {LOG_LEVELS}, got {self.log_level!r}")

    def elbo(self, family_latents: int) -> ElboConfig:
        """Trainer settings; ``num_latents == 0`` resolves to *family_latents*."""
        return ElboConfig(
            beta=self.beta,
            lr_inference=self.lr_inference,
            lr_policy=self.lr_policy,
            batch_episodes=self.batch_episodes,
            exploration_episodes=self.exploration_episodes,
            train_steps=self.train_steps,
            num_latents=self.num_latents or family_latents,
            horizon=self.horizon,
            bc_latent_mode=self.bc_latent_mode,
            exploration=self.exploration,
            online_steps=self.online_steps,
            log_every=self.log_every,
            eval_every=self.eval_every,
        )

    def rollout(self, seed: int, episodes: int) -> RolloutConfig:
        return RolloutConfig(horizon=self.horizon, seed=seed, episodes=episodes)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["seeds"] = list(self.seeds)
        return data


# ── Loading ──────────────────────────────────────────────────────────────


_TYPES = get_type_hints(RunConfig)
FIELD_NAMES = tuple(f.name for f in fields(RunConfig))


def _coerce(name: str, value: Any) -> Any:
    hint = _TYPES[name]
    try:
        if hint is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if hint is float:
            return float(value)
        if hint is str:
            return str(value).strip()
        # seeds
        if isinstance(value, str):
            return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
        if isinstance(value, int):
            return (value,)
        return tuple(int(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"cannot read {name}={value!r} as {getattr(hint, '__name__', hint)}") from exc


def _normalise(values: Mapping[str, Any], source: str) -> dict[str, Any]:
    out = {}
    for key, value in values.items():
        name = key.strip().lower().replace("-", "_")
        if name not in FIELD_NAMES:
            raise ConfigError(f"unknown config key '{key}' in {source}")
        if value is None:
            continue
        out[name] = _coerce(name, value)
    return out


def load_presets(forge_json: Optional[str | pathlib.Path] = None) -> dict[str, dict]:
    """Named presets from ``forge.json`` (empty when the file has none)."""
    path = pathlib.Path(forge_json) if forge_json else _FORGE_JSON
    if not path.exists():
        return {}
    data = json.loads(path.read_text(encoding="utf-8"))
    return dict(data.get("presets", {}))


def load_run_config(
    preset: Optional[str] = None,
    config_path: Optional[str | pathlib.Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
    forge_json: Optional[str | pathlib.Path] = None,
) -> RunConfig:
    """Merge every configuration source into a validated ``RunConfig``."""
    merged: dict[str, Any] = {}

    if preset is not None:
        presets = load_presets(forge_json)
        if preset not in presets:
            raise ConfigError(
                f"Unknown preset '{preset}'. Available: {', '.join(presets) or 'none'}"
            )
        merged.update(_normalise(presets[preset], f"preset '{preset}'"))

    if config_path is not None:
        path = pathlib.Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        merged.update(_normalise(dotenv_values(path), str(path)))

    env = os.environ if environ is None else environ
    from_env = {
        key[len(ENV_PREFIX):]: value
        for key, value in env.items()
        if key.startswith(ENV_PREFIX) and key[len(ENV_PREFIX):].lower() in FIELD_NAMES
    }
    merged.update(_normalise(from_env, "environment"))

    if overrides:
        merged.update(_normalise({k: v for k, v in overrides.items() if v is not None}, "overrides"))

    return replace(RunConfig(), **merged) if merged else RunConfig()
