"""JSON (de)serialisation for family specs and JSON-lines trajectory files.

Family schema (``schema_version`` 1)::

    {"schema_version": 1, "num_states": S, "num_actions": A, "num_latents": K,
     "latent_prior": [K], "transitions": [K][S][A][S],
     "initial_dist": [K][S], "expert_policy": [K][S][A]}

Trajectory line::

    {"schema_version": 1, "latent": k | null, "s0": i, "steps": [[a, s'], ...]}
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Optional

from app.env.models import ExpertSpec, MdpFamilySpec, Trajectory
from app.errors import SpecValidationError

logger = logging.getLogger("deconfound.env.io")

SCHEMA_VERSION = 1


def _check_version(data: dict, what: str) -> None:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SpecValidationError(
            f"{what}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})"
        )


# ── Family / expert ──────────────────────────────────────────────────────


def family_to_dict(family: MdpFamilySpec, expert: Optional[ExpertSpec] = None) -> dict:
    data = {
        "schema_version": SCHEMA_VERSION,
        "num_states": family.num_states,
        "num_actions": family.num_actions,
        "num_latents": family.num_latents,
        "latent_prior": family.latent_prior.tolist(),
        "transitions": family.transitions.tolist(),
        "initial_dist": family.initial_dist.tolist(),
    }
    if expert is not None:
        data["expert_policy"] = expert.policy.tolist()
    return data


def family_from_dict(data: dict) -> tuple[MdpFamilySpec, Optional[ExpertSpec]]:
    _check_version(data, "family spec")
    try:
        family = MdpFamilySpec(
            num_states=int(data["num_states"]),
            num_actions=int(data["num_actions"]),
            num_latents=int(data["num_latents"]),
            latent_prior=data["latent_prior"],
            transitions=data["transitions"],
            initial_dist=data["initial_dist"],
        )
    except KeyError as exc:
        raise SpecValidationError(f"family spec is missing field {exc}") from exc
    except ValueError as exc:
        raise SpecValidationError(f"family spec has ragged arrays: {exc}") from exc
    expert = None
    if "expert_policy" in data:
        expert = ExpertSpec(policy=data["expert_policy"])
    return family, expert


def save_family(path: str | Path, family: MdpFamilySpec, expert: Optional[ExpertSpec] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(family_to_dict(family, expert)), encoding="utf-8")
    return path


def load_family(path: str | Path) -> tuple[MdpFamilySpec, Optional[ExpertSpec]]:
    return family_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ── Trajectories ─────────────────────────────────────────────────────────


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "latent": traj.latent_truth,
        "s0": traj.initial_state,
        "steps": [[a, s] for a, s in traj.steps],
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    _check_version(data, "trajectory")
    try:
        return Trajectory.from_steps(
            int(data["s0"]),
            [(int(a), int(s)) for a, s in data["steps"]],
            data.get("latent"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecValidationError(f"malformed trajectory record: {exc}") from exc


def save_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> int:
    """Write one JSON object per line; returns the number of lines written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for traj in trajectories:
            f.write(json.dumps(trajectory_to_dict(traj), separators=(",", ":")) + "\n")
            count += 1
    logger.info("Wrote %d trajectories → %s", count, path)
    return count


def load_trajectories(path: str | Path) -> list[Trajectory]:
    path = Path(path)
    out: list[Trajectory] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SpecValidationError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            out.append(trajectory_from_dict(record))
    return out
