"""Test-time deployment: θ ~ p(θ), roll out H steps, record what the policy did."""

from __future__ import annotations

import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Optional

from app.env.models import ExpertSpec, MdpFamilySpec, RolloutConfig, Trajectory
from app.env.rng import Stream, episode_rng
from app.env.rollout import EpisodeResult, run_episode
from app.oracle.trace import PolicyTrace

logger = logging.getLogger("deconfound.eval.deploy")


def deploy(
    policy: Any,
    family: MdpFamilySpec,
    expert: Optional[ExpertSpec],
    config: RolloutConfig,
    workers: int = 1,
    stream: int = Stream.EVALUATION,
) -> tuple[list[Trajectory], list[PolicyTrace]]:
    """Run ``config.episodes`` online episodes of *policy*.

    Every episode gets its own deep copy of the policy, so stateful actors
    never share beliefs.  ``policy=None`` deploys the truth-conditioned
    *expert*.  Results are ordered by episode index whatever ``workers`` is.
    """
    if policy is None:
        if expert is None:
            raise ValueError("deploy needs a policy or an expert")
        policy = expert

    def episode(index: int) -> EpisodeResult:
        actor = copy.deepcopy(policy)
        return run_episode(
            family,
            actor,
            None,
            config.horizon,
            env_rng=episode_rng(config.seed, index, stream),
            policy_rng=episode_rng(config.seed, index, Stream.ACTOR),
            record=True,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(episode, range(config.episodes)))
    else:
        results = [episode(i) for i in range(config.episodes)]

    logger.debug("Deployed %d episodes of %d steps", config.episodes, config.horizon)
    return [r.trajectory for r in results], [PolicyTrace.from_episode(r) for r in results]
