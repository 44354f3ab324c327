"""Subcommand implementations.  Each returns a process exit code.

Run directory layout under ``output_dir``::

    family.json                       family + expert spec
    expert.jsonl                      expert dataset
    <algo>/seed<k>/checkpoint.json    trained model
    <algo>/seed<k>/training_log.csv
    eval/<label>/*.csv, summary.json  evaluation report (all seeds)
    eval/<label>/raster.csv           --raster: first seed, one row per episode
    eval/<label>/traces.jsonl         --raster: first seed, per-step beliefs and dists
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Optional

import numpy as np

from app.cli.dashboard import print_summary, print_table
from app.config import RunConfig
from app.env.bandit import get_environment
from app.env.io import load_family, save_family, save_trajectories
from app.env.models import ExpertSpec, MdpFamilySpec
from app.env.rollout import generate_expert_dataset
from app.env.validate import validate_spec
from app.errors import ConfigError, SpecValidationError
from app.eval.report import (
    aggregate_reports,
    check_thresholds,
    compare_summaries,
    evaluate_policy,
    load_summary,
    summary_json,
    training_evaluator,
    write_report,
)
from app.learn.baseline import fit_offline_model
from app.learn.composite import ALGO_MODES, policy_from_checkpoint
from app.learn.dataset import (
    DatasetCycler,
    ExpertDataset,
    ExpertSampler,
    held_out_expert_dataset,
)
from app.learn.model import Checkpoint, load_checkpoint, save_checkpoint
from app.learn.tier1 import estimate_to_model, tier1_mle_identify, train_tier1_offline
from app.learn.tier2 import train_tier2
from app.oracle.registry import POLICY_REGISTRY, get_policy
from app.oracle.trace import save_traces_jsonl

logger = logging.getLogger("deconfound.cli")

ALGORITHMS = tuple(ALGO_MODES)
POLICY_CHOICES = (*POLICY_REGISTRY, "checkpoint")
_RUN_ONLY_KEYS = ("workers", "log_level", "output_dir")


# ── Shared helpers ───────────────────────────────────────────────────────


def resolve_family(config: RunConfig, family_path: Optional[str] = None) -> tuple[MdpFamilySpec, ExpertSpec]:
    if family_path is None:
        return get_environment(config.environment)
    family, expert = load_family(family_path)
    if expert is None:
        raise SpecValidationError(f"{family_path} has no expert policy")
    return family, expert


def _dataset_path(config: RunConfig, dataset: Optional[str]) -> Path:
    return Path(dataset) if dataset else Path(config.output_dir) / "expert.jsonl"


def _load_dataset(path: Path, family: MdpFamilySpec) -> ExpertDataset:
    if not path.exists():
        raise FileNotFoundError(f"expert dataset not found: {path} (run gen-expert first)")
    return ExpertDataset.from_file(path, family)


def _checkpoint_path(config: RunConfig, algo: str, seed: int) -> Path:
    return Path(config.output_dir) / algo / f"seed{seed}" / "checkpoint.json"


def _checkpoint_config(config: RunConfig) -> dict:
    return {k: v for k, v in config.to_dict().items() if k not in _RUN_ONLY_KEYS}


# ── gen-expert ───────────────────────────────────────────────────────────


def cmd_gen_expert(config: RunConfig, dataset: Optional[str] = None) -> int:
    """Write the expert dataset (first seed) and the family spec beside it."""
    family, expert = get_environment(config.environment)
    seed = config.seeds[0]
    trajectories = generate_expert_dataset(family, expert, config.rollout(seed, config.expert_episodes))

    path = _dataset_path(config, dataset)
    save_trajectories(path, trajectories)
    save_family(path.parent / "family.json", family, expert)

    latents = np.array([t.latent_truth for t in trajectories])
    best = expert.best_actions()
    hits = sum(int(np.sum(t.actions == best[t.latent_truth, t.states[: len(t)]])) for t in trajectories)
    steps = sum(len(t) for t in trajectories)
    fractions = np.bincount(latents, minlength=family.num_latents) / len(trajectories)
    print_summary(
        "Expert dataset",
        {
            "Environment": config.environment,
            "Episodes": len(trajectories),
            "Horizon": config.horizon,
            "Seed": seed,
            "Latent fractions": [round(float(f), 3) for f in fractions],
            "Best-action rate": hits / steps if steps else None,
            "File": str(path),
        },
    )
    return 0


# ── train ────────────────────────────────────────────────────────────────


def _train_one(
    algo: str,
    config: RunConfig,
    family: MdpFamilySpec,
    expert: ExpertSpec,
    dataset: ExpertDataset,
    seed: int,
) -> tuple[Checkpoint, Any]:
    elbo_config = config.elbo(family.num_latents)
    held_out = held_out_expert_dataset(family, expert, config.horizon, seed, config.expert_episodes)
    evaluator = training_evaluator(
        family,
        expert,
        held_out,
        ALGO_MODES[algo],
        config.rollout(seed, config.eval_episodes),
        workers=config.workers,
    )
    sampler = ExpertSampler(family, expert, config.horizon, seed) if config.resample_expert else None
    meta = _checkpoint_config(config)

    if algo == "tier2":
        batches = sampler or DatasetCycler(dataset)
        model, log = train_tier2(family, dataset, elbo_config, seed, batches, evaluator)
        return Checkpoint(algo, seed, model, meta), log
    if algo == "naive-bc":
        batches = sampler or DatasetCycler(dataset)
        model, log = fit_offline_model(dataset, elbo_config, seed, batches, evaluator, name="naive-bc")
        return Checkpoint(algo, seed, model, meta), log
    if algo == "tier1":
        offline, online, log = train_tier1_offline(dataset, elbo_config, seed, evaluator=evaluator)
        return Checkpoint(algo, seed, offline, meta, online=online), log
    if algo == "tier1-mle":
        estimate = tier1_mle_identify(dataset, config.merge_tolerance)
        return Checkpoint(algo, seed, estimate_to_model(estimate), meta), None
    raise ConfigError(f"Unknown algorithm '{algo}'. Available: {', '.join(ALGORITHMS)}")


def cmd_train(
    config: RunConfig,
    algo: str,
    dataset: Optional[str] = None,
    family_path: Optional[str] = None,
) -> int:
    """Train *algo* once per seed; write checkpoint + training log per seed."""
    family, expert = resolve_family(config, family_path)
    path = _dataset_path(config, dataset)
    if algo == "tier2" and not path.exists():
        # Environment access: simulate the dataset in-process.
        data = ExpertDataset.for_family(
            family,
            generate_expert_dataset(family, expert, config.rollout(config.seeds[0], config.expert_episodes)),
        )
    else:
        data = _load_dataset(path, family)

    rows: dict[str, Any] = {"Algorithm": algo, "Episodes": len(data), "Seeds": list(config.seeds)}
    for seed in config.seeds:
        checkpoint, log = _train_one(algo, config, family, expert, data, seed)
        ckpt_path = save_checkpoint(_checkpoint_path(config, algo, seed), checkpoint)
        if log is not None:
            log.to_csv(ckpt_path.parent / "training_log.csv", index=False, float_format="%.10g")
            if len(log):
                rows[f"seed {seed} elbo"] = float(log["elbo"].iloc[-1])
                evaluated = log["online_best_arm_count"].dropna()
                if len(evaluated):
                    rows[f"seed {seed} best-arm count"] = float(evaluated.iloc[-1])
        logger.info("Checkpoint (seed %d) → %s", seed, ckpt_path)
    rows["Output"] = str(Path(config.output_dir) / algo)
    print_summary("Training", rows)
    return 0


# ── eval ─────────────────────────────────────────────────────────────────


def _resolve_policy(
    name: str,
    family: MdpFamilySpec,
    expert: ExpertSpec,
    seed: int,
    config: RunConfig,
    checkpoint: Optional[str],
    algo: Optional[str],
    sampling: bool,
):
    if name != "checkpoint":
        if sampling and name.startswith("oracle-"):
            mode = name.split("-", 1)[1]
            return get_policy(f"thompson-{mode}", family, expert, seed)
        return get_policy(name, family, expert, seed)
    if checkpoint:
        path = Path(checkpoint.format(seed=seed))
    elif algo:
        path = _checkpoint_path(config, algo, seed)
    else:
        raise ConfigError("--policy checkpoint needs --checkpoint PATH or --algo NAME")
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return policy_from_checkpoint(load_checkpoint(path), sampling=sampling, seed=seed)


def cmd_eval(
    config: RunConfig,
    policy: str,
    checkpoint: Optional[str] = None,
    algo: Optional[str] = None,
    sampling: bool = False,
    raster: bool = False,
    label: Optional[str] = None,
    family_path: Optional[str] = None,
) -> int:
    """Evaluate one policy over every seed and write the aggregated report."""
    if policy not in POLICY_CHOICES:
        raise KeyError(f"Unknown policy '{policy}'. Available: {', '.join(POLICY_CHOICES)}")
    family, expert = resolve_family(config, family_path)
    label = label or (algo if policy == "checkpoint" and algo else policy)
    out_dir = Path(config.output_dir) / "eval" / label

    reports = []
    for i, seed in enumerate(config.seeds):
        actor = _resolve_policy(policy, family, expert, seed, config, checkpoint, algo, sampling)
        held_out = held_out_expert_dataset(family, expert, config.horizon, seed, config.expert_episodes)
        first_raster = raster and i == 0
        report, traces = evaluate_policy(
            actor,
            family,
            expert,
            held_out,
            config.rollout(seed, config.eval_episodes),
            name=label,
            workers=config.workers,
            raster_path=out_dir / "raster.csv" if first_raster else None,
        )
        if first_raster:
            save_traces_jsonl(out_dir / "traces.jsonl", traces)
        reports.append(report)

    agg = aggregate_reports(reports)
    write_report(agg, out_dir, smoothing_window=config.smoothing_window)
    summary = summary_json(agg)
    print_summary(
        f"Eval: {label}",
        {
            "Seeds": list(config.seeds),
            "Episodes / seed": config.eval_episodes,
            "Best-arm count": summary["best_arm_count_mean"],
            "Online best-arm (final)": summary["online_best_arm_final"],
            "Expert-data best-arm (final)": summary["expert_best_arm_final"],
            "Imitation loss": summary["imitation_loss_mean"],
            "KL to expert (final)": summary["kl_to_expert_final"],
            "Output": str(out_dir),
        },
    )
    return 0


# ── compare ──────────────────────────────────────────────────────────────


def _parse_bounds(items: Optional[list[str]]) -> dict[str, float]:
    bounds = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"threshold '{item}' must look like METRIC=VALUE")
        try:
            bounds[key.strip()] = float(value)
        except ValueError as exc:
            raise ConfigError(f"threshold '{item}' has a non-numeric value") from exc
    return bounds


def cmd_compare(
    report_a: str,
    report_b: str,
    min_diff: Optional[list[str]] = None,
    max_abs_diff: Optional[list[str]] = None,
) -> int:
    """Print ``a − b`` per metric; exit 2 when a threshold fails."""
    a, b = load_summary(report_a), load_summary(report_b)
    diffs = compare_summaries(a, b)
    print_table(
        f"{a['policy']} vs {b['policy']}",
        ["metric", "a", "b", "diff", "sem", "significant"],
        [[d.metric, d.a, d.b, d.diff, d.sem, d.significant] for d in diffs],
    )
    failures = check_thresholds(diffs, _parse_bounds(min_diff), _parse_bounds(max_abs_diff))
    for failure in failures:
        logger.error("Threshold failed: %s", failure)
    return 2 if failures else 0


# ── validate ─────────────────────────────────────────────────────────────


def cmd_validate(config: RunConfig, family_path: Optional[str] = None) -> int:
    """Validate the registered (or given) family and expert; exit 2 on violations."""
    if family_path is None:
        family, expert = get_environment(config.environment)
        source = config.environment
    else:
        family, expert = load_family(family_path)
        source = family_path
    violations = validate_spec(family, expert)
    rows: dict[str, Any] = {
        "Source": source,
        "States": family.num_states,
        "Actions": family.num_actions,
        "Latents": family.num_latents,
        "Violations": len(violations),
    }
    for i, violation in enumerate(violations, start=1):
        rows[f"  {i}"] = violation
    print_summary("Validate", rows)
    return 2 if violations else 0
