"""Evaluation reports: per-seed metrics, seed aggregation, CSV/JSON output, comparison."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from app.belief.inference import EvidenceMode
from app.env.models import ExpertSpec, MdpFamilySpec, RolloutConfig, Trajectory
from app.errors import SpecValidationError
from app.eval.deploy import deploy
from app.eval.metrics import (
    export_raster,
    metric_best_arm_prob_on_expert,
    metric_imitation_loss,
    metric_kl_to_expert,
    metric_online_series,
    smooth,
)
from app.learn.composite import LearnedPolicy
from app.learn.model import CategoricalLatentModel
from app.oracle.trace import PolicyTrace

logger = logging.getLogger("deconfound.eval.report")

SUMMARY_SCHEMA_VERSION = 1
FINAL_WINDOW = 0.2  # trailing fraction of the horizon used for endpoints
SERIES = ("expert_best_arm", "online_best_arm", "imitation_loss", "kl_to_expert")


@dataclass
class EvalReport:
    """All metrics of one policy under one seed."""

    policy: str
    seed: int
    episodes: int
    horizon: int
    expert_best_arm: np.ndarray
    online_best_arm: np.ndarray
    imitation_loss: np.ndarray
    imitation_loss_mean: float
    best_arm_count: np.ndarray
    kl_to_expert: np.ndarray
    infinite_loss_steps: int = 0

    def series(self, name: str) -> np.ndarray:
        return getattr(self, name)


def evaluate_policy(
    policy: Any,
    family: MdpFamilySpec,
    expert: ExpertSpec,
    eval_dataset: Sequence[Trajectory],
    config: RolloutConfig,
    name: str = "policy",
    workers: int = 1,
    raster_path: Optional[str | Path] = None,
) -> tuple[EvalReport, list[PolicyTrace]]:
    """Deploy *policy* online and score it on held-out expert data."""
    _, traces = deploy(policy, family, expert, config, workers=workers)
    online, counts = metric_online_series(traces, expert)
    loss = metric_imitation_loss(policy, eval_dataset)
    report = EvalReport(
        policy=name,
        seed=config.seed,
        episodes=config.episodes,
        horizon=config.horizon,
        expert_best_arm=metric_best_arm_prob_on_expert(policy, eval_dataset, expert),
        online_best_arm=online,
        imitation_loss=loss.series,
        imitation_loss_mean=loss.mean,
        best_arm_count=counts,
        kl_to_expert=metric_kl_to_expert(traces, expert),
        infinite_loss_steps=loss.infinite_steps,
    )
    if raster_path is not None:
        export_raster(traces, raster_path)
    logger.info(
        "Evaluated %s (seed %d): best-arm count %.2f, imitation loss %.4f",
        name, config.seed, counts.mean() if counts.size else float("nan"), loss.mean,
    )
    return report, traces


# ── Aggregation ──────────────────────────────────────────────────────────


def _mean_sem(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error over axis 0 (sample std / √n, 0 for n = 1)."""
    n = stack.shape[0]
    mean = stack.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, stack.std(axis=0, ddof=1) / math.sqrt(n)


@dataclass
class AggregateReport:
    policy: str
    seeds: list[int]
    episodes: int
    horizon: int
    mean: dict[str, np.ndarray] = field(default_factory=dict)
    sem: dict[str, np.ndarray] = field(default_factory=dict)
    count_histogram: np.ndarray = field(default_factory=lambda: np.zeros(0))
    count_histogram_sem: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scalars: dict[str, tuple[float, float]] = field(default_factory=dict)
    infinite_loss_steps: int = 0


def aggregate_reports(reports: Sequence[EvalReport]) -> AggregateReport:
    """Per-t mean and SEM across seeds for every series, plus scalar endpoints."""
    if not reports:
        raise ValueError("no reports to aggregate")
    horizon = reports[0].horizon
    if any(r.horizon != horizon for r in reports):
        raise SpecValidationError("reports disagree on horizon")

    agg = AggregateReport(
        policy=reports[0].policy,
        seeds=[r.seed for r in reports],
        episodes=reports[0].episodes,
        horizon=horizon,
        infinite_loss_steps=sum(r.infinite_loss_steps for r in reports),
    )
    for name in SERIES:
        agg.mean[name], agg.sem[name] = _mean_sem(np.stack([r.series(name) for r in reports]))

    hist = np.stack([
        np.bincount(r.best_arm_count, minlength=horizon + 1)[: horizon + 1] / max(len(r.best_arm_count), 1)
        for r in reports
    ])
    agg.count_histogram, agg.count_histogram_sem = _mean_sem(hist)

    start = int(math.floor(horizon * (1.0 - FINAL_WINDOW)))
    per_seed = {
        "expert_best_arm_final": [float(np.nanmean(r.expert_best_arm[start:])) for r in reports],
        "online_best_arm_final": [float(np.nanmean(r.online_best_arm[start:])) for r in reports],
        "kl_to_expert_final": [float(np.nanmean(r.kl_to_expert[start:])) for r in reports],
        "best_arm_count_mean": [float(r.best_arm_count.mean()) for r in reports],
        "imitation_loss_mean": [r.imitation_loss_mean for r in reports],
    }
    for key, values in per_seed.items():
        mean, sem = _mean_sem(np.asarray(values)[:, None])
        agg.scalars[key] = (float(mean[0]), float(sem[0]))
    return agg


# ── Output ───────────────────────────────────────────────────────────────


def summary_json(agg: AggregateReport) -> dict:
    summary: dict[str, Any] = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "policy": agg.policy,
        "seeds": agg.seeds,
        "episodes": agg.episodes,
        "horizon": agg.horizon,
        "final_window": [int(math.floor(agg.horizon * (1.0 - FINAL_WINDOW))), agg.horizon],
        "infinite_loss_steps": agg.infinite_loss_steps,
    }
    for key, (mean, sem) in agg.scalars.items():
        summary[key] = mean
        summary[f"{key}_sem"] = sem
    return summary


def write_report(agg: AggregateReport, out_dir: str | Path, smoothing_window: int = 1) -> list[Path]:
    """Write every metric CSV plus ``summary.json``; returns the paths.

    With ``smoothing_window > 1`` each series CSV also carries a trailing
    rolling mean (``<name>_smooth``) for plotting.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    t = np.arange(agg.horizon)
    for name in SERIES:
        frame = pd.DataFrame({"t": t, name: agg.mean[name], f"{name}_sem": agg.sem[name]})
        if smoothing_window > 1:
            frame[f"{name}_smooth"] = smooth(agg.mean[name], smoothing_window)
        path = out / f"{name}.csv"
        frame.to_csv(path, index=False, float_format="%.10g")
        paths.append(path)

    counts = pd.DataFrame({
        "count": np.arange(agg.horizon + 1),
        "best_arm_count": agg.count_histogram,
        "best_arm_count_sem": agg.count_histogram_sem,
    })
    path = out / "best_arm_count.csv"
    counts.to_csv(path, index=False, float_format="%.10g")
    paths.append(path)

    path = out / "summary.json"
    path.write_text(json.dumps(summary_json(agg), indent=2, sort_keys=True), encoding="utf-8")
    paths.append(path)
    logger.info("Report for %s → %s", agg.policy, out)
    return paths


def load_summary(path: str | Path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("schema_version") != SUMMARY_SCHEMA_VERSION:
        raise SpecValidationError(f"{path}: unsupported summary schema_version {data.get('schema_version')!r}")
    return data


# ── Comparison ───────────────────────────────────────────────────────────


SCALARS = (
    "expert_best_arm_final",
    "online_best_arm_final",
    "best_arm_count_mean",
    "imitation_loss_mean",
    "kl_to_expert_final",
)


@dataclass(frozen=True)
class MetricDiff:
    metric: str
    a: float
    b: float
    diff: float
    sem: float
    significant: bool


def compare_summaries(a: dict, b: dict) -> list[MetricDiff]:
    """Per-metric ``a − b`` with a 2·SEM significance flag."""
    if a.get("horizon") != b.get("horizon"):
        raise SpecValidationError(
            f"reports have different horizons ({a.get('horizon')} vs {b.get('horizon')})"
        )
    diffs = []
    for key in SCALARS:
        if key not in a or key not in b:
            raise SpecValidationError(f"summary is missing '{key}'")
        diff = float(a[key]) - float(b[key])
        sem = math.sqrt(float(a.get(f"{key}_sem", 0.0)) ** 2 + float(b.get(f"{key}_sem", 0.0)) ** 2)
        diffs.append(MetricDiff(key, float(a[key]), float(b[key]), diff, sem, abs(diff) > 2.0 * sem))
    return diffs


def check_thresholds(
    diffs: Sequence[MetricDiff],
    min_diff: Optional[dict[str, float]] = None,
    max_abs_diff: Optional[dict[str, float]] = None,
) -> list[str]:
    """Failure messages for thresholds the diffs do not meet."""
    by_name = {d.metric: d for d in diffs}
    failures = []
    for key, bound in (min_diff or {}).items():
        if key not in by_name:
            failures.append(f"unknown metric '{key}'")
        elif not by_name[key].diff >= bound:
            failures.append(f"{key}: diff {by_name[key].diff:.4f} < {bound}")
    for key, bound in (max_abs_diff or {}).items():
        if key not in by_name:
            failures.append(f"unknown metric '{key}'")
        elif not abs(by_name[key].diff) <= bound:
            failures.append(f"{key}: |diff| {abs(by_name[key].diff):.4f} > {bound}")
    return failures


# ── Training-time evaluation ─────────────────────────────────────────────


def training_evaluator(
    family: MdpFamilySpec,
    expert: ExpertSpec,
    eval_dataset: Sequence[Trajectory],
    mode: EvidenceMode | str,
    config: RolloutConfig,
    workers: int = 1,
):
    """Evaluator callback for trainers: online best-arm count and expert-data best-arm probability."""
    eval_dataset = list(eval_dataset)

    def evaluate(step: int, model: CategoricalLatentModel) -> dict:
        policy = LearnedPolicy(model.copy(), mode)
        _, traces = deploy(policy, family, expert, config, workers=workers)
        _, counts = metric_online_series(traces, expert)
        expert_series = metric_best_arm_prob_on_expert(policy, eval_dataset, expert)
        return {
            "online_best_arm_count": float(counts.mean()),
            "eval_best_arm_prob": float(np.nanmean(expert_series)),
        }

    return evaluate
