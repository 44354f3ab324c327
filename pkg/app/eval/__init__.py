"""Deployment loop, imitation metrics, rasters and multi-seed reports."""

from app.eval.deploy import deploy
from app.eval.metrics import (
    export_raster,
    metric_best_arm_prob_on_expert,
    metric_imitation_loss,
    metric_kl_to_expert,
    metric_online_series,
    smooth,
    total_variation_series,
)
from app.eval.report import (
    EvalReport,
    aggregate_reports,
    compare_summaries,
    evaluate_policy,
    summary_json,
    write_report,
)

__all__ = [
    "EvalReport",
    "aggregate_reports",
    "compare_summaries",
    "deploy",
    "evaluate_policy",
    "export_raster",
    "metric_best_arm_prob_on_expert",
    "metric_imitation_loss",
    "metric_kl_to_expert",
    "metric_online_series",
    "smooth",
    "summary_json",
    "total_variation_series",
    "write_report",
]
