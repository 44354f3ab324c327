"""Deconfounded imitators: exact ELBOs, tier-2 / tier-1 training, naive BC."""

from app.learn.baseline import fit_offline_model, naive_bc_baseline
from app.learn.composite import LearnedPolicy, policy_from_checkpoint
from app.learn.config import ElboConfig
from app.learn.dataset import DatasetCycler, ExpertDataset, ExpertSampler
from app.learn.elbo import ModelGradient, elbo_offline, elbo_online
from app.learn.model import CategoricalLatentModel, Checkpoint, load_checkpoint, save_checkpoint
from app.learn.tier1 import (
    Tier1Estimate,
    estimate_to_model,
    interventional_policy_from_estimate,
    tier1_mle_identify,
    train_tier1_offline,
)
from app.learn.tier2 import train_tier2

__all__ = [
    "CategoricalLatentModel",
    "Checkpoint",
    "DatasetCycler",
    "ElboConfig",
    "ExpertDataset",
    "ExpertSampler",
    "LearnedPolicy",
    "ModelGradient",
    "Tier1Estimate",
    "elbo_offline",
    "elbo_online",
    "estimate_to_model",
    "fit_offline_model",
    "interventional_policy_from_estimate",
    "load_checkpoint",
    "naive_bc_baseline",
    "policy_from_checkpoint",
    "save_checkpoint",
    "tier1_mle_identify",
    "train_tier1_offline",
    "train_tier2",
]
