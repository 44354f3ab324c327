"""Spec validation — reports every violated family/expert invariant."""

from __future__ import annotations

from typing import Optional

import numpy as np

from app.env.models import ExpertSpec, MdpFamilySpec

NORMALIZATION_TOL = 1e-12


def _check_rows(name: str, table: np.ndarray, out: list[str]) -> None:
    """Append one violation per negative or non-normalized row of *table*."""
    if table.size == 0:
        return
    if not np.all(np.isfinite(table)):
        for idx in zip(*np.nonzero(~np.isfinite(table))):
            out.append(f"{name}{list(map(int, idx))} is not finite")
        return
    negative = np.argwhere(table < 0)
    for idx in negative:
        out.append(f"{name}{idx.tolist()} is negative ({table[tuple(idx)]:.6g})")
    sums = table.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > NORMALIZATION_TOL)
    for idx in bad:
        key = idx.tolist()
        out.append(f"{name}{key} sums to {sums[tuple(idx)]:.12g}, expected 1")


def validate_spec(family: MdpFamilySpec, expert: Optional[ExpertSpec] = None) -> list[str]:
    """Return the list of violated invariants (empty means valid).

    Never raises: shape problems are reported as violations too.
    """
    violations: list[str] = []
    k, s, a = family.num_latents, family.num_states, family.num_actions
    for count_name, count in (("num_latents", k), ("num_states", s), ("num_actions", a)):
        if count < 1:
            violations.append(f"{count_name} must be >= 1, got {count}")

    expected = {
        "latent_prior": (family.latent_prior, (k,)),
        "transitions": (family.transitions, (k, s, a, s)),
        "initial_dist": (family.initial_dist, (k, s)),
    }
    if expert is not None:
        expected["policy"] = (expert.policy, (k, s, a))

    for name, (table, shape) in expected.items():
        if table.shape != shape:
            violations.append(f"{name} has shape {table.shape}, expected {shape}")
            continue
        _check_rows(name, table, violations)
    return violations
