"""Counter-based random streams and inverse-CDF sampling.

Every episode owns a ``Philox`` generator keyed by ``(seed, stream, index)``
so episodes can run in any order (or in parallel) and still reproduce.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Stream ids that keep the different random consumers independent."""

    EXPERT = 1
    EXPLORATION = 2
    EVALUATION = 3
    ACTOR = 4
    MODEL = 5
    SYNTHETIC = 6


def episode_rng(seed: int, index: int, stream: int = Stream.EXPERT) -> np.random.Generator:
    """Return the generator for episode *index* of *stream* under *seed*."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream), int(index)])
    return np.random.Generator(np.random.Philox(seq))


def inverse_cdf(cdf: np.ndarray, u: float) -> int:
    """Index of the first bucket of a 1-D cumulative table exceeding *u*."""
    idx = int(np.count_nonzero(cdf <= u))
    return min(idx, cdf.shape[-1] - 1)


def sample_categorical(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from *probs* using the uniform variate *u*."""
    return inverse_cdf(np.cumsum(probs), u)


def sample_categorical_rows(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorised inverse-CDF draw: one row of *cdf* per entry of *u*.

    ``cdf`` has shape ``(n, k)`` (already cumulative), ``u`` shape ``(n,)``.
    Matches :func:`sample_categorical` exactly for equal rows and variates.
    """
    idx = np.count_nonzero(cdf <= u[:, None], axis=1)
    return np.minimum(idx, cdf.shape[1] - 1)
