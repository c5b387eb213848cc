"""Weak (magnitude scaling) and strong (permutation-and-jitter) augmentations.

Both functions accept a single series of shape ``(T,)`` or a batch of shape
``(N, T)``; random draws are made independently per series, in row order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AugmentConfig:
    weak_scale_sigma: float = 0.1
    strong_max_segments: int = 5
    strong_jitter_sigma: float = 0.05

    def __post_init__(self):
        if self.weak_scale_sigma < 0:
            raise ValueError("weak_scale_sigma must be nonnegative")
        if self.strong_max_segments < 1:
            raise ValueError("strong_max_segments must be at least 1")
        if self.strong_jitter_sigma < 0:
            raise ValueError("strong_jitter_sigma must be nonnegative")


def weak_augment(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    scale = rng.normal(1.0, cfg.weak_scale_sigma, size=(batch.shape[0], 1))
    return (scale * batch).reshape(x.shape)


def _permute_segments(x: np.ndarray, max_segments: int, rng: np.random.Generator) -> np.ndarray:
    T = x.size
    m = int(rng.integers(1, max_segments + 1))
    m = min(m, T)
    if m == 1:
        return x.copy()
    cuts = np.sort(rng.choice(np.arange(1, T), size=m - 1, replace=False))
    segments = np.split(x, cuts)
    order = rng.permutation(m)
    return np.concatenate([segments[k] for k in order])


def strong_augment(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Split into 1..max_segments pieces, shuffle them, then add Gaussian jitter."""
    x = np.asarray(x, dtype=np.float64)
    batch = np.atleast_2d(x)
    out = np.empty_like(batch)
    for n, row in enumerate(batch):
        permuted = _permute_segments(row, cfg.strong_max_segments, rng)
        out[n] = permuted + rng.normal(0.0, cfg.strong_jitter_sigma, size=row.size)
    return out.reshape(x.shape)
