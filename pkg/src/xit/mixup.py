"""Cross-dataset MixUp over ring-paired mini-batch elements."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MixedBatch:
    originals: np.ndarray
    mixed: np.ndarray
    lambdas: np.ndarray

    @property
    def left_index(self) -> np.ndarray:
        return np.arange(len(self.lambdas))

    @property
    def right_index(self) -> np.ndarray:
        return (self.left_index + 1) % len(self.lambdas)


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


def sample_lambdas(alpha: float, size: int, rng: np.random.Generator) -> np.ndarray:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return rng.beta(alpha, alpha, size=size)


def xd_mixup_batch(batch, lambdas) -> MixedBatch:
    """Mix each element with its right ring neighbour.

    ``mixed[i] = (1 - lambdas[i]) * batch[i] + lambdas[i] * batch[(i + 1) % B]``,
    so a coefficient near 0 keeps the left series and near 1 the right one.
    """
    try:
        x = np.asarray([np.asarray(getattr(s, "values", s), dtype=np.float64) for s in batch])
    except ValueError:
        raise ValueError("all series in a mixup batch must have equal length") from None
    if x.ndim != 2:
        raise ValueError("all series in a mixup batch must have equal length")
    B = x.shape[0]
    lam = np.asarray(lambdas, dtype=np.float64)
    if B < 2:
        raise ValueError("mixup needs a batch of at least 2 series")
    if lam.shape != (B,):
        raise ValueError(f"expected {B} mixing coefficients, got shape {lam.shape}")
    if np.any(lam < 0) or np.any(lam > 1):
        raise ValueError("mixing coefficients must lie in [0, 1]")
    right = np.roll(x, -1, axis=0)
    mixed = (1.0 - lam)[:, None] * x + lam[:, None] * right
    return MixedBatch(originals=x, mixed=mixed, lambdas=lam)
