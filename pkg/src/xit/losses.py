"""Pretraining objectives (temporal contrast, soft interpolation contrast) and
the finetuning cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .model import NonFiniteError, bilinear_logits


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.25
    tau: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass
class ContrastViews:
    """Per-batch tensors consumed by the two pretraining losses.

    ``c_*`` are contexts ``(B, C)``, ``zk_*`` the last embedding vectors
    ``(B, Z)`` of the strong/weak views. ``kappa_l``/``kappa_r`` project the
    original left/right series of each ring pair, ``kappa_s``/``kappa_w``
    the two augmented mixed views; all are ``(B, C // 4)``.
    """

    c_s: torch.Tensor | None = None
    c_w: torch.Tensor | None = None
    zk_s: torch.Tensor | None = None
    zk_w: torch.Tensor | None = None
    kappa_l: torch.Tensor | None = None
    kappa_s: torch.Tensor | None = None
    kappa_w: torch.Tensor | None = None
    kappa_r: torch.Tensor | None = None
    lambdas: torch.Tensor | None = None


def _forecast_nce(context: torch.Tensor, W: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    logits = bilinear_logits(context, W, targets)
    if not torch.isfinite(logits).all():
        raise NonFiniteError("non-finite logits in temporal contrastive loss")
    labels = torch.arange(logits.shape[0], device=logits.device)
    return F.cross_entropy(logits, labels)


def tc_loss(views: ContrastViews, W: torch.Tensor) -> torch.Tensor:
    """Cross-forecasting InfoNCE: each view's context scores the other view's
    last embedding against the rest of the batch; the two directions are averaged."""
    strong = _forecast_nce(views.c_w, W, views.zk_s)
    weak = _forecast_nce(views.c_s, W, views.zk_w)
    return 0.5 * (strong + weak)


def _check_nonzero(x: torch.Tensor) -> None:
    if (torch.linalg.vector_norm(x, dim=-1) == 0).any():
        raise ValueError("cosine similarity is undefined for zero vectors")


def cosine_sim(u: torch.Tensor, v: torch.Tensor, tau: float) -> torch.Tensor:
    _check_nonzero(u)
    _check_nonzero(v)
    return (u * v).sum(-1) / (tau * torch.linalg.vector_norm(u, dim=-1) * torch.linalg.vector_norm(v, dim=-1))


def similarity_matrix(vectors: torch.Tensor, tau: float) -> torch.Tensor:
    _check_nonzero(vectors)
    unit = vectors / torch.linalg.vector_norm(vectors, dim=-1, keepdim=True)
    return unit @ unit.T / tau


def _log_denominators(sim: torch.Tensor) -> torch.Tensor:
    eye = torch.eye(sim.shape[0], dtype=torch.bool, device=sim.device)
    return torch.logsumexp(sim.masked_fill(eye, float("-inf")), dim=1)


def ell(vectors: torch.Tensor, i: int, j: int, mu, tau: float) -> torch.Tensor:
    """Soft contrastive term for anchor ``i`` and positive ``j``.

    ``-mu * sim(i, j) + log sum_{k != i} exp(sim(i, k))``. The weight ``mu``
    scales only the positive similarity; the denominator keeps ``j``.
    """
    if i == j:
        raise ValueError("anchor and positive must differ")
    sim = similarity_matrix(vectors, tau)
    return -mu * sim[i, j] + _log_denominators(sim)[i]


def sicc_set_loss(vectors: torch.Tensor, lambdas: torch.Tensor, tau: float) -> torch.Tensor:
    """Loss over one ``3B`` arrangement ``(left..., augmented..., right...)``.

    For each ring pair the four directed terms left<->augmented (weight
    ``1 - lambda``) and augmented<->right (weight ``lambda``) are summed,
    then the sum is averaged over the batch.
    """
    B = lambdas.shape[0]
    if vectors.shape[0] != 3 * B:
        raise ValueError(f"expected {3 * B} vectors, got {vectors.shape[0]}")
    sim = similarity_matrix(vectors, tau)
    log_den = _log_denominators(sim)
    idx = torch.arange(B, device=vectors.device)
    left, mid, right = idx, idx + B, idx + 2 * B
    lam = lambdas.to(sim.dtype)
    terms = (
        -(1 - lam) * sim[left, mid] + log_den[left]
        - (1 - lam) * sim[mid, left] + log_den[mid]
        - lam * sim[mid, right] + log_den[mid]
        - lam * sim[right, mid] + log_den[right]
    )
    return terms.mean()


def sicc_loss(views: ContrastViews, tau: float) -> torch.Tensor:
    strong = torch.cat([views.kappa_l, views.kappa_s, views.kappa_r])
    weak = torch.cat([views.kappa_l, views.kappa_w, views.kappa_r])
    return 0.5 * (
        sicc_set_loss(strong, views.lambdas, tau) + sicc_set_loss(weak, views.lambdas, tau)
    )


def total_loss(l_tc, l_sicc, beta: float):
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return beta * l_tc + (1.0 - beta) * l_sicc


def cross_entropy(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean ``-log softmax(logits)[label]``; accepts one row or a batch."""
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.dim() == 1:
        logits, labels = logits.unsqueeze(0), labels.reshape(1)
    n_classes = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(1, labels[:, None]).mean()
