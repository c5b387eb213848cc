"""Learnable components: conv encoder, set-transformer summarizer, projector,
bilinear scoring matrix and the linear probe.

Shapes used throughout: a batch of series is ``(N, T)``, encoder output is
``(N, K, Z)``, contexts are ``(N, C)`` and projections ``(N, C // 4)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F
from torch import nn


class NonFiniteError(RuntimeError):
    """A forward or backward computation produced NaN or Inf."""


@dataclass(frozen=True)
class EncoderConfig:
    """Three residual conv blocks, each halving the time axis (for ``pool_stride=2``).

    Convolutions use "same" padding, so only the max-pools change the length:
    ``K = floor(floor(floor(T / p) / p) / p)`` with ``p = pool_stride``.
    T=600 gives K=75; T=128 gives K=16; T=32 gives K=4.
    """

    in_length: int = 600
    channels: tuple[int, int, int] = (32, 64, 64)
    kernel_sizes: tuple[int, int, int] = (8, 5, 3)
    pool_stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        if len(self.channels) != len(self.kernel_sizes):
            raise ValueError("channels and kernel_sizes must have equal length")
        if self.pool_stride < 1:
            raise ValueError("pool_stride must be positive")
        if self.num_positions < 2:
            raise ValueError(
                f"in_length={self.in_length} leaves K={self.num_positions} positions; need K >= 2"
            )

    @property
    def embed_dim(self) -> int:
        return self.channels[-1]

    @property
    def num_positions(self) -> int:
        k = self.in_length
        for _ in self.channels:
            k //= self.pool_stride
        return k


@dataclass(frozen=True)
class SummarizerConfig:
    token_dim: int = 64
    heads: int = 4
    layers: int = 4
    ffn_hidden: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.token_dim % 4:
            raise ValueError("token_dim must be divisible by 4")
        if self.token_dim % self.heads:
            raise ValueError("token_dim must be divisible by the number of heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, pool: int):
        super().__init__()
        # "same" padding, split unevenly for even kernels
        self.padding = ((kernel_size - 1) // 2, kernel_size // 2)
        self.conv = nn.Conv1d(in_channels, out_channels, kernel_size)
        self.bn = nn.BatchNorm1d(out_channels)
        self.shortcut = (
            nn.Conv1d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()
        )
        self.pool = nn.MaxPool1d(pool, pool)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn(self.conv(F.pad(x, self.padding))))
        return self.pool(out + self.shortcut(x))


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        blocks = []
        in_ch = 1
        for out_ch, k in zip(cfg.channels, cfg.kernel_sizes):
            blocks.append(ResidualBlock(in_ch, out_ch, k, cfg.pool_stride))
            in_ch = out_ch
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[-1] != self.cfg.in_length:
            raise ValueError(f"expected series of length {self.cfg.in_length}, got {x.shape[-1]}")
        return self.blocks(x).transpose(1, 2)


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim, bias=False)
        self.out = nn.Sequential(nn.Linear(dim, dim), nn.Dropout(dropout))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        N, L, D = x.shape
        q, k, v = self.qkv(x).view(N, L, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        attn = torch.softmax((q @ k.transpose(-1, -2)) * self.scale, dim=-1)
        return self.out((attn @ v).transpose(1, 2).reshape(N, L, D))


class TransformerLayer(nn.Module):
    """Pre-norm block: ``x + attn(LN(x))`` then ``x + ffn(LN(x))``."""

    def __init__(self, dim: int, heads: int, hidden: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(
            nn.Linear(dim, hidden),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class Summarizer(nn.Module):
    """Condenses a set of embedding vectors into one context vector.

    No positional encoding is used, so the output is invariant to the order
    of the input vectors. The context is read off a learned summary token
    prepended to the projected inputs.
    """

    def __init__(self, in_dim: int, cfg: SummarizerConfig):
        super().__init__()
        self.cfg = cfg
        self.token_proj = nn.Linear(in_dim, cfg.token_dim)
        self.summary_token = nn.Parameter(torch.randn(cfg.token_dim))
        self.layers = nn.ModuleList(
            TransformerLayer(cfg.token_dim, cfg.heads, cfg.ffn_hidden, cfg.dropout)
            for _ in range(cfg.layers)
        )

    def forward(self, z_prefix: torch.Tensor) -> torch.Tensor:
        if z_prefix.dim() != 3 or z_prefix.shape[1] < 1:
            raise ValueError("summarize needs at least one embedding vector per series")
        tokens = self.token_proj(z_prefix)
        summary = self.summary_token.expand(tokens.shape[0], 1, -1)
        x = torch.cat([summary, tokens], dim=1)
        for layer in self.layers:
            x = layer(x)
        return x[:, 0]


class BatchNorm(nn.Module):
    """Per-feature batch normalisation over dim 0.

    Unlike ``nn.BatchNorm1d`` a training batch of one row is allowed: its
    variance is zero and the output reduces to the shift parameter.
    """

    def __init__(self, dim: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.register_buffer("running_mean", torch.zeros(dim))
        self.register_buffer("running_var", torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training:
            mean = x.mean(0)
            var = x.var(0, unbiased=False)
            n = x.shape[0]
            with torch.no_grad():
                unbiased = var * n / (n - 1) if n > 1 else var
                self.running_mean.lerp_(mean.detach(), self.momentum)
                self.running_var.lerp_(unbiased.detach(), self.momentum)
        else:
            mean, var = self.running_mean, self.running_var
        return (x - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias


class Projector(nn.Module):
    """``Linear(C -> C/2) -> BatchNorm -> ReLU -> Linear(C/2 -> C/4)``."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim // 2)
        self.bn = BatchNorm(dim // 2)
        self.fc2 = nn.Linear(dim // 2, dim // 4)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.bn(self.fc1(c))))


class XITModel(nn.Module):
    def __init__(
        self,
        encoder_cfg: EncoderConfig = EncoderConfig(),
        summarizer_cfg: SummarizerConfig = SummarizerConfig(),
        num_classes: int | None = None,
    ):
        super().__init__()
        self.encoder_cfg = encoder_cfg
        self.summarizer_cfg = summarizer_cfg
        Z, C = encoder_cfg.embed_dim, summarizer_cfg.token_dim
        self.encoder = Encoder(encoder_cfg)
        self.summarizer = Summarizer(Z, summarizer_cfg)
        self.projector = Projector(C)
        bound = 1.0 / math.sqrt(Z)
        self.W = nn.Parameter(torch.empty(C, Z).uniform_(-bound, bound))
        self.classifier: nn.Linear | None = None
        if num_classes is not None:
            self.attach_classifier(num_classes)

    @property
    def feature_dim(self) -> int:
        return self.encoder_cfg.num_positions * self.encoder_cfg.embed_dim

    def attach_classifier(self, num_classes: int) -> nn.Linear:
        if num_classes < 2:
            raise ValueError("a classifier needs at least two classes")
        p = next(self.parameters())
        self.classifier = nn.Linear(self.feature_dim, num_classes).to(p.dtype)
        return self.classifier

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def summarize(self, z_prefix: torch.Tensor) -> torch.Tensor:
        return self.summarizer(z_prefix)

    def context(self, z: torch.Tensor) -> torch.Tensor:
        """Context of the first K-1 embedding vectors."""
        return self.summarizer(z[:, :-1])

    def project(self, c: torch.Tensor) -> torch.Tensor:
        return self.projector(c)

    def logits(self, z: torch.Tensor) -> torch.Tensor:
        if self.classifier is None:
            raise RuntimeError("no classifier attached")
        flat = z.reshape(z.shape[0], -1)
        if flat.shape[1] != self.classifier.in_features:
            raise ValueError(
                f"classifier expects {self.classifier.in_features} features, got {flat.shape[1]}"
            )
        return self.classifier(flat)

    def classify(self, z: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(z), dim=-1)


def bilinear_logits(c: torch.Tensor, W: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """All pairwise bilinear forms: ``out[i, j] = c[i] @ W @ z[j]``."""
    return c @ W @ z.transpose(-1, -2)


def bilinear_score(W: torch.Tensor, c: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    if W.shape != (c.shape[-1], z.shape[-1]):
        raise ValueError(f"W has shape {tuple(W.shape)}, expected ({c.shape[-1]}, {z.shape[-1]})")
    return torch.exp(c @ W @ z)


def gradients(
    objective: Callable[[], torch.Tensor], model: nn.Module
) -> dict[str, torch.Tensor]:
    """Reverse-mode gradient of a scalar objective for every learnable tensor.

    Parameters that do not influence the objective get a zero gradient.
    """
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Anomaly Detection has been enabled")
        anomaly = torch.autograd.detect_anomaly(check_nan=True)
    with anomaly:
        value = objective()
        if not torch.isfinite(value):
            raise NonFiniteError(f"objective evaluated to {value.item()}")
        try:
            grads = torch.autograd.grad(value, [p for _, p in named], allow_unused=True)
        except RuntimeError as exc:
            raise NonFiniteError(str(exc).splitlines()[0]) from None
    return {
        n: torch.zeros_like(p) if g is None else g for (n, p), g in zip(named, grads)
    }
