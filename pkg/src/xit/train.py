"""Pretraining and linear-probe finetuning loops, with the optimizer pieces they share."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .augment import AugmentConfig, strong_augment, weak_augment
from .checkpoint import AdamState, Checkpoint, capture_rng, restore_rng
from .data import Collection, Dataset, sample_batch_array
from .losses import ContrastViews, LossConfig, cross_entropy, sicc_loss, tc_loss, total_loss
from .metrics import auroc
from .mixup import sample_lambdas, xd_mixup_batch
from .model import NonFiniteError, XITModel

log = logging.getLogger(__name__)

ABLATIONS = ("full", "xd_sicc", "xd_tc", "tc_only")


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    weight_decay: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    grad_clip_norm: float = 1.0
    steps: int = 1000
    seed: int = 0
    ablation: str = "full"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.learning_rate <= 0 or self.weight_decay < 0 or self.grad_clip_norm <= 0:
            raise ValueError("learning rate and clip norm must be positive, weight decay nonnegative")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    @property
    def uses_mixup(self) -> bool:
        return self.ablation != "tc_only"

    @property
    def uses_tc(self) -> bool:
        return self.ablation in ("full", "xd_tc", "tc_only")

    @property
    def uses_sicc(self) -> bool:
        return self.ablation in ("full", "xd_sicc")


@dataclass(frozen=True)
class FinetuneConfig:
    batch_size: int = 64
    learning_rate: float = 1.4e-4
    weight_decay: float = 1.6e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    grad_clip_norm: float = 1.0
    patience_epochs: int = 4
    min_steps: int = 40
    max_steps: int = 2000
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.min_steps > self.max_steps:
            raise ValueError("min_steps must not exceed max_steps")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


# -- optimizer pieces ---------------------------------------------------------


def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamState,
    lr: float,
    wd: float = 0.0,
    b1: float = 0.9,
    b2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam update with L2 weight decay added to the gradient."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    with torch.no_grad():
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ValueError(f"{name}: gradient shape {tuple(g.shape)} != {tuple(p.shape)}")
            g = g + wd * p
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p.sub_(lr * m_hat / (v_hat.sqrt() + eps))


def global_norm(grads: dict[str, torch.Tensor]) -> float:
    return math.sqrt(sum(float(g.double().pow(2).sum()) for g in grads.values()))


def clip_gradients(grads: dict[str, torch.Tensor], max_norm: float = 1.0) -> dict[str, torch.Tensor]:
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


class EarlyStopping:
    """Patience on a metric to maximise, bounded by a minimum and maximum step count."""

    def __init__(self, patience: int = 4, min_steps: int = 40, max_steps: int = 2000):
        self.patience = patience
        self.min_steps = min_steps
        self.max_steps = max_steps
        self.best = -math.inf
        self.best_epoch = 0
        self.epochs = 0
        self.stale = 0

    def update(self, metric: float) -> bool:
        """Record one epoch's metric; return True when it is a new best."""
        self.epochs += 1
        if metric > self.best:
            self.best, self.best_epoch, self.stale = metric, self.epochs, 0
            return True
        self.stale += 1
        return False

    def should_stop(self, steps: int) -> bool:
        if steps >= self.max_steps:
            return True
        return self.stale >= self.patience and steps >= self.min_steps


# -- pretraining --------------------------------------------------------------


def _as_tensor(x: np.ndarray, model: XITModel) -> torch.Tensor:
    return torch.as_tensor(x, dtype=next(model.parameters()).dtype)


def pretrain_losses(
    model: XITModel,
    x: np.ndarray,
    rng: np.random.Generator,
    cfg: PretrainConfig,
    augment_cfg: AugmentConfig = AugmentConfig(),
    alpha: float = 0.2,
    loss_cfg: LossConfig = LossConfig(),
) -> dict[str, torch.Tensor | None]:
    """Forward pass of one pretraining step on a sampled batch ``x`` of shape (B, T)."""
    views = ContrastViews()
    if cfg.uses_sicc:
        kappa = model.project(model.context(model.encode(_as_tensor(x, model))))
        views.kappa_l, views.kappa_r = kappa, torch.roll(kappa, -1, dims=0)
    if cfg.uses_mixup:
        lambdas = sample_lambdas(alpha, x.shape[0], rng)
        base = xd_mixup_batch(x, lambdas).mixed
        views.lambdas = _as_tensor(lambdas, model)
    else:
        base = x
    x_s = strong_augment(base, augment_cfg, rng)
    x_w = weak_augment(base, augment_cfg, rng)

    z_s = model.encode(_as_tensor(x_s, model))
    z_w = model.encode(_as_tensor(x_w, model))
    views.c_s, views.c_w = model.context(z_s), model.context(z_w)
    views.zk_s, views.zk_w = z_s[:, -1], z_w[:, -1]

    l_tc = tc_loss(views, model.W) if cfg.uses_tc else None
    l_sicc = None
    if cfg.uses_sicc:
        views.kappa_s = model.project(views.c_s)
        views.kappa_w = model.project(views.c_w)
        l_sicc = sicc_loss(views, loss_cfg.tau)
    if l_tc is not None and l_sicc is not None:
        l_total = total_loss(l_tc, l_sicc, loss_cfg.beta)
    else:
        l_total = l_tc if l_tc is not None else l_sicc
    return {"l_tc": l_tc, "l_sicc": l_sicc, "l_total": l_total}


def pretrain(
    collection: Collection,
    model: XITModel,
    cfg: PretrainConfig = PretrainConfig(),
    augment_cfg: AugmentConfig = AugmentConfig(),
    alpha: float = 0.2,
    loss_cfg: LossConfig = LossConfig(),
    *,
    resume: Checkpoint | None = None,
    telemetry: str | Path | None = None,
    config: dict | None = None,
    on_step: Callable[[int, dict], None] | None = None,
) -> Checkpoint:
    """Run ``cfg.steps`` optimisation steps (in total, counting resumed ones).

    A fresh run seeds numpy and torch from ``cfg.seed``; a resumed run
    restores both from the checkpoint, so its remaining steps match an
    uninterrupted run exactly.
    """
    if resume is not None:
        rng = restore_rng(resume.rng_state)
        adam = resume.adam or AdamState()
        step = resume.step
        model = resume.model
        history = list(resume.history)
    else:
        rng = np.random.default_rng(cfg.seed)
        torch.manual_seed(cfg.seed)
        adam = AdamState()
        step = 0
        history = []
    if config is None:
        config = {
            "pretrain": asdict(cfg),
            "augment": asdict(augment_cfg),
            "mixup": {"alpha": alpha},
            "loss": asdict(loss_cfg),
        }
    writer = None
    fh = None
    if telemetry is not None:
        telemetry = Path(telemetry)
        new_file = resume is None or not telemetry.exists()
        fh = telemetry.open("w" if new_file else "a", newline="")
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["step", "l_tc", "l_sicc", "l_total"])

    params = dict(model.named_parameters())
    model.train()
    try:
        while step < cfg.steps:
            x = sample_batch_array(collection, cfg.batch_size, rng)
            losses = pretrain_losses(model, x, rng, cfg, augment_cfg, alpha, loss_cfg)
            total = losses["l_total"]
            if not torch.isfinite(total):
                raise DivergenceError(f"non-finite loss at step {step + 1}")
            # parameters off the active loss path (e.g. the projector under xd_tc) stay untouched
            names = [n for n, p in params.items() if p.requires_grad]
            raw = torch.autograd.grad(total, [params[n] for n in names], allow_unused=True)
            grads = {n: g for n, g in zip(names, raw) if g is not None}
            grads = clip_gradients(grads, cfg.grad_clip_norm)
            adam_step(
                params, grads, adam, cfg.learning_rate, cfg.weight_decay,
                cfg.adam_beta1, cfg.adam_beta2,
            )
            step += 1
            row = {k: (None if v is None else float(v.detach())) for k, v in losses.items()}
            history.append(row)
            if writer is not None:
                writer.writerow(
                    [step] + ["" if row[k] is None else repr(row[k]) for k in ("l_tc", "l_sicc", "l_total")]
                )
            if on_step is not None:
                on_step(step, row)
            if step % 50 == 0 or step == cfg.steps:
                log.info("step %d  l_total=%.4f", step, row["l_total"])
    finally:
        if fh is not None:
            fh.close()

    return Checkpoint(
        model=model,
        config=config,
        adam=adam,
        step=step,
        rng_state=capture_rng(rng),
        history=history,
    )


# -- finetuning ---------------------------------------------------------------


@dataclass
class FinetuneResult:
    classifier_state: dict[str, torch.Tensor]
    history: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int = 0
    steps: int = 0
    val_indices: np.ndarray | None = None


@torch.no_grad()
def embed(model: XITModel, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Frozen-encoder embeddings ``(N, K, Z)`` computed in eval mode."""
    was_training = model.training
    model.eval()
    try:
        chunks = [
            model.encode(_as_tensor(x[i : i + batch_size], model)).numpy()
            for i in range(0, len(x), batch_size)
        ]
    finally:
        model.train(was_training)
    return np.concatenate(chunks)


def stratified_split(
    labels: np.ndarray, fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``round(fraction * n_c)`` of each class, keeping at least one
    sample of every class on both sides when the class has two or more."""
    train, val = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_val = int(round(fraction * idx.size))
        if fraction > 0 and idx.size >= 2:
            n_val = min(max(n_val, 1), idx.size - 1)
        else:
            n_val = 0
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


def _init_classifier(model: XITModel, num_classes: int, seed: int) -> torch.nn.Linear:
    clf = model.attach_classifier(num_classes)
    gen = torch.Generator().manual_seed(seed)
    bound = 1.0 / math.sqrt(clf.in_features)
    with torch.no_grad():
        clf.weight.copy_(torch.empty_like(clf.weight).uniform_(-bound, bound, generator=gen))
        clf.bias.copy_(torch.empty_like(clf.bias).uniform_(-bound, bound, generator=gen))
    return clf


def finetune(
    model: XITModel,
    dataset: Dataset,
    cfg: FinetuneConfig = FinetuneConfig(),
    num_classes: int | None = None,
) -> FinetuneResult:
    """Linear probe on frozen encoder outputs.

    An epoch is one pass over the training part of a stratified split; the
    held-out part provides the AUROC for early stopping. When the held-out
    part has fewer than two classes the training AUROC is monitored instead.
    The best-AUROC classifier is attached to ``model`` on return.
    """
    num_classes = num_classes or dataset.num_classes
    labels = dataset.labels
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"dataset labels do not fit a {num_classes}-class classifier")
    x = dataset.to_array()
    rng = np.random.default_rng(cfg.seed)

    features = torch.from_numpy(embed(model, x)).to(next(model.parameters()).dtype)
    features = features.reshape(len(x), -1)
    y = torch.as_tensor(labels)
    train_idx, val_idx = stratified_split(labels, cfg.val_fraction, rng)
    monitor_idx = val_idx if np.unique(labels[val_idx]).size >= 2 else train_idx

    clf = _init_classifier(model, num_classes, cfg.seed)
    params = dict(clf.named_parameters())
    adam = AdamState()
    stopper = EarlyStopping(cfg.patience_epochs, cfg.min_steps, cfg.max_steps)
    best_state = {k: v.detach().clone() for k, v in clf.state_dict().items()}
    history = []
    steps = 0
    while True:
        order = train_idx[rng.permutation(train_idx.size)]
        losses = []
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss = cross_entropy(clf(features[batch]), y[batch])
            g = torch.autograd.grad(loss, list(params.values()))
            grads = clip_gradients(dict(zip(params, g)), cfg.grad_clip_norm)
            adam_step(
                params, grads, adam, cfg.learning_rate, cfg.weight_decay,
                cfg.adam_beta1, cfg.adam_beta2,
            )
            losses.append(float(loss.detach()))
            steps += 1
            if steps >= cfg.max_steps:
                break
        with torch.no_grad():
            probs = torch.softmax(clf(features[monitor_idx]), dim=-1).numpy()
        metric = auroc(probs, labels[monitor_idx])
        if stopper.update(metric):
            best_state = {k: v.detach().clone() for k, v in clf.state_dict().items()}
        history.append(
            {"epoch": stopper.epochs, "steps": steps, "train_loss": float(np.mean(losses)), "val_auroc": metric}
        )
        if stopper.should_stop(steps):
            break
    clf.load_state_dict(best_state)
    return FinetuneResult(
        classifier_state=best_state,
        history=history,
        best_epoch=stopper.best_epoch,
        steps=steps,
        val_indices=val_idx,
    )


@torch.no_grad()
def predict_proba(model: XITModel, x: np.ndarray) -> np.ndarray:
    z = torch.from_numpy(embed(model, x)).to(next(model.parameters()).dtype)
    return model.classify(z).numpy()
