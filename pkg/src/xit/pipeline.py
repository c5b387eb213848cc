"""In-memory building blocks shared by the command line and the synthetic benchmark."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import Checkpoint
from .config import RunConfig
from .data import Dataset, DataError, build_collection, prepad_dataset
from .metrics import accuracy, auroc, macro_f1
from .model import XITModel
from .train import FinetuneResult, finetune, predict_proba, pretrain


def build_model(cfg: RunConfig, in_length: int, num_classes: int | None = None) -> XITModel:
    torch.manual_seed(cfg.seed)
    return XITModel(cfg.model.encoder(in_length), cfg.model.summarizer(), num_classes)


def random_init_model(cfg: RunConfig, in_length: int) -> XITModel:
    return build_model(cfg, in_length)


def pretrain_on(
    datasets: Sequence[Dataset],
    cfg: RunConfig,
    *,
    telemetry: str | Path | None = None,
    on_step=None,
) -> Checkpoint:
    collection = build_collection(datasets)
    model = build_model(cfg, collection.target_length)
    return pretrain(
        collection,
        model,
        cfg.pretrain_cfg,
        cfg.augment,
        cfg.mixup.alpha,
        cfg.loss,
        telemetry=telemetry,
        config=cfg.to_dict(),
        on_step=on_step,
    )


def fit_to_encoder(dataset: Dataset, model: XITModel) -> Dataset:
    """Prepad a dataset to the encoder's input length."""
    target = model.encoder_cfg.in_length
    if dataset.max_length > target:
        raise DataError(
            f"incompatible shapes: encoder expects series of length {target}, "
            f"dataset {dataset.name!r} has length {dataset.max_length}"
        )
    return prepad_dataset(dataset, target)


def metric_report(probs: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    return {
        "accuracy": accuracy(probs, labels),
        "macro_f1": macro_f1(probs, labels),
        "auroc": auroc(probs, labels),
    }


def probe(
    model: XITModel, train: Dataset, cfg: RunConfig, num_classes: int | None = None
) -> tuple[XITModel, FinetuneResult]:
    """Linear probe on a copy of ``model``; the input model is left untouched."""
    probe_model = copy.deepcopy(model)
    result = finetune(probe_model, fit_to_encoder(train, probe_model), cfg.finetune_cfg, num_classes)
    return probe_model, result


def evaluate_probe(
    model: XITModel, train: Dataset, test: Dataset | None, cfg: RunConfig
) -> dict[str, float]:
    """Probe on ``train`` and score on ``test``; without a test set the
    held-out validation part of ``train`` is scored."""
    num_classes = max(train.num_classes, test.num_classes if test is not None else 0)
    probe_model, result = probe(model, train, cfg, num_classes)
    if test is not None:
        test = fit_to_encoder(test, probe_model)
        x, y = test.to_array(), test.labels
    else:
        padded = fit_to_encoder(train, probe_model)
        x, y = padded.to_array()[result.val_indices], padded.labels[result.val_indices]
    return metric_report(predict_proba(probe_model, x), y)
