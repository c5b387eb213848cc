"""Classification metrics, latent-space diagnostics and method ranking."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _check_predictions(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or labels.ndim != 1 or scores.shape[0] != labels.shape[0]:
        raise ValueError("expected scores of shape (N, num_classes) and N labels")
    if labels.size == 0:
        raise ValueError("no predictions to evaluate")
    if labels.min() < 0 or labels.max() >= scores.shape[1]:
        raise ValueError(f"labels must lie in [0, {scores.shape[1]})")
    return scores, labels


def accuracy(scores, labels) -> float:
    scores, labels = _check_predictions(scores, labels)
    return float(np.mean(scores.argmax(1) == labels))


def macro_f1(scores, labels) -> float:
    """Unweighted mean of per-class F1 over every class seen in labels or predictions.

    A class that is never predicted (or never true) scores F1 = 0.
    """
    scores, labels = _check_predictions(scores, labels)
    preds = scores.argmax(1)
    f1s = []
    for c in np.union1d(labels, preds):
        tp = np.sum((preds == c) & (labels == c))
        fp = np.sum((preds == c) & (labels != c))
        fn = np.sum((preds != c) & (labels == c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def binary_auroc(scores, positive) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted as 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative examples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auroc(scores, labels) -> float:
    """Macro one-vs-rest AUROC over the classes present in ``labels``."""
    scores, labels = _check_predictions(scores, labels)
    present = np.unique(labels)
    if present.size < 2:
        raise ValueError("AUROC needs at least two classes in the labels")
    return float(np.mean([binary_auroc(scores[:, c], labels == c) for c in present]))


def dbi(vectors, groups) -> float:
    """Davies-Bouldin index with Euclidean distances (lower = better separated)."""
    X = np.asarray(vectors, dtype=np.float64)
    groups = np.asarray(groups)
    if X.ndim != 2 or X.shape[0] != groups.shape[0]:
        raise ValueError("expected (N, D) vectors and N group labels")
    ids = np.unique(groups)
    if ids.size < 2:
        raise ValueError("the Davies-Bouldin index needs at least two groups")
    centroids = np.stack([X[groups == g].mean(0) for g in ids])
    scatter = np.array(
        [np.linalg.norm(X[groups == g] - centroids[k], axis=1).mean() for k, g in enumerate(ids)]
    )
    dist = np.linalg.norm(centroids[:, None] - centroids[None], axis=-1)
    np.fill_diagonal(dist, np.inf)
    if np.any(dist == 0):
        raise ValueError("two groups have coincident centroids")
    ratios = (scatter[:, None] + scatter[None]) / dist
    return float(ratios.max(1).mean())


def pca2(vectors) -> np.ndarray:
    """Project centred data onto its top two principal axes.

    Each axis is signed so that its largest-magnitude loading is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ValueError("PCA needs at least 2 points in at least 2 dimensions")
    Xc = X - X.mean(0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    if s[0] == 0:
        raise ValueError("data has zero variance")
    axes = vt[:2]
    signs = np.sign(axes[np.arange(2), np.abs(axes).argmax(1)])
    axes = axes * signs[:, None]
    return Xc @ axes.T


def rank_methods(scores) -> np.ndarray:
    """Mean rank of each method (rows) across datasets (columns).

    Higher score ranks first; ties share the average of the tied ranks.
    """
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.size == 0:
        raise ValueError("expected a methods x datasets score matrix")
    if np.isnan(S).any():
        rows, cols = np.nonzero(np.isnan(S))
        raise ValueError(f"missing scores at (method, dataset) {[(int(r), int(c)) for r, c in zip(rows, cols)]}")
    ranks = rankdata(-S, axis=0, method="average")
    return ranks.mean(1)
