"""Embedding-quality metrics."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix for rows of x: symmetric, zero diagonal."""
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    # the Gram expansion cancels catastrophically near zero; pin the exact
    # identities the formula loses so self-distances can't pollute averages
    d2 = 0.5 * (d2 + d2.T)
    np.fill_diagonal(d2, 0.0)
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


def silhouette_score(x: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over samples.

    Conventions for degenerate cases: a sample alone in its cluster
    scores 0, so a labeling with one point per cluster scores 0 overall;
    a single distinct label also scores 0.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2:
        raise DimensionError(f"silhouette expects a 2-D sample matrix, got shape {x.shape}")
    if x.shape[0] != labels.shape[0]:
        raise DimensionError(f"{x.shape[0]} samples but {labels.shape[0]} labels")
    unique = np.unique(labels)
    if unique.size < 2:
        return 0.0
    dist = pairwise_distances(x)
    n = x.shape[0]
    scores = np.zeros(n)
    masks = {c: labels == c for c in unique}
    for i in range(n):
        own = masks[labels[i]]
        own_size = int(own.sum())
        if own_size == 1:
            continue  # lone member: silhouette 0 by convention
        a = dist[i, own].sum() / (own_size - 1)  # exclude self (distance 0)
        b = min(dist[i, masks[c]].mean() for c in unique if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def top1_accuracy(predictions: np.ndarray, labels: np.ndarray) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DimensionError(f"predictions {predictions.shape} vs labels {labels.shape}")
    return float((predictions == labels).mean())


def per_class_accuracy(predictions: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Accuracy per class; classes absent from labels report NaN."""
    out = np.full(num_classes, np.nan)
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    for c in range(num_classes):
        mask = labels == c
        if mask.any():
            out[c] = float((predictions[mask] == c).mean())
    return out
