"""SMOTE oversampling for binary labels."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ResampleConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0  # minority / majority after resampling
    seed: int = 42

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not 0.0 < self.target_ratio <= 1.0:
            raise ValueError(f"target_ratio must be in (0, 1], got {self.target_ratio}")


@dataclass(frozen=True)
class SmoteResult:
    features: np.ndarray
    labels: np.ndarray
    # parentage of appended rows, indices into the original matrix
    base_index: np.ndarray
    neighbor_index: np.ndarray
    lam: np.ndarray


def nearest_neighbors(points, k):
    """Indices of the k nearest other points (Euclidean), ties by lower index."""
    n = points.shape[0]
    sq = np.sum(points**2, axis=1)
    out = np.empty((n, k), dtype=np.int64)
    chunk = 1024
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        dist = sq[lo:hi, None] + sq[None, :] - 2.0 * points[lo:hi] @ points.T
        np.maximum(dist, 0.0, out=dist)
        dist[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        out[lo:hi] = np.argsort(dist, axis=1, kind="stable")[:, :k]
    return out


def smote_with_parents(features, labels, cfg: ResampleConfig | None = None) -> SmoteResult:
    cfg = cfg or ResampleConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("features must be a 2-d matrix with one row per label")
    if not np.all(np.isfinite(X)):
        raise ValueError("SMOTE requires a numeric matrix without missing values")
    counts = np.bincount(y, minlength=2)
    minority_label = int(np.argmin(counts))
    n_min, n_maj = int(counts[minority_label]), int(counts[1 - minority_label])
    empty = np.zeros(0, dtype=np.int64)

    n_new = math.ceil(cfg.target_ratio * n_maj) - n_min
    if n_new <= 0:
        return SmoteResult(X.copy(), y.copy(), empty, empty, np.zeros(0))
    if n_min <= cfg.k_neighbors:
        raise ValueError(
            f"SMOTE needs more than k_neighbors={cfg.k_neighbors} minority rows, got {n_min} "
            f"(majority {n_maj})"
        )

    minority_rows = np.flatnonzero(y == minority_label)
    pts = X[minority_rows]
    nn = nearest_neighbors(pts, cfg.k_neighbors)
    rng = np.random.default_rng(cfg.seed)
    base = rng.integers(0, n_min, size=n_new)
    pick = rng.integers(0, cfg.k_neighbors, size=n_new)
    lam = rng.random(n_new)
    neighbor = nn[base, pick]
    synthetic = pts[base] + lam[:, None] * (pts[neighbor] - pts[base])

    return SmoteResult(
        features=np.vstack([X, synthetic]),
        labels=np.concatenate([y, np.full(n_new, minority_label, dtype=np.int64)]),
        base_index=minority_rows[base],
        neighbor_index=minority_rows[neighbor],
        lam=lam,
    )


def smote(features, labels, cfg: ResampleConfig | None = None):
    """Return (augmented matrix, augmented labels); originals come first, unchanged."""
    res = smote_with_parents(features, labels, cfg)
    return res.features, res.labels
