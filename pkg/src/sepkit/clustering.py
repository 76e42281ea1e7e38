"""K-means over embedding rows for baseline inference.

Binary masks come from cluster assignments of per-bin embeddings: the
classic clustering-at-test-time pipeline that soft mask estimation
replaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig
from .masking import MaskSet


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray  # (k, D)
    assignments: np.ndarray  # (N,) labels
    inertia: float
    iterations: int
    inertia_history: tuple[float, ...]


def _pairwise_sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _seed_centroids(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """First centroid at seeded random, the rest by farthest-point choice."""
    chosen = [int(rng.integers(0, x.shape[0]))]
    dists = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        idx = int(np.argmax(dists))
        chosen.append(idx)
        dists = np.minimum(dists, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def kmeans(
    v: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> KMeansResult:
    """Lloyd iterations from farthest-point seeding.

    Deterministic given the seed; empty clusters are repaired by stealing
    the point farthest from its current centroid.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidConfig("kmeans input must be (N, D)")
    n = x.shape[0]
    if not 2 <= k <= n:
        raise InvalidConfig(f"need 2 <= k <= N, got k={k}, N={n}")

    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(x, k, rng)
    labels = np.zeros(n, dtype=int)
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dists = _pairwise_sq_dists(x, centroids)
        labels = np.argmin(dists, axis=1)
        point_cost = dists[np.arange(n), labels]

        for c in range(k):
            if not np.any(labels == c):
                far = int(np.argmax(point_cost))
                labels[far] = c
                point_cost[far] = 0.0

        new_centroids = np.empty_like(centroids)
        for c in range(k):
            new_centroids[c] = x[labels == c].mean(axis=0)

        history.append(float(_pairwise_sq_dists(x, new_centroids)[np.arange(n), labels].sum()))
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break

    return KMeansResult(
        centroids=centroids,
        assignments=labels,
        inertia=history[-1],
        iterations=iterations,
        inertia_history=tuple(history),
    )


def masks_from_assignments(result: KMeansResult, num_frames: int, num_bins: int) -> MaskSet:
    """One binary mask per cluster; masks partition the TF plane."""
    labels = result.assignments
    if labels.shape[0] != num_frames * num_bins:
        raise InvalidConfig(
            f"{labels.shape[0]} labels cannot tile a {num_frames}x{num_bins} plane"
        )
    k = result.centroids.shape[0]
    grid = labels.reshape(num_frames, num_bins)
    masks = np.stack([(grid == c).astype(np.float64) for c in range(k)])
    return MaskSet(masks, kind="binary")
