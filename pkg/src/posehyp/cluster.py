"""kmeans++ seeding, Lloyd updates and nearest-member selection."""
from __future__ import annotations

import numpy as np


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = (X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeanspp_seeds(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` distinct seed points chosen by D^2 sampling."""
    n = X.shape[0]
    if k > n:
        raise ValueError(f"cannot seed {k} clusters from {n} points")
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen[0]][None])[:, 0]
    for _ in range(1, k):
        d2[chosen] = 0.0
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # all remaining points coincide with a seed
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None])[:, 0])
    return np.array(chosen)


def kmeans(X, k, rng, max_iter=20, tol=1e-6):
    """kmeans++ initialisation followed by Lloyd iterations.

    Returns ``(centroids, labels, seed_indices)``. Empty clusters are
    re-seeded with the point farthest from its current centroid.
    """
    X = np.asarray(X, dtype=float)
    seeds = kmeanspp_seeds(X, k, rng)
    C = X[seeds].copy()
    labels = np.zeros(len(X), dtype=int)
    for _ in range(max_iter):
        D = _sq_dists(X, C)
        labels = D.argmin(1)
        newC = C.copy()
        for j in range(k):
            mask = labels == j
            if mask.any():
                newC[j] = X[mask].mean(0)
            else:
                far = int(D[np.arange(len(X)), labels].argmax())
                newC[j] = X[far]
                labels[far] = j
        shift = np.linalg.norm(newC - C)
        C = newC
        if shift < tol:
            break
    labels = _sq_dists(X, C).argmin(1)
    return C, labels, seeds


def nearest_members(X, C) -> np.ndarray:
    """One distinct member index per centroid, nearest first.

    Pairs are assigned greedily in order of increasing distance so no two
    centroids share a member.
    """
    X = np.asarray(X, dtype=float)
    k = len(C)
    D = _sq_dists(X, np.asarray(C, dtype=float))
    m = min(k, len(X))
    cand = np.argpartition(D, m - 1, axis=0)[:m] if m < len(X) else np.tile(np.arange(len(X))[:, None], (1, k))
    pairs = sorted(
        (float(D[i, j]), j, int(i)) for j in range(k) for i in cand[:, j]
    )
    out = -np.ones(k, dtype=int)
    used = set()
    for _, j, i in pairs:
        if out[j] < 0 and i not in used:
            out[j] = i
            used.add(i)
    return out
