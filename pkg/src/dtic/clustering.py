"""K-means, DEC soft assignment / target distribution / KL loss, and
nearest-centroid assignment.

Ties are broken towards the lowest index everywhere.
"""
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .kernels import assign_labels


class DeadClusterError(ValueError):
    pass


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    restart: int = 0
    n_iter: int = 0
    history: list = field(default_factory=list)  # inertia after each assignment step


def _kmeanspp(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return X[chosen].copy()


def _lloyd(X, centroids, max_iter):
    k = centroids.shape[0]
    labels, d2 = assign_labels(X, centroids)
    history = [float(d2.sum())]
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed: move the worst-fitting point into the empty cluster
            far = int(np.argmax(d2))
            labels[far] = j
            d2[far] = 0.0
            counts = np.bincount(labels, minlength=k)
        for j in range(k):
            centroids[j] = X[labels == j].mean(axis=0)
        new_labels, d2 = assign_labels(X, centroids)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            return centroids, new_labels, it, history
        labels = new_labels
    return centroids, labels, max_iter, history


def kmeans(points, k, seed=0, n_init=10, max_iter=300):
    """Lloyd's algorithm from k-means++ seeds; best of ``n_init`` restarts.

    The winner minimises (inertia, restart index).
    """
    X = np.ascontiguousarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if k < 1 or n < k:
        raise ValueError(f"kmeans needs 1 <= k <= n, got k={k}, n={n}")
    seeds = np.random.SeedSequence(int(seed)).spawn(n_init)
    best = None
    for restart, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        centroids, labels, n_iter, history = _lloyd(X, _kmeanspp(X, k, rng), max_iter)
        inertia = history[-1]
        if best is None or inertia < best.inertia:
            best = KMeansResult(centroids, labels, inertia, restart, n_iter, history)
    return best


def soft_assign(embeddings, centroids):
    """Student-t (one degree of freedom) similarity, normalised per row.

    Works on arrays or tensors; returns the same kind.
    """
    as_tensor = isinstance(embeddings, gc.Tensor) or isinstance(centroids, gc.Tensor)
    z = embeddings if isinstance(embeddings, gc.Tensor) else gc.const(np.atleast_2d(embeddings))
    mu = centroids if isinstance(centroids, gc.Tensor) else gc.const(np.atleast_2d(centroids))
    if z.shape[-1] != mu.shape[-1]:
        raise gc.ShapeError("soft_assign", None, f"embeddings {z.shape} vs centroids {mu.shape}")
    n, h = z.shape
    k = mu.shape[0]
    d2 = gc.square(z.reshape(n, 1, h) - mu.reshape(1, k, h)).sum(axis=2)
    kernel = 1.0 / (d2 + 1.0)
    q = kernel / kernel.sum(axis=1, keepdims=True)
    return q if as_tensor else q.data


def target_dist(q):
    q = np.asarray(q, dtype=np.float64)
    f = q.sum(axis=0)
    if np.any(f <= 0):
        raise DeadClusterError(f"clusters {np.flatnonzero(f <= 0).tolist()} have zero soft frequency")
    w = q * q / f
    return w / w.sum(axis=1, keepdims=True)


def kl_loss(p, q):
    """Mean over rows of KL(p || q); ``p`` is a constant target.

    Returns a tensor when ``q`` is a tensor, else a float.
    """
    p = np.asarray(p.data if isinstance(p, gc.Tensor) else p, dtype=np.float64)
    qt = q if isinstance(q, gc.Tensor) else gc.const(q)
    if p.shape != qt.shape:
        raise gc.ShapeError("kl_loss", None, f"p {p.shape} vs q {qt.shape}")
    support = p > 0
    if np.any(support & (qt.data <= 0)):
        raise ValueError("q is zero where p has mass")
    n = p.shape[0]
    plogp = float(np.sum(p[support] * np.log(p[support])))
    safe_q = qt * gc.const(support.astype(np.float64)) + gc.const((~support).astype(np.float64))
    cross = (gc.const(p) * gc.log(safe_q)).sum()
    loss = (plogp - cross) * (1.0 / n)
    return loss if isinstance(q, gc.Tensor) else loss.item()


def assign_nearest(embedding, centroids):
    """Index of and Euclidean distance to the closest centroid.

    Accepts one vector or a matrix of row vectors.
    """
    X = np.asarray(embedding, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    C = np.atleast_2d(np.asarray(centroids, dtype=np.float64))
    labels, d2 = assign_labels(np.ascontiguousarray(X), np.ascontiguousarray(C))
    dist = np.sqrt(d2)
    if single:
        return int(labels[0]), float(dist[0])
    return labels, dist


def adjusted_rand_index(a, b):
    """Chance-corrected Rand index from the contingency table."""
    _, ai = np.unique(np.asarray(a), return_inverse=True)
    _, bi = np.unique(np.asarray(b), return_inverse=True)
    n = ai.size
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    comb = lambda x: x * (x - 1) / 2.0
    sum_ij = comb(table).sum()
    sum_a = comb(table.sum(1)).sum()
    sum_b = comb(table.sum(0)).sum()
    expected = sum_a * sum_b / comb(n) if n > 1 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def match_labels(labels, reference, k):
    """Relabel ``labels`` to maximise agreement with ``reference`` (Hungarian)."""
    from scipy.optimize import linear_sum_assignment

    table = np.zeros((k, k))
    np.add.at(table, (np.asarray(labels), np.asarray(reference)), 1)
    rows, cols = linear_sum_assignment(-table)
    mapping = np.empty(k, dtype=np.int64)
    mapping[rows] = cols
    return mapping[np.asarray(labels)], mapping
