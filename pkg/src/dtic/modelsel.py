"""Cluster-count diagnostics: silhouette, Davies-Bouldin, elbow, gap statistic.

:func:`k_report` gathers them per k together with cluster sizes. It does not
pick k; the caller does.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .clustering import kmeans
from .kernels import cluster_distance_sums, pairwise_distances


def _as_points(points):
    X = np.asarray(points, dtype=np.float64)
    return np.ascontiguousarray(X[:, None] if X.ndim == 1 else X)


def _encode(labels):
    uniq, inv = np.unique(np.asarray(labels), return_inverse=True)
    return inv.astype(np.int64), uniq.size


def silhouette_from_distances(D, labels):
    lab, k = _encode(labels)
    if k < 2:
        raise ValueError("silhouette needs at least two clusters")
    sizes = np.bincount(lab, minlength=k).astype(np.float64)
    sums = cluster_distance_sums(np.ascontiguousarray(D), lab, k)
    n = lab.size
    own = sizes[lab]
    a = np.where(own > 1, sums[np.arange(n), lab] / np.maximum(own - 1, 1), 0.0)
    other = sums / sizes
    other[np.arange(n), lab] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def silhouette(points, labels):
    """Mean silhouette; points in singleton clusters score 0."""
    X = _as_points(points)
    return silhouette_from_distances(pairwise_distances(X), labels)


def davies_bouldin(points, labels):
    X = _as_points(points)
    lab, k = _encode(labels)
    if k < 2:
        raise ValueError("Davies-Bouldin needs at least two clusters")
    cent = np.stack([X[lab == j].mean(axis=0) for j in range(k)])
    scatter = np.array([np.linalg.norm(X[lab == j] - cent[j], axis=1).mean() for j in range(k)])
    sep = np.linalg.norm(cent[:, None, :] - cent[None, :, :], axis=2)
    off = ~np.eye(k, dtype=bool)
    if np.any(sep[off] == 0):
        raise ValueError("Davies-Bouldin undefined: coincident centroids")
    ratio = np.where(off, (scatter[:, None] + scatter[None, :]) / np.where(off, sep, 1.0), -np.inf)
    return float(ratio.max(axis=1).mean())


def distortion_curve(points, ks, seed=0, n_init=10):
    """Best-of-restarts k-means inertia per k."""
    X = _as_points(points)
    if max(ks) > X.shape[0]:
        raise ValueError("k cannot exceed the number of points")
    return {int(k): kmeans(X, int(k), seed=seed, n_init=n_init).inertia for k in ks}


@dataclass
class GapResult:
    ks: list
    gap: dict
    se: dict
    log_w: dict
    recommended_k: int


def gap_rule(gap, se, ks):
    """Smallest k with gap(k) >= gap(k+1) - se(k+1); None when nothing qualifies."""
    for k in sorted(ks):
        if k + 1 in gap and gap[k] >= gap[k + 1] - se[k + 1]:
            return k
    return None


def gap_statistic(points, ks, B=10, seed=0, n_init=10, ref_n_init=None, kmeans_results=None):
    """Gap statistic with references uniform over the data's bounding box."""
    if B < 1:
        raise ValueError("gap statistic needs B >= 1 reference sets")
    X = _as_points(points)
    ks = sorted(int(k) for k in ks)
    ref_n_init = n_init if ref_n_init is None else ref_n_init
    kmeans_results = kmeans_results or {}
    lo, hi = X.min(axis=0), X.max(axis=0)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A9]))
    refs = [rng.uniform(lo, hi, size=X.shape) for _ in range(B)]
    gap, se, log_w = {}, {}, {}
    for k in ks:
        w = kmeans_results[k].inertia if k in kmeans_results else kmeans(X, k, seed, n_init).inertia
        log_w[k] = float(np.log(w))
        ref_log = np.array([np.log(kmeans(R, k, seed + 1 + b, ref_n_init).inertia) for b, R in enumerate(refs)])
        gap[k] = float(ref_log.mean() - log_w[k])
        se[k] = float(ref_log.std() * np.sqrt(1.0 + 1.0 / B))
    rec = gap_rule(gap, se, ks)
    return GapResult(ks, gap, se, log_w, ks[-1] if rec is None else rec)


@dataclass
class KRow:
    k: int
    silhouette: float
    dbi: float
    distortion: float
    gap: float
    gap_se: float
    sizes: list  # [(count, percent)]
    size_flag: bool
    gap_rule: bool


@dataclass
class KReport:
    n: int
    rows: list = field(default_factory=list)
    gap_recommended_k: int = None

    def row(self, k):
        for r in self.rows:
            if r.k == k:
                return r
        raise KeyError(k)

    def admits(self, k):
        """Gap rule holds at k and no cluster falls under the size floor."""
        r = self.row(k)
        return r.gap_rule and not r.size_flag


@dataclass
class KReportConfig:
    B: int = 10
    n_init: int = 10
    ref_n_init: int = 3
    min_cluster_frac: float = 0.01
    seed: int = 0


def k_report(embeddings, ks=range(2, 11), config=None):
    config = config or KReportConfig()
    X = np.ascontiguousarray(np.asarray(embeddings, dtype=np.float64))
    n = X.shape[0]
    ks = sorted(int(k) for k in ks)
    fits = {k: kmeans(X, k, seed=config.seed, n_init=config.n_init) for k in ks + [ks[-1] + 1] if k <= n}
    gap = gap_statistic(X, list(fits), B=config.B, seed=config.seed, n_init=config.n_init,
                        ref_n_init=config.ref_n_init, kmeans_results=fits)
    D = pairwise_distances(X)
    report = KReport(n)
    for k in ks:
        fit = fits[k]
        counts = np.bincount(fit.labels, minlength=k)
        sizes = [(int(c), 100.0 * c / n) for c in counts]
        has_next = k + 1 in gap.gap
        report.rows.append(KRow(
            k=k,
            silhouette=silhouette_from_distances(D, fit.labels),
            dbi=davies_bouldin(X, fit.labels),
            distortion=float(fit.inertia),
            gap=gap.gap[k],
            gap_se=gap.se[k],
            sizes=sizes,
            size_flag=bool(np.any(counts < config.min_cluster_frac * n)),
            gap_rule=bool(has_next and gap.gap[k] >= gap.gap[k + 1] - gap.se[k + 1]),
        ))
    report.gap_recommended_k = gap_rule(gap.gap, gap.se, ks)
    return report


REPORT_HEADER = ("k", "silhouette", "dbi", "distortion", "gap", "gap_se", "sizes_json")


def write_report_csv(report, stream):
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for r in report.rows:
        sizes = json.dumps([[c, round(p, 6)] for c, p in r.sizes])
        writer.writerow((r.k, repr(r.silhouette), repr(r.dbi), repr(r.distortion), repr(r.gap),
                         repr(r.gap_se), sizes))


def format_report(report):
    """Plain-text table laid out like a class-size summary."""
    head = f"{'k':>3}  {'Silhouette':>10}  {'Davies-Bouldin':>14}  {'Distortion':>12}  {'Gap':>8}  {'SE':>7}  flags"
    lines = [f"Cluster statistics (N = {report.n:,})", head]
    for r in report.rows:
        flags = []
        if r.gap_rule:
            flags.append("gap-rule")
        if r.size_flag:
            flags.append("small-cluster")
        lines.append(f"{r.k:>3}  {r.silhouette:>10.3f}  {r.dbi:>14.3f}  {r.distortion:>12.4g}  {r.gap:>8.4f}  "
                     f"{r.gap_se:>7.4f}  {','.join(flags) or '-'}")
        sizes = "  ".join(f"{c:,} ({p:.1f})" for c, p in r.sizes)
        lines.append(f"{'':>5}sizes: {sizes}")
    lines.append(f"smallest k meeting the gap rule: {report.gap_recommended_k}")
    return "\n".join(lines) + "\n"
