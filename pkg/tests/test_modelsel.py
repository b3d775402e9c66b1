import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from dtic.modelsel import (KReportConfig, davies_bouldin, distortion_curve, format_report, gap_statistic, k_report,
                           silhouette, write_report_csv)

FOUR = np.array([0.0, 1.0, 10.0, 11.0])
AB = ["A", "A", "B", "B"]


def blobs(seed, k=4, per=50, spread=1.0, sep=100.0):
    r = np.random.default_rng(seed)
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [2, 0], [2, 1]], dtype=float)
    centres = sep * corners[:k]
    X = np.concatenate([c + spread * r.normal(size=(per, 2)) for c in centres])
    return X, np.repeat(np.arange(k), per)


def test_four_point_examples():
    assert silhouette(FOUR, AB) == pytest.approx(0.899749, abs=1e-6)
    assert davies_bouldin(FOUR, AB) == pytest.approx(0.1, abs=1e-15)
    assert distortion_curve(FOUR, [2])[2] == 1.0


def test_oracle_equivalence_100_instances():
    r = np.random.default_rng(99)
    for _ in range(100):
        n = int(r.integers(4, 51))
        X = r.normal(size=(n, int(r.integers(1, 4))))
        lab = r.integers(0, int(r.integers(2, 5)), n)
        lab[:2] = [0, 1]
        assert abs(silhouette(X, lab) - oracles.silhouette(X, lab)) < 1e-9
        assert abs(davies_bouldin(X, lab) - oracles.davies_bouldin(X, lab)) < 1e-9


def test_singleton_scores_zero():
    X = np.array([0.0, 1.0, 2.0, 50.0])
    lab = [0, 0, 0, 1]
    # the lone point at 50 scores exactly 0, so the mean is the other three's sum over 4
    three = [(min(abs(x - 50), 99) - np.mean([abs(x - y) for y in X[:3] if y != x])) / abs(x - 50) for x in X[:3]]
    assert silhouette(X, lab) == pytest.approx(sum(three) / 4, abs=1e-12)
    assert davies_bouldin([[0.0], [3.0]], [0, 1]) == 0.0


def test_single_cluster_errors():
    with pytest.raises(ValueError):
        silhouette(FOUR, [0] * 4)
    with pytest.raises(ValueError):
        davies_bouldin(FOUR, [0] * 4)
    with pytest.raises(ValueError):
        davies_bouldin([[0.0], [1.0], [0.0], [1.0]], [0, 0, 1, 1])


def test_far_blobs_silhouette_near_one():
    # within-blob pairwise distances average about 1.8 sd, so 200 sd apart is ~100x that spread
    X, lab = blobs(1, sep=200.0)
    assert silhouette(X, lab) > 0.99


def test_dbi_decreases_with_separation():
    for seed in range(5):
        near, lab = blobs(seed, sep=5.0)
        far, _ = blobs(seed, sep=20.0)
        assert davies_bouldin(far, lab) < davies_bouldin(near, lab)


@given(st.integers(0, 1000))
def test_statistics_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    X, lab = r.normal(size=(20, 2)), r.integers(0, 3, 20)
    lab[:3] = [0, 1, 2]
    perm = r.permutation(20)
    renamed = np.array([7, 3, 5])[lab]
    assert silhouette(X[perm], lab[perm]) == pytest.approx(silhouette(X, lab), abs=1e-12)
    assert davies_bouldin(X[perm], renamed[perm]) == pytest.approx(davies_bouldin(X, lab), abs=1e-12)


def test_distortion_monotone_and_zero_at_n():
    X, _ = blobs(3, per=10)
    d = distortion_curve(X, range(1, 11))
    assert all(d[k + 1] <= d[k] + 1e-9 for k in range(1, 10))
    assert distortion_curve(X[:6], [6])[6] == 0.0


def test_gap_recovers_four_blobs():
    X, _ = blobs(4, sep=20.0)
    assert gap_statistic(X, range(1, 9), B=10, seed=0).recommended_k == 4


def test_gap_uniform_gives_one():
    X = np.random.default_rng(5).uniform(size=(200, 2))
    assert gap_statistic(X, range(1, 6), B=10, seed=0).recommended_k == 1


def test_gap_deterministic_and_validated():
    X, _ = blobs(6, per=15)
    a, b = gap_statistic(X, [2, 3, 4], seed=3), gap_statistic(X, [2, 3, 4], seed=3)
    assert a.gap == b.gap and a.se == b.se
    with pytest.raises(ValueError):
        gap_statistic(X, [2], B=0)


def test_k_report_rows_and_admission():
    X, _ = blobs(8, per=40, sep=20.0)
    rep = k_report(X, range(2, 11), KReportConfig())
    assert [r.k for r in rep.rows] == list(range(2, 11))
    for r in rep.rows:
        assert sum(c for c, _ in r.sizes) == rep.n
        assert abs(sum(p for _, p in r.sizes) - 100) < 0.1
    assert rep.admits(4) and rep.gap_recommended_k == 4
    assert rep.row(4).silhouette == max(r.silhouette for r in rep.rows)


def test_k_report_outputs():
    X, _ = blobs(2, k=3, per=10, sep=20.0)
    rep = k_report(X, [2, 3], KReportConfig(B=3, n_init=2))
    buf = io.StringIO()
    write_report_csv(rep, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "k,silhouette,dbi,distortion,gap,gap_se,sizes_json" and len(lines) == 3
    assert "Cluster statistics (N = 30)" in format_report(rep)
