"""The numba loop kernels and the numpy kernels must agree."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dtic import kernels as K
from dtic.interpnet import ALPHA_INIT, ReferenceGrid

ATOL = 1e-11


def padded(r, B=3, V=6, width=5):
    cnt = r.integers(0, width + 1, size=(B, V))
    cnt[0, 0] = width
    t = np.sort(r.uniform(0, 360, size=(B, V, width)), axis=-1)
    x = r.random((B, V, width))
    pad = np.arange(width)[None, None, :] >= cnt[:, :, None]
    t[pad] = 0.0
    x[pad] = 0.0
    return t, x, cnt


def both(name, *args):
    fresh = lambda: [v.copy() if isinstance(v, np.ndarray) else v for v in args]
    a = getattr(K, f"{name}_loops")(*fresh())
    b = getattr(K, f"{name}_numpy")(*fresh())
    return (a, b) if isinstance(a, tuple) else ((a,), (b,))


def close(a, b, atol=ATOL):
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, atol=atol, rtol=1e-10)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_interp_forward(seed):
    r = np.random.default_rng(seed)
    t, x, cnt = padded(r)
    alpha = ALPHA_INIT * np.exp(r.normal(scale=0.5, size=6))
    close(*both("interp_forward", t, x, cnt, ReferenceGrid(12).r, alpha, 10.0))


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_rbf_forward_and_backward(seed):
    r = np.random.default_rng(seed)
    t, x, cnt = padded(r)
    grid = ReferenceGrid(9).r
    out = r.normal(size=(3, 9, 6))
    theta = float(np.exp(r.normal(np.log(1 / 900), 0.5)))
    close(*both("rbf_forward", out, grid, t, cnt, theta))
    g = r.normal(size=t.shape) * (np.arange(t.shape[2]) < cnt[..., None])
    close(*both("rbf_backward", g, grid, t, cnt, theta))


@given(st.integers(0, 10_000))
def test_gru_kernels(seed):
    r = np.random.default_rng(seed)
    B, H = 4, 5
    gx = r.normal(scale=3, size=(B, 3 * H))
    h = r.normal(size=(B, H))
    a = r.normal(size=(B, 2 * H))
    gx[0, 0] = 800.0  # saturating gates stay finite
    gx[1, 0] = -800.0
    z, rr, rh = both("gru_gates", gx, a, h)[0]
    close(*both("gru_gates", gx, a, h), atol=1e-15)
    pc = r.normal(size=(B, H))
    close(*both("gru_update", gx, pc, h, z), atol=1e-15)
    c, _ = K.gru_update_numpy(gx, pc, h, z)
    dh_new = r.normal(size=(B, H))
    (ga, da), (gb, db) = both("gru_back_out", dh_new, h, z, c)
    zc = np.r_[0:H, 2 * H:3 * H]  # the reset block is filled later by gru_back_reset
    close((ga[:, zc], da), (gb[:, zc], db), atol=1e-15)

    dgx, dh = K.gru_back_out_numpy(dh_new, h, z, c)
    drh = r.normal(size=(B, H))
    pair = []
    for impl in (K.gru_back_reset_loops, K.gru_back_reset_numpy):
        g, d = dgx.copy(), dh.copy()
        impl(drh, h, rr, g, d)
        pair.append((g, d))
    close(*pair, atol=1e-15)


def test_gate_saturation_is_exact():
    gx = np.array([[800.0, -800.0, 0.0, 0.0, 0.0, 0.0]])
    for impl in (K.gru_gates_loops, K.gru_gates_numpy):
        z, _, _ = impl(gx, np.zeros((1, 4)), np.ones((1, 2)))
        assert z[0, 0] == 1.0 and z[0, 1] == 0.0


@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 6))
def test_distance_kernels(seed, n, k):
    r = np.random.default_rng(seed)
    X, C = r.normal(size=(n, 3)), r.normal(size=(k, 3))
    (la, da), (lb, db) = both("assign_labels", X, C)
    assert np.array_equal(la, lb)
    np.testing.assert_allclose(da, db, atol=1e-12)
    close(*both("pairwise_distances", X), atol=1e-12)
    D = K.pairwise_distances_numpy(X)
    labels = r.integers(0, k, n)
    close(*both("cluster_distance_sums", D, labels, k), atol=1e-12)


def test_assign_labels_ties_go_low():
    X = np.array([[0.0, 0.0]])
    C = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    for impl in (K.assign_labels_loops, K.assign_labels_numpy):
        assert impl(X, C)[0][0] == 0


@pytest.mark.parametrize("name", ["interp_forward", "rbf_forward", "assign_labels", "gru_gates"])
def test_public_binding(name):
    assert getattr(K, name) in (getattr(K, f"{name}_loops"), getattr(K, f"{name}_numpy"))
    assert K.BACKEND in ("numba", "numpy")
