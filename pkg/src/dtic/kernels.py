"""Hot numeric kernels.

Each kernel has a loop implementation compiled with numba (``*_loops``) and a
vectorised numpy implementation (``*_numpy``). The public name is bound to one
of the two at import time according to :data:`dtic._accel.USE_NUMBA`.

Padded layout used throughout: observation times ``t`` and values ``x`` have
shape ``(B, V, I)`` with the first ``cnt[b, v]`` entries of each row valid.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# Gaussian-kernel interpolation onto the reference grid
# ---------------------------------------------------------------------------


@njit
def interp_forward_loops(t, x, cnt, grid, alpha, kappa):
    B, V, _ = t.shape
    T = grid.shape[0]
    sig = np.zeros((B, T, V))
    dsig = np.zeros((B, T, V))
    sigs = np.zeros((B, T, V))
    dsigs = np.zeros((B, T, V))
    lam = np.zeros((B, T, V))
    dlam = np.zeros((B, T, V))
    for b in range(B):
        for v in range(V):
            n = cnt[b, v]
            if n == 0:
                continue
            a = alpha[v]
            a_sharp = kappa * a
            for k in range(T):
                r = grid[k]
                m = np.inf
                for i in range(n):
                    dd = (r - t[b, v, i]) ** 2
                    if dd < m:
                        m = dd
                sw = 0.0
                swx = 0.0
                swd = 0.0
                swdx = 0.0
                ssw = 0.0
                sswx = 0.0
                sswd = 0.0
                sswdx = 0.0
                for i in range(n):
                    dd = (r - t[b, v, i]) ** 2
                    xi = x[b, v, i]
                    rel = dd - m
                    w = np.exp(-a * rel)
                    sw += w
                    swx += w * xi
                    swd += w * dd
                    swdx += w * dd * xi
                    ws = np.exp(-a_sharp * rel)
                    ssw += ws
                    sswx += ws * xi
                    sswd += ws * dd
                    sswdx += ws * dd * xi
                s = swx / sw
                sig[b, k, v] = s
                dsig[b, k, v] = -(swdx / sw - s * swd / sw)
                ss = sswx / ssw
                sigs[b, k, v] = ss
                dsigs[b, k, v] = -(sswdx / ssw - ss * sswd / ssw)
                scale = np.exp(-a * m)
                lam[b, k, v] = scale * sw
                dlam[b, k, v] = -scale * swd
    return sig, dsig, sigs, dsigs, lam, dlam


def _valid_mask(cnt, width):
    return np.arange(width)[None, None, :] < cnt[:, :, None]


def interp_forward_numpy(t, x, cnt, grid, alpha, kappa):
    valid = _valid_mask(cnt, t.shape[2])[:, :, None, :]  # B,V,1,I
    dd = (grid[None, None, :, None] - t[:, :, None, :]) ** 2  # B,V,T,I
    m = np.where(valid, dd, np.inf).min(axis=-1, keepdims=True)
    empty = ~np.isfinite(m)
    m = np.where(empty, 0.0, m)
    rel = dd - m
    xb = x[:, :, None, :]
    out = []
    sw_a = swd_a = None
    for bw in (alpha, kappa * alpha):
        w = np.where(valid, np.exp(-bw[None, :, None, None] * rel), 0.0)
        sw = w.sum(-1)
        swx = (w * xb).sum(-1)
        swd = (w * dd).sum(-1)
        swdx = (w * dd * xb).sum(-1)
        safe = np.where(sw > 0, sw, 1.0)
        s = np.where(sw > 0, swx / safe, 0.0)
        ds = np.where(sw > 0, -(swdx / safe - s * swd / safe), 0.0)
        out += [s, ds]
        if sw_a is None:
            sw_a, swd_a = sw, swd
    scale = np.exp(-alpha[None, :, None] * m[..., 0])
    out += [scale * sw_a, -scale * swd_a]
    return tuple(np.ascontiguousarray(o.transpose(0, 2, 1)) for o in out)


# ---------------------------------------------------------------------------
# RBF re-interpolation from the grid back to raw observation times
# ---------------------------------------------------------------------------


@njit
def rbf_forward_loops(out, grid, t, cnt, theta):
    B, T, V = out.shape
    width = t.shape[2]
    est = np.zeros((B, V, width))
    dest = np.zeros((B, V, width))
    for b in range(B):
        for v in range(V):
            for j in range(cnt[b, v]):
                tj = t[b, v, j]
                m = np.inf
                for i in range(T):
                    dd = (grid[i] - tj) ** 2
                    if dd < m:
                        m = dd
                sw = 0.0
                swo = 0.0
                swd = 0.0
                swdo = 0.0
                for i in range(T):
                    dd = (grid[i] - tj) ** 2
                    w = np.exp(-theta * (dd - m))
                    o = out[b, i, v]
                    sw += w
                    swo += w * o
                    swd += w * dd
                    swdo += w * dd * o
                e = swo / sw
                est[b, v, j] = e
                dest[b, v, j] = -(swdo / sw - e * swd / sw)
    return est, dest


@njit
def rbf_backward_loops(g, grid, t, cnt, theta):
    B, V, _ = t.shape
    T = grid.shape[0]
    dout = np.zeros((B, T, V))
    w = np.empty(T)
    for b in range(B):
        for v in range(V):
            for j in range(cnt[b, v]):
                gj = g[b, v, j]
                if gj == 0.0:
                    continue
                tj = t[b, v, j]
                m = np.inf
                for i in range(T):
                    dd = (grid[i] - tj) ** 2
                    if dd < m:
                        m = dd
                sw = 0.0
                for i in range(T):
                    w[i] = np.exp(-theta * ((grid[i] - tj) ** 2 - m))
                    sw += w[i]
                for i in range(T):
                    dout[b, i, v] += gj * w[i] / sw
    return dout


def _rbf_weights_numpy(grid, t, cnt, theta):
    valid = _valid_mask(cnt, t.shape[2])  # B,V,I
    dd = (grid[None, None, None, :] - t[:, :, :, None]) ** 2  # B,V,I,T
    rel = dd - dd.min(axis=-1, keepdims=True)
    w = np.exp(-theta * rel)
    wn = w / w.sum(-1, keepdims=True)
    return np.where(valid[..., None], wn, 0.0), dd, valid


def rbf_forward_numpy(out, grid, t, cnt, theta):
    wn, dd, valid = _rbf_weights_numpy(grid, t, cnt, theta)
    o = out.transpose(0, 2, 1)[:, :, None, :]  # B,V,1,T
    est = (wn * o).sum(-1)
    ed = (wn * dd).sum(-1)
    edo = (wn * dd * o).sum(-1)
    dest = np.where(valid, -(edo - est * ed), 0.0)
    return est, dest


def rbf_backward_numpy(g, grid, t, cnt, theta):
    wn, _, _ = _rbf_weights_numpy(grid, t, cnt, theta)
    dout = np.einsum("bvi,bvit->btv", g, wn)
    return np.ascontiguousarray(dout)


# ---------------------------------------------------------------------------
# GRU gate arithmetic (the matmuls stay in BLAS)
# ---------------------------------------------------------------------------


@njit
def _sigmoid1(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit
def _tanh1(x):
    e = np.exp(-2.0 * abs(x))
    t = (1.0 - e) / (1.0 + e)
    return t if x >= 0.0 else -t


@njit
def gru_gates_loops(gx, a, h):
    B, H = h.shape
    z = np.empty((B, H))
    r = np.empty((B, H))
    rh = np.empty((B, H))
    for b in range(B):
        for j in range(H):
            zj = _sigmoid1(gx[b, j] + a[b, j])
            rj = _sigmoid1(gx[b, H + j] + a[b, H + j])
            z[b, j] = zj
            r[b, j] = rj
            rh[b, j] = rj * h[b, j]
    return z, r, rh


def gru_gates_numpy(gx, a, h):
    H = h.shape[1]
    pre = gx[:, :2 * H] + a
    e = np.exp(-np.abs(pre))
    zr = np.where(pre >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    z, r = zr[:, :H], zr[:, H:]
    return z, r, r * h


@njit
def gru_update_loops(gx, pc, h, z):
    B, H = h.shape
    c = np.empty((B, H))
    h_new = np.empty((B, H))
    for b in range(B):
        for j in range(H):
            cj = _tanh1(gx[b, 2 * H + j] + pc[b, j])
            c[b, j] = cj
            h_new[b, j] = h[b, j] + z[b, j] * (cj - h[b, j])
    return c, h_new


def gru_update_numpy(gx, pc, h, z):
    H = h.shape[1]
    c = np.tanh(gx[:, 2 * H:] + pc)
    return c, h + z * (c - h)


@njit
def gru_back_out_loops(dh_new, h, z, c):
    """d(pre-activation) of z and candidate, plus the direct path to h."""
    B, H = h.shape
    dgx = np.empty((B, 3 * H))
    dh = np.empty((B, H))
    for b in range(B):
        for j in range(H):
            g = dh_new[b, j]
            zj = z[b, j]
            cj = c[b, j]
            dgx[b, 2 * H + j] = g * zj * (1.0 - cj * cj)
            dgx[b, j] = g * (cj - h[b, j]) * zj * (1.0 - zj)
            dh[b, j] = g * (1.0 - zj)
    return dgx, dh


def gru_back_out_numpy(dh_new, h, z, c):
    H = h.shape[1]
    dgx = np.empty((h.shape[0], 3 * H))
    dgx[:, 2 * H:] = dh_new * z * (1.0 - c * c)
    dgx[:, :H] = dh_new * (c - h) * z * (1.0 - z)
    return dgx, dh_new * (1.0 - z)


@njit
def gru_back_reset_loops(drh, h, r, dgx, dh):
    """Fills the reset-gate block of ``dgx`` and adds the r*h path into ``dh``."""
    B, H = h.shape
    for b in range(B):
        for j in range(H):
            rj = r[b, j]
            dgx[b, H + j] = drh[b, j] * h[b, j] * rj * (1.0 - rj)
            dh[b, j] += drh[b, j] * rj


def gru_back_reset_numpy(drh, h, r, dgx, dh):
    H = h.shape[1]
    dgx[:, H:2 * H] = drh * h * r * (1.0 - r)
    dh += drh * r


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


@njit
def assign_labels_loops(X, C):
    n, h = X.shape
    k = C.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    best = np.empty(n)
    for i in range(n):
        bd = np.inf
        bj = 0
        for j in range(k):
            s = 0.0
            for c in range(h):
                diff = X[i, c] - C[j, c]
                s += diff * diff
            if s < bd:
                bd = s
                bj = j
        labels[i] = bj
        best[i] = bd
    return labels, best


def assign_labels_numpy(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)
    labels = d2.argmin(axis=1)
    return labels.astype(np.int64), d2[np.arange(X.shape[0]), labels]


@njit
def pairwise_distances_loops(X):
    n, h = X.shape
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            s = 0.0
            for c in range(h):
                diff = X[i, c] - X[j, c]
                s += diff * diff
            d = np.sqrt(s)
            D[i, j] = d
            D[j, i] = d
    return D


def pairwise_distances_numpy(X, chunk=32):
    n = X.shape[0]
    D = np.empty((n, n))
    for start in range(0, n, chunk):
        block = X[start:start + chunk]
        D[start:start + chunk] = np.sqrt(((block[:, None, :] - X[None, :, :]) ** 2).sum(-1))
    return D


@njit
def cluster_distance_sums_loops(D, labels, k):
    n = D.shape[0]
    S = np.zeros((n, k))
    for i in range(n):
        for j in range(n):
            S[i, labels[j]] += D[i, j]
    return S


def cluster_distance_sums_numpy(D, labels, k):
    onehot = np.zeros((D.shape[0], k))
    onehot[np.arange(D.shape[0]), labels] = 1.0
    return D @ onehot


if USE_NUMBA:
    interp_forward = interp_forward_loops
    rbf_forward = rbf_forward_loops
    rbf_backward = rbf_backward_loops
    assign_labels = assign_labels_loops
    pairwise_distances = pairwise_distances_loops
    cluster_distance_sums = cluster_distance_sums_loops
    gru_gates = gru_gates_loops
    gru_update = gru_update_loops
    gru_back_out = gru_back_out_loops
    gru_back_reset = gru_back_reset_loops
else:
    interp_forward = interp_forward_numpy
    rbf_forward = rbf_forward_numpy
    rbf_backward = rbf_backward_numpy
    assign_labels = assign_labels_numpy
    pairwise_distances = pairwise_distances_numpy
    cluster_distance_sums = cluster_distance_sums_numpy
    gru_gates = gru_gates_numpy
    gru_update = gru_update_numpy
    gru_back_out = gru_back_out_numpy
    gru_back_reset = gru_back_reset_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
