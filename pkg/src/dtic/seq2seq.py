"""Single-layer GRU encoder and autoregressive GRU decoder.

Weights per GRU: ``Wx`` (input_dim, 3H), ``bx`` (3H,), ``U`` (H, 3H), with
column blocks ordered [update z | reset r | candidate]. One step is

    z  = sigmoid(x Wx_z + bx_z + h U_z)
    r  = sigmoid(x Wx_r + bx_r + h U_r)
    hc = tanh(x Wx_c + bx_c + (r * h) U_c)
    h' = (1 - z) * h + z * hc

Encoder and decoder are fused primitives: the whole sequence is one node and
its backward pass is hand-written BPTT.
"""
import numpy as np

from . import gradcore as gc
from .kernels import gru_back_out, gru_back_reset, gru_gates, gru_update

N_OUT = 6


def init_gru(rng, input_dim, hidden):
    return {
        "Wx": gc.init_uniform(rng, (input_dim, 3 * hidden), input_dim),
        "bx": gc.init_uniform(rng, (3 * hidden,), hidden),
        "U": gc.init_uniform(rng, (hidden, 3 * hidden), hidden),
    }


def _step_forward(gx, h, U):
    H = h.shape[1]
    z, r, rh = gru_gates(gx, h @ U[:, :2 * H], h)
    c, h_new = gru_update(gx, rh @ U[:, 2 * H:], h, z)
    return h_new, (h, z, r, rh, c)


def _step_backward(dh_new, cache, U):
    """Returns (d gx, d h) for one step; see :func:`_recurrent_grad` for d U."""
    h, z, r, rh, c = cache
    H = h.shape[1]
    dgx, dh = gru_back_out(dh_new, h, z, c)
    gru_back_reset(dgx[:, 2 * H:] @ U[:, 2 * H:].T, h, r, dgx, dh)
    dh += dgx[:, :2 * H] @ U[:, :2 * H].T
    return dgx, dh


def _recurrent_grad(caches, dgxs):
    """d U summed over steps, as two stacked matmuls."""
    H = caches[0][0].shape[1]
    hs = np.concatenate([c[0] for c in caches])
    rhs = np.concatenate([c[3] for c in caches])
    dg = np.concatenate(dgxs)
    return np.concatenate([hs.T @ dg[:, :2 * H], rhs.T @ dg[:, 2 * H:]], axis=1)


def gru_cell(x, h, Wx, bx, U):
    """One GRU step on batched rows ``x`` (B, in) and ``h`` (B, H)."""
    x, h, Wx, bx, U = (v if isinstance(v, gc.Tensor) else gc.const(v) for v in (x, h, Wx, bx, U))
    if x.shape[-1] != Wx.shape[0] or h.shape[-1] != U.shape[0] or Wx.shape[1] != 3 * U.shape[0]:
        raise gc.ShapeError("gru_cell", None, f"x {x.shape}, h {h.shape}, Wx {Wx.shape}, U {U.shape}")
    xd = np.atleast_2d(x.data)
    hd = np.atleast_2d(h.data)
    gx = xd @ Wx.data + bx.data
    h_new, cache = _step_forward(gx, hd, U.data)

    def vjp(g):
        g = np.atleast_2d(g)
        dgx, dh = _step_backward(g, cache, U.data)
        dU = _recurrent_grad([cache], [dgx])
        return ((dgx @ Wx.data.T).reshape(x.shape), dh.reshape(h.shape), xd.T @ dgx, dgx.sum(0), dU)

    return gc.custom_op("gru_cell", h_new.reshape(h.shape), (x, h, Wx, bx, U), vjp)


def encode(rep, Wx, bx, U):
    """Final hidden state after running the GRU over ``rep`` (B, T, in) from h0 = 0."""
    rep, Wx, bx, U = (v if isinstance(v, gc.Tensor) else gc.const(v) for v in (rep, Wx, bx, U))
    B, T, D = rep.shape
    if D != Wx.shape[0] or Wx.shape[1] != 3 * U.shape[0]:
        raise gc.ShapeError("gru_encode", None, f"input {rep.shape}, Wx {Wx.shape}, U {U.shape}")
    H = U.shape[0]
    Ud = U.data
    GX = (rep.data.reshape(B * T, D) @ Wx.data + bx.data).reshape(B, T, 3 * H)
    h = np.zeros((B, H))
    caches = []
    for t in range(T):
        h, cache = _step_forward(GX[:, t], h, Ud)
        caches.append(cache)

    def vjp(g):
        dgxs = [None] * T
        dh = g
        for t in reversed(range(T)):
            dgxs[t], dh = _step_backward(dh, caches[t], Ud)
        dU = _recurrent_grad(caches, dgxs)
        flat = np.stack(dgxs, axis=1).reshape(B * T, 3 * H)
        drep = (flat @ Wx.data.T).reshape(B, T, D)
        return drep, rep.data.reshape(B * T, D).T @ flat, flat.sum(0), dU

    return gc.custom_op("gru_encode", h, (rep, Wx, bx, U), vjp)


def decode(context, T, Wx, bx, U, Wo, bo):
    """Autoregressive decoder: s_t = GRU([o_{t-1}; h_T], s_{t-1}), o_t = s_t Wo + bo.

    Starts from o_0 = 0, s_0 = 0 and returns (B, T, 6).
    """
    context, Wx, bx, U, Wo, bo = (v if isinstance(v, gc.Tensor) else gc.const(v)
                                  for v in (context, Wx, bx, U, Wo, bo))
    B, Hc = context.shape
    n_out = Wo.shape[1]
    Hd = U.shape[0]
    if Wx.shape != (n_out + Hc, 3 * Hd) or Wo.shape[0] != Hd:
        raise gc.ShapeError("gru_decode", None,
                            f"context {context.shape}, Wx {Wx.shape}, U {U.shape}, Wo {Wo.shape}")
    Wxo, Wxh, Ud, Wod = Wx.data[:n_out], Wx.data[n_out:], U.data, Wo.data
    base = context.data @ Wxh + bx.data
    o_prev = np.zeros((B, n_out))
    s = np.zeros((B, Hd))
    outs = np.empty((B, T, n_out))
    states, inputs, caches = [], [], []
    for t in range(T):
        inputs.append(o_prev)
        s, cache = _step_forward(o_prev @ Wxo + base, s, Ud)
        caches.append(cache)
        states.append(s)
        o_prev = s @ Wod + bo.data
        outs[:, t] = o_prev

    def vjp(g):
        dos, dgxs = [None] * T, [None] * T
        ds_next = np.zeros((B, Hd))
        do_feedback = np.zeros((B, n_out))
        for t in reversed(range(T)):
            do = g[:, t] + do_feedback
            dos[t] = do
            dgxs[t], ds_next = _step_backward(do @ Wod.T + ds_next, caches[t], Ud)
            do_feedback = dgxs[t] @ Wxo.T
        dU = _recurrent_grad(caches, dgxs)
        do_all = np.concatenate(dos)
        dgx_all = np.concatenate(dgxs)
        dWo = np.concatenate(states).T @ do_all
        dbo = do_all.sum(0)
        dWxo = np.concatenate(inputs).T @ dgx_all
        dbase = sum(dgxs)
        dctx = dbase @ Wxh.T
        dWx = np.concatenate([dWxo, context.data.T @ dbase], axis=0)
        return dctx, dWx, dbase.sum(0), dU, dWo, dbo

    return gc.custom_op("gru_decode", outs, (context, Wx, bx, U, Wo, bo), vjp)
