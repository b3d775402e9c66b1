"""RBF re-interpolation of decoder output back to raw observation times."""
import numpy as np

from . import gradcore as gc
from .kernels import rbf_backward, rbf_forward

THETA_INIT = 1.0 / 900.0  # roughly a 30-minute kernel width


def rbf_weight(r_i, t_j, theta):
    return float(np.exp(-theta * (r_i - t_j) ** 2))


def reconstruct(decoder_out, grid, batch, log_theta):
    """Estimates at every padded observation slot, shape (B, 6, I).

    estimate(v, t_j) = sum_i w(r_i, t_j) out[i, v] / sum_i w(r_i, t_j), with
    ``theta = exp(log_theta)``. Padding slots are zero.
    """
    decoder_out, log_theta = (v if isinstance(v, gc.Tensor) else gc.const(v) for v in (decoder_out, log_theta))
    B, T, V = decoder_out.shape
    if T != grid.T or batch.t.shape[:2] != (B, V):
        raise gc.ShapeError("reconstruct", None, f"decoder {decoder_out.shape}, grid T={grid.T}, obs {batch.t.shape}")
    theta = float(np.exp(log_theta.data.reshape(-1)[0]))
    r = grid.r
    est, dest = rbf_forward(np.ascontiguousarray(decoder_out.data), r, batch.t, batch.cnt, theta)

    def vjp(g):
        g = np.ascontiguousarray(g)
        d_out = rbf_backward(g, r, batch.t, batch.cnt, theta)
        d_log_theta = np.array([theta * float((g * dest).sum())]).reshape(log_theta.shape)
        return d_out, d_log_theta

    return gc.custom_op("rbf_reconstruct", est, (decoder_out, log_theta), vjp)


def recon_loss(estimates, batch):
    """Mean squared error pooled over every observed point of the real rows.

    Fake rows contribute nothing, to the sum or to the count.
    """
    mask = batch.valid_mask() & ~batch.is_fake[:, None, None]
    n = int(mask.sum())
    if n == 0:
        return gc.const(0.0)
    diff = estimates - gc.const(np.where(mask, batch.x, 0.0))
    return (gc.square(diff) * gc.const(mask.astype(np.float64))).sum() * (1.0 / n)
