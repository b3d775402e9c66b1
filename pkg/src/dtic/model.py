"""The full network: interpolation -> GRU encoder -> decoder -> RBF
re-interpolation, plus the auxiliary heads and the cluster layer.

Parameters live in a flat ``{name: ndarray}`` dict so they can be handed to
:func:`dtic.gradcore.forward_backward` and serialised without ceremony.
"""
from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .auxiliary import bce_loss, discriminate, init_heads, predict_extrema, regression_loss
from .batch import PaddedCohort
from .clustering import kl_loss, soft_assign
from .interpnet import ALPHA_INIT, KAPPA_DEFAULT, N_VARS, ReferenceGrid, interp_layer
from .reinterp import THETA_INIT, reconstruct, recon_loss
from .seq2seq import decode, encode, init_gru
from .timeseries import fake_mask_padded

PARAM_ORDER = (
    "interp.log_alpha", "interp.rho",
    "enc.Wx", "enc.bx", "enc.U",
    "dec.Wx", "dec.bx", "dec.U", "dec.Wo", "dec.bo",
    "reinterp.log_theta",
    "aux.Wreg", "aux.breg", "aux.Wdis", "aux.bdis",
    "cluster.mu",
)


@dataclass(frozen=True)
class Dims:
    grid_size: int = 36
    hidden: int = 128
    kappa: float = KAPPA_DEFAULT

    @property
    def grid(self):
        return ReferenceGrid(self.grid_size)


def init_params(dims, rng, alpha_init=ALPHA_INIT, theta_init=THETA_INIT):
    """Fresh weights; GRU and head matrices uniform in +-1/sqrt(fan_in)."""
    H = dims.hidden
    params = {
        "interp.log_alpha": np.full(N_VARS, np.log(alpha_init)),
        "interp.rho": np.eye(N_VARS),
    }
    for k, v in init_gru(rng, 3 * N_VARS, H).items():
        params["enc." + k] = v
    for k, v in init_gru(rng, N_VARS + H, H).items():
        params["dec." + k] = v
    params["dec.Wo"] = gc.init_uniform(rng, (H, N_VARS), H)
    params["dec.bo"] = gc.init_uniform(rng, (N_VARS,), H)
    params["reinterp.log_theta"] = np.array([np.log(theta_init)])
    for k, v in init_heads(rng, H).items():
        params["aux." + k] = v
    return params


def context(P, batch, dims):
    """Encoder output h_T for every row of ``batch`` as a tensor (B, H)."""
    rep = interp_layer(batch, dims.grid, P["interp.log_alpha"], P["interp.rho"], dims.kappa)
    return encode(rep, P["enc.Wx"], P["enc.bx"], P["enc.U"])


def embed(params, cohort, dims, chunk=500):
    """Context vectors for a :class:`PaddedCohort` (no gradient tape)."""
    P = {k: gc.const(v) for k, v in params.items()}
    out = [context(P, cohort.take(np.arange(s, min(s + chunk, len(cohort)))), dims).data
           for s in range(0, len(cohort), chunk)]
    return np.concatenate(out) if out else np.zeros((0, dims.hidden))


def make_fake_batch(real, rng, fraction=0.5):
    """Paired corrupted copy: floor(fraction * I) values per series replaced by U[0, 1]."""
    mask = fake_mask_padded(real.cnt, real.width, rng, fraction)
    draws = rng.random(real.x.shape)
    x = np.where(mask, draws, real.x)
    return PaddedCohort([i + "#fake" for i in real.ids], real.t.copy(), x, real.cnt.copy(),
                        np.full_like(real.extrema, np.nan), np.ones(len(real), dtype=bool))


LOSS_TERMS = ("recon", "reg", "bce", "kl")


def losses(P, real, fake, dims, p_target=None, lambda_cluster=0.0):
    """Total loss tensor and per-term tensors.

    Reconstruction, extrema regression and clustering use the real rows only;
    the discriminator sees real and fake rows. The clustering term is added
    when ``p_target`` (rows aligned with ``real``) is given.
    """
    both = PaddedCohort.stack(real, fake) if fake is not None else real
    ctx = context(P, both, dims)
    B = len(real)
    ctx_real = ctx[:B]
    out = decode(ctx_real, dims.grid_size, P["dec.Wx"], P["dec.bx"], P["dec.U"], P["dec.Wo"], P["dec.bo"])
    est = reconstruct(out, dims.grid, real, P["reinterp.log_theta"])
    terms = {
        "recon": recon_loss(est, real),
        "reg": regression_loss(predict_extrema(ctx_real, P["aux.Wreg"], P["aux.breg"]), real.extrema),
        "bce": bce_loss(discriminate(ctx, P["aux.Wdis"], P["aux.bdis"]), ~both.is_fake),
    }
    total = terms["recon"] + terms["reg"] + terms["bce"]
    if p_target is not None:
        q = soft_assign(ctx_real, P["cluster.mu"])
        terms["kl"] = kl_loss(p_target, q)
        total = total + lambda_cluster * terms["kl"]
    return total, terms
