"""Interpolation of irregular series onto a regular reference grid.

Per variable, two Gaussian-kernel interpolants are evaluated at every grid
point: a smooth one (bandwidth ``alpha``) and a sharp one (``kappa * alpha``).
Their difference is the transient channel. The unnormalised kernel mass is the
observation intensity. A second layer mixes smooth values across variables,
weighted by intensity, through the matrix ``rho``.

Output rows are ``[chi_1..chi_6 | tau_1..tau_6 | log1p(lambda_1..lambda_6)]``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .batch import PaddedCohort
from .kernels import interp_forward
from .timeseries import VARIABLES, WINDOW_END

N_VARS = len(VARIABLES)
ALPHA_INIT = np.log(2.0) / 3600.0  # half weight at 60 min
KAPPA_DEFAULT = 10.0
MIX_EPS = 1e-8


@dataclass(frozen=True)
class ReferenceGrid:
    T: int = 36
    start: float = 0.0
    end: float = WINDOW_END

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("grid needs at least one point")
        if not self.end > self.start:
            raise ValueError("grid end must exceed start")

    @property
    def r(self):
        return self.start + np.arange(self.T) * ((self.end - self.start) / self.T)


@dataclass
class InterpParams:
    log_alpha: np.ndarray = field(default_factory=lambda: np.full(N_VARS, np.log(ALPHA_INIT)))
    rho: np.ndarray = field(default_factory=lambda: np.eye(N_VARS))
    kappa: float = KAPPA_DEFAULT

    def __post_init__(self):
        self.log_alpha = np.asarray(self.log_alpha, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")

    @property
    def alpha(self):
        return np.exp(self.log_alpha)


# -- single-series reference forms ------------------------------------------


def intensity(series, r_k, alpha):
    if len(series) == 0:
        return 0.0
    return float(np.exp(-alpha * (r_k - series.t) ** 2).sum())


def smooth_interp(series, r_k, alpha):
    d2 = (r_k - series.t) ** 2
    w = np.exp(-alpha * (d2 - d2.min()))
    return float((w * series.x).sum() / w.sum())


def transient(series, r_k, alpha, kappa):
    return smooth_interp(series, r_k, kappa * alpha) - smooth_interp(series, r_k, alpha)


# -- differentiable layers ---------------------------------------------------


def interp_channels(batch, grid, log_alpha, kappa):
    """Smooth, transient and intensity channels, stacked as ``(3, B, T, 6)``.

    ``log_alpha`` is a tensor of shape (6,); the only learnable input.
    """
    log_alpha = log_alpha if isinstance(log_alpha, gc.Tensor) else gc.const(log_alpha)
    alpha = np.exp(log_alpha.data)
    sig, dsig, sigs, dsigs, lam, dlam = interp_forward(batch.t, batch.x, batch.cnt, grid.r, alpha, float(kappa))
    value = np.stack([sig, sigs - sig, lam])
    d_smooth = alpha * dsig
    d_trans = alpha * (kappa * dsigs - dsig)
    d_lam = alpha * dlam

    def vjp(g):
        return ((g[0] * d_smooth + g[1] * d_trans + g[2] * d_lam).sum(axis=(0, 1)),)

    return gc.custom_op("interp_channels", value, (log_alpha,), vjp)


def cross_channel(sigma, lam, rho):
    """chi_d = sum_d' rho[d,d'] lam_d' sigma_d' / (sum_d' rho[d,d'] lam_d' + 1e-8)."""
    sigma, lam, rho = (v if isinstance(v, gc.Tensor) else gc.const(v) for v in (sigma, lam, rho))
    if sigma.shape != lam.shape or rho.shape != (sigma.shape[-1], sigma.shape[-1]):
        raise gc.ShapeError("cross_channel", None, f"sigma {sigma.shape}, lambda {lam.shape}, rho {rho.shape}")
    rho_T = gc.transpose(rho)
    num = (lam * sigma) @ rho_T
    den = lam @ rho_T + MIX_EPS
    return num / den


def interp_layer(batch, grid, log_alpha, rho, kappa):
    """Full two-layer interpolation; returns a tensor ``(B, T, 18)``."""
    ch = interp_channels(batch, grid, log_alpha, kappa)
    sigma, tau, lam = ch[0], ch[1], ch[2]
    chi = cross_channel(sigma, lam, rho)
    return gc.concat([chi, tau, gc.log1p(lam)], axis=-1)


def interpolate_encounter(encounter, grid, params):
    """``T x 18`` representation of one preprocessed encounter."""
    batch = PaddedCohort.from_encounters([encounter])
    out = interp_layer(batch, grid, gc.const(params.log_alpha), gc.const(params.rho), params.kappa)
    return out.data[0]
