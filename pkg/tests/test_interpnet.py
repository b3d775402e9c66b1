import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import make_encounter, random_scaled_encounter
from dtic import gradcore as gc
from dtic.batch import PaddedCohort
from dtic.interpnet import (ALPHA_INIT, InterpParams, ReferenceGrid, cross_channel, intensity, interp_channels,
                            interp_layer, interpolate_encounter, smooth_interp, transient)
from dtic.timeseries import VARIABLES, IrregularSeries


def S(points, var="HR"):
    return IrregularSeries(var, [p[0] for p in points], [p[1] for p in points])


def test_grid_defaults():
    g = ReferenceGrid()
    assert g.T == 36 and g.r[0] == 0.0 and g.r[1] == 10.0 and g.r[-1] == 350.0
    assert np.all(np.diff(g.r) == 10.0)
    assert ALPHA_INIT == pytest.approx(1.9254e-4, rel=1e-4)


def test_intensity_examples():
    assert intensity(S([(5.0, 1.0)]), 5.0, 0.3) == 1.0
    assert intensity(S([]), 5.0, 0.3) == 0.0
    assert intensity(S([(4.0, 0.0), (6.0, 0.0)]), 5.0, 1.0) == pytest.approx(2 * math.exp(-1), abs=1e-12)
    assert 2 * math.exp(-1) == pytest.approx(0.735759, abs=1e-6)


def test_smooth_examples():
    assert smooth_interp(S([(3.0, 7.0)]), 100.0, 0.01) == 7.0
    assert smooth_interp(S([(4.0, 0.0), (6.0, 10.0)]), 5.0, 0.7) == pytest.approx(5.0, abs=1e-12)
    # (2 + 4e^-4) / (1 + e^-4) evaluates to 2.0359724...
    expected = (2 + 4 * math.exp(-4)) / (1 + math.exp(-4))
    assert smooth_interp(S([(0.0, 2.0), (2.0, 4.0)]), 0.0, 1.0) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(2.0359724, abs=1e-7)


def test_transient_examples():
    const = S([(t, 3.0) for t in range(0, 360, 20)])
    assert all(abs(transient(const, r, ALPHA_INIT, 10.0)) < 1e-12 for r in ReferenceGrid().r)
    assert transient(S([(50.0, 9.0)]), 200.0, ALPHA_INIT, 10.0) == 0.0


def test_transient_small_on_dense_ramp(rng):
    t = np.sort(rng.uniform(0, 360, 200))
    ramp = S(list(zip(t, t / 360.0)))
    width = 1.0 / math.sqrt(2 * ALPHA_INIT)  # kernel sd, about 51 min
    interior = [r for r in ReferenceGrid().r if 2 * width <= r <= 360 - 2 * width]
    assert max(abs(transient(ramp, r, ALPHA_INIT, 10.0)) for r in interior) < 0.05


def test_smooth_tracks_dense_sine(rng):
    t = np.sort(rng.uniform(0, 360, 300))
    # slow trend (720-minute period); the first and last hour are one-sided
    f = lambda u: 0.5 + 0.4 * np.sin(2 * np.pi * u / 720.0)
    enc = make_encounter("s", {v: list(zip(t, f(t))) for v in VARIABLES})
    rep = interpolate_encounter(enc, ReferenceGrid(), InterpParams())
    chi_hr = rep[:, VARIABLES.index("HR")]
    inner = slice(6, -6)
    assert np.sqrt(np.mean((chi_hr - f(ReferenceGrid().r))[inner] ** 2)) < 0.05


def test_batch_kernel_matches_scalar_oracle(small_batch):
    grid = ReferenceGrid(12)
    la = np.log(np.linspace(1e-4, 1e-3, 6))
    ch = interp_channels(small_batch, grid, la, 10.0).data
    for b in range(len(small_batch)):
        for v in range(6):
            n = small_batch.cnt[b, v]
            ts_, xs = small_batch.t[b, v, :n], small_batch.x[b, v, :n]
            a = math.exp(la[v])
            for k, r in enumerate(grid.r):
                s = oracles.smooth(ts_, xs, r, a)
                assert ch[0, b, k, v] == pytest.approx(s, abs=1e-12)
                assert ch[1, b, k, v] == pytest.approx(oracles.smooth(ts_, xs, r, 10 * a) - s, abs=1e-12)
                assert ch[2, b, k, v] == pytest.approx(sum(math.exp(-a * (r - u) ** 2) for u in ts_), abs=1e-12)


def test_cross_channel_identity_and_uniform(rng):
    sigma = rng.random((5, 6))
    lam = 1.0 + rng.random((5, 6))
    chi = cross_channel(sigma, lam, np.eye(6)).data
    assert np.max(np.abs(chi - sigma)) < 1e-6
    eq_lam = np.ones((5, 6)) * 2.0
    chi = cross_channel(sigma, eq_lam, np.full((6, 6), 0.3)).data
    np.testing.assert_allclose(chi, np.repeat(sigma.mean(1, keepdims=True), 6, axis=1), atol=1e-8)


def test_representation_shape_and_constant():
    enc = make_encounter("c", {v: [(0.0, 0.4), (100.0, 0.4), (290.0, 0.4)] for v in VARIABLES})
    rep = interpolate_encounter(enc, ReferenceGrid(), InterpParams())
    assert rep.shape == (36, 18)
    assert np.max(np.abs(rep[:, :6] - 0.4)) < 1e-6
    assert np.max(np.abs(rep[:, 6:12])) < 1e-12
    assert np.all(rep[:, 12:] >= 0)


@given(st.floats(-200, 200), st.integers(0, 500))
def test_translation_consistency(delta, seed):
    r = np.random.default_rng(seed)
    enc = random_scaled_encounter(r, seventh=False)
    g0 = ReferenceGrid(8)
    shifted = make_encounter("s", {s.variable: [(t + delta, x) for t, x in s.points] for s in enc.series})
    a = interpolate_encounter(enc, g0, InterpParams())
    b_batch = PaddedCohort.from_encounters([shifted])
    g1 = ReferenceGrid(8, delta, 360.0 + delta)
    b = interp_layer(b_batch, g1, gc.const(InterpParams().log_alpha), gc.const(np.eye(6)), 10.0).data[0]
    np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)


@given(st.integers(0, 500), st.floats(0, 359))
def test_intensity_monotone_in_points(seed, t_new):
    r = np.random.default_rng(seed)
    ts_ = np.sort(r.uniform(0, 360, int(r.integers(0, 6))))
    base = S([(t, 0.0) for t in ts_])
    more = S(sorted([(t, 0.0) for t in ts_] + [(t_new, 0.0)]))
    for rk in ReferenceGrid(12).r:
        assert intensity(more, rk, ALPHA_INIT) >= intensity(base, rk, ALPHA_INIT)


@pytest.mark.parametrize("seed", range(10))
def test_interp_layer_grad_check(seed):
    r = np.random.default_rng(seed)
    batch = PaddedCohort.from_encounters([random_scaled_encounter(r, f"g{i}", 4) for i in range(2)])
    grid = ReferenceGrid(5)
    weights = r.normal(size=(2, 5, 18))

    def fn(P):
        return (interp_layer(batch, grid, P["a"], P["rho"], 10.0) * gc.const(weights)).sum()

    point = {"a": np.log(ALPHA_INIT) + r.normal(scale=0.5, size=6), "rho": np.eye(6) + 0.2 * r.random((6, 6))}
    assert gc.grad_check(fn, point) < 1e-4


def test_cross_channel_rho_grad_check(rng):
    sigma, lam = rng.random((3, 4, 6)), 0.5 + rng.random((3, 4, 6))
    fn = lambda P: gc.square(cross_channel(sigma, lam, P["rho"])).sum()
    assert gc.grad_check(fn, {"rho": 0.1 + rng.random((6, 6))}) < 1e-4
