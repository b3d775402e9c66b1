import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_encounter, random_scaled_encounter
from dtic import gradcore as gc
from dtic.batch import PaddedCohort
from dtic.interpnet import ReferenceGrid
from dtic.reinterp import THETA_INIT, rbf_weight, recon_loss, reconstruct
from dtic.timeseries import VARIABLES, make_fake


def test_rbf_weight_examples():
    assert rbf_weight(3.0, 3.0, 0.2) == 1.0
    assert rbf_weight(1.0, 2.0, 1.0) == pytest.approx(math.exp(-1), abs=1e-15)
    assert rbf_weight(0.0, 2.0, 0.5) == pytest.approx(0.135335, abs=1e-6)
    assert THETA_INIT == 1 / 900


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(1e-4, 1.0))
def test_rbf_weight_symmetric_and_bounded(r, t, theta):
    w = rbf_weight(r, t, theta)
    assert w == rbf_weight(t, r, theta) and 0 <= w <= 1


def test_reconstruct_constant_column(small_batch):
    grid = ReferenceGrid(8)
    out = np.zeros((3, 8, 6))
    out[:, :, 2] = 0.37
    est = reconstruct(out, grid, small_batch, np.log(THETA_INIT)).data
    mask = small_batch.valid_mask()
    np.testing.assert_allclose(est[:, 2][mask[:, 2]], 0.37, atol=1e-15)


def test_reconstruct_symmetric_midpoint():
    grid = ReferenceGrid(2, 0.0, 2.0)  # r = {0, 1}
    batch = PaddedCohort.from_encounters([make_encounter("m", {v: [(0.5, 0.0)] for v in VARIABLES})])
    out = np.zeros((1, 2, 6))
    out[0, 1, :] = 10.0
    est = reconstruct(out, grid, batch, np.array([0.0])).data
    np.testing.assert_allclose(est[0, :, 0], 5.0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_reconstruct_convex_combination(seed):
    r = np.random.default_rng(seed)
    batch = PaddedCohort.from_encounters([random_scaled_encounter(r, "c", 5)])
    out = r.normal(size=(1, 6, 6))
    est = reconstruct(out, ReferenceGrid(6), batch, np.log(r.uniform(1e-4, 1e-2))).data
    mask = batch.valid_mask()
    for v in range(6):
        vals = est[0, v][mask[0, v]]
        assert np.all(vals >= out[0, :, v].min() - 1e-12) and np.all(vals <= out[0, :, v].max() + 1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_reconstruct_grad_check(seed):
    r = np.random.default_rng(seed)
    batch = PaddedCohort.from_encounters([random_scaled_encounter(r, f"c{i}", 4) for i in range(2)])
    grid = ReferenceGrid(5)
    w = r.normal(size=(2, 6, batch.width)) * batch.valid_mask()
    fn = lambda P: (reconstruct(P["out"], grid, batch, P["b"]) * gc.const(w)).sum()
    point = {"out": r.normal(size=(2, 5, 6)), "b": np.array([np.log(THETA_INIT) + r.normal(scale=0.5)])}
    assert gc.grad_check(fn, point) < 1e-4


def test_recon_loss_examples():
    enc = make_encounter("a", {"HR": [(10.0, 0.5)]})
    batch = PaddedCohort.from_encounters([enc])
    est = np.zeros((1, 6, 1))
    est[0, 2, 0] = 0.5
    assert recon_loss(gc.const(est), batch).item() == 0.0
    est[0, 2, 0] = 2.5
    assert recon_loss(gc.const(est), batch).item() == pytest.approx(4.0)


def test_recon_loss_ignores_fake_rows(rng):
    real = random_scaled_encounter(rng, "r")
    fake = make_fake(real, seed=4)
    both = PaddedCohort.from_encounters([real, fake])
    alone = PaddedCohort.from_encounters([real])
    est = rng.random((2, 6, both.width))
    a = recon_loss(gc.const(est), both).item()
    b = recon_loss(gc.const(est[:1, :, :alone.width]), alone).item()
    assert a == pytest.approx(b, abs=1e-15) and a >= 0
