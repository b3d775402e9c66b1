import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtic import gradcore as gc
from dtic.batch import PaddedCohort
from dtic.clustering import DeadClusterError
from dtic.model import losses
from dtic.seeding import substream
from dtic.timeseries import SyntheticSpec, generate_synthetic_cohort, load_ranges, preprocess
from dtic.trainer import (EpochSampler, TrainConfig, TrainingDiverged, cluster_train, finalize_labels, init_clusters,
                          pretrain, total_loss)

TINY = dict(hidden=8, grid_size=6, batch_size=8, pretrain_iters=6, cluster_iters=6, target_interval=2, n_init=2)


@pytest.fixture(scope="module")
def data():
    raw = generate_synthetic_cohort(SyntheticSpec(n_per_archetype=6), seed=3)
    scaled, _, _ = preprocess(raw, load_ranges())
    return PaddedCohort.from_encounters(scaled)


def cfg(**kw):
    return TrainConfig(**{**TINY, **kw})


def same_params(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.pretrain_iters, c.cluster_iters, c.target_interval, c.delta, c.lambda_cluster) == (2000, 2000, 100,
                                                                                                  0.001, 0.1)
    assert (c.lr, c.k, c.grid_size, c.hidden, c.kappa) == (1e-3, 4, 36, 128, 10.0)
    assert TrainConfig.from_dict(c.as_dict()) == c
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    for bad in ({"delta": 0.0}, {"batch_size": 0}, {"kappa": 1.0}, {"lambda_cluster": -1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


@given(st.integers(1, 40), st.integers(1, 50), st.integers(0, 1000))
def test_sampler_epochs_cover_everything(n, size, seed):
    s = EpochSampler(n, size, np.random.default_rng(seed))
    per_epoch = n // min(size, n)
    seen = np.concatenate([s.next() for _ in range(per_epoch)])
    assert len(set(seen.tolist())) == len(seen) == per_epoch * min(size, n)


def test_sampler_state_round_trip():
    a = EpochSampler(17, 5, np.random.default_rng(1))
    a.next()
    b = EpochSampler.restore(17, 5, a.state())
    for _ in range(10):
        assert np.array_equal(a.next(), b.next())


def _batch(data, seed=0):
    from dtic.model import make_fake_batch
    real = data.take(np.arange(8))
    return real, make_fake_batch(real, np.random.default_rng(seed))


def test_terms_sum_to_total(data):
    model = pretrain(data, cfg(pretrain_iters=1))
    real, fake = _batch(data)
    total, terms = total_loss(real, fake, model.params, model.config)
    assert total == pytest.approx(terms["recon"] + terms["reg"] + terms["bce"], abs=1e-12)
    init_clusters(model, data)
    p = np.full((8, 4), 0.25)
    jt, jterms = total_loss(real, fake, model.params, model.config, "joint", p)
    assert jt == pytest.approx(total + 0.1 * jterms["kl"], abs=1e-12)
    zero = TrainConfig(**{**model.config.as_dict(), "lambda_cluster": 0.0})
    assert total_loss(real, fake, model.params, zero, "joint", p)[0] == pytest.approx(total, abs=1e-12)


def test_pretrain_deterministic_and_logged(data):
    a, b = pretrain(data, cfg()), pretrain(data, cfg())
    assert same_params(a.params, b.params) and a.log == b.log
    assert [r["iter"] for r in a.log] == list(range(6))
    assert all(r["loss_kl"] is None for r in a.log)
    assert not same_params(a.params, pretrain(data, cfg(seed=1)).params)


def test_pretrain_resume_matches_uninterrupted(data):
    full = pretrain(data, cfg())
    half = pretrain(data, cfg(pretrain_iters=3))
    resumed = pretrain(data, cfg(), resume=half.checkpoint)
    assert same_params(full.params, resumed.params) and full.log == resumed.log


def _clustered(data, **kw):
    model = pretrain(data, cfg(**kw))
    init_clusters(model, data)
    return model


def test_cluster_resume_matches_uninterrupted(data):
    full = cluster_train(_clustered(data), data)
    half = cluster_train(_clustered(data), data, cfg(cluster_iters=3))
    resumed = cluster_train(_clustered(data), data, cfg(), resume=half.checkpoint)
    assert same_params(full.params, resumed.params)
    assert full.log == resumed.log and full.refresh_fracs == resumed.refresh_fracs


def test_cluster_pass_refreshes_on_interval(data):
    out = cluster_train(_clustered(data, delta=0.001), data)
    fracs = [r["label_change_frac"] for r in out.log[6:]]
    assert [f is not None for f in fracs] == [False, True] * 3
    assert all(r["loss_kl"] is not None for r in out.log[6:])


def test_delta_one_stops_at_first_refresh(data):
    out = cluster_train(_clustered(data, delta=1.0), data)
    assert out.stop_reason == "converged" and len(out.refresh_fracs) == 1
    assert len(out.log) == 6 + 2


def test_kl_gradient_reaches_centres_and_encoder(data):
    model = _clustered(data)
    real, fake = _batch(data)
    p = np.tile([0.7, 0.1, 0.1, 0.1], (8, 1))

    def fn(P):
        return losses(P, real, fake, model.dims, p, 0.1)[1]["kl"]

    _, grads = gc.forward_backward(fn, model.params)
    assert np.abs(grads["cluster.mu"]).max() > 0
    assert np.abs(grads["enc.U"]).max() > 0 and np.abs(grads["interp.log_alpha"]).max() > 0


def test_centres_frozen_during_pretraining(data):
    model = _clustered(data)
    before = model.params["cluster.mu"].copy()
    again = pretrain(data, cfg(pretrain_iters=8), resume=dict(model.checkpoint, params=model.params))
    assert np.array_equal(again.params["cluster.mu"], before)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_last_good_state(data):
    with pytest.raises(TrainingDiverged) as info:
        pretrain(data, cfg(lr=1e300, pretrain_iters=50))
    state = info.value.checkpoint
    assert state["phase"] == "pretrain"
    assert all(np.all(np.isfinite(v)) for v in state["params"].values())
    assert info.value.terms


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_dead_cluster_aborts(data):
    model = _clustered(data)
    model.params["cluster.mu"][0] = 1e200
    with pytest.raises(DeadClusterError):
        cluster_train(model, data)


def test_finalize_labels(data):
    out = cluster_train(_clustered(data), data)
    final = finalize_labels(out, data)
    assert final.centroids.shape == (4, 8) and final.labels.shape == (len(data),)
    assert np.array_equal(final.nearest, final.labels)  # k-means labels are nearest-centre labels
    assert np.all(final.nearest_distance >= 0)
    assert np.array_equal(finalize_labels(out, data).labels, final.labels)


def test_substreams_independent():
    a = substream(0, "pretrain.batches").random(4)
    b = substream(0, "pretrain.fakes").random(4)
    assert not np.array_equal(a, b) and np.array_equal(a, substream(0, "pretrain.batches").random(4))
