import math

import numpy as np
import pytest

import consolidation
from consolidation import (
    PriorStore,
    aggregate_priors,
    consolidate,
    provisional_store,
    record_prior,
)
from errors import StateError
from hypernet_vae import TaskDescriptor, TaskPrior, init_hyper, task_prior


def _hyper(seed=0, num_tasks=3):
    return init_hyper((("w", (10,)),), num_tasks=num_tasks, rng=np.random.default_rng(seed),
                      chunk_size=6, latent_dim=3, hidden=4, embed_dim=2, scale=0.5)


def _prior(mean, var):
    return TaskPrior(np.asarray(mean, dtype=float), np.log(np.asarray(var, dtype=float)))


def _store(*priors):
    store = PriorStore()
    for i, p in enumerate(priors):
        store = store.with_prior(i, p)
    return store


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def test_aggregate_two_priors():
    agg = aggregate_priors(_store(_prior([0.0, 0.0], [1.0, 1.0]), _prior([2.0, 2.0], [3.0, 3.0])))
    np.testing.assert_allclose(agg.mean, [1.0, 1.0])
    np.testing.assert_allclose(agg.variance, [2.0, 2.0])
    assert agg.task_ids == (0, 1)


def test_aggregate_of_one_or_identical_priors():
    p = _prior([0.3, -1.2], [0.5, 2.0])
    for store in (_store(p), _store(p, p, p)):
        agg = aggregate_priors(store)
        np.testing.assert_allclose(agg.mean, p.mean)
        np.testing.assert_allclose(agg.log_var, p.log_var)


def test_aggregate_ignores_store_order():
    rng = np.random.default_rng(0)
    priors = [_prior(rng.standard_normal(4), rng.uniform(0.5, 2.0, 4)) for _ in range(3)]
    forward = aggregate_priors(_store(*priors))
    backward = PriorStore()
    for i in (2, 0, 1):
        backward = backward.with_prior(i, priors[i])
    reverse = aggregate_priors(backward)
    np.testing.assert_allclose(forward.mean, reverse.mean, rtol=1e-12)
    np.testing.assert_allclose(forward.log_var, reverse.log_var, rtol=1e-12)


def test_aggregate_empty_store():
    with pytest.raises(StateError):
        aggregate_priors(PriorStore())


# ---------------------------------------------------------------------------
# Recording
# ---------------------------------------------------------------------------

def test_record_prior_in_order():
    hyper = _hyper()
    store = record_prior(PriorStore(), 0, hyper)
    assert len(store) == 1
    np.testing.assert_array_equal(store[0].mean, hyper.params["prior.w_mu"][0])
    with pytest.raises(StateError):
        record_prior(store, 0, hyper)
    with pytest.raises(StateError):
        record_prior(store, 2, hyper)
    assert record_prior(store, 1, hyper).task_ids == (0, 1)


def test_missing_task_lookup():
    with pytest.raises(StateError):
        PriorStore()[0]


def test_snapshots_survive_later_training():
    hyper = _hyper()
    store = record_prior(PriorStore(), 0, hyper)
    expected = hyper.params["prior.w_mu"][0].copy()
    changed = hyper.with_params({"prior.w_mu": hyper.params["prior.w_mu"] + 5.0})
    hyper.params["prior.w_mu"][0] += 1.0
    np.testing.assert_array_equal(store[0].mean, expected)
    assert not np.array_equal(task_prior(changed, TaskDescriptor(0, 3)).mean, store[0].mean)
    with pytest.raises(ValueError):
        store[0].mean[0] = 0.0


def test_provisional_store_leaves_the_original_alone():
    hyper = _hyper()
    store = record_prior(PriorStore(), 0, hyper)
    extended = provisional_store(store, 1, hyper)
    assert extended.task_ids == (0, 1)
    assert store.task_ids == (0,)
    assert provisional_store(store, 0, hyper) is store


def test_store_dict_round_trip():
    store = _store(_prior([0.1, 0.2], [1.0, 0.5]), _prior([-1.0, 0.0], [2.0, 2.0]))
    back = PriorStore.from_dict(store.to_dict())
    assert back.task_ids == (0, 1)
    for j in back:
        np.testing.assert_array_equal(back[j].mean, store[j].mean)
        np.testing.assert_array_equal(back[j].log_var, store[j].log_var)


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------

def test_consolidate_with_no_pseudo_models_is_a_no_op(tiny_cfg):
    hyper = _hyper()
    store = record_prior(PriorStore(), 0, hyper)
    assert consolidate(hyper, store, 0, 0, tiny_cfg, np.random.default_rng(0)) is hyper


def test_consolidate_preconditions(tiny_cfg):
    hyper = _hyper()
    with pytest.raises(StateError):
        consolidate(hyper, PriorStore(), 0, 2, tiny_cfg, np.random.default_rng(0))
    store = record_prior(PriorStore(), 0, hyper)
    with pytest.raises(StateError):
        consolidate(hyper, store, 1, 2, tiny_cfg, np.random.default_rng(0))


def test_consolidate_visits_each_task_once_with_p_decodes(tiny_cfg):
    hyper = _hyper()
    store = record_prior(record_prior(PriorStore(), 0, hyper), 1, hyper)
    calls = []
    out = consolidate(hyper, store, 1, 3, tiny_cfg, np.random.default_rng(0),
                      on_decode=lambda j, i: calls.append((j, i)))
    assert calls == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]
    np.testing.assert_array_equal(out.params["prior.w_mu"], hyper.params["prior.w_mu"])
    np.testing.assert_array_equal(out.params["prior.w_logvar"], hyper.params["prior.w_logvar"])
    assert not np.array_equal(out.params["dec.out.w"], hyper.params["dec.out.w"])


def test_consolidate_is_deterministic(tiny_cfg):
    hyper = _hyper()
    store = record_prior(PriorStore(), 0, hyper)
    a = consolidate(hyper, store, 0, 2, tiny_cfg, np.random.default_rng(5))
    b = consolidate(hyper, store, 0, 2, tiny_cfg, np.random.default_rng(5))
    assert a.equals(b)
    assert math.isfinite(float(a.params["enc.fc.w"].sum()))


def test_pseudo_models_come_from_independent_latent_draws(tiny_cfg, monkeypatch):
    hyper = _hyper()
    store = record_prior(PriorStore(), 0, hyper)
    seen = []
    decode_rows = consolidation.decode_rows

    def recording(h, z_rows, t_rows, ids):
        seen.append(np.array(z_rows))
        return decode_rows(h, z_rows, t_rows, ids)

    monkeypatch.setattr(consolidation, "decode_rows", recording)
    count = 2000
    consolidate(hyper, store, 0, count, tiny_cfg, np.random.default_rng(1))

    assert len(seen) == 1
    per_model = seen[0].reshape(count, hyper.arch.num_chunks, -1)
    np.testing.assert_array_equal(per_model, np.broadcast_to(per_model[:, :1], per_model.shape))
    zs = per_model[:, 0]
    assert len(np.unique(zs, axis=0)) == count
    np.testing.assert_allclose(zs.mean(axis=0), store[0].mean, atol=0.1)
    np.testing.assert_allclose(zs.std(axis=0), np.sqrt(store[0].variance), rtol=0.1)


@pytest.mark.slow
def test_replay_keeps_the_first_task_reconstructable():
    from bench_data import stream_from_config
    from config import preset_config
    from continual_runtime import _train_base_models, new_state, run_task
    from hypernet_vae import reconstruction_mse, train_hypernet
    from tensor_core import rng_stream

    cfg = preset_config("blobs8", seed=0, num_tasks=2)
    stream = stream_from_config(cfg)
    state = run_task(new_state(cfg, "mcssl"), stream.tasks[0])
    first = _train_base_models(stream.tasks[0], cfg)
    second = _train_base_models(stream.tasks[1], cfg)
    t0, t1 = TaskDescriptor(0, cfg.num_tasks), TaskDescriptor(1, cfg.num_tasks)

    def replay(epoch, h):
        store = provisional_store(state.priors, 1, h)
        return consolidate(h, store, 1, cfg.pseudo_models, cfg, rng_stream(cfg.seed, "consolidate", 1, epoch))

    with_replay = train_hypernet(second, t1, state.hyper, cfg, rng_stream(cfg.seed, "hypernet", 1), on_epoch_end=replay)
    without = train_hypernet(second, t1, state.hyper, cfg, rng_stream(cfg.seed, "hypernet", 1))
    assert reconstruction_mse(with_replay, first, t0) < reconstruction_mse(without, first, t0)
