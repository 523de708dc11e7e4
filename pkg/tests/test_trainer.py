import math

import numpy as np
import pytest

from gcnslim.dataset import InteractionDataset
from gcnslim.graph import build_normalized_adjacency
from gcnslim.model import ModelConfig, batch_loss
from gcnslim.trainer import (AdamState, TrainConfig, fit, grad_check, init_params, make_batches,
                             train_epoch, variant_grid)

SMALL_MODEL = ModelConfig(K=1, alpha=0.05, lam=0.5, embedding_dim=8)


def test_init_params():
    a = init_params(10, 5, 128, seed=3)
    assert np.array_equal(a, init_params(10, 5, 128, seed=3))
    assert a.shape == (15, 128) and a.dtype == np.float32
    assert np.abs(a).max() <= math.sqrt(6 / 256) + 1e-7
    assert round(math.sqrt(6 / 256), 4) == 0.1531


def test_adam_zero_gradient_leaves_params():
    p = np.random.default_rng(0).normal(size=(4, 3))
    before = p.copy()
    adam = AdamState(p.shape, np.float64)
    for _ in range(5):
        adam.update(p, np.zeros_like(p), 0.1)
    assert np.array_equal(p, before)


def test_adam_first_step_is_lr_times_sign():
    p = np.zeros(3)
    AdamState(3, np.float64).update(p, np.array([2.0, -0.5, 0.0]), 0.1)
    np.testing.assert_allclose(p, [-0.1, 0.1, 0.0], atol=1e-7)


def test_make_batches_counts_positives(small_split):
    rng = np.random.default_rng(0)
    batches = list(make_batches(small_split.train, 100, 2, rng))
    n_pos = sum(int(t.sum()) for _, _, t in batches)
    assert n_pos == small_split.train.num_interactions
    for users, items, targets in batches:
        assert (targets == 0).sum() == 2 * (targets == 1).sum()
        neg = targets == 0
        assert not small_split.train.contains(users[neg], items[neg]).any()
        assert small_split.train.contains(users[~neg], items[~neg]).all()


def test_zero_learning_rate_keeps_params(small_split):
    cfg = TrainConfig(learning_rate=0.0, batch_size=500, dtype="float64")
    adj = build_normalized_adjacency(small_split.train)
    params = init_params(200, 30, 8, 0, np.float64)
    before = params.copy()
    rng = np.random.default_rng(1)
    loss = train_epoch(params, AdamState(params.shape, np.float64), small_split, adj, SMALL_MODEL,
                       cfg, rng)
    assert np.array_equal(params, before)
    # the reported loss is the forward loss of the same batches
    rng = np.random.default_rng(1)
    forward = [batch_loss(u, i, t, params, adj, SMALL_MODEL, small_split.train)[0]
               for u, i, t in make_batches(small_split.train, 500, 1, rng)]
    assert loss == pytest.approx(np.mean(forward), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_single_pair_converges_monotonically(seed):
    train = InteractionDataset.from_arrays([0, 0, 1], [0, 1, 1], 2, 2)
    adj = build_normalized_adjacency(train)
    cfg = ModelConfig(K=1, alpha=0.0, lam=0.0, embedding_dim=8)
    params = init_params(2, 2, 8, seed, np.float64)
    adam = AdamState(params.shape, np.float64)
    losses = []
    for _ in range(300):
        loss, grad = batch_loss([0], [0], [1.0], params, adj, cfg, train)
        losses.append(loss)
        adam.update(params, grad, TrainConfig().learning_rate)
    assert np.all(np.diff(losses[10:]) < 0)
    assert losses[-1] < 0.5 * losses[0]


def _fit(split, **kw):
    base = dict(learning_rate=0.01, batch_size=512, max_epochs=4, patience=10, seed=5)
    base.update(kw)
    return fit(split, SMALL_MODEL, TrainConfig(**base))


def test_fit_deterministic(small_split):
    p1, r1 = _fit(small_split)
    p2, r2 = _fit(small_split)
    assert np.array_equal(p1, p2)
    assert [(e.loss, e.ndcg10, e.recall10) for e in r1.epochs] == \
        [(e.loss, e.ndcg10, e.recall10) for e in r2.epochs]
    assert r1.best_epoch == r2.best_epoch


def test_fit_learns(small_split):
    _, report = _fit(small_split, max_epochs=6)
    losses = report.curve("loss")
    assert losses[-1] < losses[0]
    assert report.best_ndcg10 > 0.1


def test_best_checkpoint_dominates_every_epoch(small_split):
    _, report = _fit(small_split, max_epochs=6)
    assert report.best_ndcg10 == max(report.curve("ndcg10"))
    assert report.epochs[report.best_epoch - 1].ndcg10 == report.best_ndcg10


def test_patience_one_stops_after_first_miss(small_split):
    _, report = _fit(small_split, max_epochs=40, patience=1, learning_rate=0.05)
    nd = report.curve("ndcg10")
    if report.stop_reason == "early_stopping":
        assert nd[-1] <= nd[:-1].max()
        assert all(nd[k] > nd[:k].max() for k in range(1, len(nd) - 1))
    else:
        assert len(nd) == 40


def test_max_epochs_zero_returns_initial(small_split):
    params, report = _fit(small_split, max_epochs=0)
    assert report.epochs == [] and report.best_epoch == 0
    assert np.array_equal(params, init_params(200, 30, 8, 5))


def test_eval_every_skips_epochs(small_split):
    _, report = _fit(small_split, max_epochs=4, eval_every=2)
    assert np.isnan(report.epochs[0].ndcg10) and not np.isnan(report.epochs[1].ndcg10)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(dtype="float16")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


# -- gradient checks ---------------------------------------------------------

def test_gradcheck_linear_alpha0_item_side():
    cfg = ModelConfig(K=2, alpha=0.0, lam=0.1, nonlinear=False, embedding_dim=4)
    assert grad_check(cfg) < 1e-6


def test_gradcheck_nonlinear_away_from_kink():
    assert grad_check(ModelConfig(K=2, alpha=0.05, lam=0.1, embedding_dim=4)) < 1e-4


def test_gradcheck_coarse_epsilon_reports_larger_error():
    cfg = ModelConfig(K=2, alpha=0.05, lam=0.1, embedding_dim=4)
    assert grad_check(cfg, epsilon=1e-1) > grad_check(cfg, epsilon=1e-4)


def test_gradcheck_rejects_large_instances():
    with pytest.raises(ValueError):
        grad_check(SMALL_MODEL, instance_sizes=(15, 10, 4))


def test_zero_params_give_zero_slim_gradient():
    train = InteractionDataset.from_arrays([0, 1, 1], [0, 0, 1], 2, 2)
    adj = build_normalized_adjacency(train)
    cfg = ModelConfig(K=1, alpha=0.0, lam=0.0, embedding_dim=3)
    _, grad = batch_loss([0, 1], [1, 0], [0.0, 1.0], np.zeros((4, 3)), adj, cfg, train)
    assert not grad.any()


def test_variant_grid_covers_combinations():
    labels = [name for name, _ in variant_grid()]
    assert len(labels) == len(set(labels))
    cfgs = [c for _, c in variant_grid()]
    assert {c.nonlinear for c in cfgs} == {True, False}
    assert {c.mode for c in cfgs} == {"slim", "mf"}
    assert {c.side for c in cfgs} == {"item", "user"}
    assert {c.K for c in cfgs} == {0, 1, 2, 3}
