import numpy as np
import pytest

from atbagging.active import (
    BLENDED_DPP,
    QBC_TOPK,
    ALConfig,
    ConfigError,
    acquire_batch,
    committee_disagreement,
    r_squared,
    run_al_trial,
    same_domain,
)
from atbagging.dataset import ColumnSchema, TabularDataset, holdout_split, make_synthetic_transfer
from atbagging.ensemble import BaggedEnsemble, TreeLimits, fit_ensemble, fit_tree
from atbagging.selection import SelectionParams, derive_seed

FAST = SelectionParams(m_trees=20, rff_features=64, probe_cap=64)


def _data(X, y=None, ids=None):
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    return TabularDataset([ColumnSchema(f"x{j}") for j in range(X.shape[1])], X, y, ids)


def _fixed_committee(preds):
    """Ensemble of depth-0 trees predicting the given constants."""
    d = _data(np.zeros(1), [0.0])
    trees = [fit_tree(d.with_target([p]), [0]) for p in preds]
    return BaggedEnsemble(trees, np.ones((len(preds), 1), dtype=np.int64), d.row_ids, d.schema, TreeLimits(), 0)


def test_identical_trees_do_not_disagree():
    rng = np.random.default_rng(0)
    d = _data(rng.standard_normal(30), rng.standard_normal(30))
    e = fit_ensemble(d, 10, seed=0, bootstrap=False)
    assert np.all(committee_disagreement(e, d) == 0)


def test_two_tree_variance():
    e = _fixed_committee([0.0, 2.0])
    assert committee_disagreement(e, _data([5.0]))[0] == 1.0


def test_disagreement_nonnegative():
    rng = np.random.default_rng(1)
    d = _data(rng.standard_normal((50, 2)), rng.standard_normal(50))
    assert np.all(committee_disagreement(fit_ensemble(d, 15, seed=2), d) >= 0)


class _Scored:
    """Stand-in committee returning fixed disagreement scores."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, float)

    def predict_matrix(self, pool):
        s = self.scores[pool.index_of(pool.row_ids)]
        return np.vstack([-np.sqrt(s), np.sqrt(s)])


def test_topk_takes_highest_scores():
    pool = _data(np.arange(4.0), ids=[10, 11, 12, 13])
    got = acquire_batch(_Scored([5, 4, 3, 2]), pool, 2, QBC_TOPK)
    assert sorted(got) == [10, 11]


def test_topk_ties_to_lowest_id():
    pool = _data(np.arange(4.0), ids=[13, 12, 11, 10])
    got = acquire_batch(_Scored([1, 1, 1, 1]), pool, 2, QBC_TOPK)
    assert sorted(got) == [10, 11]


@pytest.mark.parametrize("mode", [QBC_TOPK, BLENDED_DPP])
def test_whole_pool_batch(mode):
    pool = _data(np.arange(5.0), ids=[4, 3, 2, 1, 0])
    got = acquire_batch(_Scored(np.ones(5)), pool, 5, mode)
    assert sorted(got) == [0, 1, 2, 3, 4]
    with pytest.raises(ConfigError):
        acquire_batch(_Scored(np.ones(5)), pool, 6, mode)


def test_blended_batch_skips_duplicates():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((12, 2))
    X[5] = X[2]
    pool = _data(X)
    scores = rng.uniform(0.5, 2, 12)
    scores[5] = scores[2]
    Phi = rng.standard_normal((12, 8))
    Phi[5] = Phi[2]
    for s in range(200):
        got = acquire_batch(_Scored(scores), pool, 4, BLENDED_DPP, embedding=Phi, params=FAST, seed=s)
        assert len(set(got)) == 4
        assert not {2, 5} <= set(got)


def test_r_squared():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-12)
    assert r_squared(y, np.full(4, 10.0)) <= 1e-12
    assert r_squared(y, y[::-1]) == pytest.approx(1 - 20 / 5)


@pytest.fixture(scope="module")
def task():
    return make_synthetic_transfer(400, 400, 3, 0.9, 0.0, seed=0)


@pytest.fixture(scope="module")
def shifted():
    return make_synthetic_transfer(300, 300, 3, 0.9, 1.0, seed=1)


def test_standard_protocol_size(task):
    src, tr = task
    cfg = ALConfig(n_seed=10, m_collect=20, n_rounds=14, acquisition=QBC_TOPK, params=FAST)
    c = run_al_trial(src, tr, "random", cfg, seed=0)
    assert len(c.n_train) == 15 and c.n_train[0] == 10 and c.n_train[-1] == 290
    np.testing.assert_array_equal(c.n_train, 10 + 20 * np.arange(15))


@pytest.mark.parametrize("method", ["atbagging", "random", "pca_grid", "loss_coreset"])
def test_trial_invariants(task, method):
    src, tr = task
    cfg = ALConfig(n_seed=8, m_collect=10, n_rounds=3, acquisition=BLENDED_DPP if method == "atbagging" else QBC_TOPK,
                   params=FAST)
    c = run_al_trial(src, tr, method, cfg, seed=5, trial=2)
    assert list(c.n_train) == [8, 18, 28, 38]
    assert len(set(c.labeled_ids)) == len(c.labeled_ids) == 38
    _, evaluation = holdout_split(tr, cfg.eval_fraction, derive_seed(5, "eval", 2))
    assert not set(c.labeled_ids) & set(evaluation.row_ids)
    assert set(c.labeled_ids) <= set(tr.row_ids)


def test_zero_rounds(task):
    src, tr = task
    c = run_al_trial(src, tr, "random", ALConfig(n_seed=10, n_rounds=0, params=FAST), seed=1)
    assert list(c.n_train) == [10] and len(c.r2) == 1


def test_trials_are_reproducible(task):
    src, tr = task
    cfg = ALConfig(n_seed=10, m_collect=10, n_rounds=2, params=FAST)
    a = run_al_trial(src, tr, "atbagging", cfg, seed=3)
    b = run_al_trial(src, tr, "atbagging", cfg, seed=3)
    np.testing.assert_array_equal(a.r2, b.r2)
    np.testing.assert_array_equal(a.labeled_ids, b.labeled_ids)


def test_shifted_pool_matches_into_pool(shifted):
    src, tr = shifted
    assert not same_domain(src, tr)
    cfg = ALConfig(n_seed=6, m_collect=5, n_rounds=2, acquisition=QBC_TOPK, params=FAST)
    c = run_al_trial(src, tr, "atbagging", cfg, seed=0)
    assert set(c.labeled_ids) <= set(tr.row_ids)
    assert len(set(c.labeled_ids)) == 16


def test_target_transfer_is_same_domain(task):
    assert same_domain(*task)


def test_infeasible_config(task):
    src, tr = task
    with pytest.raises(ConfigError):
        run_al_trial(src, tr, "random", ALConfig(n_seed=10, m_collect=100, n_rounds=4, params=FAST), seed=0)
    for bad in (ALConfig(n_seed=0), ALConfig(m_collect=0), ALConfig(n_rounds=-1), ALConfig(acquisition="x"),
                ALConfig(eval_fraction=1.0)):
        with pytest.raises(ConfigError):
            bad.validate()


def test_unlabeled_pool_rejected(task):
    src, tr = task
    with pytest.raises(ConfigError):
        run_al_trial(src, TabularDataset(tr.schema, tr.values, None, tr.row_ids), "random", ALConfig(), seed=0)
