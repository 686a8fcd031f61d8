import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atbagging.dataset import ColumnSchema, TabularDataset
from atbagging.ensemble import BaggedEnsemble, fit_ensemble
from atbagging.infogain import (
    DegenerateCovariance,
    GaussianMoments,
    choose_probe_set,
    estimate_noise_var,
    gaussian_kl,
    lowrank_gaussian_kl,
    moments_from_predictions,
    scalar_gaussian_kl,
    score_all,
)


def _g(mu, sigma):
    mu = np.atleast_1d(np.asarray(mu, float))
    sigma = np.atleast_2d(np.asarray(sigma, float))
    return GaussianMoments(mu, sigma, 1.0)


def _random_pd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + 0.1 * np.eye(n)


def _dense_oracle_kl(mu_p, S_p, mu_q, S_q):
    """Textbook formula with explicit inverse and slogdet."""
    n = len(mu_p)
    Sq_inv = np.linalg.inv(S_q)
    d = mu_q - mu_p
    return 0.5 * (np.trace(Sq_inv @ S_p) + d @ Sq_inv @ d - n
                  + np.linalg.slogdet(S_q)[1] - np.linalg.slogdet(S_p)[1])


def test_identical_rows_give_noise_only():
    v = np.array([1.0, -2.0, 3.0])
    g = moments_from_predictions(np.tile(v, (5, 1)), 0.3)
    np.testing.assert_array_equal(g.mu, v)
    np.testing.assert_allclose(g.sigma, 0.3 * np.eye(3))


def test_two_predictions_moments():
    g = moments_from_predictions([[0.0], [2.0]], 0.5)
    np.testing.assert_allclose(g.mu, [1.0])
    np.testing.assert_allclose(g.sigma, [[1.5]])


def test_moments_need_two_models():
    with pytest.raises(ValueError):
        moments_from_predictions([[1.0, 2.0]], 0.5)
    with pytest.raises(ValueError):
        moments_from_predictions([[1.0], [2.0]], 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(1, 8), st.floats(1e-3, 10.0), st.integers(0, 2**32 - 1))
def test_moments_symmetric_and_floored(m, n, s2, seed):
    P = np.random.default_rng(seed).standard_normal((m, n)) * 3
    g = moments_from_predictions(P, s2)
    assert np.max(np.abs(g.sigma - g.sigma.T)) <= 1e-10
    assert np.linalg.eigvalsh(g.sigma).min() >= s2 - 1e-9


def test_kl_examples():
    p = _g([0.3, -1.0], [[2.0, 0.5], [0.5, 1.0]])
    assert gaussian_kl(p, p) == 0.0
    assert gaussian_kl(_g(1.0, 1.0), _g(0.0, 1.0)) == pytest.approx(0.5, abs=1e-14)
    assert gaussian_kl(_g(0.0, 1.0), _g(0.0, 2.0)) == pytest.approx(0.5 * (0.5 - 1 + math.log(2)), abs=1e-14)
    assert gaussian_kl(_g(0.0, 1.0), _g(0.0, 2.0)) == pytest.approx(0.0966, abs=5e-5)


def test_kl_matches_scalar_form_on_random_inputs():
    rng = np.random.default_rng(0)
    mu = rng.normal(0, 3, (10_000, 2))
    var = np.exp(rng.uniform(-4, 4, (10_000, 2)))
    got = np.array([gaussian_kl(_g(a[0], b[0]), _g(a[1], b[1])) for a, b in zip(mu, var)])
    want = scalar_gaussian_kl(mu[:, 0], var[:, 0], mu[:, 1], var[:, 1])
    assert np.max(np.abs(got - want)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_kl_nonnegative_and_matches_dense_formula(n, seed):
    rng = np.random.default_rng(seed)
    S_p, S_q = _random_pd(rng, n), _random_pd(rng, n)
    mu_p, mu_q = rng.standard_normal(n), rng.standard_normal(n)
    kl = gaussian_kl(_g(mu_p, S_p), _g(mu_q, S_q))
    assert kl >= 0
    assert kl == pytest.approx(max(0.0, _dense_oracle_kl(mu_p, S_p, mu_q, S_q)), rel=1e-7, abs=1e-9)


def test_kl_increases_with_mean_separation():
    S = _random_pd(np.random.default_rng(1), 3)
    direction = np.array([1.0, -2.0, 0.5]) / np.linalg.norm([1.0, -2.0, 0.5])
    values = [gaussian_kl(_g(t * direction, S), _g(np.zeros(3), S)) for t in np.linspace(0, 5, 30)]
    assert np.all(np.diff(values) > 0)


def test_kl_rejects_non_pd():
    with pytest.raises(DegenerateCovariance):
        gaussian_kl(_g([0.0, 0.0], np.eye(2)), _g([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]))


def test_diagonal_mode_matches_diagonal_matrices():
    rng = np.random.default_rng(4)
    P, Q = rng.standard_normal((6, 4)), rng.standard_normal((9, 4))
    d = gaussian_kl(moments_from_predictions(P, 0.2, True), moments_from_predictions(Q, 0.2, True))
    full_p, full_q = moments_from_predictions(P, 0.2), moments_from_predictions(Q, 0.2)
    want = gaussian_kl(_g(full_p.mu, np.diag(np.diag(full_p.sigma))), _g(full_q.mu, np.diag(np.diag(full_q.sigma))))
    assert d == pytest.approx(want, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.integers(10, 40), st.floats(1e-3, 2.0), st.integers(0, 2**32 - 1))
def test_lowrank_kl_equals_dense(m_ib, m_oob, n, s2, seed):
    rng = np.random.default_rng(seed)
    P_ib = rng.standard_normal((m_ib, n))
    P_oob = rng.standard_normal((m_oob, n)) + 0.3
    dense = gaussian_kl(moments_from_predictions(P_ib, s2), moments_from_predictions(P_oob, s2))
    assert lowrank_gaussian_kl(P_ib, P_oob, s2) == pytest.approx(dense, rel=1e-8, abs=1e-8)


def _regression(n=200, seed=0, const=False):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    y = np.full(n, 3.0) if const else np.sin(2 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.standard_normal(n)
    return TabularDataset([ColumnSchema("a"), ColumnSchema("b")], X, y)


def test_constant_targets_carry_no_information():
    d = _regression(const=True)
    e = fit_ensemble(d, 50, seed=0)
    s = score_all(e, d, d.take(np.arange(30)))
    assert np.all(s.ig <= 1e-6)


def test_duplicate_point_scores_are_close():
    base = _regression(199, seed=2)
    X = np.vstack([base.values, base.values[:1]])
    y = np.append(base.target, base.target[0])
    d = TabularDataset(base.schema, X, y)
    e = fit_ensemble(d, 100, seed=3)
    s = score_all(e, d, d.take(np.arange(0, 200, 4)))
    a, b = s.ig[0], s.ig[199]
    assert max(a, b) <= 2 * min(a, b)


def test_scores_are_finite_nonnegative_and_reproducible():
    d = _regression()
    e = fit_ensemble(d, 60, seed=1)
    probe = choose_probe_set(d, 40, seed=0)
    s1 = score_all(e, d, probe)
    s2 = score_all(fit_ensemble(d, 60, seed=1, n_jobs=3), d, probe)
    assert np.all(np.isfinite(s1.ig)) and np.all(s1.ig >= 0)
    np.testing.assert_array_equal(s1.ig, s2.ig)
    np.testing.assert_array_equal(s1.row_ids, d.row_ids)


def test_scores_follow_the_dense_route():
    d = _regression(60)
    e = fit_ensemble(d, 20, seed=5)
    probe = d.take(np.arange(50))
    s = score_all(e, d, probe, noise_var=0.05)
    P = e.predict_matrix(probe)
    for i in range(0, 60, 7):
        col = e.inbag_mask[:, i]
        if min(col.sum(), (~col).sum()) < 2:
            continue
        want = gaussian_kl(moments_from_predictions(P[col], 0.05), moments_from_predictions(P[~col], 0.05))
        assert s.ig[i] == pytest.approx(want, rel=1e-8, abs=1e-10)


def test_degenerate_rows_get_the_median():
    d = _regression(40)
    e = fit_ensemble(d, 5, seed=0)
    s = score_all(e, d, d.take(np.arange(10)), noise_var=0.1)
    counts = e.inbag_mask.sum(axis=0)
    bad = (counts < 2) | (e.n_trees - counts < 2)
    assert 0 < bad.sum() < len(d)
    assert s.n_imputed == int(bad.sum())
    assert np.all(s.ig[bad] == np.median(s.ig[~bad]))


def test_permutation_equivariance():
    d = _regression(80, seed=9)
    perm = np.random.default_rng(0).permutation(80)
    shuffled = d.take(perm)
    e = fit_ensemble(d, 30, seed=2)
    # same bootstraps expressed on the permuted row order
    e2 = BaggedEnsemble(e.trees, e.inbag_counts[:, perm], shuffled.row_ids, e.schema, e.limits, e.seed)
    probe = d.take(np.arange(20))
    a = score_all(e, d, probe, noise_var=0.1).as_dict()
    b = score_all(e2, shuffled, probe, noise_var=0.1).as_dict()
    for r in a:
        assert a[r] == pytest.approx(b[r], rel=1e-12, abs=1e-14)


def test_noise_estimate_is_floored():
    d = _regression(const=True)
    e = fit_ensemble(d, 20, seed=0)
    assert estimate_noise_var(e, d) == 1e-12


def test_probe_set_rules():
    d = _regression(50)
    assert len(choose_probe_set(d, 256)) == 50
    big = _regression(1000)
    p1 = choose_probe_set(big, 256, seed=4)
    p2 = choose_probe_set(big, 256, seed=4)
    assert len(set(p1.row_ids)) == 256
    np.testing.assert_array_equal(p1.row_ids, p2.row_ids)
    with pytest.raises(ValueError):
        choose_probe_set(d.take(np.arange(0)))


def test_scores_csv(tmp_path):
    d = _regression(30)
    e = fit_ensemble(d, 10, seed=0)
    s = score_all(e, d, d, noise_var=0.1)
    s.to_csv(tmp_path / "s.csv", header_comment="config_hash=abc")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1] == "row_id,ig"
    assert len(lines) == 32
