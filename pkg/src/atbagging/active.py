"""Active-learning simulation seeded by a selected subset."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dataset import TabularDataset, holdout_split
from .dpp import build_l_ensemble, sample_k
from .ensemble import BaggedEnsemble, fit_ensemble
from .selection import SelectionParams, derive_seed, rff_embedding, select
from .transfer import fit_metric, match_selection

log = logging.getLogger(__name__)

QBC_TOPK = "qbc_topk"
BLENDED_DPP = "blended_dpp"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ALConfig:
    n_seed: int = 10
    m_collect: int = 20
    n_rounds: int = 14
    acquisition: str = BLENDED_DPP
    eval_fraction: float = 0.2
    params: SelectionParams = field(default_factory=SelectionParams)
    gamma: Optional[float] = None
    default_gamma: float = 1.0

    def validate(self, pool_size: Optional[int] = None) -> None:
        if self.n_seed < 1:
            raise ConfigError("n_seed must be >= 1")
        if self.m_collect < 1:
            raise ConfigError("m_collect must be >= 1")
        if self.n_rounds < 0:
            raise ConfigError("n_rounds must be >= 0")
        if self.acquisition not in (QBC_TOPK, BLENDED_DPP):
            raise ConfigError(f"unknown acquisition {self.acquisition!r}")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must lie in (0, 1)")
        if pool_size is not None and self.final_size > pool_size:
            raise ConfigError(
                f"n_seed + n_rounds * m_collect = {self.final_size} exceeds the acquirable pool ({pool_size})"
            )

    @property
    def final_size(self) -> int:
        return self.n_seed + self.n_rounds * self.m_collect


@dataclass
class LearningCurve:
    n_train: np.ndarray
    r2: np.ndarray
    trial: int
    method: str
    n_seed: int
    labeled_ids: np.ndarray = field(default=None, repr=False)

    @property
    def itp(self) -> float:
        return float(self.r2[0])

    def rows(self):
        return [(self.trial, self.method, self.n_seed, int(n), float(r)) for n, r in zip(self.n_train, self.r2)]


def r_squared(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, float)
    sse = float(np.sum((y_true - y_pred) ** 2))
    sst = float(np.sum((y_true - y_true.mean()) ** 2))
    if sst == 0:
        return 0.0 if sse == 0 else -np.inf
    return 1.0 - sse / sst


def committee_disagreement(e: BaggedEnsemble, pool: TabularDataset) -> np.ndarray:
    """Population variance of the per-tree predictions at each pool point."""
    P = e.predict_matrix(pool)
    # shifting by one member first makes a unanimous committee score exactly 0
    D = P - P[:1]
    return ((D - D.mean(axis=0)) ** 2).mean(axis=0)


def acquire_batch(e: BaggedEnsemble, pool_unlabeled: TabularDataset, m_collect: int, acquisition: str = QBC_TOPK,
                  embedding: Optional[np.ndarray] = None, params: SelectionParams = SelectionParams(),
                  seed: int = 0) -> np.ndarray:
    """Row ids of the next ``m_collect`` points to label.

    ``qbc_topk`` takes the highest-disagreement points (ties to the lowest
    row id). ``blended_dpp`` draws a size-``m_collect`` DPP sample with
    disagreement as quality over ``embedding`` (one row per pool point).
    """
    n = len(pool_unlabeled)
    if m_collect > n:
        raise ConfigError(f"pool exhausted: {n} unlabeled points, {m_collect} requested")
    if m_collect == n:
        return np.sort(pool_unlabeled.row_ids)
    scores = committee_disagreement(e, pool_unlabeled)
    if acquisition == QBC_TOPK:
        order = np.lexsort((pool_unlabeled.row_ids, -scores))
        return pool_unlabeled.row_ids[order[:m_collect]]
    if acquisition != BLENDED_DPP:
        raise ConfigError(f"unknown acquisition {acquisition!r}")
    if embedding is None:
        embedding = rff_embedding(pool_unlabeled, params, derive_seed(seed, "rff"))[0]
    quality = scores
    if not np.any(quality > 0):
        log.warning("committee agrees everywhere; using uniform qualities for the batch DPP")
        quality = np.ones(n)
    le = build_l_ensemble(embedding, quality, params.beta, row_ids=pool_unlabeled.row_ids)
    return sample_k(le, m_collect, np.random.default_rng(seed), params.max_attempts).row_ids


def same_domain(source: TabularDataset, pool: TabularDataset) -> bool:
    """True when every pool row is a source row with identical features (target transfer)."""
    try:
        pos = source.index_of(pool.row_ids)
    except KeyError:
        return False
    return source.conforms_to(pool.schema) and np.array_equal(source.values[pos], pool.values)


def seed_selection(method: str, source: TabularDataset, pool: TabularDataset, n_seed: int,
                   params: SelectionParams, seed: int, gamma: Optional[float] = None,
                   default_gamma: float = 1.0) -> np.ndarray:
    """Pick ``n_seed`` pool row ids: select on the source, map into the pool if domains differ."""
    if same_domain(source, pool):
        # only pool rows are eligible, so held-out evaluation rows can never be selected
        sel = select(method, source.select_ids(pool.row_ids), n_seed, seed, probe_pool=pool, params=params)
        return np.asarray(sel.row_ids, dtype=np.int64)
    sel = select(method, source, n_seed, seed, probe_pool=pool, params=params)
    metric = fit_metric(pool, gamma, default_gamma)
    return match_selection(source.select_ids(sel.row_ids), pool, metric)


def run_al_trial(source: TabularDataset, transfer: TabularDataset, seed_method: str, cfg: ALConfig,
                 seed: int, trial: int = 0, acquisition: Optional[str] = None) -> LearningCurve:
    """One replicate: hold out an evaluation split, seed, then acquire and refit.

    The evaluation split depends only on ``(seed, trial)`` so all methods in
    a replicate are scored on the same rows.
    """
    if not transfer.has_target:
        raise ConfigError("transfer pool needs oracle labels")
    acquisition = acquisition or cfg.acquisition
    params = cfg.params
    pool, evaluation = holdout_split(transfer, cfg.eval_fraction, derive_seed(seed, "eval", trial))
    cfg.validate(len(pool))
    method_seed = derive_seed(seed, "trial", trial, seed_method)

    labeled = list(seed_selection(seed_method, source, pool, cfg.n_seed, params, method_seed,
                                  cfg.gamma, cfg.default_gamma))
    embedding = None
    if acquisition == BLENDED_DPP and cfg.n_rounds > 0:
        Phi = rff_embedding(pool, params, derive_seed(method_seed, "al-rff"))[0]
        embedding = dict(zip(pool.row_ids.tolist(), Phi))

    sizes, scores = [], []
    for t in range(cfg.n_rounds + 1):
        train = pool.select_ids(labeled)
        e = fit_ensemble(train, params.m_trees, params.limits, seed=derive_seed(method_seed, "al-fit", t))
        sizes.append(len(labeled))
        scores.append(r_squared(evaluation.target, e.predict(evaluation)))
        if t == cfg.n_rounds:
            break
        unlabeled = pool.without_ids(labeled)
        emb = None if embedding is None else np.array([embedding[int(r)] for r in unlabeled.row_ids])
        batch = acquire_batch(e, unlabeled, cfg.m_collect, acquisition, emb, params,
                              seed=derive_seed(method_seed, "al-acquire", t))
        labeled.extend(int(r) for r in batch)
    return LearningCurve(np.array(sizes), np.array(scores), trial, seed_method, cfg.n_seed,
                         np.array(labeled, dtype=np.int64))
