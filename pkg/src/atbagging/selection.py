"""Seed-subset selection: the ATBagging pipeline and dispatch to the baselines."""

from __future__ import annotations

import logging
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .baselines import SelectionResult, select_loss_coreset, select_pca_grid, select_random
from .dataset import TabularDataset, standardize_fit_transform
from .dpp import build_l_ensemble, sample_k
from .ensemble import TreeLimits, fit_ensemble
from .infogain import choose_probe_set, score_all
from .rff import embed, fit_feature_map

log = logging.getLogger(__name__)

METHODS = ("atbagging", "random", "pca_grid", "loss_coreset")


def derive_seed(master: int, *keys) -> int:
    """Independent 63-bit seed for the stream named by ``keys`` under ``master``."""
    words = [int(master) & 0xFFFFFFFF, (int(master) >> 32) & 0xFFFFFFFF]
    for k in keys:
        words.append(k & 0xFFFFFFFF if isinstance(k, int) else zlib.crc32(str(k).encode()))
    state = np.random.SeedSequence(words).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


@dataclass(frozen=True)
class SelectionParams:
    m_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    max_features: Optional[int] = None
    noise_var: Union[str, float] = "oob"
    probe_cap: int = 256
    diagonal_covariance: bool = False
    rff_features: int = 512
    lengthscale: Union[str, float] = "median"
    beta: float = 1.0
    max_attempts: int = 1000
    pca_bins_per_axis: int = 4
    pca_components: Optional[int] = None

    @property
    def limits(self) -> TreeLimits:
        return TreeLimits(self.max_depth, self.min_samples_leaf, self.max_features)


def rff_embedding(d: TabularDataset, params: SelectionParams, seed: int):
    """Standardize numeric columns, one-hot categoricals, then embed."""
    Xe = standardize_fit_transform(d)[0].one_hot()
    fm = fit_feature_map(Xe, params.rff_features, params.lengthscale, seed=seed)
    return embed(fm, Xe), fm


@dataclass
class ATBaggingResult:
    selection: SelectionResult
    scores: object
    attempts: int
    scale: float
    fallback: bool
    extras: dict = field(default_factory=dict)


def select_atbagging(source: TabularDataset, k: int, probe_pool: Optional[TabularDataset] = None,
                     params: SelectionParams = SelectionParams(), seed: int = 0) -> ATBaggingResult:
    """Score every source row by in-bag/out-of-bag information gain, then draw a
    size-k DPP sample whose kernel mixes those scores with RFF similarity."""
    if k < 0 or k > len(source):
        raise ValueError(f"k={k} must lie in [0, N={len(source)}]")
    probe_pool = source if probe_pool is None else probe_pool
    e = fit_ensemble(source, params.m_trees, params.limits, seed=derive_seed(seed, "ensemble"))
    X_star = choose_probe_set(probe_pool, params.probe_cap, seed=derive_seed(seed, "probe"))
    scores = score_all(e, source, X_star, params.noise_var, diagonal=params.diagonal_covariance)
    Phi, fm = rff_embedding(source, params, derive_seed(seed, "rff"))
    le = build_l_ensemble(Phi, scores.ig, params.beta, row_ids=scores.row_ids)
    s = sample_k(le, k, np.random.default_rng(derive_seed(seed, "dpp")), params.max_attempts)
    cfg = asdict(params) | {"seed": seed, "noise_var_used": scores.noise_var, "lengthscale_used": fm.lengthscale,
                            "dpp_scale": s.scale, "dpp_attempts": s.attempts, "dpp_fallback": s.fallback,
                            "imputed_scores": scores.n_imputed}
    return ATBaggingResult(SelectionResult(s.row_ids, "atbagging", cfg), scores, s.attempts, s.scale, s.fallback)


def select(method: str, source: TabularDataset, k: int, seed: int,
           probe_pool: Optional[TabularDataset] = None, params: SelectionParams = SelectionParams()) -> SelectionResult:
    """Dispatch by method name. Each method draws from its own seed stream."""
    stream = derive_seed(seed, "select", method)
    if method == "atbagging":
        return select_atbagging(source, k, probe_pool, params, stream).selection
    if method == "random":
        return select_random(source, k, stream)
    if method == "pca_grid":
        return select_pca_grid(source, k, params.pca_bins_per_axis, params.pca_components, stream)
    if method == "loss_coreset":
        e = fit_ensemble(source, params.m_trees, params.limits, seed=derive_seed(stream, "ensemble"))
        return select_loss_coreset(source, e, k, derive_seed(stream, "draw"))
    raise ValueError(f"unknown selection method {method!r}; choose from {METHODS}")
