"""Nearest-neighbour matching of a source selection into a transfer pool."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .dataset import TabularDataset

MAHALANOBIS = "mahalanobis"
K_PROTOTYPES = "k_prototypes"
RIDGE = 1e-6
COND_FLOOR = 1e-8


@dataclass(frozen=True)
class DistanceMetric:
    """Mahalanobis distance (whitening by a Cholesky factor) or Huang's k-prototypes cost.

    k-prototypes: squared Euclidean over numeric columns plus ``gamma`` times
    the categorical mismatch count.
    """

    kind: str
    chol: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    gamma: float = 1.0
    numeric: tuple = ()
    categorical: tuple = ()

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Whitened numeric coordinates (Mahalanobis only)."""
        return solve_triangular(self.chol, (X - self.mean).T, lower=True).T

    def pairwise(self, A: TabularDataset, B: TabularDataset) -> np.ndarray:
        if self.kind == MAHALANOBIS:
            za = self.transform(A.values)
            zb = self.transform(B.values)
            sq = (za * za).sum(1)[:, None] + (zb * zb).sum(1)[None, :] - 2.0 * za @ zb.T
            return np.sqrt(np.maximum(sq, 0.0))
        num, cat = list(self.numeric), list(self.categorical)
        out = np.zeros((len(A), len(B)))
        if num:
            xa, xb = A.values[:, num], B.values[:, num]
            out += np.maximum((xa * xa).sum(1)[:, None] + (xb * xb).sum(1)[None, :] - 2.0 * xa @ xb.T, 0.0)
        if cat:
            ca, cb = A.values[:, cat], B.values[:, cat]
            out += self.gamma * (ca[:, None, :] != cb[None, :, :]).sum(axis=2)
        return out

    def distance(self, A: TabularDataset, B: TabularDataset) -> np.ndarray:
        return self.pairwise(A, B)


def fit_metric(pool: TabularDataset, gamma: Optional[float] = None, default_gamma: float = 1.0) -> DistanceMetric:
    """Mahalanobis for all-numeric pools, k-prototypes for mixed ones.

    A near-singular Mahalanobis covariance (smallest eigenvalue below
    ``1e-8`` of the largest) gets a ridge of ``1e-6 * trace / d``. For
    k-prototypes ``gamma`` defaults to half the mean numeric standard
    deviation, or ``default_gamma`` when there are no numeric columns.
    """
    if len(pool) == 0:
        raise ValueError("pool is empty")
    num = tuple(pool.numeric_columns)
    cat = tuple(pool.categorical_columns)
    if not cat:
        X = pool.values
        mean = X.mean(axis=0)
        cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True)) if len(X) > 1 else np.zeros((X.shape[1],) * 2)
        d = cov.shape[0]
        lam = np.linalg.eigvalsh(cov)
        # a well-conditioned covariance is used as is, keeping the distance exactly affine invariant
        if lam[0] <= COND_FLOOR * max(lam[-1], 0.0):
            ridge = RIDGE * np.trace(cov) / d
            cov = cov + (ridge if ridge > 0 else RIDGE) * np.eye(d)
        L = cholesky(cov, lower=True)
        return DistanceMetric(MAHALANOBIS, chol=L, mean=mean, numeric=num)
    if gamma is None:
        gamma = 0.5 * float(pool.values[:, list(num)].std(axis=0).mean()) if num else float(default_gamma)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return DistanceMetric(K_PROTOTYPES, gamma=float(gamma), numeric=num, categorical=cat)


def match_selection(source_points: TabularDataset, pool: TabularDataset, metric: DistanceMetric) -> np.ndarray:
    """Greedy, in selection order: each source row takes its nearest unmatched pool row.

    Ties go to the lowest pool row_id.
    """
    if len(source_points) == 0:
        raise ValueError("selection is empty")
    if len(pool) < len(source_points):
        raise ValueError("pool smaller than selection")
    D = metric.pairwise(source_points, pool)
    by_id = np.argsort(pool.row_ids, kind="stable")
    D = D[:, by_id]
    ids = pool.row_ids[by_id]
    free = np.ones(len(pool), dtype=bool)
    out = np.empty(len(source_points), dtype=np.int64)
    for i in range(len(source_points)):
        row = np.where(free, D[i], np.inf)
        j = int(np.argmin(row))
        free[j] = False
        out[i] = ids[j]
    return out
