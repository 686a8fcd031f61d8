"""Random Fourier features for the squared-exponential kernel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np


@dataclass(frozen=True)
class FeatureMap:
    """``phi(x) = sqrt(2/R) * cos(omegas @ x + phases)``.

    Frequencies are drawn from ``N(0, I / lengthscale)``, which makes
    ``phi(x) . phi(y)`` an unbiased estimate of
    ``exp(-|x - y|^2 / (2 * lengthscale))``.
    """

    omegas: np.ndarray
    phases: np.ndarray
    lengthscale: float

    @property
    def n_features(self) -> int:
        return self.omegas.shape[0]

    @property
    def input_dim(self) -> int:
        return self.omegas.shape[1]

    def kernel(self, x, y) -> float:
        """The kernel this map approximates."""
        diff = np.asarray(x, float) - np.asarray(y, float)
        return float(np.exp(-diff @ diff / (2.0 * self.lengthscale)))


def median_heuristic(X: np.ndarray, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise squared distance over a subsample of at most ``max_points`` rows."""
    X = np.asarray(X, dtype=float)
    if len(X) > max_points:
        X = X[np.random.default_rng(seed).choice(len(X), max_points, replace=False)]
    sq = np.sum(X * X, axis=1)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    iu = np.triu_indices(len(X), k=1)
    vals = np.maximum(D[iu], 0.0)
    med = float(np.median(vals)) if len(vals) else 0.0
    return med if med > 0 else 1.0


def fit_feature_map(X: np.ndarray, R: int = 512, lengthscale: Union[str, float] = "median", seed: int = 0) -> FeatureMap:
    """Draw a map for inputs shaped like ``X`` (already numeric / one-hot encoded)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    if d < 1:
        raise ValueError("need at least one numeric input column")
    if R < 1:
        raise ValueError("R must be >= 1")
    if isinstance(lengthscale, str):
        if lengthscale != "median":
            raise ValueError(f"unknown lengthscale policy {lengthscale!r}")
        ell = median_heuristic(X, seed=seed)
    else:
        ell = float(lengthscale)
    if not ell > 0:
        raise ValueError("lengthscale must be positive")
    rng = np.random.default_rng(seed)
    omegas = rng.standard_normal((R, d)) / np.sqrt(ell)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=R)
    return FeatureMap(omegas, phases, ell)


def embed(fm: FeatureMap, X: np.ndarray) -> np.ndarray:
    """(N, R) feature matrix."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != fm.input_dim:
        raise ValueError(f"expected {fm.input_dim} columns, got {X.shape[1]}")
    return np.sqrt(2.0 / fm.n_features) * np.cos(X @ fm.omegas.T + fm.phases)
