"""Comparison seed-selection strategies: random, PCA voxel grid, loss coreset."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import TabularDataset
from .ensemble import BaggedEnsemble

log = logging.getLogger(__name__)


@dataclass
class SelectionResult:
    row_ids: np.ndarray
    method: str
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.row_ids)

    def to_csv(self, path, header_comment: str = "") -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id"])
            for r in self.row_ids:
                w.writerow([int(r)])


def _check_k(d: TabularDataset, k: int):
    if k < 0 or k > len(d):
        raise ValueError(f"k={k} must lie in [0, N={len(d)}]")


def select_random(d: TabularDataset, k: int, seed: int = 0) -> SelectionResult:
    _check_k(d, k)
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(d), size=k, replace=False)
    return SelectionResult(d.row_ids[pick], "random", {"seed": seed})


def pca_project(d: TabularDataset, n_components: int) -> np.ndarray:
    """Scores on the leading principal axes of the standardized one-hot features."""
    X = d.one_hot()
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    Z = (X - mu) / np.where(sd > 0, sd, 1.0)
    Z[:, sd == 0] = 0.0
    cov = Z.T @ Z / max(len(Z), 1)
    lam, U = np.linalg.eigh(cov)
    order = np.argsort(lam)[::-1][:n_components]
    U = U[:, order]
    # sign convention: largest-magnitude loading positive
    flip = np.sign(U[np.argmax(np.abs(U), axis=0), np.arange(U.shape[1])])
    U = U * np.where(flip == 0, 1.0, flip)
    return Z @ U


def voxel_labels(scores: np.ndarray, bins_per_axis: int) -> np.ndarray:
    """Equal-width bins over the observed range of each axis, flattened to one label."""
    n, p = scores.shape
    labels = np.zeros(n, dtype=np.int64)
    for j in range(p):
        lo, hi = scores[:, j].min(), scores[:, j].max()
        # spreads at round-off level (e.g. an axis of exact duplicates) count as one bin
        if hi - lo > 1e-9 * max(1.0, abs(lo), abs(hi)):
            b = np.floor((scores[:, j] - lo) / (hi - lo) * bins_per_axis).astype(np.int64)
            b = np.clip(b, 0, bins_per_axis - 1)
        else:
            b = np.zeros(n, dtype=np.int64)
        labels = labels * bins_per_axis + b
    return labels


def select_pca_grid(d: TabularDataset, k: int, bins_per_axis: int = 4, n_components=None,
                    seed: int = 0, trace: list = None) -> SelectionResult:
    """Round-robin over non-empty PCA voxels in random order, one uniform point per visit.

    If ``trace`` is a list, the voxel label of every visit is appended to it.
    """
    _check_k(d, k)
    rng = np.random.default_rng(seed)
    width = d.one_hot().shape[1]
    if n_components is None:
        n_components = min(5, width)
    n_components = max(1, min(n_components, width))
    if k == 0:
        return SelectionResult(d.row_ids[:0], "pca_grid", {"seed": seed})
    labels = voxel_labels(pca_project(d, n_components), bins_per_axis)
    voxels = np.unique(labels)
    members = {v: list(rng.permutation(np.flatnonzero(labels == v))) for v in voxels}
    visit = list(rng.permutation(voxels))
    picked = []
    while len(picked) < k:
        nxt = []
        for v in visit:
            if len(picked) >= k:
                break
            picked.append(members[v].pop())
            if trace is not None:
                trace.append(int(v))
            if members[v]:
                nxt.append(v)
        visit = nxt
    cfg = {"seed": seed, "bins_per_axis": bins_per_axis, "n_components": n_components}
    return SelectionResult(d.row_ids[np.array(picked, dtype=np.int64)], "pca_grid", cfg)


def weighted_sample_without_replacement(weights, k: int, rng: np.random.Generator) -> np.ndarray:
    """Sequential draws, each proportional to the weights of the untaken items.

    Once the positive mass is used up the remaining picks are uniform over
    the untaken items.
    """
    w = np.asarray(weights, dtype=float).copy()
    taken = np.zeros(len(w), dtype=bool)
    out = np.empty(k, dtype=np.int64)
    for s in range(k):
        total = w.sum()
        if total > 0:
            j = int(np.searchsorted(np.cumsum(w), rng.random() * total, side="right"))
            j = min(j, len(w) - 1)
            while w[j] <= 0:
                j -= 1
        else:
            free = np.flatnonzero(~taken)
            j = int(free[rng.integers(len(free))])
        out[s] = j
        taken[j] = True
        w[j] = 0.0
    return out


def loss_weights(e: BaggedEnsemble, d: TabularDataset) -> np.ndarray:
    """Squared out-of-bag residual per row of ``d`` (0 where no tree is out-of-bag)."""
    d = d.select_ids(e.row_ids)
    oob = e.oob_predictions(d)
    w = (d.target - oob) ** 2
    return np.where(np.isfinite(w), w, 0.0)


def select_loss_coreset(d: TabularDataset, e: BaggedEnsemble, k: int, seed: int = 0, weights=None) -> SelectionResult:
    """Importance sampling without replacement, proportional to squared OOB residuals."""
    _check_k(d, k)
    rng = np.random.default_rng(seed)
    if weights is None:
        sub = d.select_ids(e.row_ids)
        w = loss_weights(e, sub)
        ids = sub.row_ids
    else:
        w = np.asarray(weights, dtype=float)
        ids = d.row_ids
    if not np.any(w > 0):
        log.warning("all loss-coreset weights are zero; falling back to uniform sampling")
        w = np.ones_like(w)
    pick = weighted_sample_without_replacement(w, k, rng)
    return SelectionResult(ids[pick], "loss_coreset", {"seed": seed, "weights": "squared_oob_residual"})
