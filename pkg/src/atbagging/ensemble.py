"""CART regression trees and bagged ensembles with explicit bootstrap membership."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _cart
from .dataset import ColumnSchema, TabularDataset, encoded_column_groups, one_hot_encode

FORMAT_VERSION = 1


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class TreeLimits:
    """Training limits. ``max_depth=None`` grows until leaves are pure or minimal.

    ``max_features`` is the number of candidate original columns per split;
    ``None`` means ``max(1, d // 3)``.
    """

    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    max_features: Optional[int] = None

    def mtry(self, n_columns: int) -> int:
        if self.max_features is None:
            return max(1, n_columns // 3)
        return max(1, min(int(self.max_features), n_columns))


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    node_depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        return int(self.node_depth.max())

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict_encoded(self, Xe: np.ndarray) -> np.ndarray:
        return _cart.route(np.ascontiguousarray(Xe, dtype=float), self.feature, self.threshold, self.left, self.right, self.value)

    def apply_encoded(self, Xe: np.ndarray) -> np.ndarray:
        return _cart.leaf_index(np.ascontiguousarray(Xe, dtype=float), self.feature, self.threshold, self.left, self.right)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(v) for v in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(v) for v in self.value],
            "node_depth": self.node_depth.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=float),
            np.asarray(d["node_depth"], dtype=np.int64),
        )


def _layout(schema):
    groups = encoded_column_groups(schema)
    start = np.array([g[0] if g else 0 for g in groups], dtype=np.int64)
    width = np.array([len(g) for g in groups], dtype=np.int64)
    return start, width


def _fit_encoded(Xe, y, positions, schema, limits: TreeLimits, rng: np.random.Generator) -> RegressionTree:
    start, width = _layout(schema)
    n = len(positions)
    keys = rng.random((2 * n + 1, len(schema)))
    max_depth = -1 if limits.max_depth is None else int(limits.max_depth)
    arrays = _cart.grow_tree(
        Xe, y, np.asarray(positions, dtype=np.int64), start, width,
        limits.mtry(len(schema)), max_depth, int(limits.min_samples_leaf), keys,
    )
    return RegressionTree(*arrays)


def fit_tree(d: TabularDataset, row_subset, limits: TreeLimits = TreeLimits(), rng_seed: int = 0) -> RegressionTree:
    """Fit one CART tree on the multiset ``row_subset`` of row ids of ``d``."""
    if not d.has_target:
        raise ValueError("dataset lacks a target")
    positions = d.index_of(row_subset)
    if len(positions) == 0:
        raise ValueError("row_subset is empty")
    Xe = np.ascontiguousarray(d.one_hot(), dtype=float)
    return _fit_encoded(Xe, d.target, positions, d.schema, limits, np.random.default_rng(rng_seed))


def tree_seed(master: int, tree_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(tree_index)])


@dataclass
class BaggedEnsemble:
    """M trees with the bootstrap draw (as per-row counts) that trained each."""

    trees: list
    inbag_counts: np.ndarray  # (M, N) draw multiplicities
    row_ids: np.ndarray
    schema: list
    limits: TreeLimits = field(default_factory=TreeLimits)
    seed: int = 0
    _id_index: dict = field(default=None, init=False, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def training_n(self) -> int:
        return len(self.row_ids)

    @property
    def inbag_mask(self) -> np.ndarray:
        return self.inbag_counts > 0

    def inbag_set(self, t: int) -> set:
        return set(self.row_ids[self.inbag_counts[t] > 0].tolist())

    def _position(self, row_id) -> int:
        if self._id_index is None:
            self._id_index = {int(r): i for i, r in enumerate(self.row_ids)}
        try:
            return self._id_index[int(row_id)]
        except KeyError:
            raise KeyError(f"row_id {row_id} was not in the training set") from None

    def partition_membership(self, row_id):
        """(in-bag tree indices, out-of-bag tree indices) for a training row."""
        col = self.inbag_counts[:, self._position(row_id)] > 0
        return np.flatnonzero(col), np.flatnonzero(~col)

    def _encode(self, X: TabularDataset) -> np.ndarray:
        if not X.conforms_to(self.schema):
            raise SchemaMismatch("probe data does not match the training schema")
        return np.ascontiguousarray(one_hot_encode(self.schema, X.values) if len(X) else np.zeros((0, 1)), dtype=float)

    def predict_matrix(self, X: TabularDataset) -> np.ndarray:
        """(M, n) matrix of per-tree predictions."""
        Xe = self._encode(X)
        if len(X) == 0:
            return np.zeros((self.n_trees, 0))
        return np.vstack([t.predict_encoded(Xe) for t in self.trees])

    def predict(self, X: TabularDataset) -> np.ndarray:
        return self.predict_matrix(X).mean(axis=0)

    def oob_predictions(self, d: TabularDataset) -> np.ndarray:
        """Mean out-of-bag prediction per training row; NaN where every tree is in-bag."""
        P = self.predict_matrix(d.select_ids(self.row_ids))
        oob = ~self.inbag_mask
        counts = oob.sum(axis=0)
        sums = np.where(oob, P, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    # --- serialization -----------------------------------------------------
    def to_json(self) -> str:
        payload = {
            "format": "atbagging-ensemble",
            "version": FORMAT_VERSION,
            "seed": int(self.seed),
            "limits": {
                "max_depth": self.limits.max_depth,
                "min_samples_leaf": self.limits.min_samples_leaf,
                "max_features": self.limits.max_features,
            },
            "schema": [{"name": c.name, "kind": c.kind, "categories": list(c.categories)} for c in self.schema],
            "row_ids": self.row_ids.tolist(),
            "inbag_counts": self.inbag_counts.tolist(),
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(payload, separators=(",", ":"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "BaggedEnsemble":
        p = json.loads(text)
        if p.get("format") != "atbagging-ensemble" or p.get("version") != FORMAT_VERSION:
            raise ValueError("unsupported ensemble file format")
        schema = [ColumnSchema(c["name"], c["kind"], tuple(c["categories"])) for c in p["schema"]]
        return cls(
            trees=[RegressionTree.from_dict(t) for t in p["trees"]],
            inbag_counts=np.asarray(p["inbag_counts"], dtype=np.int64).reshape(len(p["trees"]), -1),
            row_ids=np.asarray(p["row_ids"], dtype=np.int64),
            schema=schema,
            limits=TreeLimits(**p["limits"]),
            seed=p["seed"],
        )

    @classmethod
    def load(cls, path) -> "BaggedEnsemble":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def fit_ensemble(
    d: TabularDataset,
    m_trees: int = 100,
    limits: TreeLimits = TreeLimits(),
    seed: int = 0,
    n_jobs: int = 1,
    bootstrap: bool = True,
) -> BaggedEnsemble:
    """Fit ``m_trees`` trees, each on an independent N-draw bootstrap.

    Tree ``t`` draws its bootstrap and split randomness from a stream keyed
    by ``(seed, t)``, so results do not depend on ``n_jobs``.
    ``bootstrap=False`` trains every tree on the full data once (test mode).
    """
    if not d.has_target:
        raise ValueError("dataset lacks a target")
    n = len(d)
    if n < 2:
        raise ValueError("need at least 2 training rows")
    if m_trees < 1:
        raise ValueError("m_trees must be >= 1")
    Xe = np.ascontiguousarray(d.one_hot(), dtype=float)
    y = np.ascontiguousarray(d.target, dtype=float)

    def one(t):
        rng = np.random.default_rng(tree_seed(seed, t))
        draw = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        counts = np.bincount(draw, minlength=n)
        tree = _fit_encoded(Xe, y, np.sort(draw), d.schema, limits, rng)
        return tree, counts

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, range(m_trees)))
    else:
        results = [one(t) for t in range(m_trees)]
    return BaggedEnsemble(
        trees=[r[0] for r in results],
        inbag_counts=np.vstack([r[1] for r in results]).astype(np.int64),
        row_ids=d.row_ids.copy(),
        schema=list(d.schema),
        limits=limits,
        seed=seed,
    )


def min_ensemble_size_check(M: int, N: int) -> float:
    """Chance that at least one of N training points ends up in every one of M bootstraps.

    Such a point has no out-of-bag model. With per-bootstrap exclusion
    probability 1/e this is ``1 - (1 - (1 - 1/e)**M)**N``; the all-excluded
    event, of order ``e**-M``, is dropped. Evaluated with log1p/expm1.
    """
    if M < 0 or N < 0:
        raise ValueError("M and N must be non-negative")
    if N == 0:
        return 0.0
    if M == 0:
        return 1.0
    p_all = math.exp(M * math.log1p(-math.exp(-1.0)))
    if p_all >= 1.0:
        return 1.0
    return -math.expm1(N * math.log1p(-p_all))
