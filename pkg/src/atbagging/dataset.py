"""Tabular datasets: CSV loading, encoding, standardization and splitting.

Categorical cells are stored as integer codes (first-appearance order) in the
same float matrix as numeric cells, so every downstream module can work on a
single ``values`` array and ask for a one-hot expansion when it needs
geometry.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"


class DatasetError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = NUMERIC
    categories: tuple = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DatasetError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL and len(self.categories) == 0:
            raise DatasetError(f"column {self.name!r}: categorical column needs >= 1 category")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass
class TabularDataset:
    """N rows over a fixed column schema, with an optional real target.

    ``values`` is an (N, d) float array. Categorical columns hold integer
    codes into ``schema[j].categories``. ``row_ids`` are stable identifiers
    that survive splits and selections.
    """

    schema: list
    values: np.ndarray
    target: Optional[np.ndarray] = None
    row_ids: Optional[np.ndarray] = None
    target_name: str = "y"
    _id_index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1, len(self.schema))
        n = self.values.shape[0]
        if self.row_ids is None:
            self.row_ids = np.arange(n, dtype=np.int64)
        self.row_ids = np.asarray(self.row_ids, dtype=np.int64)
        if self.row_ids.shape != (n,):
            raise DatasetError("row_ids length must equal the number of rows")
        if len(np.unique(self.row_ids)) != n:
            raise DatasetError("row_ids must be unique")
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=float)
            if self.target.shape != (n,):
                raise DatasetError(f"target length {self.target.shape} != N={n}")
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise DatasetError("column names must be unique")
        for j, col in enumerate(self.schema):
            if col.is_categorical and n:
                codes = self.values[:, j]
                if np.any(codes < 0) or np.any(codes >= len(col.categories)) or np.any(codes != np.round(codes)):
                    raise DatasetError(f"column {col.name!r}: code outside category list")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_columns(self) -> int:
        return len(self.schema)

    @property
    def has_target(self) -> bool:
        return self.target is not None

    @property
    def numeric_columns(self) -> list:
        return [j for j, c in enumerate(self.schema) if not c.is_categorical]

    @property
    def categorical_columns(self) -> list:
        return [j for j, c in enumerate(self.schema) if c.is_categorical]

    @property
    def all_numeric(self) -> bool:
        return not self.categorical_columns

    def index_of(self, row_ids) -> np.ndarray:
        """Positions of ``row_ids`` in this dataset; KeyError if absent."""
        if self._id_index is None:
            self._id_index = {int(r): i for i, r in enumerate(self.row_ids)}
        try:
            return np.array([self._id_index[int(r)] for r in np.atleast_1d(row_ids)], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"unknown row_id {exc.args[0]}") from None

    def take(self, positions) -> "TabularDataset":
        positions = np.asarray(positions, dtype=np.int64)
        return TabularDataset(
            schema=list(self.schema),
            values=self.values[positions],
            target=None if self.target is None else self.target[positions],
            row_ids=self.row_ids[positions],
            target_name=self.target_name,
        )

    def select_ids(self, row_ids) -> "TabularDataset":
        return self.take(self.index_of(row_ids))

    def without_ids(self, row_ids) -> "TabularDataset":
        drop = np.isin(self.row_ids, np.asarray(list(row_ids), dtype=np.int64))
        return self.take(np.flatnonzero(~drop))

    def with_target(self, target, target_name: Optional[str] = None) -> "TabularDataset":
        return TabularDataset(
            schema=list(self.schema),
            values=self.values.copy(),
            target=target,
            row_ids=self.row_ids.copy(),
            target_name=target_name or self.target_name,
        )

    def conforms_to(self, schema: Sequence[ColumnSchema]) -> bool:
        return [(c.name, c.kind, tuple(c.categories)) for c in self.schema] == [
            (c.name, c.kind, tuple(c.categories)) for c in schema
        ]

    def one_hot(self) -> np.ndarray:
        """Numeric columns as-is, each categorical column expanded to 0/1 indicators."""
        return self.values[:, :0] if self.n_columns == 0 else one_hot_encode(self.schema, self.values)


def one_hot_encode(schema: Sequence[ColumnSchema], values: np.ndarray) -> np.ndarray:
    blocks = []
    for j, col in enumerate(schema):
        if col.is_categorical:
            codes = values[:, j].astype(np.int64)
            blocks.append(np.eye(len(col.categories))[codes])
        else:
            blocks.append(values[:, j : j + 1])
    return np.hstack(blocks) if blocks else np.zeros((values.shape[0], 0))


def encoded_column_groups(schema: Sequence[ColumnSchema]) -> list:
    """For each original column, the list of one-hot matrix columns it occupies."""
    groups, start = [], 0
    for col in schema:
        width = len(col.categories) if col.is_categorical else 1
        groups.append(list(range(start, start + width)))
        start += width
    return groups


# --- CSV ---------------------------------------------------------------------

def _parse_finite(cell: str):
    try:
        v = float(cell)
    except ValueError:
        return None
    return v


def load_csv(path, target_column: Optional[str] = None, schema_hint: Optional[Sequence[ColumnSchema]] = None) -> TabularDataset:
    """Read a headered CSV into a :class:`TabularDataset`.

    Columns missing from ``schema_hint`` are inferred: numeric when every
    cell parses as a real number, otherwise categorical. Empty cells and
    non-finite numbers are rejected with the offending row index.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: missing header row")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise DatasetError("empty dataset")
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DatasetError(f"row {i}: expected {len(header)} cells, got {len(r)}")
    if target_column is not None and target_column not in header:
        raise DatasetError(f"target column {target_column!r} not in header")
    hints = {c.name: c for c in (schema_hint or ())}

    columns = list(zip(*body))
    schema, cols = [], []
    target = None
    for name, cells in zip(header, columns):
        for i, cell in enumerate(cells):
            if cell.strip() == "":
                raise DatasetError(f"row {i}: missing value in column {name!r}")
        hint = hints.get(name)
        parsed = [_parse_finite(c) for c in cells]
        numeric = all(v is not None for v in parsed) if hint is None else not hint.is_categorical
        if name == target_column or numeric:
            if any(v is None for v in parsed):
                i = next(i for i, v in enumerate(parsed) if v is None)
                raise DatasetError(f"row {i}: non-numeric value {cells[i]!r} in numeric column {name!r}")
            for i, v in enumerate(parsed):
                if not math.isfinite(v):
                    raise DatasetError(f"row {i}: non-finite value {cells[i]!r} in column {name!r}")
            arr = np.array(parsed, dtype=float)
            if name == target_column:
                target = arr
                continue
            schema.append(ColumnSchema(name, NUMERIC))
            cols.append(arr)
        else:
            if hint is not None and hint.categories:
                cats = list(hint.categories)
                lookup = {c: k for k, c in enumerate(cats)}
                missing = [c for c in cells if c not in lookup]
                if missing:
                    raise DatasetError(f"column {name!r}: value {missing[0]!r} not among hinted categories")
            else:
                cats, lookup = [], {}
                for c in cells:
                    if c not in lookup:
                        lookup[c] = len(cats)
                        cats.append(c)
            schema.append(ColumnSchema(name, CATEGORICAL, tuple(cats)))
            cols.append(np.array([lookup[c] for c in cells], dtype=float))
    values = np.column_stack(cols) if cols else np.zeros((len(body), 0))
    return TabularDataset(schema=schema, values=values, target=target, target_name=target_column or "y")


def write_csv(d: TabularDataset, path, include_row_id: bool = False) -> None:
    path = Path(path)
    header = (["row_id"] if include_row_id else []) + [c.name for c in d.schema]
    if d.has_target:
        header.append(d.target_name)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(d)):
            row = [str(int(d.row_ids[i]))] if include_row_id else []
            for j, col in enumerate(d.schema):
                v = d.values[i, j]
                row.append(col.categories[int(v)] if col.is_categorical else repr(float(v)))
            if d.has_target:
                row.append(repr(float(d.target[i])))
            w.writerow(row)


# --- standardization ---------------------------------------------------------

@dataclass
class Standardizer:
    """Per numeric column mean and population standard deviation."""

    columns: list
    mean: np.ndarray
    std: np.ndarray

    def transform(self, d: TabularDataset) -> TabularDataset:
        values = d.values.copy()
        if self.columns:
            cols = values[:, self.columns]
            safe = np.where(self.std > 0, self.std, 1.0)
            out = (cols - self.mean) / safe
            out[:, self.std == 0] = 0.0
            values[:, self.columns] = out
        return TabularDataset(list(d.schema), values, d.target, d.row_ids.copy(), d.target_name)

    def inverse_transform(self, d: TabularDataset) -> TabularDataset:
        values = d.values.copy()
        if self.columns:
            values[:, self.columns] = values[:, self.columns] * self.std + self.mean
        return TabularDataset(list(d.schema), values, d.target, d.row_ids.copy(), d.target_name)


def standardize_fit_transform(d: TabularDataset):
    if len(d) < 1:
        raise DatasetError("cannot standardize an empty dataset")
    cols = d.numeric_columns
    block = d.values[:, cols]
    mean = block.mean(axis=0)
    std = block.std(axis=0)
    # exact-constant columns must come out as exactly zero
    std[np.all(block == block[:1], axis=0)] = 0.0
    scaler = Standardizer(cols, mean, std)
    return scaler.transform(d), scaler


# --- splitting ---------------------------------------------------------------

def split_domain(d: TabularDataset, predicate: Callable[[dict], bool]):
    """Partition rows by ``predicate(row)``; rows are dicts of decoded cells."""
    mask = np.zeros(len(d), dtype=bool)
    for i in range(len(d)):
        row = {}
        for j, col in enumerate(d.schema):
            v = d.values[i, j]
            row[col.name] = col.categories[int(v)] if col.is_categorical else float(v)
        row["row_id"] = int(d.row_ids[i])
        mask[i] = bool(predicate(row))
    return d.take(np.flatnonzero(mask)), d.take(np.flatnonzero(~mask))


def holdout_split(d: TabularDataset, fraction: float, seed: int):
    """Uniform random split into (kept, held_out) with ``round(fraction * N)`` held out."""
    rng = np.random.default_rng(seed)
    n_hold = int(round(fraction * len(d)))
    perm = rng.permutation(len(d))
    hold = np.sort(perm[:n_hold])
    keep = np.sort(perm[n_hold:])
    return d.take(keep), d.take(hold)


# --- synthetic transfer tasks ------------------------------------------------

NOISE_STD = 0.1


def source_function(x: np.ndarray) -> np.ndarray:
    x2 = x[:, 1] if x.shape[1] > 1 else 0.0
    return np.sin(2.0 * x[:, 0]) + x2 ** 2


def auxiliary_function(x: np.ndarray) -> np.ndarray:
    x2 = x[:, 1] if x.shape[1] > 1 else 0.0
    return np.cos(2.0 * x[:, 0]) - x2


def transfer_function(x: np.ndarray, rho: float) -> np.ndarray:
    return rho * source_function(x) + math.sqrt(max(0.0, 1.0 - rho * rho)) * auxiliary_function(x)


def make_synthetic_transfer(
    n_source: int,
    n_transfer: int,
    dims: int,
    target_correlation: float,
    shift: float,
    seed: int,
    shared_features: Optional[bool] = None,
):
    """Build a (source, transfer) pair of regression datasets.

    With ``shared_features`` (default: ``shift == 0``) the transfer pool is
    the first ``n_transfer`` source points carrying the new target and the
    same row ids, i.e. a target-transfer task. Otherwise the transfer
    features are a fresh normal cloud offset by ``shift`` with row ids
    starting at ``n_source``.
    """
    if dims < 1:
        raise DatasetError("dims must be >= 1")
    if not 0.0 <= target_correlation <= 1.0:
        raise DatasetError("target_correlation must lie in [0, 1]")
    if shift < 0:
        raise DatasetError("shift must be >= 0")
    if shared_features is None:
        shared_features = shift == 0
    rng = np.random.default_rng(seed)
    schema = [ColumnSchema(f"x{j + 1}", NUMERIC) for j in range(dims)]

    xs = rng.standard_normal((n_source, dims))
    ys = source_function(xs) + NOISE_STD * rng.standard_normal(n_source)
    source = TabularDataset(schema, xs, ys, np.arange(n_source), target_name="y")

    if shared_features:
        if n_transfer > n_source:
            raise DatasetError("shared-feature transfer pool cannot exceed the source size")
        xt = xs[:n_transfer].copy()
        ids = np.arange(n_transfer)
    else:
        xt = rng.standard_normal((n_transfer, dims)) + shift
        ids = n_source + np.arange(n_transfer)
    yt = transfer_function(xt, target_correlation) + NOISE_STD * rng.standard_normal(n_transfer)
    transfer = TabularDataset(list(schema), xt, yt, ids, target_name="y_transfer")
    return source, transfer
