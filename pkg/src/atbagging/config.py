"""Run configuration: YAML file plus ``--set key=value`` overrides, validated up front."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import yaml

from .active import BLENDED_DPP, QBC_TOPK, ALConfig, ConfigError
from .dataset import DatasetError, TabularDataset, load_csv, make_synthetic_transfer
from .selection import METHODS, SelectionParams

DEFAULTS = {
    "dataset": {
        "name": "synthetic",
        "synthetic": {
            "n_source": 2000,
            "n_transfer": 2000,
            "dims": 4,
            "target_correlation": 0.9,
            "shift": 0.0,
            "seed": 0,
        },
        "source": None,
        "transfer": None,
    },
    "methods": list(METHODS),
    "n_seed": [10],
    "replicates": 15,
    "seed": 0,
    "active": {
        "m_collect": 20,
        "n_rounds": 14,
        "eval_fraction": 0.2,
        "acquisition": {"atbagging": BLENDED_DPP, "default": QBC_TOPK},
    },
    "selection": {f.name: f.default for f in fields(SelectionParams)},
    "transfer": {"gamma": None, "default_gamma": 1.0},
    "output": "atbagging-out",
    "workers": 1,
}

# Defaults that are artifact choices rather than fixed by the method; echoed into reports.
ASSUMPTIONS = {
    "selection.max_features": "None -> max(1, d // 3) candidate columns per split",
    "selection.max_depth": "unlimited depth, min_samples_leaf = 1",
    "selection.noise_var": "'oob' -> mean squared out-of-bag residual, floored at 1e-6 * var(y)",
    "selection.probe_cap": "probe set capped at 256 transfer-pool rows",
    "selection.lengthscale": "'median' -> median pairwise squared distance (1000-point subsample)",
    "selection.rff_features": "R = 512 random Fourier features",
    "selection.beta": "quality exponent 1",
    "selection.max_attempts": "1000 size-k attempts, then closest-size trim/fill fallback",
    "selection.pca_bins_per_axis": "4 equal-width bins per principal axis",
    "selection.pca_components": "None -> min(5, d) components",
    "loss_coreset.weights": "squared out-of-bag residual as the loss-influence proxy",
    "transfer.gamma": "None -> 0.5 * mean numeric std (k-prototypes); Mahalanobis ridge 1e-6 * trace / d only when near-singular",
    "transfer.matching": "greedy nearest neighbour without replacement",
    "active.acquisition": "atbagging runs use blended_dpp, baselines qbc_topk",
    "active.eval_fraction": "20% of the transfer pool held out per replicate",
    "metrics.normalizer": "max r2 over every trial of the dataset",
    "metrics.ties": "exact r2 ties excluded from beta-binomial counts",
    "rff.frequencies": "omega ~ N(0, I / lengthscale), i.e. kernel exp(-|x-y|^2 / (2 lengthscale))",
    "dpp.eig_clamp": "eigenvalues below 1e-10 * max treated as 0",
}


_STRICT = {"", "dataset.", "dataset.synthetic.", "active.", "selection.", "transfer."}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        where = f"{path}{k}"
        if k not in out and path in _STRICT:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v, where + ".")
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, assignment: str) -> None:
    """``a.b.c=value``; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path: Optional[str] = None, overrides=()) -> dict:
    raw = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
    for o in overrides:
        apply_override(raw, o)
    cfg = _merge(DEFAULTS, raw)
    validate(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    """Identity of a run; output location and pool size do not change results, so they are left out."""
    cfg = {k: v for k, v in cfg.items() if k not in ("output", "workers")}
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def selection_params(cfg: dict) -> SelectionParams:
    return SelectionParams(**cfg["selection"])


def al_config(cfg: dict, n_seed: int, method: Optional[str] = None) -> ALConfig:
    a = cfg["active"]
    acq = a["acquisition"]
    mode = acq.get(method, acq.get("default", QBC_TOPK)) if isinstance(acq, dict) else acq
    t = cfg["transfer"]
    return ALConfig(n_seed=n_seed, m_collect=a["m_collect"], n_rounds=a["n_rounds"], acquisition=mode,
                    eval_fraction=a["eval_fraction"], params=selection_params(cfg),
                    gamma=t["gamma"], default_gamma=float(t["default_gamma"]))


def _check_int(name, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}")


def validate(cfg: dict) -> None:
    """Type and range checks that need no data."""
    methods = cfg["methods"]
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods must be a non-empty list")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    if not isinstance(cfg["n_seed"], list) or not cfg["n_seed"]:
        raise ConfigError("n_seed must be a non-empty list")
    for k in cfg["n_seed"]:
        _check_int("n_seed", k, 1)
    _check_int("replicates", cfg["replicates"], 1)
    _check_int("seed", cfg["seed"])
    _check_int("workers", cfg["workers"], 1)
    a = cfg["active"]
    _check_int("active.m_collect", a["m_collect"], 1)
    _check_int("active.n_rounds", a["n_rounds"], 0)
    acq = a["acquisition"]
    modes = acq.values() if isinstance(acq, dict) else [acq]
    for mode in modes:
        if mode not in (QBC_TOPK, BLENDED_DPP):
            raise ConfigError(f"unknown acquisition mode {mode!r}")
    if not 0 < float(a["eval_fraction"]) < 1:
        raise ConfigError("active.eval_fraction must lie in (0, 1)")
    s = cfg["selection"]
    unknown = set(s) - {f.name for f in fields(SelectionParams)}
    if unknown:
        raise ConfigError(f"unknown selection keys {sorted(unknown)}")
    _check_int("selection.m_trees", s["m_trees"], 1)
    _check_int("selection.rff_features", s["rff_features"], 1)
    _check_int("selection.probe_cap", s["probe_cap"], 1)
    _check_int("selection.max_attempts", s["max_attempts"], 1)
    _check_int("selection.min_samples_leaf", s["min_samples_leaf"], 1)
    if s["max_depth"] is not None:
        _check_int("selection.max_depth", s["max_depth"], 0)
    if s["max_features"] is not None:
        _check_int("selection.max_features", s["max_features"], 1)
    if isinstance(s["noise_var"], str):
        if s["noise_var"] != "oob":
            raise ConfigError("selection.noise_var must be 'oob' or a positive number")
    elif not float(s["noise_var"]) > 0:
        raise ConfigError("selection.noise_var must be positive")
    if isinstance(s["lengthscale"], str):
        if s["lengthscale"] != "median":
            raise ConfigError("selection.lengthscale must be 'median' or a positive number")
    elif not float(s["lengthscale"]) > 0:
        raise ConfigError("selection.lengthscale must be positive")
    if float(s["beta"]) < 0:
        raise ConfigError("selection.beta must be >= 0")
    g = cfg["transfer"]["gamma"]
    if g is not None and float(g) < 0:
        raise ConfigError("transfer.gamma must be >= 0")
    ds = cfg["dataset"]
    if ds.get("source") is None:
        syn = ds["synthetic"]
        for key in ("n_source", "n_transfer", "dims"):
            _check_int(f"dataset.synthetic.{key}", syn[key], 1)
        if not 0 <= float(syn["target_correlation"]) <= 1:
            raise ConfigError("dataset.synthetic.target_correlation must lie in [0, 1]")
        if float(syn["shift"]) < 0:
            raise ConfigError("dataset.synthetic.shift must be >= 0")
    else:
        for side in ("source", "transfer"):
            side_cfg = ds.get(side)
            if not isinstance(side_cfg, dict) or "csv" not in side_cfg or "target" not in side_cfg:
                raise ConfigError(f"dataset.{side} needs 'csv' and 'target'")


def _load_side(side_cfg: dict) -> TabularDataset:
    try:
        d = load_csv(side_cfg["csv"], target_column=side_cfg["target"])
    except DatasetError as exc:
        raise ConfigError(str(exc)) from exc
    drop = side_cfg.get("drop") or []
    keep = [j for j, c in enumerate(d.schema) if c.name not in drop]
    missing = set(drop) - {c.name for c in d.schema}
    if missing:
        raise ConfigError(f"cannot drop unknown columns {sorted(missing)}")
    return TabularDataset([d.schema[j] for j in keep], d.values[:, keep], d.target, d.row_ids, d.target_name)


def load_datasets(cfg: dict):
    """(source, transfer) datasets named by the config."""
    ds = cfg["dataset"]
    if ds.get("source") is None:
        syn = ds["synthetic"]
        try:
            return make_synthetic_transfer(syn["n_source"], syn["n_transfer"], syn["dims"],
                                           float(syn["target_correlation"]), float(syn["shift"]), syn["seed"])
        except DatasetError as exc:
            raise ConfigError(str(exc)) from exc
    source = _load_side(ds["source"])
    transfer = _load_side(ds["transfer"])
    if not source.conforms_to(transfer.schema):
        raise ConfigError("source and transfer CSVs must share feature columns and categories")
    return source, transfer


def validate_against_data(cfg: dict, source: TabularDataset, transfer: TabularDataset) -> None:
    """Checks needing dataset sizes: every run must be feasible before any compute starts."""
    if len(source) < 2:
        raise ConfigError("source dataset needs at least 2 rows")
    pool = len(transfer) - int(round(float(cfg["active"]["eval_fraction"]) * len(transfer)))
    for k in cfg["n_seed"]:
        if k > len(source):
            raise ConfigError(f"n_seed={k} exceeds the source size {len(source)}")
        for m in cfg["methods"]:
            al_config(cfg, k, m).validate(pool)
