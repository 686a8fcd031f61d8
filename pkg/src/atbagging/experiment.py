"""Full-factorial experiment runs (method x n_seed x replicate) and their reports."""

from __future__ import annotations

import json
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .active import run_al_trial, same_domain
from .config import ASSUMPTIONS, DEFAULTS, al_config, config_hash, load_datasets, validate_against_data
from .metrics import TrialTable, normalize_accuracy, summarize
from .selection import derive_seed

log = logging.getLogger(__name__)

_SHARED = {}


def _run_task(task):
    method, n_seed, rep = task
    cfg = _SHARED["cfg"]
    curve = run_al_trial(_SHARED["source"], _SHARED["transfer"], method, al_config(cfg, n_seed, method),
                         seed=derive_seed(cfg["seed"], "experiment"), trial=rep)
    return curve


def tasks_for(cfg: dict):
    return [(m, k, r) for k in cfg["n_seed"] for m in cfg["methods"] for r in range(cfg["replicates"])]


def exercised_assumptions(cfg: dict, target_transfer: bool) -> dict:
    """The artifact defaults that actually shaped this run."""
    used = {}
    for key, note in ASSUMPTIONS.items():
        section, name = key.split(".", 1)
        if section == "selection" and cfg["selection"].get(name) != DEFAULTS["selection"].get(name):
            continue
        if section == "loss_coreset" and "loss_coreset" not in cfg["methods"]:
            continue
        if section == "transfer" and target_transfer:
            continue
        if key.startswith("selection.pca_") and "pca_grid" not in cfg["methods"]:
            continue
        if section == "active" and cfg["active"].get(name) != DEFAULTS["active"].get(name):
            continue
        used[key] = note
    return used


def _dump_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def curve_payload(curves) -> list:
    return [{"trial": c.trial, "method": c.method, "n_seed": c.n_seed,
             "n_train": [int(n) for n in c.n_train], "r2": [float(r) for r in c.r2]} for c in curves]


def write_outputs(out: Path, cfg: dict, curves, complete: bool, target_transfer: bool, n_tasks: int) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    name = cfg["dataset"]["name"]
    table = TrialTable.from_curves(name, curves)
    header = {"config_hash": h, "complete": complete, "tasks_done": len(curves), "tasks_total": n_tasks}
    assumptions = exercised_assumptions(cfg, target_transfer)
    _dump_json(out / "config.json", {"config_hash": h, "config": cfg})
    _dump_json(out / "assumptions.json", {"config_hash": h, "assumptions": assumptions})
    _dump_json(out / "curves.json", header | {"curves": curve_payload(curves)})
    report = dict(header)
    report["setting"] = "target_transfer" if target_transfer else "feature_shift"
    report["config"] = cfg
    report["assumptions"] = assumptions
    try:
        report["summary"] = summarize(table) if len(table) else {}
        table = normalize_accuracy(table)
    except ValueError as exc:
        report["summary"] = {"error": str(exc)}
    table.to_csv(out / "trials.csv", comment=f"config_hash={h} complete={str(complete).lower()}")
    _dump_json(out / "report.json", report)
    marker = out / "INCOMPLETE"
    if complete:
        if marker.exists():
            marker.unlink()
    else:
        marker.write_text(f"interrupted after {len(curves)}/{n_tasks} tasks; config_hash={h}\n", encoding="utf-8")
    return report


def run_experiment(cfg: dict, out_dir, workers: int = 1) -> dict:
    """Run every (method, n_seed, replicate) trial and write the report directory.

    Output bytes depend only on ``cfg``: each trial seeds itself from the
    config and results are gathered in task order whatever ``workers`` is.
    """
    source, transfer = load_datasets(cfg)
    validate_against_data(cfg, source, transfer)
    out = Path(out_dir)
    tasks = tasks_for(cfg)
    target_transfer = same_domain(source, transfer)
    _SHARED.update(cfg=cfg, source=source, transfer=transfer)
    curves = []
    try:
        if workers > 1:
            pool = ProcessPoolExecutor(max_workers=workers, mp_context=multiprocessing.get_context("fork"))
            try:
                for c in pool.map(_run_task, tasks):
                    curves.append(c)
            finally:
                pool.shutdown(wait=True, cancel_futures=True)
        else:
            for t in tasks:
                curves.append(_run_task(t))
                log.info("finished %s (%d/%d)", t, len(curves), len(tasks))
    except KeyboardInterrupt:
        write_outputs(out, cfg, curves, False, target_transfer, len(tasks))
        raise
    return write_outputs(out, cfg, curves, True, target_transfer, len(tasks))


def report_from_trials(trials_csv, out_path=None) -> dict:
    """Recompute the summary from an existing trials.csv."""
    path = Path(trials_csv)
    first = path.read_text(encoding="utf-8").splitlines()[:1]
    meta = {}
    if first and first[0].startswith("#"):
        for part in first[0][1:].split():
            if "=" in part:
                k, v = part.split("=", 1)
                meta[k] = v
    table = TrialTable.from_csv(path)
    report = {"config_hash": meta.get("config_hash"), "complete": meta.get("complete") == "true",
              "summary": summarize(table)}
    if out_path:
        _dump_json(Path(out_path), report)
    return report
