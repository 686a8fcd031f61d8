"""Command-line front end: ``atbagging {score,select,experiment,report}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 interrupted.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from numpy.linalg import LinAlgError

from .active import ConfigError
from .config import config_hash, load_config, load_datasets, selection_params
from .dataset import DatasetError
from .dpp import InsufficientRank, SamplingFailed
from .ensemble import fit_ensemble
from .experiment import report_from_trials, run_experiment
from .infogain import choose_probe_set, score_all
from .metrics import MetricsError
from .selection import METHODS, derive_seed, select

log = logging.getLogger("atbagging")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INTERRUPTED = 0, 2, 3, 4
NUMERIC_ERRORS = (ArithmeticError, LinAlgError, SamplingFailed, InsufficientRank, MetricsError)


def _prepare(args):
    """Load config and data; every failure here is a configuration error."""
    cfg = load_config(args.config, args.set or ())
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    if getattr(args, "output", None):
        cfg["output"] = args.output
    source, transfer = load_datasets(cfg)
    return cfg, source, transfer


def _output_dir(cfg) -> Path:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_score(args) -> int:
    try:
        cfg, source, transfer = _prepare(args)
        params = selection_params(cfg)
        if len(source) < 2:
            raise ConfigError("source dataset needs at least 2 rows")
    except (DatasetError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    h = config_hash(cfg)
    e = fit_ensemble(source, params.m_trees, params.limits, seed=derive_seed(cfg["seed"], "score", "ensemble"))
    probe = choose_probe_set(transfer, params.probe_cap, seed=derive_seed(cfg["seed"], "score", "probe"))
    scores = score_all(e, source, probe, params.noise_var, params.diagonal_covariance)
    path = _output_dir(cfg) / "scores.csv"
    scores.to_csv(path, header_comment=f"config_hash={h} noise_var={scores.noise_var!r}")
    log.info("wrote %d scores to %s", len(scores.ig), path)
    return EXIT_OK


def cmd_select(args) -> int:
    try:
        cfg, source, transfer = _prepare(args)
        params = selection_params(cfg)
        if args.method not in METHODS:
            raise ConfigError(f"unknown method {args.method!r}")
        if not 0 <= args.k <= len(source):
            raise ConfigError(f"k={args.k} must lie in [0, N={len(source)}]")
    except (DatasetError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    h = config_hash(cfg)
    sel = select(args.method, source, args.k, cfg["seed"], probe_pool=transfer, params=params)
    path = _output_dir(cfg) / f"selection_{args.method}.csv"
    sel.to_csv(path, header_comment=f"config_hash={h} method={args.method} k={args.k}")
    log.info("wrote %d row ids to %s", len(sel), path)
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        cfg = load_config(args.config, args.set or ())
        if args.workers is not None:
            cfg["workers"] = args.workers
        if args.output:
            cfg["output"] = args.output
    except (DatasetError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    # worker count must not change the hash: outputs are identical for any pool size
    workers = cfg.pop("workers")
    out = cfg.pop("output")
    report = run_experiment(cfg, out, workers=workers)
    log.info("experiment complete: %d tasks, report in %s", report["tasks_total"], out)
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.trials)
    if not path.is_file():
        raise ConfigError(f"no such trials file: {path}")
    out = args.out or str(path.with_name("report_recomputed.json"))
    report_from_trials(path, out)
    log.info("wrote %s", out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atbagging", description="Seed-subset selection for transfer active learning.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        sp.add_argument("--output", help="output directory")

    sp = sub.add_parser("score", help="information-gain score for every source row")
    common(sp)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("select", help="select k source rows with one method")
    common(sp)
    sp.add_argument("--method", default="atbagging", choices=METHODS)
    sp.add_argument("-k", type=int, required=True)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("experiment", help="full factorial active-learning experiment")
    common(sp)
    sp.add_argument("--workers", type=int, help="process pool size")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("report", help="recompute a report from trials.csv")
    sp.add_argument("trials")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except KeyboardInterrupt:
        print("interrupted; partial outputs are marked incomplete", file=sys.stderr)
        return EXIT_INTERRUPTED


if __name__ == "__main__":
    sys.exit(main())
