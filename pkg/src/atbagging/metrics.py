"""Normalized accuracy, NAULC, pairwise beta-binomial comparisons and HDI bands."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import beta as beta_dist

JEFFREYS = 0.5


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class TrialRecord:
    dataset: str
    method: str
    n_seed: int
    trial: int
    n_train: int
    r2: float
    accuracy: float = float("nan")


@dataclass
class TrialTable:
    records: list = field(default_factory=list)

    FIELDS = ("dataset", "method", "n_seed", "trial", "n_train", "r2", "accuracy")

    def __post_init__(self):
        keys = [(r.dataset, r.method, r.n_seed, r.trial, r.n_train) for r in self.records]
        if len(set(keys)) != len(keys):
            raise MetricsError("duplicate (dataset, method, n_seed, trial, n_train) record")

    def __len__(self):
        return len(self.records)

    @classmethod
    def from_curves(cls, dataset: str, curves) -> "TrialTable":
        recs = [TrialRecord(dataset, c.method, c.n_seed, c.trial, int(n), float(r))
                for c in curves for n, r in zip(c.n_train, c.r2)]
        return cls(recs)

    def to_csv(self, path, comment: str = "") -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.FIELDS)
            for r in self.records:
                w.writerow([r.dataset, r.method, r.n_seed, r.trial, r.n_train, repr(r.r2), repr(r.accuracy)])

    @classmethod
    def from_csv(cls, path) -> "TrialTable":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            rows = [line for line in fh if not line.startswith("#")]
        recs = []
        for row in csv.DictReader(rows):
            recs.append(TrialRecord(row["dataset"], row["method"], int(row["n_seed"]), int(row["trial"]),
                                    int(row["n_train"]), float(row["r2"]), float(row.get("accuracy") or "nan")))
        return cls(recs)

    def curves(self):
        """{(dataset, method, n_seed, trial): (n_train array, accuracy array, r2 array)} sorted by n_train."""
        acc = defaultdict(list)
        for r in self.records:
            acc[(r.dataset, r.method, r.n_seed, r.trial)].append((r.n_train, r.accuracy, r.r2))
        out = {}
        for key in sorted(acc):
            pts = sorted(acc[key])
            out[key] = tuple(np.array(v) for v in zip(*pts))
        return out


def normalize_accuracy(t: TrialTable) -> TrialTable:
    """accuracy = r2 / (max r2 over all trials of the same dataset)."""
    best = defaultdict(lambda: -math.inf)
    for r in t.records:
        best[r.dataset] = max(best[r.dataset], r.r2)
    for ds, b in best.items():
        if not b > 0:
            raise MetricsError(f"dataset {ds!r}: max r2 = {b} <= 0, accuracy undefined")
    return TrialTable([TrialRecord(r.dataset, r.method, r.n_seed, r.trial, r.n_train, r.r2, r.r2 / best[r.dataset])
                       for r in t.records])


def naulc(n_train, accuracy) -> float:
    """Trapezoidal area under accuracy vs training size, divided by the size range."""
    x = np.asarray(n_train, dtype=float)
    y = np.asarray(accuracy, dtype=float)
    if len(x) < 2:
        raise MetricsError("NAULC needs at least 2 curve points")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    span = x[-1] - x[0]
    if span <= 0:
        raise MetricsError("training sizes must span a positive range")
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)) / span)


@dataclass
class PairwiseComparison:
    n_train: int
    wins: int
    ties: int
    losses: int
    alpha: float
    beta: float
    lower: float
    upper: float

    @property
    def n_trials(self) -> int:
        return self.wins + self.ties + self.losses

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    @property
    def win_rate(self) -> float:
        decided = self.wins + self.losses
        return self.wins / decided if decided else float("nan")


def pairwise_beta_binomial(a_scores: dict, b_scores: dict, n_train: int = 0, mass: float = 0.90) -> PairwiseComparison:
    """Posterior for P(A beats B) from trials paired by id, Jeffreys prior, ties dropped."""
    paired = sorted(set(a_scores) & set(b_scores))
    if not paired:
        raise MetricsError(f"no paired trials at n_train={n_train}")
    wins = sum(a_scores[t] > b_scores[t] for t in paired)
    losses = sum(a_scores[t] < b_scores[t] for t in paired)
    ties = len(paired) - wins - losses
    a, b = JEFFREYS + wins, JEFFREYS + losses
    tail = 0.5 * (1.0 - mass)
    lo, hi = beta_dist.ppf([tail, 1.0 - tail], a, b)
    return PairwiseComparison(n_train, wins, ties, losses, a, b, float(lo), float(hi))


def hdi_band(values, mass: float = 0.90):
    """Shortest window of sorted values holding ceil(mass * n) of them; ties to the lowest start."""
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    if n < 2:
        raise MetricsError("HDI needs at least 2 trials")
    m = min(n, max(1, math.ceil(mass * n - 1e-12)))
    widths = v[m - 1:] - v[: n - m + 1]
    i = int(np.argmin(widths))
    return float(v[i]), float(v[i + m - 1])


def sign_test_pvalue(diffs) -> float:
    """One-sided exact sign test for median(diffs) > 0; zeros dropped."""
    d = np.asarray(diffs, float)
    pos, neg = int(np.sum(d > 0)), int(np.sum(d < 0))
    n = pos + neg
    if n == 0:
        return 1.0
    return float(sum(math.comb(n, j) for j in range(pos, n + 1)) / 2 ** n)


def summarize(table: TrialTable, reference: str = "atbagging", mass: float = 0.90) -> dict:
    """Report payload: NAULC per method, accuracy bands, ITP, pairwise win curves."""
    t = normalize_accuracy(table)
    curves = t.curves()
    out = {"datasets": {}}
    for ds in sorted({k[0] for k in curves}):
        ds_out = {}
        for n_seed in sorted({k[2] for k in curves if k[0] == ds}):
            methods = sorted({k[1] for k in curves if k[0] == ds and k[2] == n_seed})
            block = {"methods": {}, "pairwise": {}}
            per_method = {}
            for m in methods:
                trials = {k[3]: v for k, v in curves.items() if k[0] == ds and k[1] == m and k[2] == n_seed}
                per_method[m] = trials
                sizes = sorted({int(n) for v in trials.values() for n in v[0]})
                scores = [naulc(v[0], v[1]) for v in trials.values() if len(v[0]) >= 2]
                bands = []
                for n in sizes:
                    vals = [float(v[1][list(v[0]).index(n)]) for v in trials.values() if n in v[0]]
                    band = hdi_band(vals, mass) if len(vals) >= 2 else (vals[0], vals[0])
                    bands.append({"n_train": n, "mean": float(np.mean(vals)), "hdi_lower": band[0], "hdi_upper": band[1]})
                itp = [float(v[1][0]) for v in trials.values()]
                block["methods"][m] = {
                    "n_trials": len(trials),
                    "naulc_mean": float(np.mean(scores)) if scores else None,
                    "naulc_std": float(np.std(scores)) if scores else None,
                    "naulc_by_trial": {str(k): naulc(v[0], v[1]) for k, v in sorted(trials.items()) if len(v[0]) >= 2},
                    "itp_mean": float(np.mean(itp)),
                    "accuracy_bands": bands,
                }
            ref = reference if reference in per_method else (methods[0] if methods else None)
            for m in methods:
                if m == ref:
                    continue
                rows = []
                sizes = sorted({int(n) for v in per_method[ref].values() for n in v[0]})
                for n in sizes:
                    a = {tr: float(v[2][list(v[0]).index(n)]) for tr, v in per_method[ref].items() if n in v[0]}
                    b = {tr: float(v[2][list(v[0]).index(n)]) for tr, v in per_method[m].items() if n in v[0]}
                    if not set(a) & set(b):
                        continue
                    pc = pairwise_beta_binomial(a, b, n, mass)
                    rows.append({"n_train": n, "wins": pc.wins, "ties": pc.ties, "losses": pc.losses,
                                 "posterior_mean": pc.mean, "ci_lower": pc.lower, "ci_upper": pc.upper})
                ra = block["methods"][ref]["naulc_by_trial"]
                rb = block["methods"][m]["naulc_by_trial"]
                common = sorted(set(ra) & set(rb), key=int)
                diffs = [ra[k] - rb[k] for k in common]
                block["pairwise"][f"{ref}_vs_{m}"] = {
                    "by_n_train": rows,
                    "naulc_mean_diff": float(np.mean(diffs)) if diffs else None,
                    "naulc_sign_test_p": sign_test_pvalue(diffs) if diffs else None,
                }
            ds_out[str(n_seed)] = block
        out["datasets"][ds] = ds_out
    return out
