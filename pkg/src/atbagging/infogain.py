"""Per-point information gain from in-bag vs out-of-bag predictive distributions.

Each side's mixture of ``MVN(m(X*), noise_var * I)`` components is collapsed
to one Gaussian with matched moments, and the score is the closed-form KL
divergence from the out-of-bag (prior) Gaussian to the in-bag (posterior) one.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.linalg import cholesky, solve_triangular, LinAlgError

from .dataset import TabularDataset
from .ensemble import BaggedEnsemble

log = logging.getLogger(__name__)

NOISE_FLOOR_REL = 1e-6
NOISE_FLOOR_ABS = 1e-12


class DegenerateCovariance(ArithmeticError):
    """A covariance that must be positive definite failed to factorize."""


@dataclass
class GaussianMoments:
    mu: np.ndarray
    sigma: np.ndarray
    noise_var: float
    diagonal: bool = False

    @property
    def n_star(self) -> int:
        return len(self.mu)


def moments_from_predictions(P: np.ndarray, noise_var: float, diagonal: bool = False) -> GaussianMoments:
    """Moment-match the equal-weight mixture of ``N(P[t], noise_var * I)``.

    ``sigma = noise_var * I + (1/m) * sum_t (P[t] - mu)(P[t] - mu)^T``.
    With ``diagonal=True`` only the variances are kept (``sigma`` is then a
    vector).
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    m = P.shape[0]
    if m < 2:
        raise ValueError(f"need at least 2 model predictions, got {m}")
    if not noise_var > 0:
        raise ValueError("noise_var must be positive")
    mu = P.mean(axis=0)
    D = P - mu
    if diagonal:
        sigma = (D * D).mean(axis=0) + noise_var
    else:
        sigma = D.T @ D / m
        sigma = 0.5 * (sigma + sigma.T)
        sigma[np.diag_indices_from(sigma)] += noise_var
    return GaussianMoments(mu, sigma, float(noise_var), diagonal)


def _chol(S):
    try:
        return cholesky(S, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise DegenerateCovariance("covariance is not positive definite; check noise_var") from exc


def gaussian_kl(ib: GaussianMoments, oob: GaussianMoments) -> float:
    """KL( N(mu_ib, S_ib) || N(mu_oob, S_oob) ), clamped at 0 for round-off.

    ``0.5 * [tr(S_oob^-1 S_ib) + d^T S_oob^-1 d - n + ln det S_oob - ln det S_ib]``
    evaluated through Cholesky factors.
    """
    if ib.n_star != oob.n_star:
        raise ValueError("moment dimensions differ")
    n = ib.n_star
    dmu = oob.mu - ib.mu
    if ib.diagonal or oob.diagonal:
        a = ib.sigma if ib.diagonal else np.diag(ib.sigma)
        b = oob.sigma if oob.diagonal else np.diag(oob.sigma)
        if np.any(a <= 0) or np.any(b <= 0):
            raise DegenerateCovariance("non-positive variance")
        kl = 0.5 * (np.sum(a / b) + np.sum(dmu * dmu / b) - n + np.sum(np.log(b)) - np.sum(np.log(a)))
    else:
        L_oob = _chol(oob.sigma)
        L_ib = _chol(ib.sigma)
        W = solve_triangular(L_oob, L_ib, lower=True, check_finite=False)
        z = solve_triangular(L_oob, dmu, lower=True, check_finite=False)
        logdet_ratio = 2.0 * (np.sum(np.log(np.diag(L_oob))) - np.sum(np.log(np.diag(L_ib))))
        kl = 0.5 * (np.sum(W * W) + z @ z - n + logdet_ratio)
    kl = float(kl)
    if kl < 0:
        if kl < -1e-9:
            log.warning("KL evaluated to %g; clamping to 0", kl)
        kl = 0.0
    return kl


def scalar_gaussian_kl(mu_p, var_p, mu_q, var_q):
    """KL( N(mu_p, var_p) || N(mu_q, var_q) ) for scalars."""
    return 0.5 * (var_p / var_q + (mu_q - mu_p) ** 2 / var_q - 1.0 + np.log(var_q / var_p))


def _capacitance(U, s2):
    """Cholesky factor of ``I + U U^T / s2`` and its log-determinant."""
    cap = U @ U.T / s2
    cap[np.diag_indices_from(cap)] += 1.0
    Lc = _chol(cap)
    return Lc, 2.0 * np.sum(np.log(np.diag(Lc)))


def lowrank_gaussian_kl(P_ib: np.ndarray, P_oob: np.ndarray, noise_var: float) -> float:
    """Same value as ``gaussian_kl`` on the moment-matched pair, in O(m^2 n).

    Each covariance is ``s2 * I + U^T U`` with U the centred predictions
    over sqrt(m), so inverses and determinants reduce to m x m
    capacitance matrices (Woodbury / matrix determinant lemma).
    """
    s2 = float(noise_var)
    n = P_ib.shape[1]
    mu_i, mu_o = P_ib.mean(axis=0), P_oob.mean(axis=0)
    Ui = (P_ib - mu_i) / np.sqrt(P_ib.shape[0])
    Uo = (P_oob - mu_o) / np.sqrt(P_oob.shape[0])
    Lo, logdet_o = _capacitance(Uo, s2)
    _, logdet_i = _capacitance(Ui, s2)
    m_o = Uo.shape[0]
    # tr(S_o^-1) * s2 = n - m_o + tr(Cap_o^-1)
    inv_Lo = solve_triangular(Lo, np.eye(m_o), lower=True, check_finite=False)
    trace_noise = n - m_o + np.sum(inv_Lo * inv_Lo)
    cross = solve_triangular(Lo, Uo @ Ui.T, lower=True, check_finite=False)
    trace_spread = (np.sum(Ui * Ui) - np.sum(cross * cross) / s2) / s2
    dmu = mu_o - mu_i
    z = solve_triangular(Lo, Uo @ dmu, lower=True, check_finite=False)
    maha = (dmu @ dmu - z @ z / s2) / s2
    kl = 0.5 * (trace_noise + trace_spread + maha - n + logdet_o - logdet_i)
    return max(float(kl), 0.0)


@dataclass
class InfoGainScores:
    row_ids: np.ndarray
    ig: np.ndarray
    probe_ids: np.ndarray
    noise_var: float
    n_imputed: int = 0

    def to_csv(self, path, header_comment: str = "") -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row_id", "ig"])
            for r, v in zip(self.row_ids, self.ig):
                w.writerow([int(r), repr(float(v))])

    def as_dict(self) -> dict:
        return {int(r): float(v) for r, v in zip(self.row_ids, self.ig)}


def choose_probe_set(pool: TabularDataset, cap: int = 256, seed: int = 0) -> TabularDataset:
    """Uniform subsample without replacement of ``min(cap, len(pool))`` rows."""
    if len(pool) == 0:
        raise ValueError("probe pool is empty")
    if len(pool) <= cap:
        return pool
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(pool), size=cap, replace=False))
    return pool.take(pick)


def estimate_noise_var(e: BaggedEnsemble, d: TabularDataset) -> float:
    """Mean squared out-of-bag residual, floored relative to the target variance."""
    d = d.select_ids(e.row_ids)
    oob = e.oob_predictions(d)
    ok = np.isfinite(oob)
    floor = max(NOISE_FLOOR_REL * float(np.var(d.target)), NOISE_FLOOR_ABS)
    if not np.any(ok):
        return floor
    mse = float(np.mean((d.target[ok] - oob[ok]) ** 2))
    return max(mse, floor)


NoisePolicy = Union[str, float]


def score_all(
    e: BaggedEnsemble,
    d: TabularDataset,
    X_star: TabularDataset,
    noise_var: NoisePolicy = "oob",
    diagonal: bool = False,
) -> InfoGainScores:
    """Information-gain score for every training row of ``e``.

    ``noise_var`` is either a positive float or ``"oob"`` (see
    :func:`estimate_noise_var`). Rows whose in-bag or out-of-bag side has
    fewer than two trees get the median of the other scores.
    """
    if len(X_star) == 0:
        raise ValueError("probe set is empty")
    if isinstance(noise_var, str):
        if noise_var != "oob":
            raise ValueError(f"unknown noise_var policy {noise_var!r}")
        s2 = estimate_noise_var(e, d)
    else:
        s2 = float(noise_var)
    P = e.predict_matrix(X_star)
    inbag = e.inbag_mask
    n = e.training_n
    ig = np.full(n, np.nan)
    for i in range(n):
        col = inbag[:, i]
        m_ib = int(col.sum())
        if m_ib < 2 or e.n_trees - m_ib < 2:
            continue
        if not diagonal and max(m_ib, e.n_trees - m_ib) < P.shape[1]:
            ig[i] = lowrank_gaussian_kl(P[col], P[~col], s2)
        else:
            ig[i] = gaussian_kl(
                moments_from_predictions(P[col], s2, diagonal),
                moments_from_predictions(P[~col], s2, diagonal),
            )
    bad = ~np.isfinite(ig)
    n_bad = int(bad.sum())
    if n_bad:
        fill = float(np.median(ig[~bad])) if n_bad < n else 0.0
        log.info("%d rows lack 2 in-bag or 2 out-of-bag trees; imputing median score %g", n_bad, fill)
        ig[bad] = fill
    return InfoGainScores(e.row_ids.copy(), ig, X_star.row_ids.copy(), s2, n_bad)
