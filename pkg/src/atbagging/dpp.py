"""Quality-diversity L-ensembles and fixed-size sampling via expected-size scaling.

The L-ensemble ``L = B^T B`` (``B`` is R x N, column i = q_i * phi_i) is never
materialized: its nonzero spectrum comes from the R x R dual matrix
``C = B B^T``. To draw a size-k subset the kernel is rescaled to ``a * L``
with ``a`` chosen so that the expected DPP size equals k, eigenvectors are
kept independently with probability ``a*lam / (1 + a*lam)`` until exactly k
survive, and the resulting projection DPP is sampled point by point.
Conditioning on k eigenvectors makes the output an exact k-DPP draw.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)

EIG_RTOL = 1e-10
RESIDUAL_RTOL = 1e-9


class InsufficientRank(ValueError):
    """Fewer positive eigenvalues than needed for the requested size."""


class SamplingFailed(RuntimeError):
    pass


@dataclass
class DualLEnsemble:
    B: np.ndarray  # (R, N)
    qualities: np.ndarray  # q_i
    eigvals: np.ndarray  # of C = B B^T, ascending, clamped
    eigvecs: np.ndarray  # (R, R) columns
    row_ids: np.ndarray
    scale: float = 1.0

    @property
    def n_items(self) -> int:
        return self.B.shape[1]

    @property
    def rank(self) -> int:
        return int(np.sum(self.eigvals > 0))

    def kernel(self) -> np.ndarray:
        """Dense N x N L; only sensible for small N (tests)."""
        return self.B.T @ self.B

    def item_eigvecs(self, which=None) -> np.ndarray:
        """Orthonormal eigenvectors of L (N x r) for the positive dual eigenpairs."""
        pos = np.flatnonzero(self.eigvals > 0)
        if which is not None:
            pos = pos[which]
        return (self.B.T @ self.eigvecs[:, pos]) / np.sqrt(self.eigvals[pos])


@dataclass
class SubsetSample:
    row_ids: np.ndarray
    attempts: int
    scale: float
    fallback: bool = False
    positions: np.ndarray = field(default=None, repr=False)


def build_l_ensemble(Phi: np.ndarray, qualities, beta: float = 1.0, row_ids=None) -> DualLEnsemble:
    """``L_ij = q_i phi_i . phi_j q_j`` with ``q = (quality / mean positive quality) ** beta``."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    qual = np.asarray(qualities, dtype=float)
    if qual.shape != (Phi.shape[0],):
        raise ValueError("one quality per row of Phi required")
    if np.any(qual < 0) or not np.all(np.isfinite(qual)):
        raise ValueError("qualities must be finite and non-negative")
    pos = qual > 0
    if not np.any(pos):
        raise ValueError("all qualities are zero")
    q = (qual / qual[pos].mean()) ** beta
    B = (Phi * q[:, None]).T
    C = B @ B.T
    lam, U = np.linalg.eigh(0.5 * (C + C.T))
    top = lam.max() if lam.size else 0.0
    lam = np.where(lam > EIG_RTOL * top, lam, 0.0) if top > 0 else np.zeros_like(lam)
    if row_ids is None:
        row_ids = np.arange(Phi.shape[0])
    return DualLEnsemble(B, q, lam, U, np.asarray(row_ids, dtype=np.int64))


def expected_size(eigvals, a: float) -> float:
    lam = np.asarray(eigvals, dtype=float)
    return float(np.sum(a * lam / (1.0 + a * lam)))


def solve_scale(eigvals, k_target: float, tol: float = 1e-8) -> float:
    """Scale ``a > 0`` with ``sum(a*lam / (1 + a*lam)) == k_target``, via Brent on log(a)."""
    lam = np.asarray(eigvals, dtype=float)
    lam = lam[lam > 0]
    if k_target <= 0:
        raise ValueError("k_target must be positive")
    if len(lam) <= k_target:
        raise InsufficientRank(f"{len(lam)} positive eigenvalues cannot give expected size {k_target}")

    def f(t):
        return expected_size(lam, np.exp(t)) - k_target

    lo = hi = -np.log(np.median(lam))
    while f(lo) > 0:
        lo -= 4.0
    while f(hi) < 0:
        hi += 4.0
    t = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    # Newton polish in log space; the map is smooth and increasing
    for _ in range(3):
        a = np.exp(t)
        resid = f(t)
        if abs(resid) < tol * 1e-3:
            break
        slope = np.sum(a * lam / (1.0 + a * lam) ** 2)
        t -= resid / slope
    a = float(np.exp(t))
    if abs(expected_size(lam, a) - k_target) >= tol:
        raise SamplingFailed("scale root finding did not converge")
    return a


def exact_subset_probability(L: np.ndarray, S) -> float:
    """``det(L_S) / det(L + I)`` by dense determinants (oracle for small N)."""
    L = np.asarray(L, dtype=float)
    S = list(S)
    num = np.linalg.det(L[np.ix_(S, S)]) if S else 1.0
    return float(num / np.linalg.det(L + np.eye(len(L))))


def _draw_eigen_sets(probs, k, n_draws, rng, max_attempts):
    """Bernoulli eigenvector selections conditioned on size k.

    Returns (index array (n_draws, k), attempts used per draw, leftover
    closest-size selections for draws that exhausted their budget).
    """
    n_eig = len(probs)
    chosen = np.empty((n_draws, k), dtype=np.int64)
    attempts = np.zeros(n_draws, dtype=np.int64)
    filled = np.zeros(n_draws, dtype=bool)
    best = [None] * n_draws
    todo = np.arange(n_draws)
    while len(todo):
        masks = rng.random((len(todo), n_eig)) < probs
        sizes = masks.sum(axis=1)
        attempts[todo] += 1
        hit = sizes == k
        if np.any(hit):
            rows = todo[hit]
            chosen[rows] = np.nonzero(masks[hit])[1].reshape(-1, k)
            filled[rows] = True
        miss = ~hit
        if max_attempts is not None:
            for j in np.flatnonzero(miss):
                d = todo[j]
                if best[d] is None or abs(sizes[j] - k) < abs(len(best[d]) - k):
                    best[d] = np.flatnonzero(masks[j])
        todo = todo[miss]
        if max_attempts is not None:
            todo = todo[attempts[todo] < max_attempts]
    exhausted = {int(d): best[d] for d in np.flatnonzero(~filled)}
    return chosen, attempts, filled, exhausted


def _projection_sample(V, rng):
    """Sequentially sample projection DPPs; ``V`` is (D, N, k) with orthonormal columns.

    Returns (D, k) item positions. The next item is drawn with probability
    proportional to the squared norm of its row after projecting out the
    rows already chosen.
    """
    D, N, k = V.shape
    out = np.empty((D, k), dtype=np.int64)
    r = np.einsum("dnk,dnk->dn", V, V)
    tol = RESIDUAL_RTOL * np.maximum(r.max(axis=1, keepdims=True), 1e-300)
    basis = np.zeros((D, k, k))
    rows = np.arange(D)
    for s in range(k):
        r = np.where(r > tol, r, 0.0)
        total = r.sum(axis=1)
        if np.any(total <= 0):
            raise SamplingFailed("projection DPP ran out of mass")
        u = rng.random(D) * total
        cum = np.cumsum(r, axis=1)
        pick = np.minimum((cum < u[:, None]).sum(axis=1), N - 1)
        # guard against landing on a zero-mass item through round-off
        zero = r[rows, pick] <= 0
        if np.any(zero):
            pick[zero] = np.argmax(r[zero], axis=1)
        out[:, s] = pick
        w = V[rows, pick, :].copy()
        for _ in range(2):
            if s:
                coef = np.einsum("dbk,dk->db", basis[:, :s, :], w)
                w -= np.einsum("db,dbk->dk", coef, basis[:, :s, :])
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        basis[:, s, :] = w
        r = r - np.einsum("dnk,dk->dn", V, w) ** 2
        r[rows, pick] = 0.0
    return out


def _complete_to_k(le: DualLEnsemble, picked: np.ndarray, k: int) -> np.ndarray:
    """Trim lowest-quality or add highest-quality items to reach exactly k."""
    picked = list(picked)
    q = le.qualities
    if len(picked) > k:
        picked.sort(key=lambda i: (q[i], -i))
        picked = picked[len(picked) - k :]
    else:
        order = sorted(range(le.n_items), key=lambda i: (-q[i], i))
        taken = set(picked)
        cols = {le.B[:, i].tobytes() for i in picked}
        for strict in (True, False):
            for i in order:
                if len(picked) >= k:
                    break
                if i in taken or (strict and le.B[:, i].tobytes() in cols):
                    continue
                picked.append(i)
                taken.add(i)
                cols.add(le.B[:, i].tobytes())
    return np.array(sorted(picked), dtype=np.int64)


def sample_k_many(le: DualLEnsemble, k: int, n_draws: int, rng: np.random.Generator,
                  max_attempts: Optional[int] = 1000, fallback: bool = True, chunk: int = 20000):
    """``n_draws`` independent size-k samples as an (n_draws, k) array of item positions.

    Also returns per-draw attempt counts and a mask of draws completed by
    the fallback rule.
    """
    if k < 0 or k > le.n_items:
        raise ValueError(f"k={k} outside [0, {le.n_items}]")
    if k == 0:
        return np.zeros((n_draws, 0), dtype=np.int64), np.zeros(n_draws, dtype=np.int64), np.zeros(n_draws, bool)
    if k == le.n_items:
        return np.tile(np.arange(k), (n_draws, 1)), np.zeros(n_draws, dtype=np.int64), np.zeros(n_draws, bool)
    pos = np.flatnonzero(le.eigvals > 0)
    lam = le.eigvals[pos]
    if k == len(lam):
        # a size-rank k-DPP keeps every eigenvector: no scale is needed (a -> inf)
        le.scale = float("inf")
        probs = np.ones(len(lam))
    else:
        a = solve_scale(le.eigvals, k)
        le.scale = a
        probs = a * lam / (1.0 + a * lam)
    Vall = le.item_eigvecs()  # (N, r)

    out = np.empty((n_draws, k), dtype=np.int64)
    attempts = np.zeros(n_draws, dtype=np.int64)
    used_fallback = np.zeros(n_draws, dtype=bool)
    per = max(1, chunk // max(1, le.n_items * k // 64 + 1))
    for lo in range(0, n_draws, per):
        hi = min(n_draws, lo + per)
        chosen, att, filled, exhausted = _draw_eigen_sets(probs, k, hi - lo, rng, max_attempts)
        attempts[lo:hi] = att
        ok = np.flatnonzero(filled)
        if len(ok):
            V = np.transpose(Vall[:, chosen[ok]], (1, 0, 2))  # (D, N, k)
            out[lo + ok] = np.sort(_projection_sample(V, rng), axis=1)
        for d, sel in exhausted.items():
            if not fallback:
                raise SamplingFailed(f"no size-{k} draw within {max_attempts} attempts")
            log.warning("DPP size-%d draw exhausted %s attempts; using closest-size fallback", k, max_attempts)
            if sel is None or len(sel) == 0:
                picked = np.zeros(0, dtype=np.int64)
            else:
                picked = _projection_sample(Vall[:, sel][None], rng)[0]
            out[lo + d] = _complete_to_k(le, picked, k)
            used_fallback[lo + d] = True
    return out, attempts, used_fallback


def sample_k(le: DualLEnsemble, k: int, rng: np.random.Generator, max_attempts: int = 1000,
             fallback: bool = True) -> SubsetSample:
    """One size-k subset from the expected-size-scaled ensemble."""
    pos, att, fb = sample_k_many(le, k, 1, rng, max_attempts=max_attempts, fallback=fallback)
    return SubsetSample(le.row_ids[pos[0]], int(att[0]), le.scale, bool(fb[0]), pos[0])

