"""Chi-bar-squared machinery: orthant projection, mixture weights, tails.

The boundary LRS limit is a mixture sum_k w_k chi2(k) where w_k is the
probability that the projection of X ~ N(0, A^-1) onto the cone
{z: z_1..z_p >= 0} has exactly k strictly positive constrained coordinates.
Projections are in the A metric and solved exactly by enumerating active
sets and certifying the KKT conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

__all__ = [
    "ChiBarMixture", "ProjectionResult", "NotSPD", "ExponentialBlowup",
    "project_onto_orthant", "weights_closed_form", "weights_closed_form_p2",
    "mc_weights", "chi2_sf", "mixture_sf", "mixture_quantile",
]


class NotSPD(ValueError):
    """Metric matrix is not symmetric positive definite."""


class ExponentialBlowup(ValueError):
    """Active-set enumeration refused for p > 20."""


@dataclass(frozen=True)
class ChiBarMixture:
    """Weights of sum_k weights[k] * chi2(k), k = 0..p."""

    p: int
    weights: tuple
    provenance: str
    draws: int | None = None
    seed: int | None = None
    std_errs: tuple | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if len(w) != self.p + 1:
            raise ValueError("need p+1 weights")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")


@dataclass(frozen=True)
class ProjectionResult:
    z_star: np.ndarray
    active_set: frozenset
    objective: float


def _check_spd(A):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise NotSPD("matrix must be square")
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12):
        raise NotSPD("matrix must be symmetric")
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("matrix must be positive definite") from exc
    return 0.5 * (A + A.T)


def project_onto_orthant(A: np.ndarray, x: np.ndarray, p: int) -> ProjectionResult:
    """Minimize (x-z)' A (x-z) over z with the leading p coordinates >= 0.

    Enumerates candidate active sets from largest to smallest; a candidate
    certifies when the stationary point is feasible and all multipliers are
    nonnegative.  Ties at zero land in the active set.
    """
    A = _check_spd(A)
    x = np.asarray(x, dtype=float)
    d = A.shape[0]
    if x.shape != (d,):
        raise ValueError("x must match the metric dimension")
    if not 0 <= p <= d:
        raise ValueError("p must be between 0 and d")
    if p > 20:
        raise ExponentialBlowup(
            "2^p active sets with p > 20; use a numeric QP instead")

    masks = sorted(range(1 << p), key=lambda m: (-bin(m).count("1"), m))
    for mask in masks:
        active = [i for i in range(p) if mask >> i & 1]
        free = [i for i in range(d) if not (mask >> i & 1 and i < p)]
        z = np.zeros(d)
        if free:
            # stationarity on free coordinates: [A(z - x)]_F = 0
            if active:
                AFF = A[np.ix_(free, free)]
                rhs = A[np.ix_(free, active)] @ x[active]
                z[free] = x[free] + np.linalg.solve(AFF, rhs)
            else:
                z[free] = x[free]
        lam = A[np.ix_(active, range(d))] @ (z - x) if active else np.empty(0)
        if np.all(z[:p] >= 0.0) and np.all(lam >= 0.0):
            diff = x - z
            return ProjectionResult(z_star=z, active_set=frozenset(active),
                                    objective=float(diff @ A @ diff))
    raise RuntimeError("no active set certified; metric likely ill-conditioned")


def weights_closed_form(p: int) -> ChiBarMixture:
    """Exact weights for a single constrained coordinate: (1/2, 1/2)."""
    if p != 1:
        raise ValueError("closed form without a metric exists only for p=1")
    return ChiBarMixture(p=1, weights=(0.5, 0.5), provenance="closed_form_p1")


def weights_closed_form_p2(A2: np.ndarray) -> ChiBarMixture:
    """Exact weights for two constrained coordinates with metric A2.

    w2 = arccos(r)/(2 pi) with r the correlation of A2, w1 = 1/2,
    w0 = 1/2 - w2.  Independent coordinates give (1/4, 1/2, 1/4).
    """
    A2 = _check_spd(A2)
    if A2.shape != (2, 2):
        raise ValueError("A2 must be 2x2")
    r = A2[0, 1] / math.sqrt(A2[0, 0] * A2[1, 1])
    r = min(1.0, max(-1.0, r))
    w2 = math.acos(r) / (2.0 * math.pi)
    return ChiBarMixture(p=2, weights=(0.5 - w2, 0.5, w2),
                         provenance="closed_form_p2")


def _zero_counts_orthant(X, S):
    """Active-set sizes of orthant projections of rows of X in metric S.

    Vectorized over draws: for each candidate active set, solve the
    stationarity system for all rows at once and certify KKT; masks are
    visited largest-first so ties land in the larger active set, matching
    project_onto_orthant.
    """
    n, p = X.shape
    n_zero = np.full(n, -1, dtype=np.int64)
    masks = sorted(range(1 << p), key=lambda m: (-bin(m).count("1"), m))
    undecided = np.ones(n, dtype=bool)
    for mask in masks:
        if not undecided.any():
            break
        active = [i for i in range(p) if mask >> i & 1]
        free = [i for i in range(p) if not mask >> i & 1]
        idx = np.nonzero(undecided)[0]
        Xi = X[idx]
        z_free = Xi[:, free]
        if active and free:
            SFF = S[np.ix_(free, free)]
            SFA = S[np.ix_(free, active)]
            z_free = Xi[:, free] + Xi[:, active] @ np.linalg.solve(SFF, SFA).T
        ok = np.ones(len(idx), dtype=bool)
        if free:
            ok &= np.all(z_free >= 0.0, axis=1)
        if active:
            # multipliers [S(z - x)]_active; z_active = 0
            if free:
                lam = (z_free - Xi[:, free]) @ S[np.ix_(free, active)] \
                    - Xi[:, active] @ S[np.ix_(active, active)].T
            else:
                lam = -Xi[:, active] @ S[np.ix_(active, active)].T
            ok &= np.all(lam >= 0.0, axis=1)
        hit = idx[ok]
        n_zero[hit] = len(active)
        undecided[hit] = False
    if (n_zero < 0).any():
        raise RuntimeError("projection certification failed for some draws")
    return n_zero


def mc_weights(A: np.ndarray, p: int, draws: int = 200_000,
               seed: int = 0) -> ChiBarMixture:
    """Monte Carlo weights: draw X ~ N(0, A^-1), project, count positives.

    The unconstrained trailing block never changes the active set, so draws
    and projections are reduced to the leading p coordinates with the Schur
    complement metric.  weights[k] estimates P(p - k active constraints).
    """
    A = _check_spd(A)
    d = A.shape[0]
    if not 0 <= p <= d:
        raise ValueError("p must be between 0 and d")
    if p > 20:
        raise ExponentialBlowup(
            "2^p active sets with p > 20; use a numeric QP instead")
    if p == 0:
        return ChiBarMixture(p=0, weights=(1.0,), provenance="mc",
                             draws=draws, seed=seed, std_errs=(0.0,))
    Sigma = np.linalg.inv(A)[:p, :p]
    S = np.linalg.inv(Sigma)          # Schur complement of the free block
    L = np.linalg.cholesky(Sigma)
    rng = np.random.default_rng(seed)
    counts = np.zeros(p + 1, dtype=np.int64)
    chunk = 100_000
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        X = rng.standard_normal((m, p)) @ L.T
        nz = _zero_counts_orthant(X, S)
        counts += np.bincount(nz, minlength=p + 1)
        done += m
    freq = counts / draws
    # weight on chi2(k) is the frequency of k positives = p - k actives
    w = freq[::-1].copy()
    se = np.sqrt(w * (1.0 - w) / draws)
    return ChiBarMixture(p=p, weights=tuple(w), provenance="mc",
                         draws=draws, seed=seed, std_errs=tuple(se))


def chi2_sf(k: int, x: float) -> float:
    """Upper tail of chi-squared with k df; k = 0 is a point mass at 0."""
    if k == 0:
        return 0.0 if x >= 0 else 1.0
    if x <= 0:
        return 1.0
    return float(gammaincc(0.5 * k, 0.5 * x))


def mixture_sf(m: ChiBarMixture, x: float) -> float:
    """P(chi-bar > x); right continuous, sf(0) = 1 - w_0."""
    return float(sum(w * chi2_sf(k, x) for k, w in enumerate(m.weights)))


def mixture_quantile(m: ChiBarMixture, a: float) -> float:
    """Upper-tail quantile: smallest q >= 0 with sf(q) <= a."""
    if not 0.0 < a < 1.0:
        raise ValueError("level must be in (0,1)")
    if mixture_sf(m, 0.0) <= a:
        return 0.0
    lo, hi = 0.0, 1.0
    while mixture_sf(m, hi) > a:
        hi *= 2.0
        if hi > 1e8:
            raise RuntimeError("quantile bracket failed")
    while hi - lo > 1e-10:
        mid = 0.5 * (lo + hi)
        if mixture_sf(m, mid) > a:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
