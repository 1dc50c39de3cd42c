"""Exact simulation of marked Hawkes replicates by Ogata thinning.

The thinning bound is refreshed at every candidate and dominates the total
intensity over the whole remaining window: decaying kernels (exponential,
pareto) contribute their current value, the gamma kernel contributes the
running value for events past the mode 1/beta and the peak value beta/e for
younger ones, and a growing baseline contributes its end-of-horizon value.
Exponential kernels use an O(1) decay recursion; gamma and pareto intensities
are recomputed from the event history (optionally truncated where the
neglected kernel mass is below a tolerance).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import model as _model
from . import rng as _rng

_TIE_JITTER = 2.0 ** -40


@dataclass(frozen=True)
class EventSequence:
    """Timestamped, coordinate-labeled, marked events on [0, T_k] per coordinate.

    coords are 0-based; marks are NaN for unmarked models.  Timestamps must
    be strictly increasing (ties are a validation error on ingestion).
    """

    times: np.ndarray
    coords: np.ndarray
    marks: np.ndarray
    horizons: np.ndarray
    ties_jittered: int = 0

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.int64))
        object.__setattr__(self, "marks", np.asarray(self.marks, dtype=float))
        object.__setattr__(self, "horizons", np.asarray(self.horizons, dtype=float))
        n = len(self.times)
        if len(self.coords) != n or len(self.marks) != n:
            raise ValueError("times, coords, marks must have equal length")
        if n:
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("event times must be strictly increasing")
            if self.times[0] < 0:
                raise ValueError("negative event time")
            K = len(self.horizons)
            if np.any(self.coords < 0) or np.any(self.coords >= K):
                raise ValueError("coordinate label outside 1..K")
            if np.any(self.times > self.horizons[self.coords]):
                raise ValueError("event beyond its coordinate horizon")

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class Dataset:
    """n independent replicates sharing one set of horizons."""

    replicates: list
    horizons: np.ndarray = field(init=False)

    def __post_init__(self):
        if len(self.replicates) < 1:
            raise ValueError("a dataset needs at least one replicate")
        h = self.replicates[0].horizons
        for r in self.replicates:
            if not np.array_equal(r.horizons, h):
                raise ValueError("replicates disagree on horizons")
        object.__setattr__(self, "horizons", h)

    @property
    def n(self) -> int:
        return len(self.replicates)


class RunawaySimulation(Exception):
    """A replicate exceeded the configured maximum event count."""


_KERNEL_CODE = {"exponential": 0, "gamma": 1, "pareto": 2}
_BASE_CODE = {"constant": 0, "exponential_time": 1}
_GW_CODE = {"unit": 0, "identity": 1, "truncated_identity": 2}
_MD_CODE = {"none": 0, "half_normal_offset": 1, "custom_empirical": 2}


@njit(cache=True, nogil=True)
def _kernel_f_nb(code, s, beta):
    if code == 0:
        return beta * np.exp(-beta * s)
    if code == 1:
        return beta * beta * s * np.exp(-beta * s)
    return beta * (1.0 + s) ** (-(1.0 + beta))


@njit(cache=True, nogil=True)
def _future_max_f_nb(code, s, beta):
    # max of f over lags >= s; equals f(s) for decreasing kernels
    if code == 1 and s < 1.0 / beta:
        return beta * np.exp(-1.0)
    return _kernel_f_nb(code, s, beta)


@njit(cache=True, nogil=True)
def _baseline_value_nb(code, mu0, kappa, T, t):
    if code == 0:
        return mu0
    return mu0 * np.exp(kappa * t / T)


@njit(cache=True, nogil=True)
def _mark_and_weight_nb(state, md_code, md_delta, md_samples, gw_code, gw_cap):
    if md_code == 0:
        return np.nan, 1.0
    if md_code == 1:
        x = np.abs(_rng.next_normal(state)) + md_delta
    else:
        u = _rng.next_u01(state)
        x = md_samples[int(u * len(md_samples))]
    if gw_code == 0:
        g = 1.0
    elif gw_code == 1:
        g = x
    else:
        g = min(x, gw_cap)
    return x, g


@njit(cache=True, nogil=True)
def _thin_replicate(seed, K, Tmax, horizons,
                    base_code, mu0, kappa,
                    kern_code, alpha, beta,
                    gw_code, gw_cap, md_code, md_delta, md_samples,
                    trunc_lag, max_events):
    """One replicate of the full process on [0, Tmax].

    Returns (times, coords, marks, count, status); status 1 means runaway.
    Events of every coordinate are kept up to Tmax; per-coordinate horizon
    filtering happens in the caller (late events still excite others).
    """
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed

    cap = 1024
    times = np.empty(cap)
    coords = np.empty(cap, dtype=np.int64)
    marks = np.empty(cap)
    gvals = np.empty(cap)
    cnt = 0

    # exponential fast path: S[k, l] = sum_j alpha_kl beta_kl g_j exp(-beta_kl age)
    S = np.zeros((K, K))
    last_t = 0.0

    lam = np.empty(K)
    t = 0.0
    while True:
        # dominating bound over the remaining window
        B = 0.0
        for k in range(K):
            b0 = _baseline_value_nb(base_code, mu0[k], kappa[k], horizons[k], t)
            b1 = _baseline_value_nb(base_code, mu0[k], kappa[k], horizons[k], Tmax)
            B += max(b0, b1)
        if kern_code == 0:
            dt = t - last_t
            if dt > 0.0:
                for k in range(K):
                    for l in range(K):
                        S[k, l] *= np.exp(-beta[k, l] * dt)
                last_t = t
            B += S.sum()
        else:
            for j in range(cnt):
                age = t - times[j]
                if age > trunc_lag:
                    continue
                l = coords[j]
                for k in range(K):
                    if alpha[k, l] > 0.0:
                        B += alpha[k, l] * gvals[j] * _future_max_f_nb(kern_code, age, beta[k, l])
        if B <= 0.0:
            break
        w = _rng.next_exponential(state, B)
        tc = t + w
        if tc <= t:
            # sub-ulp interarrival; keep timestamps strictly increasing
            tc = np.nextafter(t, np.inf)
        if tc >= Tmax:
            break
        # true intensity at the candidate
        lam_tot = 0.0
        if kern_code == 0:
            dt = tc - last_t
            for k in range(K):
                lam[k] = _baseline_value_nb(base_code, mu0[k], kappa[k], horizons[k], tc)
                for l in range(K):
                    lam[k] += S[k, l] * np.exp(-beta[k, l] * dt)
                lam_tot += lam[k]
        else:
            for k in range(K):
                lam[k] = _baseline_value_nb(base_code, mu0[k], kappa[k], horizons[k], tc)
            for j in range(cnt):
                age = tc - times[j]
                if age > trunc_lag:
                    continue
                l = coords[j]
                for k in range(K):
                    if alpha[k, l] > 0.0:
                        lam[k] += alpha[k, l] * gvals[j] * _kernel_f_nb(kern_code, age, beta[k, l])
            for k in range(K):
                lam_tot += lam[k]
        t = tc
        u = _rng.next_u01(state)
        if u * B > lam_tot:
            continue
        # accepted: pick the coordinate, draw the mark
        v = _rng.next_u01(state) * lam_tot
        acc = 0.0
        kk = K - 1
        for k in range(K):
            acc += lam[k]
            if v <= acc:
                kk = k
                break
        x, g = _mark_and_weight_nb(state, md_code, md_delta, md_samples, gw_code, gw_cap)
        if cnt == cap:
            cap *= 2
            nt = np.empty(cap); nt[:cnt] = times; times = nt
            nc = np.empty(cap, dtype=np.int64); nc[:cnt] = coords; coords = nc
            nm = np.empty(cap); nm[:cnt] = marks; marks = nm
            ng = np.empty(cap); ng[:cnt] = gvals; gvals = ng
        times[cnt] = t
        coords[cnt] = kk
        marks[cnt] = x
        gvals[cnt] = g
        cnt += 1
        if cnt >= max_events:
            return times[:cnt], coords[:cnt], marks[:cnt], cnt, 1
        if kern_code == 0:
            dt = t - last_t
            if dt > 0.0:
                for k in range(K):
                    for l in range(K):
                        S[k, l] *= np.exp(-beta[k, l] * dt)
                last_t = t
            for k in range(K):
                S[k, kk] += alpha[k, kk] * beta[k, kk] * g
    return times[:cnt], coords[:cnt], marks[:cnt], cnt, 0


def truncation_lag(family: str, beta: float, tol: float = 1e-12) -> float:
    """Smallest lag L with int_L^inf f(s, beta) ds < tol."""
    if family == "exponential":
        return -math.log(tol) / beta
    if family == "pareto":
        return tol ** (-1.0 / beta) - 1.0
    if family == "gamma":
        # solve (1 + beta L) exp(-beta L) = tol by fixed-point on x = beta L
        x = -math.log(tol)
        for _ in range(100):
            x_new = -math.log(tol / (1.0 + x))
            if abs(x_new - x) < 1e-12 * x:
                x = x_new
                break
            x = x_new
        return x / beta
    raise ValueError(f"unknown kernel family {family!r}")


def simulate_replicate(spec: _model.ModelSpec, theta: _model.ParamVector,
                       seed: int, max_events: int = 1_000_000,
                       truncation: float | str | None = None) -> EventSequence:
    """One replicate by Ogata thinning; deterministic in the seed."""
    args = _sim_args(spec, theta, truncation)
    times, coords, marks, cnt, status = _thin_replicate(
        np.uint64(seed & _rng.MASK64), *args, max_events)
    if status != 0:
        rho = _model.validate(spec, theta).spectral_radius
        raise RunawaySimulation(
            f"replicate exceeded {max_events} events "
            f"(branching spectral radius {rho:.4g})")
    keep = times <= spec.horizons[coords]
    return EventSequence(times[keep], coords[keep], marks[keep], spec.horizons)


def _sim_args(spec, theta, truncation):
    mu0, kappa, alpha, beta = _model.expand_params(spec, theta)
    if truncation is None:
        trunc = math.inf
    elif truncation == "auto":
        used = beta[spec.layout.alpha_slots != -1]
        trunc = max(truncation_lag(spec.kernel, float(b)) for b in np.unique(used)) \
            if used.size else math.inf
    else:
        trunc = float(truncation)
    samples = spec.mark_samples if spec.mark_samples is not None else np.empty(0)
    return (spec.K, float(np.max(spec.horizons)), spec.horizons,
            _BASE_CODE[spec.baseline], mu0, kappa,
            _KERNEL_CODE[spec.kernel], alpha, beta,
            _GW_CODE[spec.mark_weight], float(spec.mark_cap),
            _MD_CODE[spec.mark_dist], float(spec.mark_delta),
            np.asarray(samples, dtype=float), trunc)


def simulate_dataset(spec: _model.ModelSpec, theta: _model.ParamVector,
                     n: int, master_seed: int, max_events: int = 1_000_000,
                     truncation: float | str | None = None) -> Dataset:
    """n independent replicates; replicate i uses split_seed(master_seed, i)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    reps = [simulate_replicate(spec, theta, _rng.split_seed(master_seed, i),
                               max_events, truncation)
            for i in range(n)]
    return Dataset(reps)


def aggregate(data: Dataset) -> EventSequence:
    """Superpose all replicates into one merged, strictly sorted sequence.

    Exact cross-replicate timestamp ties are broken by adding i * 2**-40
    seconds to the tied events of replicate i; the jitter count is recorded
    in the result's metadata.
    """
    times = np.concatenate([r.times for r in data.replicates])
    coords = np.concatenate([r.coords for r in data.replicates])
    marks = np.concatenate([r.marks for r in data.replicates])
    rep = np.concatenate([np.full(len(r), i, dtype=np.int64)
                          for i, r in enumerate(data.replicates)])
    order = np.lexsort((rep, times))
    times, coords, marks, rep = times[order], coords[order], marks[order], rep[order]
    jittered = 0
    if len(times) > 1:
        tie = np.zeros(len(times), dtype=bool)
        eq = times[1:] == times[:-1]
        tie[1:] |= eq
        tie[:-1] |= eq
        if np.any(tie):
            times = times.copy()
            times[tie] += rep[tie] * _TIE_JITTER
            jittered = int(np.count_nonzero(tie & (rep > 0)))
            order = np.lexsort((rep, times))
            times, coords, marks = times[order], coords[order], marks[order]
    return EventSequence(times, coords, marks, data.horizons, ties_jittered=jittered)


# ---------------------------------------------------------------------------
# JSON Lines dataset files
# ---------------------------------------------------------------------------

def save_jsonl(data: Dataset, path: str) -> None:
    """One replicate per line: {"id", "horizons", "events": [[t, k, x], ...]}
    with k 1-based and x null for unmarked events."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, r in enumerate(data.replicates):
            events = [[t, int(k) + 1, None if math.isnan(x) else x]
                      for t, k, x in zip(r.times.tolist(), r.coords.tolist(),
                                         r.marks.tolist())]
            fh.write(json.dumps({"id": i, "horizons": r.horizons.tolist(),
                                 "events": events}, separators=(",", ":")))
            fh.write("\n")


def load_jsonl(path: str) -> Dataset:
    """Parse a dataset file; validates sortedness and horizons per replicate."""
    reps = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                horizons = np.asarray(obj["horizons"], dtype=float)
                ev = obj["events"]
                times = np.array([e[0] for e in ev], dtype=float)
                coords = np.array([int(e[1]) - 1 for e in ev], dtype=np.int64)
                marks = np.array([np.nan if e[2] is None else float(e[2])
                                  for e in ev], dtype=float)
            except (KeyError, IndexError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise ValueError(f"{path}:{lineno}: malformed replicate line ({e})") from None
            try:
                reps.append(EventSequence(times, coords, marks, horizons))
            except ValueError as e:
                raise ValueError(f"{path}:{lineno}: {e}") from None
    if not reps:
        raise ValueError(f"{path}: empty dataset")
    return Dataset(reps)
