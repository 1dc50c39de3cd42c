"""Constrained maximum likelihood over the full and sparse parameter sets.

Fits run on the flat slot vector with box bounds, using L-BFGS-B (a
projected quasi-Newton method) so that adjacency slots can land exactly on
the alpha = 0 boundary, where the null hypotheses live.  Multi-start is
deterministic given the data hash: a method-of-moments baseline start plus
Latin-hypercube draws for the excitation slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import likelihood as _likelihood
from . import model as _model
from . import rng as _rng
from . import simulate as _simulate

__all__ = ["FitOptions", "FitResult", "NonConvergence", "InfeasiblePattern",
           "fit", "fit_strategy_pooled", "fit_strategy_averaged"]

_BIG = 1e25


class NonConvergence(RuntimeError):
    """No start reached the projected-gradient tolerance."""


class InfeasiblePattern(ValueError):
    """Pattern indexes outside the grid or pins a slot that cannot be zero."""


@dataclass(frozen=True)
class FitOptions:
    n_starts: int = 8
    epsilon: float = 1e-5
    start_seed: int = 0
    maxiter: int = 500
    polish: bool = True


@dataclass(frozen=True)
class FitResult:
    theta_hat: _model.ParamVector
    loglik: float
    zero_set: tuple
    info_hat: np.ndarray | None
    converged: bool
    n_starts_used: int
    n_evals: int
    strategy: str
    pattern: frozenset = frozenset()
    skipped: int = 0

    def to_json_dict(self) -> dict:
        return {
            "theta": {
                "gamma": np.asarray(self.theta_hat.gamma).tolist(),
                "alpha": np.asarray(self.theta_hat.alpha).tolist(),
                "beta": np.asarray(self.theta_hat.beta).tolist(),
            },
            "loglik": self.loglik,
            "zero_set": [[k + 1, l + 1] for (k, l) in self.zero_set],
            "converged": self.converged,
            "strategy": self.strategy,
            "n_starts_used": self.n_starts_used,
            "n_evals": self.n_evals,
        }


def _pattern_slots_checked(spec, pattern):
    for (k, l) in pattern:
        if not (0 <= k < spec.K and 0 <= l < spec.K):
            raise InfeasiblePattern(f"pattern cell ({k + 1},{l + 1}) outside the grid")
        if spec.layout.alpha_slots[k, l] == -1:
            raise InfeasiblePattern(
                f"pattern cell ({k + 1},{l + 1}) is a structural zero")
    slots = _model.pattern_slots(spec, pattern)
    for s in slots:
        j = spec.layout.alpha_flat_index(s)
        if spec.lo[j] > 0.0:
            raise InfeasiblePattern("pattern pins a slot whose lower bound is > 0")
    return slots


def _dead_beta_slots(spec, pinned_alpha_slots):
    """Beta slots whose every adjacency cell is pinned or frozen at zero."""
    lay = spec.layout
    dead = []
    pinned = set(pinned_alpha_slots)
    for bslot in range(lay.n_beta):
        cells = np.argwhere(lay.beta_slots == bslot)
        alive = False
        for (k, l) in cells:
            aslot = lay.alpha_slots[k, l]
            j = lay.alpha_flat_index(aslot)
            frozen_zero = spec.lo[j] == spec.hi[j] == 0.0
            if aslot not in pinned and not frozen_zero:
                alive = True
                break
        if not alive:
            dead.append(bslot)
    return dead


def _slot_kinds(spec):
    lay = spec.layout
    kinds = np.empty(lay.d, dtype=object)
    kinds[:lay.n_gamma] = "gamma"
    kinds[lay.n_gamma:lay.n_gamma + lay.n_alpha] = "alpha"
    kinds[lay.n_gamma + lay.n_alpha:] = "beta"
    if spec.baseline == "exponential_time":
        for k in range(spec.K):
            kinds[lay.gamma_slots[k, 1]] = "kappa"
        for k in range(spec.K):
            kinds[lay.gamma_slots[k, 0]] = "mu0"
    else:
        kinds[:lay.n_gamma] = "mu0"
    return kinds


def _kappa_from_mean_time(tbar, T):
    """Horizon-scaled tilt whose event-time mean on [0, T] equals tbar.

    The density proportional to e^{x t / T} has mean T R(x) with R increasing,
    so bisection is safe.  Returns x, the exponent over the whole horizon.
    """
    target = min(max(tbar / T, 1e-6), 1.0 - 1e-6)

    def ratio(x):
        if abs(x) < 1e-8:
            return 0.5
        return (math.exp(x) * (x - 1.0) + 1.0) / (x * math.expm1(x))

    lo, hi = -50.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ratio(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _mom_base(spec, count_per_coord, n, mean_time=None):
    """Method-of-moments baseline values on the full slot vector.

    Counts set the level; for a tilted baseline the per-coordinate mean
    event time sets the tilt, which keeps the first start out of the basin
    where cross-excitation has to explain the baseline trend.
    """
    lay = spec.layout
    base = np.empty(lay.d)
    rate = count_per_coord / np.maximum(n * spec.horizons, 1e-12)
    for k in range(spec.K):
        g0 = lay.gamma_slots[k, 0]
        T = float(spec.horizons[k])
        kap = 0.0
        if (spec.baseline == "exponential_time" and mean_time is not None
                and count_per_coord[k] >= 10):
            kap = _kappa_from_mean_time(float(mean_time[k]), T)
        if abs(kap) > 1e-8:
            level = rate[k] * kap / math.expm1(kap)
        else:
            level = rate[k]
        base[g0] = max(level, 1e-6)
        if spec.baseline == "exponential_time":
            base[lay.gamma_slots[k, 1]] = kap
    return base


def _start_points(spec, free, kinds, mom, n_starts, seed):
    """Deterministic start list.

    The first start sits in the boundary basin (method-of-moments baseline,
    zero excitation); the second adds moderate excitation; the rest are
    Latin-hypercube spreads.  Covering both basins matters because the
    sparse null and the excited alternative can each be a local optimum.
    """
    lo, hi = spec.lo, spec.hi
    d = spec.layout.d
    base = np.clip(mom, lo, hi)
    for j in range(d):
        if kinds[j] == "alpha":
            base[j] = lo[j]
        elif kinds[j] == "beta":
            base[j] = np.clip(math.sqrt(max(lo[j], 1e-3) * min(hi[j], 1e3)),
                              lo[j], hi[j])
    starts = [base]
    if n_starts > 1:
        x1 = base.copy()
        for j in range(d):
            if kinds[j] == "alpha":
                x1[j] = np.clip(0.5 / (spec.mark_mean_g * spec.K), lo[j], hi[j])
        starts.append(x1)
    m = n_starts - 2
    if m > 0:
        state = _rng.make_state(seed)
        u = np.empty((m, d))
        for j in range(d):
            # stratified uniforms with a seeded shuffle per slot
            cells = np.arange(m, dtype=np.float64)
            for i in range(m - 1, 0, -1):
                r = int(_rng.next_u64(state) % np.uint64(i + 1))
                cells[i], cells[r] = cells[r], cells[i]
            for i in range(m):
                u[i, j] = (cells[i] + _rng.next_u01(state)) / m
        for i in range(m):
            xi = base.copy()
            for j in np.nonzero(free)[0]:
                kind = kinds[j]
                if kind == "alpha":
                    a_hi = min(hi[j], 2.0)
                    xi[j] = lo[j] + (a_hi - lo[j]) * u[i, j]
                elif kind == "beta":
                    b_lo = max(lo[j], 0.2)
                    b_hi = max(min(hi[j], 100.0), b_lo)
                    xi[j] = math.exp(math.log(b_lo)
                                     + (math.log(b_hi) - math.log(b_lo)) * u[i, j])
                elif kind == "kappa":
                    k_lo, k_hi = max(lo[j], -3.0), min(hi[j], 3.0)
                    xi[j] = k_lo + (k_hi - k_lo) * u[i, j]
                else:
                    xi[j] = np.clip(base[j] * math.exp(2.0 * u[i, j] - 1.0),
                                    lo[j], hi[j])
            starts.append(xi)
    # pinned or frozen slots can make starts coincide; drop duplicates
    uniq, seen = [], set()
    for x in starts:
        key = tuple(np.round(x[free], 12))
        if key not in seen:
            seen.add(key)
            uniq.append(x)
    return uniq


class _Objective:
    """Negative log-likelihood on the free slots; counts evaluations."""

    def __init__(self, eval_fn, base, free_idx, pattern):
        self.eval_fn = eval_fn
        self.base = base
        self.free_idx = free_idx
        self.pattern = pattern
        self.n_evals = 0

    def theta(self, xf):
        vec = self.base.copy()
        vec[self.free_idx] = xf
        return vec

    def __call__(self, xf):
        self.n_evals += 1
        vec = self.theta(xf)
        try:
            ll, score = self.eval_fn(vec)
        except _likelihood.NonFiniteIntensity:
            return _BIG, np.zeros(len(self.free_idx))
        if not np.isfinite(ll):
            return _BIG, np.zeros(len(self.free_idx))
        return -ll, -score[self.free_idx]


def _projected_grad_norm(score, x, lo, hi):
    g = score.copy()
    g[(x <= lo) & (g < 0)] = 0.0
    g[(x >= hi) & (g > 0)] = 0.0
    return float(np.max(np.abs(g))) if len(g) else 0.0


def _optimize(eval_fn, spec, pattern, slots_pinned, options, seed_material,
              count_per_coord, n, extra_starts=(), mean_time=None):
    lay = spec.layout
    d = lay.d
    kinds = _slot_kinds(spec)
    dead_b = _dead_beta_slots(spec, slots_pinned)

    base = np.where(spec.lo == spec.hi, spec.lo, np.nan)
    for s in slots_pinned:
        base[lay.alpha_flat_index(s)] = 0.0
    for b in dead_b:
        base[lay.beta_flat_index(b)] = spec.lo[lay.beta_flat_index(b)]
    free = np.isnan(base)
    base = np.where(free, 0.0, base)
    free_idx = np.nonzero(free)[0]

    mom = _mom_base(spec, count_per_coord, n, mean_time)
    seed = _rng.split_seed(seed_material, options.start_seed)
    starts = _start_points(spec, free, kinds, mom, options.n_starts, seed)
    if len(extra_starts):
        seen = {tuple(np.round(x[free], 12)) for x in starts}
        for x in extra_starts:
            xi = np.where(free, np.clip(np.asarray(x, float), spec.lo, spec.hi),
                          base)
            key = tuple(np.round(xi[free], 12))
            if key not in seen:
                seen.add(key)
                starts.append(xi)

    obj = _Objective(eval_fn, base, free_idx, pattern)
    bounds = list(zip(spec.lo[free_idx], spec.hi[free_idx]))
    best = None
    for i, x0 in enumerate(starts):
        res = minimize(obj, x0[free_idx], jac=True, method="L-BFGS-B",
                       bounds=bounds,
                       options={"maxiter": options.maxiter, "ftol": 1e-12,
                                "gtol": 1e-9})
        if best is None or res.fun < best.fun:
            best = res
    xf = np.clip(best.x, spec.lo[free_idx], spec.hi[free_idx])
    ll = -best.fun

    # an abandoned line search can leave the incumbent short of the
    # optimum; restarting with fresh curvature memory usually finishes it
    lo_f, hi_f = spec.lo[free_idx], spec.hi[free_idx]
    for _ in range(3):
        if not len(free_idx):
            break
        _, gneg = obj(xf)
        obj.n_evals -= 1
        if _projected_grad_norm(-gneg, xf, lo_f, hi_f) < 1e-6 * (1.0 + abs(ll)):
            break
        res = minimize(obj, xf, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": options.maxiter, "ftol": 1e-12,
                                "gtol": 1e-9})
        if res.fun < -ll:
            xf = np.clip(res.x, lo_f, hi_f)
            ll = -res.fun
        else:
            break

    # face polish: on a nearly flat ridge the optimizer can stop just off a
    # boundary face; refit with small adjacency slots pinned to zero and keep
    # the face achieving the best likelihood (ties go to the sparser fit)
    if options.polish and len(free_idx):
        alpha_pos = [j for j in range(len(free_idx))
                     if kinds[free_idx[j]] == "alpha"
                     and spec.lo[free_idx[j]] == 0.0]
        span = max(0.25, options.epsilon)
        for _ in range(3):
            cand = sorted((j for j in alpha_pos if 0.0 < xf[j] <= span),
                          key=lambda j: xf[j])[:4]
            if not cand:
                break
            accepted = []
            for mask in range(1, 1 << len(cand)):
                subset = [cand[i] for i in range(len(cand)) if mask >> i & 1]
                trial = xf.copy()
                trial[subset] = 0.0
                sub = [j for j in range(len(free_idx)) if j not in subset]
                if sub:
                    def sub_obj(xs, trial=trial, sub=sub):
                        t = trial.copy()
                        t[sub] = xs
                        f, g = obj(t)
                        return f, g[sub]
                    res2 = minimize(sub_obj, trial[sub], jac=True,
                                    method="L-BFGS-B",
                                    bounds=[bounds[j] for j in sub],
                                    options={"maxiter": 100, "ftol": 1e-12,
                                             "gtol": 1e-9})
                    trial[sub] = np.clip(res2.x, [bounds[j][0] for j in sub],
                                         [bounds[j][1] for j in sub])
                    ll2 = -res2.fun
                else:
                    ll2 = -obj(trial)[0]
                accepted.append((ll2, len(subset), trial))
            best_ll = max(ll, max(a[0] for a in accepted))
            tied = [a for a in accepted if a[0] >= best_ll - 1e-9]
            if not tied:
                break
            ll2, _, trial = max(tied, key=lambda a: (a[1], a[0]))
            xf, ll = trial, ll2

    vec = base.copy()
    vec[free_idx] = xf
    _, neg_score = obj(xf)
    obj.n_evals -= 1
    pg = _projected_grad_norm(-neg_score, xf, spec.lo[free_idx], spec.hi[free_idx])
    converged = pg < 1e-6 * (1.0 + abs(ll))
    return vec, ll, free_idx, dead_b, obj.n_evals, converged, len(starts)


def fit(ctx: _likelihood.LikelihoodContext, spec: _model.ModelSpec,
        pattern=(), options: FitOptions | None = None,
        warm_starts=()) -> FitResult:
    """Maximum likelihood on an aggregated context, alpha pattern pinned to 0.

    warm_starts: extra ParamVector starts added to the multistart list.
    Seeding the unrestricted fit with a restricted solution keeps nested
    likelihoods ordered even when the surface is multimodal.
    """
    options = options or FitOptions()
    if spec is not ctx.spec and not _model.spec_equal(spec, ctx.spec):
        raise ValueError("context was built for a different model")
    pattern = frozenset(tuple(c) for c in pattern)
    slots_pinned = _pattern_slots_checked(spec, pattern)

    counts = np.bincount(ctx.coords, minlength=spec.K).astype(float)
    tsum = np.bincount(ctx.coords, weights=ctx.times, minlength=spec.K)
    mean_time = np.divide(tsum, counts, out=0.5 * spec.horizons.copy(),
                          where=counts > 0)
    seed_material = ctx.data_hash & 0xFFFFFFFFFFFFFFFF

    def eval_fn(vec):
        theta = _model.unpack_theta(spec, vec, pattern)
        return _likelihood.value_and_score(ctx, theta)

    extras = [_model.pack_theta(spec, t) for t in warm_starts]
    vec, ll, free_idx, dead_b, n_evals, converged, n_starts = _optimize(
        eval_fn, spec, pattern, slots_pinned, options, seed_material,
        counts, ctx.n, extras, mean_time)
    theta_hat = _model.unpack_theta(spec, vec, pattern)
    zero_set = _zero_entries(spec, theta_hat, pattern, options.epsilon)
    info = _likelihood.empirical_information(ctx, theta_hat)
    _blank_dead(info, spec, dead_b)
    return FitResult(theta_hat=theta_hat, loglik=ll, zero_set=zero_set,
                     info_hat=info, converged=converged,
                     n_starts_used=n_starts, n_evals=n_evals,
                     strategy="aggregate", pattern=pattern)


def _zero_entries(spec, theta, pattern, epsilon):
    lay = spec.layout
    out = []
    for k in range(spec.K):
        for l in range(spec.K):
            j = lay.alpha_slots[k, l]
            if j == -1 or (k, l) in pattern:
                continue
            fi = lay.alpha_flat_index(j)
            if spec.lo[fi] == spec.hi[fi]:
                continue
            if theta.alpha[k, l] <= epsilon:
                out.append((k, l))
    return tuple(out)


def _blank_dead(info, spec, dead_beta):
    for b in dead_beta:
        j = spec.layout.beta_flat_index(b)
        info[j, :] = 0.0
        info[:, j] = 0.0


def _replicate_contexts(data: _simulate.Dataset, spec):
    ctxs = []
    for seq in data.replicates:
        single = _simulate.Dataset(replicates=[seq])
        ctxs.append(_likelihood.build_context(spec, _simulate.aggregate(single), 1))
    return ctxs


def fit_strategy_pooled(data: _simulate.Dataset, spec: _model.ModelSpec,
                        pattern=(), options: FitOptions | None = None) -> FitResult:
    """Maximize the sum of per-replicate log-likelihoods (baseline mu, not n mu)."""
    options = options or FitOptions()
    pattern = frozenset(tuple(c) for c in pattern)
    slots_pinned = _pattern_slots_checked(spec, pattern)
    ctxs = _replicate_contexts(data, spec)

    counts = np.zeros(spec.K)
    tsum = np.zeros(spec.K)
    for c in ctxs:
        counts += np.bincount(c.coords, minlength=spec.K)
        tsum += np.bincount(c.coords, weights=c.times, minlength=spec.K)
    mean_time = np.divide(tsum, counts, out=0.5 * spec.horizons.copy(),
                          where=counts > 0)
    seed_material = ctxs[0].data_hash & 0xFFFFFFFFFFFFFFFF

    def eval_fn(vec):
        theta = _model.unpack_theta(spec, vec, pattern)
        ll = 0.0
        score = np.zeros(spec.layout.d)
        for c in ctxs:
            li, si = _likelihood.value_and_score(c, theta)
            ll += li
            score += si
        return ll, score

    vec, ll, free_idx, dead_b, n_evals, converged, n_starts = _optimize(
        eval_fn, spec, pattern, slots_pinned, options, seed_material,
        counts, data.n, mean_time=mean_time)
    theta_hat = _model.unpack_theta(spec, vec, pattern)
    info = sum(_likelihood.empirical_information(c, theta_hat) for c in ctxs)
    _blank_dead(info, spec, dead_b)
    return FitResult(theta_hat=theta_hat, loglik=ll,
                     zero_set=_zero_entries(spec, theta_hat, pattern, options.epsilon),
                     info_hat=info, converged=converged,
                     n_starts_used=n_starts, n_evals=n_evals,
                     strategy="pooled", pattern=pattern)


def fit_strategy_averaged(data: _simulate.Dataset, spec: _model.ModelSpec,
                          pattern=(), options: FitOptions | None = None) -> FitResult:
    """Fit every replicate separately and average the slot estimates.

    Replicates whose fit does not converge are skipped and counted; the
    reported log-likelihood is the pooled value at the averaged estimate.
    """
    options = options or FitOptions()
    pattern = frozenset(tuple(c) for c in pattern)
    ctxs = _replicate_contexts(data, spec)
    acc = np.zeros(spec.layout.d)
    used = 0
    skipped = 0
    evals = 0
    for c in ctxs:
        r = fit(c, spec, pattern, options)
        evals += r.n_evals
        if r.converged:
            acc += _model.pack_theta(spec, r.theta_hat)
            used += 1
        else:
            skipped += 1
    if used == 0:
        raise NonConvergence("no replicate fit converged")
    vec = acc / used
    theta_hat = _model.unpack_theta(spec, np.clip(vec, spec.lo, spec.hi), pattern)
    ll = 0.0
    for c in ctxs:
        ll += _likelihood.log_likelihood(c, theta_hat)
    info = sum(_likelihood.empirical_information(c, theta_hat) for c in ctxs)
    _blank_dead(info, spec, _dead_beta_slots(spec, _model.pattern_slots(spec, pattern)))
    return FitResult(theta_hat=theta_hat, loglik=ll,
                     zero_set=_zero_entries(spec, theta_hat, pattern, options.epsilon),
                     info_hat=info, converged=skipped == 0,
                     n_starts_used=options.n_starts, n_evals=evals,
                     strategy="averaged", pattern=pattern, skipped=skipped)
