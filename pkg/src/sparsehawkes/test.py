"""Likelihood-ratio sparsity tests and their simulation harnesses.

The statistic is Lambda = 2 (L_full - L_null) where the null pins a set J
of adjacency cells to zero.  Because the cells live on the boundary of the
parameter set, the null limit is a chi-bar-squared mixture rather than a
plain chi-squared.  Three decision rules are provided:

* ``test_known_weights``: compare against a mixture with known or
  precomputed weights (closed form for one or two tested cells, Monte
  Carlo otherwise).
* ``test_conditional_susko``: condition on the number of estimated zeros
  p-hat among the tested cells and use the chi2(p - p_hat) tail.
* ``bonferroni_combine``: union bound over several single-profile tests.

``calibrate_level`` and ``power_curve`` rerun the whole
simulate / fit / test pipeline over many independent datasets with a
deterministic seed split, which is how the level and power figures are
reproduced.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import chibar as _chibar
from . import estimate as _estimate
from . import likelihood as _likelihood
from . import model as _model
from . import rng as _rng
from . import simulate as _simulate

__all__ = ["TestResult", "CalibrationReport", "PowerPoint", "NestingViolation",
           "lrs", "test_known_weights", "test_conditional_susko",
           "bonferroni_combine", "calibrate_level", "power_curve"]

# tolerated optimizer noise below zero before the pair is declared broken
LRS_SLACK = 1e-7
# boundary ties p_value == level resolve toward rejection; the slack covers
# quantiles supplied at reporting precision
P_SLACK = 1e-7


def _decide(p_value, level):
    return bool(p_value <= level + P_SLACK)


class NestingViolation(RuntimeError):
    """Null fit beat the full fit by more than optimizer noise."""


@dataclass(frozen=True)
class TestResult:
    lrs: float
    method: str
    p_value: float
    reject: bool
    level: float
    zeros_observed: int | None = None
    mixture: _chibar.ChiBarMixture | None = None
    fits: tuple | None = None

    def to_json_dict(self) -> dict:
        out = {
            "lrs": self.lrs,
            "method": self.method,
            "p_value": self.p_value,
            "reject": self.reject,
            "level": self.level,
            "zeros_observed": self.zeros_observed,
        }
        if self.mixture is not None:
            out["mixture"] = {
                "p": self.mixture.p,
                "weights": list(self.mixture.weights),
                "provenance": self.mixture.provenance,
            }
            if self.mixture.std_errs is not None:
                out["mixture"]["std_errs"] = list(self.mixture.std_errs)
        if self.fits is not None:
            out["fits"] = {"full": self.fits[0].to_json_dict(),
                           "null": self.fits[1].to_json_dict()}
        return out


def lrs(fit_full: _estimate.FitResult, fit_null: _estimate.FitResult) -> float:
    """Likelihood ratio statistic 2 (L_full - L_null), clamped at zero.

    Both fits must come from the same data; the null pattern must contain
    the full pattern so the models nest.  A deficit beyond ``LRS_SLACK``
    means the full-model optimizer lost to the null and is raised rather
    than hidden.
    """
    if not set(fit_null.pattern) >= set(fit_full.pattern):
        raise ValueError("null pattern does not contain the full pattern")
    lam = 2.0 * (fit_full.loglik - fit_null.loglik)
    if lam < -LRS_SLACK:
        raise NestingViolation(
            f"full fit below null fit by {-lam / 2.0:.3e} log-likelihood")
    return max(lam, 0.0)


def _method_from(mixture):
    return "mc_weights" if mixture.provenance.startswith("mc") else "known_weights"


def test_known_weights(lrs_value: float, mixture: _chibar.ChiBarMixture,
                       level: float, fits=None,
                       zeros_observed=None) -> TestResult:
    """Fixed-mixture tail test: reject when the mixture p-value is <= level."""
    pv = float(_chibar.mixture_sf(mixture, lrs_value))
    return TestResult(lrs=float(lrs_value), method=_method_from(mixture), p_value=pv,
                      reject=_decide(pv, level), level=level, mixture=mixture,
                      fits=fits, zeros_observed=zeros_observed)


def test_conditional_susko(lrs_value: float, fit_full: _estimate.FitResult,
                           pattern, level: float, epsilon: float = 1e-5,
                           fits=None) -> TestResult:
    """Conditional test given the observed zero count among the tested cells.

    p_hat counts cells of ``pattern`` whose fitted weight is <= epsilon;
    the reference tail is chi2(p - p_hat).  A null statistic never rejects,
    and neither does the degenerate p_hat = p case (all tested cells were
    estimated at zero, so a positive statistic flags an inconsistent pair).
    """
    cells = [tuple(c) for c in pattern]
    if not cells:
        raise ValueError("empty test pattern")
    if set(cells) & set(fit_full.pattern):
        raise ValueError("full fit is constrained on a tested cell")
    p = len(cells)
    alpha = np.asarray(fit_full.theta_hat.alpha)
    phat = sum(1 for (k, l) in cells if alpha[k, l] <= epsilon)
    if lrs_value <= epsilon:
        pv, reject = 1.0, False
    elif phat == p:
        warnings.warn("positive statistic but every tested cell estimated "
                      "at zero; fit pair looks inconsistent", RuntimeWarning)
        pv, reject = 1.0, False
    else:
        pv = _chibar.chi2_sf(p - phat, lrs_value)
        reject = _decide(pv, level)
    return TestResult(lrs=lrs_value, method="conditional", p_value=pv,
                      reject=reject, level=level, zeros_observed=phat,
                      fits=fits)


def bonferroni_combine(lrs_values, mixture: _chibar.ChiBarMixture,
                       level: float, fits=None) -> TestResult:
    """Union bound over m single-profile statistics sharing one mixture.

    Rejects when any statistic clears the mixture quantile of upper tail
    level/m; equivalently the combined p-value min(1, m * min p_i) is at
    or below the level.  With m = 1 this is exactly the fixed-mixture test.
    """
    vals = [float(v) for v in lrs_values]
    if not vals:
        raise ValueError("no statistics to combine")
    m = len(vals)
    pvs = [_chibar.mixture_sf(mixture, v) for v in vals]
    combined = min(1.0, m * min(pvs))
    return TestResult(lrs=max(vals), method=_method_from(mixture),
                      p_value=combined, reject=_decide(combined, level), level=level,
                      mixture=mixture, fits=fits)


# ---------------------------------------------------------------------------
# simulation harnesses


@dataclass(frozen=True)
class CalibrationReport:
    """Level calibration summary over many simulated null datasets."""

    levels: tuple
    rates: tuple
    ses: tuple
    zero_mass: float
    zeros_freq: tuple
    qq: tuple
    strata: tuple
    reps: int
    excluded: int
    method: str
    epsilon: float
    seed: int
    lrs_values: tuple

    def level_rows(self):
        return [(lv, r, s) for lv, r, s in zip(self.levels, self.rates, self.ses)]

    def qq_rows(self):
        return [(e, t) for (e, t) in self.qq]


@dataclass(frozen=True)
class PowerPoint:
    alpha: float
    power: float
    se: float
    reps_used: int
    excluded: int


def _default_mixture(p):
    if p == 1:
        return _chibar.weights_closed_form(1)
    return None


def _conditional_mixture(mix):
    """Mixture of Lambda given Lambda > 0: drop the chi2(0) atom, renormalize."""
    w = np.asarray(mix.weights, dtype=float)
    pos = 1.0 - w[0]
    if pos <= 0.0:
        return None
    w2 = w.copy()
    w2[0] = 0.0
    w2 /= pos
    return _chibar.ChiBarMixture(p=mix.p, weights=tuple(w2),
                                 provenance=mix.provenance + "_positive_part")


def _check_fit_spec(spec, fit_spec):
    if fit_spec is None:
        return spec
    if fit_spec.K != spec.K or not np.allclose(fit_spec.horizons, spec.horizons):
        raise ValueError("fit spec grid does not match the simulating spec")
    return fit_spec


def _simulate_and_fit(spec, theta, n, rep_seed, fspec, pattern, options):
    data = _simulate.simulate_dataset(spec, theta, n, master_seed=rep_seed)
    ctx = _likelihood.build_context(fspec, _simulate.aggregate(data), n)
    # null first: its optimum seeds the unrestricted fit, so the nested
    # likelihood ordering survives a multimodal surface
    null = _estimate.fit(ctx, fspec, pattern, options)
    full = _estimate.fit(ctx, fspec, (), options,
                         warm_starts=(null.theta_hat,))
    return full, null


def calibrate_level(spec: _model.ModelSpec, theta0: _model.ParamVector,
                    pattern, n: int, reps: int, method: str = "known_weights",
                    seed: int = 0, levels=(0.05,),
                    mixture: _chibar.ChiBarMixture | None = None,
                    epsilon: float | None = None,
                    fit_spec: _model.ModelSpec | None = None,
                    options: _estimate.FitOptions | None = None) -> CalibrationReport:
    """Empirical rejection rates under a null truth theta0.

    Simulates ``reps`` datasets of ``n`` replicates, fits the full and the
    pattern-constrained model on each, and tallies rejections at every
    requested level, the frequency of a null statistic, the distribution
    of the zero count p_hat, and sorted quantile pairs of the positive
    statistics against the positive part of the mixture.  ``fit_spec``
    lets the fitted model differ from the simulating one (frozen-decay
    profiles).  Replicates whose fits fail to converge are excluded and
    counted; more than 1% of them fails the report.
    """
    options = options or _estimate.FitOptions()
    eps = options.epsilon if epsilon is None else epsilon
    cells = [tuple(c) for c in pattern]
    if not cells:
        raise ValueError("empty test pattern")
    p = len(cells)
    fspec = _check_fit_spec(spec, fit_spec)
    if mixture is None and method != "conditional":
        mixture = _default_mixture(p)
        if mixture is None:
            raise ValueError("no mixture given and no closed form for p = "
                             f"{p}; pass one (Monte Carlo weights)")
    levels = tuple(float(v) for v in levels)

    seed_material = int(seed) & _rng.MASK64
    rejects = np.zeros(len(levels), dtype=int)
    zeros_hist = np.zeros(p + 1, dtype=int)
    strata_n = np.zeros(p + 1, dtype=int)
    strata_rej = np.zeros((p + 1, len(levels)), dtype=int)
    lams = []
    excluded = 0
    for i in range(reps):
        rep_seed = _rng.split_seed(seed_material, i)
        try:
            full, null = _simulate_and_fit(spec, theta0, n, rep_seed, fspec,
                                           cells, options)
            if not (full.converged and null.converged):
                excluded += 1
                continue
            lam = lrs(full, null)
        except (NestingViolation, _estimate.NonConvergence):
            excluded += 1
            continue
        lams.append(lam)
        alpha = np.asarray(full.theta_hat.alpha)
        phat = sum(1 for (k, l) in cells if alpha[k, l] <= eps)
        zeros_hist[phat] += 1
        if method == "conditional":
            strata_n[phat] += 1
            for j, lv in enumerate(levels):
                r = test_conditional_susko(lam, full, cells, lv, eps)
                if r.reject:
                    rejects[j] += 1
                    strata_rej[phat, j] += 1
        else:
            pv = _chibar.mixture_sf(mixture, lam)
            for j, lv in enumerate(levels):
                if _decide(pv, lv):
                    rejects[j] += 1
    if excluded >= 0.01 * reps and excluded > 0:
        raise _estimate.NonConvergence(
            f"{excluded} of {reps} replicates excluded (cap is 1%)")

    used = reps - excluded
    lams = np.array(lams)
    rates = tuple(float(v) for v in rejects / max(used, 1))
    ses = tuple(float(np.sqrt(r * (1.0 - r) / max(used, 1))) for r in rates)

    qq = ()
    qq_mix = _conditional_mixture(mixture) if mixture is not None else None
    positive = np.sort(lams[lams > eps])
    if qq_mix is not None and len(positive):
        mq = len(positive)
        theo = [_chibar.mixture_quantile(qq_mix, 1.0 - (r + 0.5) / mq)
                for r in range(mq)]
        qq = tuple(zip(positive.tolist(), theo))

    strata = tuple((k, int(strata_n[k]), tuple(int(v) for v in strata_rej[k]))
                   for k in range(p + 1) if strata_n[k] > 0)
    return CalibrationReport(
        levels=levels, rates=rates, ses=ses,
        zero_mass=float(np.mean(lams <= eps)) if used else 0.0,
        zeros_freq=tuple(float(v) for v in zeros_hist / max(used, 1)),
        qq=qq, strata=strata, reps=reps, excluded=excluded, method=method,
        epsilon=eps, seed=seed, lrs_values=tuple(lams.tolist()))


def power_curve(spec: _model.ModelSpec, theta_grid, pattern, n: int,
                reps_per_point: int, level: float = 0.05, seed: int = 0,
                method: str = "known_weights",
                mixture: _chibar.ChiBarMixture | None = None,
                epsilon: float | None = None,
                fit_spec: _model.ModelSpec | None = None,
                options: _estimate.FitOptions | None = None) -> list:
    """Empirical power along a grid of alternatives.

    ``theta_grid`` is a sequence of (alpha_label, theta) pairs; each point
    gets ``reps_per_point`` simulated datasets and the rejection frequency
    of the chosen method at the single ``level``.  Returns PowerPoint rows
    in grid order and warns when the trend dips by more than three
    standard errors between consecutive points.
    """
    options = options or _estimate.FitOptions()
    eps = options.epsilon if epsilon is None else epsilon
    cells = [tuple(c) for c in pattern]
    if not cells:
        raise ValueError("empty test pattern")
    p = len(cells)
    fspec = _check_fit_spec(spec, fit_spec)
    if mixture is None and method != "conditional":
        mixture = _default_mixture(p)
        if mixture is None:
            raise ValueError("no mixture given and no closed form for p = "
                             f"{p}; pass one (Monte Carlo weights)")

    seed_material = int(seed) & _rng.MASK64
    out = []
    for j, (alpha_label, theta) in enumerate(theta_grid):
        point_seed = _rng.split_seed(seed_material, j)
        rej = 0
        used = 0
        excluded = 0
        for i in range(reps_per_point):
            rep_seed = _rng.split_seed(point_seed, i)
            try:
                full, null = _simulate_and_fit(spec, theta, n, rep_seed,
                                               fspec, cells, options)
                if not (full.converged and null.converged):
                    excluded += 1
                    continue
                lam = lrs(full, null)
            except (NestingViolation, _estimate.NonConvergence):
                excluded += 1
                continue
            used += 1
            if method == "conditional":
                r = test_conditional_susko(lam, full, cells, level, eps)
            else:
                r = test_known_weights(lam, mixture, level)
            if r.reject:
                rej += 1
        pw = rej / max(used, 1)
        se = float(np.sqrt(pw * (1.0 - pw) / max(used, 1)))
        out.append(PowerPoint(alpha=float(alpha_label), power=pw, se=se,
                              reps_used=used, excluded=excluded))
    for a, b in zip(out, out[1:]):
        if b.power < a.power - 3.0 * np.hypot(a.se, b.se):
            warnings.warn(f"power dips from {a.power:.3f} at alpha={a.alpha} "
                          f"to {b.power:.3f} at alpha={b.alpha}",
                          RuntimeWarning)
    return out
