"""Parametric family of marked multivariate Hawkes models.

A model couples a baseline family, a kernel time-part family (normalized to
unit mass), a mark weight function g and a mark distribution, a parameter
layout mapping the entries of (gamma, alpha, beta) onto shared slots, and box
bounds per slot.  The intensity of coordinate k is

    lambda_k(t) = mu_k(t) + sum_l sum_{t_i^l < t} alpha_kl g(x_i^l) f(t - t_i^l, beta_kl)

with f a probability density in time, so the branching matrix is
alpha_kl * E[g(X^l)].
"""

from __future__ import annotations

import io
import math
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

KERNEL_FAMILIES = ("exponential", "gamma", "pareto")
BASELINE_FAMILIES = ("constant", "exponential_time")
MARK_WEIGHTS = ("unit", "identity", "truncated_identity")
MARK_DISTS = ("none", "half_normal_offset", "custom_empirical")

# number of baseline parameters per coordinate
_BASELINE_NPARAMS = {"constant": 1, "exponential_time": 2}
_BASELINE_PARAM_NAMES = {"constant": ("mu0",), "exponential_time": ("mu0", "kappa")}

_MOMENT_MC_DRAWS = 10_000_000
_MOMENT_MC_SEED = 0x5EED


class UnstableModel(Exception):
    """Raised where spectral radius >= 1 is fatal (asymptotics, Volterra)."""


# ---------------------------------------------------------------------------
# kernel time parts: f, F = int_0^s f, and beta-derivatives (closed forms)
# ---------------------------------------------------------------------------

def kernel_f(family: str, s, beta):
    """Density value f(s, beta); zero for s < 0."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("kernel lag must be nonnegative")
    if family == "exponential":
        return beta * np.exp(-beta * s)
    if family == "gamma":
        return beta * beta * s * np.exp(-beta * s)
    if family == "pareto":
        return beta * (1.0 + s) ** (-(1.0 + beta))
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_F(family: str, s, beta):
    """Integrated kernel F(s, beta) = int_0^s f(u, beta) du."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("kernel lag must be nonnegative")
    if family == "exponential":
        return -np.expm1(-beta * s)
    if family == "gamma":
        return 1.0 - (1.0 + beta * s) * np.exp(-beta * s)
    if family == "pareto":
        return 1.0 - (1.0 + s) ** (-beta)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_df_dbeta(family: str, s, beta):
    s = np.asarray(s, dtype=float)
    if family == "exponential":
        return (1.0 - beta * s) * np.exp(-beta * s)
    if family == "gamma":
        return beta * s * (2.0 - beta * s) * np.exp(-beta * s)
    if family == "pareto":
        return (1.0 + s) ** (-(1.0 + beta)) * (1.0 - beta * np.log1p(s))
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_d2f_dbeta2(family: str, s, beta):
    s = np.asarray(s, dtype=float)
    if family == "exponential":
        return s * (beta * s - 2.0) * np.exp(-beta * s)
    if family == "gamma":
        return (2.0 * s - 4.0 * beta * s * s + beta * beta * s ** 3) * np.exp(-beta * s)
    if family == "pareto":
        ln1p = np.log1p(s)
        return (1.0 + s) ** (-(1.0 + beta)) * ln1p * (beta * ln1p - 2.0)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_dF_dbeta(family: str, s, beta):
    s = np.asarray(s, dtype=float)
    if family == "exponential":
        return s * np.exp(-beta * s)
    if family == "gamma":
        return beta * s * s * np.exp(-beta * s)
    if family == "pareto":
        return np.log1p(s) * (1.0 + s) ** (-beta)
    raise ValueError(f"unknown kernel family {family!r}")


def kernel_d2F_dbeta2(family: str, s, beta):
    s = np.asarray(s, dtype=float)
    if family == "exponential":
        return -s * s * np.exp(-beta * s)
    if family == "gamma":
        return s * s * (1.0 - beta * s) * np.exp(-beta * s)
    if family == "pareto":
        return -np.log1p(s) ** 2 * (1.0 + s) ** (-beta)
    raise ValueError(f"unknown kernel family {family!r}")


# ---------------------------------------------------------------------------
# stable helpers for the exponential-time baseline integral
# phi1(x) = (e^x - 1)/x and its first two derivatives, with series fallback
# ---------------------------------------------------------------------------

def _phi1(x):
    x = np.asarray(x, dtype=float)
    out = np.where(np.abs(x) < 1e-6,
                   1.0 + x / 2.0 + x * x / 6.0,
                   np.expm1(x) / np.where(x == 0.0, 1.0, x))
    return out


def _phi1p(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    exact = ((xs - 1.0) * np.exp(xs) + 1.0) / (xs * xs)
    series = 0.5 + x / 3.0 + x * x / 8.0 + x ** 3 / 30.0
    return np.where(small, series, exact)


def _phi1pp(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    exact = ((xs * xs - 2.0 * xs + 2.0) * np.exp(xs) - 2.0) / xs ** 3
    series = 1.0 / 3.0 + x / 4.0 + x * x / 10.0 + x ** 3 / 36.0
    return np.where(small, series, exact)


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Map from model parameters to shared optimization slots.

    gamma_slots has one row per coordinate and one column per baseline
    parameter; alpha_slots / beta_slots are K x K with -1 marking a
    structural zero (no edge, no decay parameter).  Equal ids share a slot.
    The flat parameter vector is [gamma slots, alpha slots, beta slots].
    """

    gamma_slots: np.ndarray
    alpha_slots: np.ndarray
    beta_slots: np.ndarray
    n_gamma: int = field(init=False)
    n_alpha: int = field(init=False)
    n_beta: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma_slots", np.asarray(self.gamma_slots, dtype=np.int64))
        object.__setattr__(self, "alpha_slots", np.asarray(self.alpha_slots, dtype=np.int64))
        object.__setattr__(self, "beta_slots", np.asarray(self.beta_slots, dtype=np.int64))
        object.__setattr__(self, "n_gamma", _check_compact(self.gamma_slots, "gamma", allow_minus1=False))
        object.__setattr__(self, "n_alpha", _check_compact(self.alpha_slots, "alpha", allow_minus1=True))
        object.__setattr__(self, "n_beta", _check_compact(self.beta_slots, "beta", allow_minus1=True))
        if self.alpha_slots.shape != self.beta_slots.shape:
            raise ValueError("alpha_slots and beta_slots must have the same shape")
        if not np.array_equal(self.alpha_slots == -1, self.beta_slots == -1):
            raise ValueError("beta_slots must be -1 exactly where alpha_slots is -1")
        # a gamma slot may not span different baseline parameter kinds
        for j in range(self.n_gamma):
            cols = np.unique(np.nonzero(self.gamma_slots == j)[1])
            if len(cols) > 1:
                raise ValueError(f"gamma slot {j} is used for different baseline parameters")

    @property
    def d(self) -> int:
        return self.n_gamma + self.n_alpha + self.n_beta

    def alpha_flat_index(self, slot: int) -> int:
        return self.n_gamma + slot

    def beta_flat_index(self, slot: int) -> int:
        return self.n_gamma + self.n_alpha + slot


def _check_compact(slots: np.ndarray, name: str, allow_minus1: bool) -> int:
    vals = np.unique(slots)
    if allow_minus1:
        vals = vals[vals != -1]
    if np.any(vals < 0):
        raise ValueError(f"{name}_slots contains a negative id other than -1")
    n = len(vals)
    if n and not np.array_equal(vals, np.arange(n)):
        raise ValueError(f"{name}_slots ids must be compact 0..{n - 1}")
    return n


# ---------------------------------------------------------------------------
# model spec and parameter vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of the parametric family (not a fitted model)."""

    K: int
    horizons: np.ndarray
    baseline: str
    kernel: str
    mark_weight: str
    mark_dist: str
    layout: ParamLayout
    lo: np.ndarray
    hi: np.ndarray
    mark_delta: float = 0.0
    mark_cap: float = math.inf
    mark_samples: np.ndarray | None = None
    # E[g(X)], E[g(X)^2] and the Monte Carlo standard error of the first
    mark_mean_g: float = 1.0
    mark_mean_g2: float = 1.0
    mark_mean_se: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "horizons", np.asarray(self.horizons, dtype=float))
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.K < 1:
            raise ValueError("dimension K must be >= 1")
        if self.horizons.shape != (self.K,) or np.any(self.horizons <= 0):
            raise ValueError("horizons must be K positive reals")
        if self.baseline not in BASELINE_FAMILIES:
            raise ValueError(f"unknown baseline family {self.baseline!r}")
        if self.kernel not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.kernel!r}")
        if self.mark_weight not in MARK_WEIGHTS:
            raise ValueError(f"unknown mark weight {self.mark_weight!r}")
        if self.mark_dist not in MARK_DISTS:
            raise ValueError(f"unknown mark distribution {self.mark_dist!r}")
        if self.mark_dist == "none" and self.mark_weight != "unit":
            raise ValueError("a mark-dependent weight requires a mark distribution")
        if self.mark_dist == "custom_empirical" and (
                self.mark_samples is None or len(self.mark_samples) == 0):
            raise ValueError("custom_empirical requires a nonempty samples array")
        lay = self.layout
        if lay.gamma_slots.shape != (self.K, _BASELINE_NPARAMS[self.baseline]):
            raise ValueError("gamma_slots shape does not match baseline family")
        if lay.alpha_slots.shape != (self.K, self.K):
            raise ValueError("alpha_slots must be K x K")
        d = lay.d
        if self.lo.shape != (d,) or self.hi.shape != (d,):
            raise ValueError(f"bounds must have length d={d}")
        if np.any(self.lo > self.hi):
            raise ValueError("lower bounds exceed upper bounds")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ValueError("bounds must be finite")
        # alpha slots nonnegative, decay and mu0 slots strictly positive
        for slot in range(lay.n_alpha):
            if self.lo[lay.alpha_flat_index(slot)] < 0:
                raise ValueError("alpha lower bounds must be >= 0")
        for slot in range(lay.n_beta):
            if self.lo[lay.beta_flat_index(slot)] <= 0:
                raise ValueError("beta lower bounds must be > 0")
        for k in range(self.K):
            mu0_slot = lay.gamma_slots[k, 0]
            if self.lo[mu0_slot] <= 0:
                raise ValueError("mu0 lower bounds must be > 0 (positive baseline)")

    @property
    def d(self) -> int:
        return self.layout.d

    def slot_names(self) -> list[str]:
        lay = self.layout
        names = [""] * lay.d
        pnames = _BASELINE_PARAM_NAMES[self.baseline]
        for j in range(lay.n_gamma):
            rows, cols = np.nonzero(lay.gamma_slots == j)
            coords = "+".join(str(r + 1) for r in sorted(set(rows)))
            names[j] = f"{pnames[cols[0]]}:{coords}"
        for j in range(lay.n_alpha):
            cells = list(zip(*np.nonzero(lay.alpha_slots == j)))
            tag = "+".join(f"({k + 1},{l + 1})" for k, l in cells)
            names[lay.alpha_flat_index(j)] = f"alpha:{tag}"
        for j in range(lay.n_beta):
            cells = list(zip(*np.nonzero(lay.beta_slots == j)))
            tag = "+".join(f"({k + 1},{l + 1})" for k, l in cells)
            names[lay.beta_flat_index(j)] = f"beta:{tag}"
        return names


@dataclass(frozen=True)
class ParamVector:
    """Concrete theta = (gamma, alpha, beta) with a zero pattern.

    gamma and beta hold one value per slot; alpha is the full K x K matrix
    (zeros at structural zeros and at pattern cells).  pattern is the set of
    0-based (k, l) adjacency cells pinned to exactly zero.
    """

    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    pattern: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=float))
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "pattern", frozenset(tuple(c) for c in self.pattern))


def make_theta(spec: ModelSpec, gamma, alpha, beta, pattern=()) -> ParamVector:
    """Validated ParamVector for the given spec."""
    theta = ParamVector(gamma, alpha, beta, frozenset(tuple(c) for c in pattern))
    msgs = check_theta(spec, theta)
    if msgs:
        raise ValueError("invalid parameter vector: " + "; ".join(msgs))
    return theta


def check_theta(spec: ModelSpec, theta: ParamVector) -> list[str]:
    """Structural and bounds findings for theta (empty list when valid)."""
    lay = spec.layout
    msgs = []
    if theta.gamma.shape != (lay.n_gamma,):
        return [f"gamma must have {lay.n_gamma} slot values"]
    if theta.alpha.shape != (spec.K, spec.K):
        return ["alpha must be a K x K matrix"]
    if theta.beta.shape != (lay.n_beta,):
        return [f"beta must have {lay.n_beta} slot values"]
    if np.any(theta.alpha < 0):
        msgs.append("negative adjacency entry")
    structural = lay.alpha_slots == -1
    if np.any(theta.alpha[structural] != 0):
        msgs.append("nonzero value at a structural zero")
    for (k, l) in theta.pattern:
        if not (0 <= k < spec.K and 0 <= l < spec.K):
            msgs.append(f"pattern cell ({k + 1},{l + 1}) outside the K x K grid")
        elif structural[k, l]:
            msgs.append(f"pattern cell ({k + 1},{l + 1}) is a structural zero")
        elif theta.alpha[k, l] != 0:
            msgs.append(f"pattern cell ({k + 1},{l + 1}) carries a nonzero alpha")
    for slot in range(lay.n_alpha):
        cells = theta.alpha[lay.alpha_slots == slot]
        if np.ptp(cells) != 0 and not _pattern_covers_slot(lay, theta.pattern, slot):
            msgs.append(f"alpha slot {slot} has unequal shared entries")
    vec = pack_theta(spec, theta)
    below = vec < spec.lo - 1e-12
    above = vec > spec.hi + 1e-12
    if np.any(below) or np.any(above):
        names = spec.slot_names()
        for i in np.nonzero(below | above)[0]:
            msgs.append(f"slot {names[i]} = {vec[i]:g} outside bounds "
                        f"[{spec.lo[i]:g}, {spec.hi[i]:g}]")
    return msgs


def _pattern_covers_slot(lay: ParamLayout, pattern, slot: int) -> bool:
    cells = set(zip(*np.nonzero(lay.alpha_slots == slot)))
    return cells <= set(pattern)


def pattern_slots(spec: ModelSpec, pattern) -> list[int]:
    """Alpha slots pinned by a pattern; the pattern must cover whole slots.

    Raises ValueError when a pattern cell shares a slot with a free cell
    (the submodel would not be expressible in slot space) or indexes outside
    the grid / a structural zero.
    """
    lay = spec.layout
    slots = set()
    for (k, l) in pattern:
        if not (0 <= k < spec.K and 0 <= l < spec.K):
            raise ValueError(f"pattern cell ({k + 1},{l + 1}) outside the K x K grid")
        s = lay.alpha_slots[k, l]
        if s == -1:
            raise ValueError(f"pattern cell ({k + 1},{l + 1}) is a structural zero")
        slots.add(int(s))
    for s in slots:
        if not _pattern_covers_slot(lay, frozenset(tuple(c) for c in pattern), s):
            raise ValueError(f"pattern covers alpha slot {s} only partially")
    return sorted(slots)


def pack_theta(spec: ModelSpec, theta: ParamVector) -> np.ndarray:
    """Flat slot vector [gamma, alpha, beta]."""
    lay = spec.layout
    vec = np.empty(lay.d)
    vec[:lay.n_gamma] = theta.gamma
    for slot in range(lay.n_alpha):
        k, l = np.argwhere(lay.alpha_slots == slot)[0]
        vec[lay.alpha_flat_index(slot)] = theta.alpha[k, l]
    vec[lay.n_gamma + lay.n_alpha:] = theta.beta
    return vec


def unpack_theta(spec: ModelSpec, vec: np.ndarray, pattern=frozenset()) -> ParamVector:
    """ParamVector from a flat slot vector; pattern cells forced to zero."""
    lay = spec.layout
    vec = np.asarray(vec, dtype=float)
    gamma = vec[:lay.n_gamma].copy()
    beta = vec[lay.n_gamma + lay.n_alpha:].copy()
    alpha = np.zeros((spec.K, spec.K))
    for slot in range(lay.n_alpha):
        alpha[lay.alpha_slots == slot] = vec[lay.alpha_flat_index(slot)]
    for (k, l) in pattern:
        alpha[k, l] = 0.0
    return ParamVector(gamma, alpha, beta, frozenset(tuple(c) for c in pattern))


def expand_params(spec: ModelSpec, theta: ParamVector):
    """Per-coordinate baseline arrays and per-cell beta matrix for evaluation.

    Returns (mu0[K], kappa[K], alpha[K,K], beta[K,K]); kappa is zero for the
    constant baseline and beta is 1.0 at structural zeros (never read there).
    """
    lay = spec.layout
    mu0 = theta.gamma[lay.gamma_slots[:, 0]]
    if spec.baseline == "exponential_time":
        kappa = theta.gamma[lay.gamma_slots[:, 1]]
    else:
        kappa = np.zeros(spec.K)
    beta_mat = np.ones((spec.K, spec.K))
    for slot in range(lay.n_beta):
        beta_mat[lay.beta_slots == slot] = theta.beta[slot]
    return mu0, kappa, theta.alpha.copy(), beta_mat


# ---------------------------------------------------------------------------
# evaluation operations
# ---------------------------------------------------------------------------

def eval_baseline(spec: ModelSpec, theta: ParamVector, t: float) -> np.ndarray:
    """Baseline rates mu_k(t) (events per second), K-vector."""
    mu0, kappa, _, _ = expand_params(spec, theta)
    if spec.baseline == "constant":
        return mu0.copy()
    return mu0 * np.exp(kappa * t / spec.horizons)


def eval_baseline_integral(spec: ModelSpec, theta: ParamVector, t) -> np.ndarray:
    """int_0^t mu_k(u) du per coordinate."""
    mu0, kappa, _, _ = expand_params(spec, theta)
    t = np.asarray(t, dtype=float)
    if spec.baseline == "constant":
        return mu0 * t
    x = kappa * t / spec.horizons
    return mu0 * t * _phi1(x)


def eval_f(spec: ModelSpec, theta: ParamVector, s: float) -> np.ndarray:
    """Kernel time part f(s, beta_kl) as a K x K matrix (0 at structural zeros)."""
    if s < 0:
        raise ValueError("kernel lag must be nonnegative")
    _, _, _, beta_mat = expand_params(spec, theta)
    out = np.asarray(kernel_f(spec.kernel, s, beta_mat), dtype=float)
    out[spec.layout.alpha_slots == -1] = 0.0
    return out


def eval_F_of_f(spec: ModelSpec, theta: ParamVector, s: float) -> np.ndarray:
    """Integrated kernel int_0^s f(u, beta_kl) du as a K x K matrix."""
    if s < 0:
        raise ValueError("kernel lag must be nonnegative")
    _, _, _, beta_mat = expand_params(spec, theta)
    out = np.asarray(kernel_F(spec.kernel, s, beta_mat), dtype=float)
    out[spec.layout.alpha_slots == -1] = 0.0
    return out


def eval_g(spec: ModelSpec, x: float) -> np.ndarray:
    """Mark weight g(x) broadcast to a K x K matrix."""
    return np.full((spec.K, spec.K), mark_weight_value(spec, x))


def mark_weight_value(spec: ModelSpec, x: float) -> float:
    if spec.mark_weight == "unit":
        return 1.0
    if x is None or math.isnan(float(x)):
        raise ValueError("mark-dependent weight evaluated on an unmarked event")
    if spec.mark_weight == "identity":
        return float(x)
    return float(min(float(x), spec.mark_cap))


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    stable: bool
    spectral_radius: float
    branching: np.ndarray
    messages: list


def branching_matrix(spec: ModelSpec, theta: ParamVector) -> np.ndarray:
    """Expected direct-offspring matrix: entry (k,l) = alpha_kl * E[g(X^l)]."""
    return theta.alpha * spec.mark_mean_g


def spectral_radius(B: np.ndarray, tol: float = 1e-10, maxiter: int = 20000) -> float:
    """Spectral radius of a nonnegative matrix by power iteration.

    Falls back to a dense eigensolve for K <= 32 when the iteration has not
    converged (reducible or defective cases).
    """
    B = np.asarray(B, dtype=float)
    K = B.shape[0]
    if K == 1:
        return abs(B[0, 0])
    v = np.full(K, 1.0 / K)
    lam = 0.0
    for _ in range(maxiter):
        w = B @ v
        norm = w.sum()
        if norm == 0.0:
            # nilpotent directions die out; restart once from the last mass
            lam_new = 0.0
            if lam == 0.0:
                return 0.0
        else:
            lam_new = norm / v.sum()
            v = w / norm
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    if K <= 32:
        return float(np.max(np.abs(np.linalg.eigvals(B))))
    return lam


def validate(spec: ModelSpec, theta: ParamVector) -> ValidationReport:
    """Advisory stability and bounds report (never raises)."""
    msgs = check_theta(spec, theta)
    B = branching_matrix(spec, theta)
    rho = spectral_radius(B)
    stable = rho < 1.0
    if not stable:
        msgs.append(
            f"unstable: spectral radius {rho:.6g} >= 1; simulation on a short "
            "horizon may still be finite pathwise, but asymptotic quantities "
            "(mean intensity, information) are undefined")
    return ValidationReport(stable=bool(stable), spectral_radius=float(rho),
                            branching=B, messages=msgs)


# ---------------------------------------------------------------------------
# mark distribution moments and sampling support
# ---------------------------------------------------------------------------

def _mark_moments(mark_weight, mark_dist, delta, cap, samples):
    """(E[g(X)], E[g(X)^2], MC standard error of E[g(X)])."""
    if mark_dist == "none" or mark_weight == "unit":
        return 1.0, 1.0, 0.0
    if mark_dist == "custom_empirical":
        g = np.minimum(samples, cap) if mark_weight == "truncated_identity" else np.asarray(samples, float)
        return float(np.mean(g)), float(np.mean(g * g)), float(np.std(g) / math.sqrt(len(g)))
    # half_normal_offset
    if mark_weight == "identity":
        m = math.sqrt(2.0 / math.pi) + delta
        m2 = 1.0 + 2.0 * delta * math.sqrt(2.0 / math.pi) + delta * delta
        return m, m2, 0.0
    # truncated identity of a half normal: one-off Monte Carlo
    rng = np.random.default_rng(_MOMENT_MC_SEED)
    x = np.abs(rng.standard_normal(_MOMENT_MC_DRAWS)) + delta
    g = np.minimum(x, cap)
    return float(np.mean(g)), float(np.mean(g * g)), float(np.std(g) / math.sqrt(len(g)))


# ---------------------------------------------------------------------------
# spec construction
# ---------------------------------------------------------------------------

_DEFAULT_MU0_BOUNDS = (1e-6, 1e3)
_DEFAULT_KAPPA_BOUNDS = (-20.0, 20.0)
_DEFAULT_ALPHA_BOUNDS = (0.0, 10.0)
_DEFAULT_BETA_BOUNDS = (0.05, 200.0)


def make_spec(K: int,
              horizons,
              baseline: str = "constant",
              kernel: str = "exponential",
              mark_weight: str = "unit",
              mark_dist: str = "none",
              mark_delta: float = 0.0,
              mark_cap: float = math.inf,
              mark_samples=None,
              gamma_sharing: str | np.ndarray = "per_coordinate",
              alpha_structure=None,
              beta_sharing: str | np.ndarray = "shared",
              mu0_bounds=_DEFAULT_MU0_BOUNDS,
              kappa_bounds=_DEFAULT_KAPPA_BOUNDS,
              alpha_bounds=_DEFAULT_ALPHA_BOUNDS,
              beta_bounds=_DEFAULT_BETA_BOUNDS) -> ModelSpec:
    """Build a ModelSpec from sharing shorthands and per-kind bounds.

    gamma_sharing: "per_coordinate" (own slots per coordinate), "shared"
    (all coordinates share one slot per baseline parameter), or an explicit
    (K, n_baseline_params) slot-id array.
    alpha_structure: None for a fully connected model with one slot per
    entry, or a (K, K) slot-id array with -1 marking structural zeros.
    beta_sharing: "shared" (single decay), "per_entry", or an explicit
    (K, K) slot-id array aligned with alpha_structure.
    Bounds are (lo, hi) pairs broadcast per slot kind; pass an (n, 2) array
    for per-slot control (e.g. freezing a slot with lo == hi).
    """
    horizons = np.asarray(horizons, dtype=float)
    if horizons.ndim == 0:
        horizons = np.full(K, float(horizons))
    npar = _BASELINE_NPARAMS[baseline] if baseline in _BASELINE_FAMILY_SET else None
    if npar is None:
        raise ValueError(f"unknown baseline family {baseline!r}")

    if isinstance(gamma_sharing, str):
        if gamma_sharing == "per_coordinate":
            gamma_slots = np.arange(K * npar).reshape(K, npar)
        elif gamma_sharing == "shared":
            gamma_slots = np.tile(np.arange(npar), (K, 1))
        else:
            raise ValueError(f"unknown gamma sharing {gamma_sharing!r}")
    else:
        gamma_slots = np.asarray(gamma_sharing, dtype=np.int64)

    if alpha_structure is None:
        alpha_slots = np.arange(K * K).reshape(K, K)
    else:
        alpha_slots = np.asarray(alpha_structure, dtype=np.int64)

    if isinstance(beta_sharing, str):
        if beta_sharing == "shared":
            beta_slots = np.where(alpha_slots == -1, -1, 0)
        elif beta_sharing == "per_entry":
            beta_slots = np.full((K, K), -1, dtype=np.int64)
            nxt = 0
            for k in range(K):
                for l in range(K):
                    if alpha_slots[k, l] != -1:
                        beta_slots[k, l] = nxt
                        nxt += 1
        else:
            raise ValueError(f"unknown beta sharing {beta_sharing!r}")
    else:
        beta_slots = np.asarray(beta_sharing, dtype=np.int64)

    layout = ParamLayout(gamma_slots, alpha_slots, beta_slots)
    lo = np.empty(layout.d)
    hi = np.empty(layout.d)
    kind_bounds = {0: np.asarray(mu0_bounds, dtype=float),
                   1: np.asarray(kappa_bounds, dtype=float)}
    kind_seen = {0: 0, 1: 0}
    for j in range(layout.n_gamma):
        col = int(np.nonzero(layout.gamma_slots == j)[1][0])
        kb = kind_bounds[col]
        lo[j], hi[j] = kb[kind_seen[col]] if kb.ndim == 2 else kb
        kind_seen[col] += 1
    ab = np.asarray(alpha_bounds, dtype=float)
    for j in range(layout.n_alpha):
        lo[layout.alpha_flat_index(j)], hi[layout.alpha_flat_index(j)] = (
            ab[j] if ab.ndim == 2 else ab)
    bb = np.asarray(beta_bounds, dtype=float)
    for j in range(layout.n_beta):
        lo[layout.beta_flat_index(j)], hi[layout.beta_flat_index(j)] = (
            bb[j] if bb.ndim == 2 else bb)

    m, m2, se = _mark_moments(mark_weight, mark_dist, mark_delta, mark_cap, mark_samples)
    return ModelSpec(K=K, horizons=horizons, baseline=baseline, kernel=kernel,
                     mark_weight=mark_weight, mark_dist=mark_dist, layout=layout,
                     lo=lo, hi=hi, mark_delta=mark_delta, mark_cap=mark_cap,
                     mark_samples=None if mark_samples is None else np.asarray(mark_samples, float),
                     mark_mean_g=m, mark_mean_g2=m2, mark_mean_se=se)


_BASELINE_FAMILY_SET = set(BASELINE_FAMILIES)


# ---------------------------------------------------------------------------
# TOML serialization
# ---------------------------------------------------------------------------

def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v)} to TOML")


def _emit_toml(doc: dict) -> str:
    out = io.StringIO()
    first = True
    for section, table in doc.items():
        if not first:
            out.write("\n")
        first = False
        out.write(f"[{section}]\n")
        for key, v in table.items():
            out.write(f"{key} = {_toml_value(v)}\n")
    return out.getvalue()


def spec_to_toml(spec: ModelSpec, theta: ParamVector | None = None) -> str:
    """Serialize a spec (and optionally a parameter vector) as TOML.

    Floats use shortest round-trip decimals, so parse(serialize(x)) is
    bit-exact.
    """
    lay = spec.layout
    doc = {
        "model": {"dimension": spec.K, "horizons": spec.horizons.tolist()},
        "baseline": {"family": spec.baseline,
                     "gamma_slots": lay.gamma_slots.tolist()},
        "kernel": {"family": spec.kernel,
                   "alpha_slots": lay.alpha_slots.tolist(),
                   "beta_slots": lay.beta_slots.tolist()},
        "marks": {"weight": spec.mark_weight, "distribution": spec.mark_dist},
        "bounds": {
            "gamma_lo": spec.lo[:lay.n_gamma].tolist(),
            "gamma_hi": spec.hi[:lay.n_gamma].tolist(),
            "alpha_lo": spec.lo[lay.n_gamma:lay.n_gamma + lay.n_alpha].tolist(),
            "alpha_hi": spec.hi[lay.n_gamma:lay.n_gamma + lay.n_alpha].tolist(),
            "beta_lo": spec.lo[lay.n_gamma + lay.n_alpha:].tolist(),
            "beta_hi": spec.hi[lay.n_gamma + lay.n_alpha:].tolist(),
        },
    }
    if spec.mark_dist == "half_normal_offset":
        doc["marks"]["delta"] = spec.mark_delta
    if spec.mark_weight == "truncated_identity":
        doc["marks"]["cap"] = spec.mark_cap
    if spec.mark_dist == "custom_empirical":
        doc["marks"]["samples"] = spec.mark_samples.tolist()
    if theta is not None:
        doc["theta"] = {
            "gamma": theta.gamma.tolist(),
            "alpha": theta.alpha.tolist(),
            "beta": theta.beta.tolist(),
        }
        if theta.pattern:
            doc["theta"]["pattern"] = [[k + 1, l + 1] for (k, l) in sorted(theta.pattern)]
    return _emit_toml(doc)


def spec_from_toml(text: str) -> tuple[ModelSpec, ParamVector | None]:
    """Parse a TOML config; returns (spec, theta-or-None)."""
    doc = _toml.loads(text)
    try:
        model = doc["model"]
        base = doc["baseline"]
        kern = doc["kernel"]
        marks = doc.get("marks", {"weight": "unit", "distribution": "none"})
        bounds = doc["bounds"]
    except KeyError as e:
        raise ValueError(f"config missing section {e}") from None
    layout = ParamLayout(np.asarray(base["gamma_slots"]),
                         np.asarray(kern["alpha_slots"]),
                         np.asarray(kern["beta_slots"]))
    lo = np.concatenate([np.asarray(bounds["gamma_lo"], float),
                         np.asarray(bounds["alpha_lo"], float),
                         np.asarray(bounds["beta_lo"], float)])
    hi = np.concatenate([np.asarray(bounds["gamma_hi"], float),
                         np.asarray(bounds["alpha_hi"], float),
                         np.asarray(bounds["beta_hi"], float)])
    samples = marks.get("samples")
    m, m2, se = _mark_moments(marks["weight"], marks["distribution"],
                              marks.get("delta", 0.0), marks.get("cap", math.inf),
                              None if samples is None else np.asarray(samples, float))
    spec = ModelSpec(K=int(model["dimension"]),
                     horizons=np.asarray(model["horizons"], float),
                     baseline=base["family"], kernel=kern["family"],
                     mark_weight=marks["weight"], mark_dist=marks["distribution"],
                     layout=layout, lo=lo, hi=hi,
                     mark_delta=float(marks.get("delta", 0.0)),
                     mark_cap=float(marks.get("cap", math.inf)),
                     mark_samples=None if samples is None else np.asarray(samples, float),
                     mark_mean_g=m, mark_mean_g2=m2, mark_mean_se=se)
    theta = None
    if "theta" in doc:
        th = doc["theta"]
        pattern = frozenset((int(k) - 1, int(l) - 1) for k, l in th.get("pattern", []))
        theta = make_theta(spec, np.asarray(th["gamma"], float),
                           np.asarray(th["alpha"], float),
                           np.asarray(th["beta"], float), pattern)
    return spec, theta


def spec_equal(a: ModelSpec, b: ModelSpec) -> bool:
    """Field-by-field equality (arrays compared exactly)."""
    simple = all(getattr(a, f) == getattr(b, f) for f in
                 ("K", "baseline", "kernel", "mark_weight", "mark_dist",
                  "mark_delta", "mark_cap"))
    arrays = (np.array_equal(a.horizons, b.horizons)
              and np.array_equal(a.lo, b.lo) and np.array_equal(a.hi, b.hi)
              and np.array_equal(a.layout.gamma_slots, b.layout.gamma_slots)
              and np.array_equal(a.layout.alpha_slots, b.layout.alpha_slots)
              and np.array_equal(a.layout.beta_slots, b.layout.beta_slots))
    samples = (a.mark_samples is None) == (b.mark_samples is None) and (
        a.mark_samples is None or np.array_equal(a.mark_samples, b.mark_samples))
    return simple and arrays and samples
