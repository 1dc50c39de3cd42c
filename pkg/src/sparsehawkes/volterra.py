"""Mean intensity h and asymptotic information by Volterra quadrature.

h solves h(t) = mu(t) + int_0^t <F, phi>(t - s) h(s) ds with
<F, phi>_kl(v) = alpha_kl E[g(X)] f(v, beta_kl).  The resolvent is never
materialized: the equation is solved forward on a uniform grid, trapezoidal
in h (piecewise linear between nodes) with the kernel density integrated
exactly over each cell, and an implicit diagonal step.  Global error is
O(step^2) but carries only the curvature of h, not of the kernel, which is
what makes the default grid adequate for sharply peaked kernels.

The asymptotic information is

    I(theta) = sum_k int_0^{T_k} A_k(s) A_k(s)^T / h_k(s) ds,
    A_k(s) = d_theta mu_k(s) + sum_l int_0^s d_theta <F, phi>_kl(v) h_l(s - v) dv.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import model as _model
from .model import UnstableModel


@dataclass(frozen=True)
class GridFunction:
    """Values of a K-vector function on a uniform grid over [0, Tmax]."""

    grid: np.ndarray
    values: np.ndarray
    step: float

    def __post_init__(self):
        if self.step <= 0 or not np.all(np.isfinite(self.values)):
            raise ValueError("grid function must have positive step and finite values")

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation at time t."""
        j = min(int(t / self.step), len(self.grid) - 2)
        w = (t - self.grid[j]) / self.step
        return (1.0 - w) * self.values[j] + w * self.values[j + 1]


def _kernel_first_moment(family: str, x: np.ndarray, beta: float) -> np.ndarray:
    """G(x) = int_0^x v f(v, beta) dv in closed form."""
    x = np.asarray(x, dtype=float)
    if family == "exponential":
        e = np.exp(-beta * x)
        return -x * e + (1.0 - e) / beta
    if family == "gamma":
        e = np.exp(-beta * x)
        return 2.0 / beta - e * (beta * x * x + 2.0 * x + 2.0 / beta)
    # pareto: beta/(1-beta)((1+x)^{1-beta} - 1) + (1+x)^{-beta} - 1,
    # written through phi1 to stay finite at beta = 1
    L = np.log1p(x)
    return beta * L * _model._phi1((1.0 - beta) * L) + np.expm1(-beta * L)


@njit(cache=True, nogil=True)
def _volterra_forward(C, E, mu_grid):
    """Forward solve of h_j = mu_j + C_0 h_j + sum_{r=1}^{j-1} C_r h_{j-r} + E_j h_0.

    C_r and E_j are the piecewise-linear product-integration weights; C_0
    multiplies the unknown and is moved to the left-hand side.
    """
    m1, K, _ = C.shape
    h = np.empty((m1, K))
    left = np.eye(K) - C[0]
    left_inv = np.linalg.inv(left)
    h[0] = mu_grid[0]
    rhs = np.empty(K)
    for j in range(1, m1):
        for k in range(K):
            acc = mu_grid[j, k]
            for r in range(1, j):
                for l in range(K):
                    acc += C[r, k, l] * h[j - r, l]
            for l in range(K):
                acc += E[j, k, l] * h[0, l]
            rhs[k] = acc
        for k in range(K):
            acc = 0.0
            for l in range(K):
                acc += left_inv[k, l] * rhs[l]
            h[j, k] = acc
    return h


def _grid(spec: _model.ModelSpec, step: float | None):
    Tmax = float(np.max(spec.horizons))
    if step is None:
        m = 4096
    else:
        m = max(1, round(Tmax / step))
    delta = Tmax / m
    return np.linspace(0.0, Tmax, m + 1), delta


def _baseline_grid(spec, theta, grid):
    mu0, kappa, _, _ = _model.expand_params(spec, theta)
    if spec.baseline == "constant":
        return np.tile(mu0, (len(grid), 1))
    return mu0[None, :] * np.exp(np.outer(grid, 1.0 / spec.horizons) * kappa[None, :])


def _require_stable(spec, theta):
    rho = _model.spectral_radius(_model.branching_matrix(spec, theta))
    if rho >= 1.0:
        raise UnstableModel(f"spectral radius {rho:.6g} >= 1")
    return rho


def _pi_weights(spec, alpha, beta, grid, delta):
    """Product-integration weight stacks C (len m+1) and E for the solver.

    Cell i carries m0_i = F((i+1)d) - F(id) and the within-cell first moment
    m1_i; h linear on the cell splits these between its two endpoint values.
    """
    m1 = len(grid)
    K = spec.K
    eg = spec.mark_mean_g
    structural = spec.layout.alpha_slots == -1
    C = np.zeros((m1, K, K))
    E = np.zeros((m1, K, K))
    for k in range(K):
        for l in range(K):
            a = 0.0 if structural[k, l] else alpha[k, l] * eg
            if a == 0.0:
                continue
            b = beta[k, l]
            F = np.asarray(_model.kernel_F(spec.kernel, grid, b))
            G = _kernel_first_moment(spec.kernel, grid, b)
            m0 = np.diff(F)
            mm1 = np.diff(G) - grid[:-1] * m0
            w_near = m0 - mm1 / delta   # weight on h at the cell's recent end
            w_far = mm1 / delta         # weight on h one step older
            # coefficient of h_{j-r}: w_near[r] + w_far[r-1] for 0 < r < j,
            # w_near[0] on the unknown itself, w_far[j-1] on h_0
            C[0, k, l] = a * w_near[0]
            C[1:-1, k, l] = a * w_near[1:]
            C[1:, k, l] += a * w_far
            E[1:, k, l] = a * w_far
    return C, E


def solve_h(spec: _model.ModelSpec, theta: _model.ParamVector,
            step: float | None = None) -> GridFunction:
    """Mean intensity per replicate on a uniform grid (default Tmax/4096)."""
    rho = _require_stable(spec, theta)
    del rho
    grid, delta = _grid(spec, step)
    _, _, alpha, beta = _model.expand_params(spec, theta)
    C, E = _pi_weights(spec, alpha, beta, grid, delta)
    mu_grid = _baseline_grid(spec, theta, grid)
    h = _volterra_forward(C, E, mu_grid)
    return GridFunction(grid=grid, values=h, step=delta)


def mean_count(spec: _model.ModelSpec, theta: _model.ParamVector,
               step: float | None = None) -> float:
    """Expected events per replicate: sum_k int_0^{T_k} h_k."""
    h = solve_h(spec, theta, step)
    total = 0.0
    for k in range(spec.K):
        total += _trap_to(h.grid, h.values[:, k], float(spec.horizons[k]), h.step)
    return total


def _trap_to(grid, vals, T, delta):
    """Trapezoid integral of sampled values over [0, T] (T within the grid)."""
    j = min(int(T / delta), len(grid) - 1)
    out = np.trapezoid(vals[:j + 1], dx=delta) if hasattr(np, "trapezoid") \
        else np.trapz(vals[:j + 1], dx=delta)
    rem = T - grid[j]
    if rem > 1e-12 * max(T, 1.0) and j + 1 < len(grid):
        w = rem / delta
        end = (1.0 - w) * vals[j] + w * vals[j + 1]
        out += 0.5 * rem * (vals[j] + end)
    return out


def _conv_trap(fv, hv, delta):
    """Trapezoid convolution (f * h)(t_j) = int_0^{t_j} f(v) h(t_j - v) dv."""
    m1 = len(fv)
    full = np.convolve(fv, hv)[:m1]
    full -= 0.5 * (fv[0] * hv + fv * hv[0])
    return delta * full


def asymptotic_information(spec: _model.ModelSpec, theta: _model.ParamVector,
                           step: float | None = None) -> np.ndarray:
    """Limiting information matrix I(theta), symmetric PSD up to quadrature."""
    return information_report(spec, theta, step)["matrix"]


def information_report(spec: _model.ModelSpec, theta: _model.ParamVector,
                       step: float | None = None) -> dict:
    """I(theta) plus the non-degeneracy diagnostics used by the CLI."""
    rho = _require_stable(spec, theta)
    h = solve_h(spec, theta, step)
    grid, delta = h.grid, h.step
    lay = spec.layout
    K, d = spec.K, lay.d
    eg = spec.mark_mean_g
    _, kappa, alpha, beta = _model.expand_params(spec, theta)
    mu_grid = _baseline_grid(spec, theta, grid)

    I = np.zeros((d, d))
    for k in range(K):
        Ak = np.zeros((len(grid), d))
        # baseline derivatives
        g0 = lay.gamma_slots[k, 0]
        if spec.baseline == "constant":
            Ak[:, g0] = 1.0
        else:
            ex = np.exp(kappa[k] * grid / spec.horizons[k])
            Ak[:, g0] = ex
            g1 = lay.gamma_slots[k, 1]
            Ak[:, g1] = mu_grid[:, k] * grid / spec.horizons[k]
        # kernel derivatives convolved with h
        for l in range(K):
            s_a = lay.alpha_slots[k, l]
            if s_a == -1:
                continue
            fv = eg * np.asarray(_model.kernel_f(spec.kernel, grid, beta[k, l]))
            dfv = eg * np.asarray(_model.kernel_df_dbeta(spec.kernel, grid, beta[k, l]))
            Ak[:, lay.alpha_flat_index(s_a)] += _conv_trap(fv, h.values[:, l], delta)
            if alpha[k, l] != 0.0:
                Ak[:, lay.beta_flat_index(lay.beta_slots[k, l])] += (
                    alpha[k, l] * _conv_trap(dfv, h.values[:, l], delta))
        w = np.full(len(grid), delta)
        w[0] = w[-1] = 0.5 * delta
        Tk = float(spec.horizons[k])
        jk = min(int(round(Tk / delta)), len(grid) - 1)
        if abs(grid[jk] - Tk) > 1e-9 * max(Tk, 1.0):
            raise ValueError("horizon not aligned with the quadrature grid")
        w[jk] = 0.5 * delta
        w[jk + 1:] = 0.0
        integ = Ak * (w / h.values[:, k])[:, None]
        I += integ.T @ Ak
    I = 0.5 * (I + I.T)
    eigs = np.linalg.eigvalsh(I)
    min_eig, max_eig = float(eigs[0]), float(eigs[-1])
    return {
        "matrix": I,
        "rho": float(rho),
        "min_eigenvalue": min_eig,
        "max_eigenvalue": max_eig,
        "degenerate": bool(min_eig < 1e-10 * max(max_eig, 0.0)),
    }


def schur_subvariance_check(I: np.ndarray, p: int, tol: float = 1e-10) -> bool:
    """Verify Var(Z_1 + A^-1 B Z_2) = (I_11)^-1 for Z ~ N(0, I^-1).

    I is partitioned with A = I[:d-p, :d-p], B = I[:d-p, d-p:].  The
    corrected leading block of Z removes its conditional mean given the
    trailing block, and its covariance is the inverse of the leading block
    of the precision matrix, not of the covariance.
    """
    I = np.asarray(I, dtype=float)
    d = I.shape[0]
    if not (0 <= p <= d):
        raise ValueError("p must be between 0 and d")
    q = d - p
    Sigma = np.linalg.inv(I)
    A = I[:q, :q]
    if p == 0:
        return bool(np.allclose(Sigma, np.linalg.inv(A), atol=tol, rtol=0))
    B = I[:q, q:]
    M = np.linalg.solve(A, B)
    S11 = Sigma[:q, :q]
    S21 = Sigma[q:, :q]
    S22 = Sigma[q:, q:]
    var = S11 + M @ S21 + S21.T @ M.T + M @ S22 @ M.T
    return bool(np.allclose(var, np.linalg.inv(A), atol=tol, rtol=0))
