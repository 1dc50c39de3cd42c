"""Shared model profiles and small statistical helpers for the tests."""
import numpy as np

from sparsehawkes import model


def mc_margin(p, reps, z=3.0):
    """Half-width of a z-sigma binomial band around probability p."""
    return z * np.sqrt(p * (1.0 - p) / reps)


def tilted_poisson_profile():
    """One coordinate, tilted baseline, decay frozen, no excitation."""
    spec = model.make_spec(K=1, horizons=10.0, baseline="exponential_time",
                           kernel="exponential",
                           beta_bounds=np.array([[10.0, 10.0]]))
    theta = model.make_theta(spec, gamma=[2.0, 2.0], alpha=[[0.0]], beta=[10.0])
    return spec, theta


def marked_bivariate_profile():
    """Two coordinates with multiplicative marks; cross terms are tested."""
    spec = model.make_spec(
        K=2, horizons=1.0, baseline="exponential_time", kernel="exponential",
        mark_weight="identity", mark_dist="half_normal_offset", mark_delta=1e-2,
        gamma_sharing="shared", alpha_structure=np.array([[0, 1], [1, 2]]),
        beta_sharing="shared")
    theta = model.make_theta(spec, gamma=[5.0, 2.0],
                             alpha=[[0.0, 0.5], [0.5, 0.0]], beta=[10.0])
    return spec, theta


def cyclic4_profile():
    """Two 2-cycles with tied weights, bound by two tested cross cells.

    Sources carry distinct baseline tilts so the mean-intensity shapes
    entering the tested coordinates stay well separated; targets keep
    constant baselines (tilt slots pinned at zero).
    """
    structure = np.array([
        [-1, 0, -1, -1],
        [0, -1, -1, -1],
        [2, -1, -1, 1],
        [-1, 3, 1, -1]])
    kb = np.array([[-20.0, 20.0], [-20.0, 20.0], [0.0, 0.0], [0.0, 0.0]])
    spec = model.make_spec(K=4, horizons=1.0, baseline="exponential_time",
                           kernel="exponential",
                           gamma_sharing="per_coordinate",
                           alpha_structure=structure, kappa_bounds=kb)
    alpha = np.zeros((4, 4))
    alpha[0, 1] = alpha[1, 0] = 0.35
    alpha[2, 3] = alpha[3, 2] = 0.30
    theta = model.make_theta(spec,
                             gamma=[4.0, 2.0, 0.8, 4.0, 5.0, 0.0, 3.6, 0.0],
                             alpha=alpha, beta=[10.0])
    return spec, theta


def flat_exponential_profile(alpha=0.5, beta_fixed=3.0):
    """One coordinate, constant baseline, decay frozen at beta_fixed."""
    spec = model.make_spec(K=1, horizons=10.0, baseline="constant",
                           kernel="exponential",
                           beta_bounds=np.array([[beta_fixed, beta_fixed]]))
    theta = model.make_theta(spec, gamma=[4.0], alpha=[[alpha]],
                             beta=[beta_fixed])
    return spec, theta


def strategy_comparison_profile():
    """Poisson truth used to compare aggregation against naive strategies."""
    spec = model.make_spec(K=1, horizons=10.0, baseline="constant",
                           kernel="exponential",
                           beta_bounds=np.array([[3.0, 3.0]]))
    theta = model.make_theta(spec, gamma=[5.0], alpha=[[0.0]], beta=[3.0])
    return spec, theta


def small_hawkes_profile(kernel="exponential"):
    """Compact two-coordinate model exercising every parameter block."""
    spec = model.make_spec(K=2, horizons=2.0, baseline="exponential_time",
                           kernel=kernel)
    theta = model.make_theta(spec, gamma=[1.5, 0.8, 2.0, -0.5],
                             alpha=[[0.3, 0.2], [0.1, 0.4]], beta=[5.0])
    return spec, theta
