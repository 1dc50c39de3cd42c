"""Independent analytic oracles shared by the unit and acceptance tests.

Each function recomputes a quantity the library produces through an
unrelated route (finite differences, closed forms, exhaustive search,
plain Monte Carlo) and reports the discrepancy together with an ok flag.
"""
import numpy as np

from sparsehawkes import chibar, likelihood, model, simulate, volterra


def oracle_score_fd(n_thetas=50, seed=31415):
    """Analytic score against central finite differences of the loglik."""
    worst = 0.0
    for kernel in model.KERNEL_FAMILIES:
        spec = model.make_spec(K=2, horizons=2.0, baseline="exponential_time",
                               kernel=kernel)
        th0 = model.make_theta(spec, gamma=[1.2, 0.6, 1.6, -0.4],
                               alpha=[[0.30, 0.15], [0.20, 0.25]], beta=[4.0])
        ds = simulate.simulate_dataset(spec, th0, n=20, master_seed=97)
        ctx = likelihood.build_context(spec, simulate.aggregate(ds), 20)
        g = np.random.default_rng(seed)
        for _ in range(n_thetas):
            gam = np.empty(4)
            gam[[0, 2]] = g.uniform(0.5, 2.5, 2)
            gam[[1, 3]] = g.uniform(-1.2, 1.2, 2)
            th = model.make_theta(spec, gamma=gam,
                                  alpha=g.uniform(0.05, 0.45, (2, 2)),
                                  beta=[g.uniform(2.0, 9.0)])
            vec = model.pack_theta(spec, th)
            s = likelihood.score(ctx, th)
            fd = np.empty(vec.size)
            for j in range(vec.size):
                h = 1e-5 * max(1.0, abs(vec[j]))
                vp = vec.copy()
                vm = vec.copy()
                vp[j] += h
                vm[j] -= h
                fd[j] = (likelihood.log_likelihood(ctx, model.unpack_theta(spec, vp))
                         - likelihood.log_likelihood(ctx, model.unpack_theta(spec, vm))
                         ) / (2.0 * h)
            rel = np.max(np.abs(fd - s)) / max(1.0, np.max(np.abs(s)))
            worst = max(worst, rel)
    return {"ok": worst < 1e-5, "worst_rel": worst}


def exact_exponential_mean_intensity(mu, a, beta, t):
    """Mean intensity of a constant-baseline exponential-kernel process.

    Renewal argument gives mu * (1 + a/(1-a) * (1 - exp(-beta(1-a)t))).
    """
    return mu * (1.0 + a / (1.0 - a) * (1.0 - np.exp(-beta * (1.0 - a) * t)))


def oracle_volterra_closed_form():
    """Grid solver against the exact exponential-kernel resolvent."""
    spec = model.make_spec(K=1, horizons=10.0, baseline="constant",
                           kernel="exponential")
    th = model.make_theta(spec, gamma=[4.0], alpha=[[0.5]], beta=[3.0])
    h = volterra.solve_h(spec, th, step=1e-3)
    exact = exact_exponential_mean_intensity(4.0, 0.5, 3.0, h.grid)
    sup = float(np.max(np.abs(h.values[:, 0] - exact)))
    return {"ok": sup < 1e-6, "sup_err": sup}


def oracle_poisson_information():
    """Homogeneous no-excitation model has information T / mu0 for the level."""
    spec = model.make_spec(K=1, horizons=10.0, baseline="constant",
                           kernel="exponential",
                           alpha_bounds=np.array([[0.0, 0.0]]),
                           beta_bounds=np.array([[3.0, 3.0]]))
    th = model.make_theta(spec, gamma=[2.0], alpha=[[0.0]], beta=[3.0])
    rep = volterra.information_report(spec, th)
    err = abs(rep["matrix"][0, 0] - 5.0)
    return {"ok": err < 1e-6, "abs_err": err}


def brute_force_projection(A, x, p):
    """Exhaustive active-set solve of min (x-z)' A (x-z), z_i >= 0 for i < p."""
    d = x.size
    best_obj, best_z = np.inf, None
    for mask in range(1 << p):
        zero = [i for i in range(p) if mask >> i & 1]
        free = [i for i in range(d) if i not in zero]
        z = np.zeros(d)
        if free:
            z[free] = np.linalg.solve(A[np.ix_(free, free)], (A @ x)[free])
        if min((z[i] for i in range(p)), default=0.0) < -1e-11:
            continue
        obj = float((x - z) @ A @ (x - z))
        if obj < best_obj:
            best_obj, best_z = obj, z
    active = frozenset(i for i in range(p) if abs(best_z[i]) < 1e-9)
    return best_obj, best_z, active


def oracle_projection_qp(n_instances=200, seed=1618):
    """Cone projection against exhaustive enumeration of active sets."""
    g = np.random.default_rng(seed)
    worst_obj, mismatches = 0.0, 0
    for _ in range(n_instances):
        d = int(g.integers(2, 8))
        p = int(g.integers(1, d + 1))
        M = g.standard_normal((d, d))
        A = M @ M.T + 0.5 * d * np.eye(d)
        x = 1.5 * g.standard_normal(d)
        res = chibar.project_onto_orthant(A, x, p)
        obj_bf, z_bf, active_bf = brute_force_projection(A, x, p)
        diff = abs(res.objective - obj_bf) / max(1.0, abs(obj_bf))
        worst_obj = max(worst_obj, diff)
        if res.active_set != active_bf:
            mismatches += 1
    return {"ok": worst_obj < 1e-8 and mismatches == 0,
            "worst_obj_rel": worst_obj, "active_set_mismatches": mismatches}


def oracle_p2_weights_mc(draws=10 ** 6):
    """Closed-form two-dimensional cone weights against raw Monte Carlo."""
    A2 = np.array([[2.0, 0.8], [0.8, 1.5]])
    cf = chibar.weights_closed_form_p2(A2)
    mc = chibar.mc_weights(A2, 2, draws=draws, seed=2718)
    ses = mc.std_errs
    if ses is None:
        ses = tuple(np.sqrt(w * (1.0 - w) / draws) for w in mc.weights)
    gaps = [abs(a - b) for a, b in zip(cf.weights, mc.weights)]
    ok = all(gap <= 3.0 * max(se, 1e-12) for gap, se in zip(gaps, ses))
    return {"ok": ok, "gaps": gaps, "ses": list(ses)}


def oracle_schur_identity():
    """Marginal covariance equals the inverse Schur complement, all splits."""
    g = np.random.default_rng(0)
    M = g.standard_normal((6, 6))
    A = M @ M.T + 6 * np.eye(6)
    ok = all(volterra.schur_subvariance_check(A, p, tol=1e-10)
             for p in range(7))
    return {"ok": ok}


def oracle_halfhalf_quantile():
    """0.05 upper quantile of the even one-dimensional boundary mixture."""
    m = chibar.weights_closed_form(1)
    q = chibar.mixture_quantile(m, 0.05)
    err = abs(q - 2.705543)
    return {"ok": err < 1e-5, "quantile": q, "abs_err": err}


ALL_ORACLES = (
    ("score_fd", oracle_score_fd),
    ("volterra_closed_form", oracle_volterra_closed_form),
    ("poisson_information", oracle_poisson_information),
    ("projection_qp", oracle_projection_qp),
    ("p2_weights_mc", oracle_p2_weights_mc),
    ("schur_identity", oracle_schur_identity),
    ("halfhalf_quantile", oracle_halfhalf_quantile),
)
