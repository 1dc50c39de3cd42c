import numpy as np
import pytest

from sparsehawkes import likelihood, model, simulate, volterra


def pytest_collection_modifyitems(config, items):
    # heavy Monte Carlo criteria go last so unit failures surface first
    items.sort(key=lambda it: it.fspath.basename == "test_acceptance.py")


@pytest.fixture(scope="session", autouse=True)
def _warm_compiled_kernels():
    """Trigger jit compilation once so timed tests measure compute only."""
    spec = model.make_spec(K=1, horizons=1.0, baseline="constant",
                           kernel="exponential")
    theta = model.make_theta(spec, gamma=[2.0], alpha=[[0.3]], beta=[4.0])
    ds = simulate.simulate_dataset(spec, theta, n=4, master_seed=0)
    ctx = likelihood.build_context(spec, simulate.aggregate(ds), 4)
    likelihood.value_and_score(ctx, theta)
    likelihood.score_derivative(ctx, theta)
    volterra.solve_h(spec, theta, step=0.01)
    for family in ("gamma", "pareto"):
        sp = model.make_spec(K=1, horizons=1.0, baseline="constant",
                             kernel=family)
        th = model.make_theta(sp, gamma=[2.0], alpha=[[0.3]], beta=[4.0])
        d2 = simulate.simulate_dataset(sp, th, n=2, master_seed=1)
        cx = likelihood.build_context(sp, simulate.aggregate(d2), 2)
        likelihood.value_and_score(cx, th)
        likelihood.score_derivative(cx, th)


@pytest.fixture
def nprng():
    return np.random.default_rng(20240817)
