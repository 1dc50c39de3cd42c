"""Thinning simulator checks: determinism, laws, aggregation, storage."""
import numpy as np
import pytest
from scipy import stats

from sparsehawkes import likelihood, model, simulate, volterra

from helpers import mc_margin, small_hawkes_profile


def test_same_master_seed_reproduces_dataset():
    spec, th = small_hawkes_profile()
    a = simulate.simulate_dataset(spec, th, n=20, master_seed=404)
    b = simulate.simulate_dataset(spec, th, n=20, master_seed=404)
    for ra, rb in zip(a.replicates, b.replicates):
        assert np.array_equal(ra.times, rb.times)
        assert np.array_equal(ra.coords, rb.coords)
        assert np.array_equal(ra.marks, rb.marks, equal_nan=True)


def test_different_seeds_differ():
    spec, th = small_hawkes_profile()
    a = simulate.simulate_dataset(spec, th, n=5, master_seed=1)
    b = simulate.simulate_dataset(spec, th, n=5, master_seed=2)
    assert any(not np.array_equal(ra.times, rb.times)
               for ra, rb in zip(a.replicates, b.replicates))


def test_replicate_events_stay_inside_window():
    spec, th = small_hawkes_profile()
    for seed in range(5):
        r = simulate.simulate_replicate(spec, th, seed=seed)
        assert np.all(np.diff(r.times) > 0)
        assert r.times.size == 0 or (r.times[0] > 0 and r.times[-1] <= 2.0)
        assert np.all((r.coords >= 0) & (r.coords < spec.K))


def test_poisson_counts_and_uniform_times():
    """No excitation and flat baseline: U(0,T) arrivals, Poisson counts."""
    spec = model.make_spec(K=1, horizons=4.0)
    th = model.make_theta(spec, gamma=[2.5], alpha=[[0.0]], beta=[3.0])
    ds = simulate.simulate_dataset(spec, th, n=800, master_seed=31)
    counts = np.array([r.times.size for r in ds.replicates])
    lam = 2.5 * 4.0
    assert abs(counts.mean() - lam) < 4 * np.sqrt(lam / 800)
    assert abs(counts.var() / lam - 1.0) < 0.25
    merged = np.concatenate([r.times for r in ds.replicates]) / 4.0
    assert stats.kstest(merged, "uniform").pvalue > 1e-3


def test_tilted_baseline_time_distribution():
    kap = 1.8
    spec = model.make_spec(K=1, horizons=2.0, baseline="exponential_time")
    th = model.make_theta(spec, gamma=[2.0, kap], alpha=[[0.0]], beta=[3.0])
    ds = simulate.simulate_dataset(spec, th, n=600, master_seed=32)
    merged = np.concatenate([r.times for r in ds.replicates])

    def cdf(t):
        return np.expm1(kap * t / 2.0) / np.expm1(kap)

    assert stats.kstest(merged, cdf).pvalue > 1e-3


def test_mean_count_matches_renewal_solver():
    """Thinning and the deterministic integral solver agree on E[count]."""
    spec = model.make_spec(K=1, horizons=3.0)
    th = model.make_theta(spec, gamma=[1.2], alpha=[[0.5]], beta=[3.0])
    want = volterra.mean_count(spec, th, step=1e-3)
    ds = simulate.simulate_dataset(spec, th, n=3000, master_seed=53)
    counts = np.array([r.times.size for r in ds.replicates])
    se = counts.std() / np.sqrt(counts.size)
    assert abs(counts.mean() - want) < 4 * se


def test_marks_follow_offset_half_normal():
    spec = model.make_spec(K=1, horizons=2.0, mark_weight="identity",
                           mark_dist="half_normal_offset", mark_delta=1e-2)
    th = model.make_theta(spec, gamma=[4.0], alpha=[[0.2]], beta=[3.0])
    ds = simulate.simulate_dataset(spec, th, n=400, master_seed=77)
    marks = np.concatenate([r.marks for r in ds.replicates])
    assert marks.min() >= 1e-2
    assert abs(marks.mean() - spec.mark_mean_g) < \
        4 * marks.std() / np.sqrt(marks.size)


def test_unmarked_replicates_carry_nan_marks():
    spec = model.make_spec(K=1, horizons=2.0)
    th = model.make_theta(spec, gamma=[3.0], alpha=[[0.0]], beta=[2.0])
    r = simulate.simulate_replicate(spec, th, seed=5)
    assert np.all(np.isnan(r.marks))


def test_excitation_raises_event_count():
    spec = model.make_spec(K=1, horizons=4.0)
    th0 = model.make_theta(spec, gamma=[2.0], alpha=[[0.0]], beta=[3.0])
    th1 = model.make_theta(spec, gamma=[2.0], alpha=[[0.6]], beta=[3.0])
    n0 = sum(r.times.size for r in
             simulate.simulate_dataset(spec, th0, n=300, master_seed=8).replicates)
    n1 = sum(r.times.size for r in
             simulate.simulate_dataset(spec, th1, n=300, master_seed=8).replicates)
    # branching 0.6 multiplies the expected count by 2.5
    assert n1 > 1.8 * n0


class TestAggregate:

    def test_merge_preserves_events_and_orders(self):
        spec, th = small_hawkes_profile()
        ds = simulate.simulate_dataset(spec, th, n=30, master_seed=12)
        agg = simulate.aggregate(ds)
        total = sum(r.times.size for r in ds.replicates)
        assert agg.times.size == total
        assert np.all(np.diff(agg.times) > 0)

    def test_merge_is_deterministic(self):
        spec, th = small_hawkes_profile()
        ds = simulate.simulate_dataset(spec, th, n=30, master_seed=12)
        a = simulate.aggregate(ds)
        b = simulate.aggregate(ds)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.coords, b.coords)


class TestStorage:

    def test_jsonl_roundtrip_bitwise(self, tmp_path):
        spec, th = small_hawkes_profile()
        ds = simulate.simulate_dataset(spec, th, n=15, master_seed=3)
        path = str(tmp_path / "data.jsonl")
        simulate.save_jsonl(ds, path)
        back = simulate.load_jsonl(path)
        assert len(back.replicates) == 15
        for ra, rb in zip(ds.replicates, back.replicates):
            assert np.array_equal(ra.times, rb.times)
            assert np.array_equal(ra.coords, rb.coords)
            assert np.array_equal(ra.marks, rb.marks, equal_nan=True)

    def test_save_is_deterministic(self, tmp_path):
        spec, th = small_hawkes_profile()
        ds = simulate.simulate_dataset(spec, th, n=7, master_seed=3)
        p1, p2 = str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")
        simulate.save_jsonl(ds, p1)
        simulate.save_jsonl(ds, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_malformed_line_reports_location(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        good = '{"id":0,"horizons":[1.0],"events":[[0.5,1,null]]}'
        path.write_text(good + "\nnot json\n")
        with pytest.raises(ValueError, match="line 2"):
            simulate.load_jsonl(str(path))


def test_runaway_simulation_guard():
    spec = model.make_spec(K=1, horizons=50.0,
                           alpha_bounds=np.array([[0.0, 10.0]]))
    th = model.make_theta(spec, gamma=[5.0], alpha=[[1.1]], beta=[3.0])
    with pytest.raises(simulate.RunawaySimulation):
        simulate.simulate_replicate(spec, th, seed=0, max_events=2000)


def test_aggregated_context_feeds_likelihood():
    spec, th = small_hawkes_profile()
    ds = simulate.simulate_dataset(spec, th, n=25, master_seed=6)
    ctx = likelihood.build_context(spec, simulate.aggregate(ds), 25)
    assert np.isfinite(likelihood.log_likelihood(ctx, th))
