"""Parameterisation, kernel and spec round-trip checks."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sparsehawkes import model

from helpers import small_hawkes_profile


class TestKernels:
    """Closed-form kernel families against numeric integration."""

    @pytest.mark.parametrize("family", model.KERNEL_FAMILIES)
    @pytest.mark.parametrize("beta", [0.7, 3.0, 25.0])
    def test_density_normalised(self, family, beta):
        total, err = integrate.quad(
            lambda s: model.kernel_f(family, s, beta), 0, np.inf, limit=200)
        assert abs(total - 1.0) < 1e-8

    @pytest.mark.parametrize("family", model.KERNEL_FAMILIES)
    def test_cdf_matches_density_integral(self, family):
        beta = 2.5
        for s in (0.1, 0.8, 3.0):
            num, _ = integrate.quad(
                lambda u: model.kernel_f(family, u, beta), 0, s, limit=200)
            assert model.kernel_F(family, s, beta) == pytest.approx(num, abs=1e-9)

    @pytest.mark.parametrize("family", model.KERNEL_FAMILIES)
    def test_decay_derivatives_match_finite_differences(self, family):
        h = 1e-6
        for s in (0.2, 1.3):
            for b in (1.5, 6.0):
                fd = (model.kernel_f(family, s, b + h)
                      - model.kernel_f(family, s, b - h)) / (2 * h)
                assert model.kernel_df_dbeta(family, s, b) == \
                    pytest.approx(fd, rel=1e-6, abs=1e-8)
                fd_F = (model.kernel_F(family, s, b + h)
                        - model.kernel_F(family, s, b - h)) / (2 * h)
                assert model.kernel_dF_dbeta(family, s, b) == \
                    pytest.approx(fd_F, rel=1e-6, abs=1e-8)

    @pytest.mark.parametrize("family", model.KERNEL_FAMILIES)
    def test_second_decay_derivatives(self, family):
        h = 1e-4
        s, b = 0.6, 3.0
        fd2 = (model.kernel_f(family, s, b + h) - 2 * model.kernel_f(family, s, b)
               + model.kernel_f(family, s, b - h)) / h ** 2
        assert model.kernel_d2f_dbeta2(family, s, b) == \
            pytest.approx(fd2, rel=1e-5, abs=1e-6)
        fd2F = (model.kernel_F(family, s, b + h) - 2 * model.kernel_F(family, s, b)
                + model.kernel_F(family, s, b - h)) / h ** 2
        assert model.kernel_d2F_dbeta2(family, s, b) == \
            pytest.approx(fd2F, rel=1e-5, abs=1e-6)

    def test_truncation_lag_hits_tolerance(self):
        from sparsehawkes import simulate
        for family in model.KERNEL_FAMILIES:
            lag = simulate.truncation_lag(family, 3.0, tol=1e-12)
            tail = 1.0 - model.kernel_F(family, lag, 3.0)
            assert tail <= 1e-12 * 1.01


class TestBaseline:

    def test_tilted_baseline_values(self):
        spec, th = small_hawkes_profile()
        t = 0.7
        got = model.eval_baseline(spec, th, t)
        assert got[0] == pytest.approx(1.5 * np.exp(0.8 * t / 2.0), rel=1e-12)
        assert got[1] == pytest.approx(2.0 * np.exp(-0.5 * t / 2.0), rel=1e-12)

    def test_baseline_integral_against_quadrature(self):
        spec, th = small_hawkes_profile()
        got = model.eval_baseline_integral(spec, th, 2.0)
        for k, (mu0, kap) in enumerate([(1.5, 0.8), (2.0, -0.5)]):
            num, _ = integrate.quad(
                lambda u: mu0 * np.exp(kap * u / 2.0), 0, 2.0)
            assert got[k] == pytest.approx(num, rel=1e-10)

    def test_zero_tilt_reduces_to_constant(self):
        spec = model.make_spec(K=1, horizons=3.0, baseline="exponential_time")
        th = model.make_theta(spec, gamma=[1.3, 0.0], alpha=[[0.0]], beta=[2.0])
        assert model.eval_baseline(spec, th, 1.7)[0] == pytest.approx(1.3)
        assert model.eval_baseline_integral(spec, th, 3.0)[0] == \
            pytest.approx(1.3 * 3.0, rel=1e-12)


class TestPackUnpack:

    def test_roundtrip_exact(self):
        spec, th = small_hawkes_profile()
        vec = model.pack_theta(spec, th)
        back = model.unpack_theta(spec, vec)
        assert np.array_equal(model.pack_theta(spec, back), vec)
        assert np.array_equal(back.alpha, th.alpha)

    @given(st.lists(st.floats(0.01, 5.0), min_size=4, max_size=4),
           st.floats(0.1, 50.0))
    @settings(max_examples=40, deadline=None)
    def test_roundtrip_random_values(self, alphas, beta):
        spec = model.make_spec(K=2, horizons=1.0)
        th = model.make_theta(spec, gamma=[1.0, 1.0],
                              alpha=np.array(alphas).reshape(2, 2),
                              beta=[beta])
        vec = model.pack_theta(spec, th)
        again = model.pack_theta(spec, model.unpack_theta(spec, vec))
        assert np.array_equal(vec, again)

    def test_pattern_carried_through_unpack(self):
        spec = model.make_spec(K=2, horizons=1.0)
        th = model.make_theta(spec, gamma=[1.0, 1.0],
                              alpha=[[0.0, 0.2], [0.3, 0.1]], beta=[4.0])
        vec = model.pack_theta(spec, th)
        out = model.unpack_theta(spec, vec, pattern=frozenset({(0, 0)}))
        assert out.pattern == frozenset({(0, 0)})


class TestSpecValidation:

    def test_rejects_unknown_kernel(self):
        with pytest.raises(ValueError):
            model.make_spec(K=1, horizons=1.0, kernel="weibull")

    def test_rejects_bad_structure_matrix(self):
        bad = np.array([[0, 1], [1, 5]])  # slot 5 leaves gaps
        with pytest.raises(ValueError):
            model.make_spec(K=2, horizons=1.0, alpha_structure=bad)

    def test_theta_out_of_bounds_reported(self):
        spec = model.make_spec(K=1, horizons=1.0,
                               alpha_bounds=np.array([[0.0, 1.0]]))
        th = model.make_theta(spec, gamma=[1.0], alpha=[[0.5]], beta=[2.0])
        th_bad = model.ParamVector(gamma=th.gamma, alpha=np.array([[3.0]]),
                                   beta=th.beta)
        assert model.check_theta(spec, th_bad)

    def test_slot_names_for_shared_structure(self):
        structure = np.array([[-1, 0], [0, -1]])
        spec = model.make_spec(K=2, horizons=1.0, alpha_structure=structure)
        names = spec.slot_names()
        assert "alpha:(1,2)+(2,1)" in names

    def test_pattern_slots_requires_full_slot_coverage(self):
        structure = np.array([[-1, 0], [0, -1]])
        spec = model.make_spec(K=2, horizons=1.0, alpha_structure=structure)
        with pytest.raises(ValueError):
            model.pattern_slots(spec, [(0, 1)])  # shares a slot with (1,0)
        assert model.pattern_slots(spec, [(0, 1), (1, 0)])


class TestBranching:

    def test_branching_matrix_scales_with_mark_mean(self):
        spec = model.make_spec(K=1, horizons=1.0, mark_weight="identity",
                               mark_dist="half_normal_offset", mark_delta=1e-2)
        th = model.make_theta(spec, gamma=[1.0], alpha=[[0.4]], beta=[3.0])
        B = model.branching_matrix(spec, th)
        assert B[0, 0] == pytest.approx(0.4 * (np.sqrt(2 / np.pi) + 1e-2))

    def test_spectral_radius_agrees_with_dense_eig(self, nprng):
        for _ in range(10):
            B = nprng.uniform(0.0, 0.4, (4, 4))
            want = np.max(np.abs(np.linalg.eigvals(B)))
            assert model.spectral_radius(B) == pytest.approx(want, abs=1e-8)

    def test_validate_flags_supercritical_model(self):
        spec = model.make_spec(K=1, horizons=1.0)
        th = model.make_theta(spec, gamma=[1.0], alpha=[[1.2]], beta=[3.0])
        rep = model.validate(spec, th)
        assert not rep.stable
        assert rep.spectral_radius > 1.0

    def test_half_normal_offset_moments_exact(self):
        spec = model.make_spec(K=1, horizons=1.0, mark_weight="identity",
                               mark_dist="half_normal_offset", mark_delta=1e-2)
        assert spec.mark_mean_g == pytest.approx(np.sqrt(2 / np.pi) + 1e-2,
                                                 rel=1e-12)
        assert spec.mark_mean_g2 == pytest.approx(
            1.0 + 2e-2 * np.sqrt(2 / np.pi) + 1e-4, rel=1e-12)


class TestTomlRoundTrip:

    def test_spec_and_theta_survive_roundtrip(self):
        spec, th = small_hawkes_profile()
        text = model.spec_to_toml(spec, th)
        spec2, th2 = model.spec_from_toml(text)
        assert model.spec_equal(spec, spec2)
        assert np.array_equal(model.pack_theta(spec, th),
                              model.pack_theta(spec2, th2))

    def test_structure_and_bounds_survive_roundtrip(self):
        structure = np.array([[-1, 0], [1, -1]])
        spec = model.make_spec(K=2, horizons=[1.0, 2.0],
                               alpha_structure=structure,
                               alpha_bounds=(0.0, 7.5))
        spec2, th2 = model.spec_from_toml(model.spec_to_toml(spec))
        assert model.spec_equal(spec, spec2)
        assert th2 is None

    def test_marked_spec_roundtrip(self):
        spec, _ = small_hawkes_profile()
        marked = model.make_spec(K=1, horizons=0.5, mark_weight="identity",
                                 mark_dist="half_normal_offset",
                                 mark_delta=1e-2)
        again, _ = model.spec_from_toml(model.spec_to_toml(marked))
        assert model.spec_equal(marked, again)
        assert again.mark_mean_g == marked.mark_mean_g
