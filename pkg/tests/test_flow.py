import math

import numpy as np
import pytest

from soar.bessel import bessel_j
from soar.flow import (
    SourceConditionFixture,
    SpectralModel,
    bias_r,
    bias_r_many,
    bias_r_time_derivative,
    discrepancy_chi,
    filter_g,
    find_stopping_time,
    flow_energy,
    ode_bias_oracle,
    rate_experiment,
    residual_norm,
    spectral_solution,
    spectral_velocity,
)


class TestBesselJ:
    def test_j0_at_zero(self):
        assert bessel_j(0.0, 0.0) == 1.0

    def test_half_order_closed_form(self):
        want = math.sqrt(2.0 / math.pi) * math.sin(1.0)
        assert bessel_j(0.5, 1.0) == pytest.approx(want, abs=1e-12)
        assert bessel_j(0.5, 1.0) == pytest.approx(0.6713967071418031, abs=1e-12)

    def test_j0_first_zero(self):
        assert abs(bessel_j(0.0, 2.404825557695773)) <= 1e-9

    def test_order_below_range_rejected(self):
        with pytest.raises(ValueError):
            bessel_j(-0.6, 1.0)

    def test_seam_agreement(self):
        from soar.bessel import X_SWITCH, _asymptotic, _series

        for s in (0.0, 0.5, 1.0, 2.0, 4.0):
            for x in (X_SWITCH - 0.5, X_SWITCH, X_SWITCH + 0.5):
                assert _series(s, x) == pytest.approx(_asymptotic(s, x), abs=1e-9)

    def test_against_scipy_envelope(self):
        special = pytest.importorskip("scipy.special")
        for s in (0.0, 0.25, 0.5, 1.0, 2.0, 3.5):
            x = np.linspace(0.0, 50.0, 501)
            got = np.array([bessel_j(s, xi) for xi in x])
            ref = special.jv(s, x)
            env = np.maximum(np.abs(ref), np.sqrt(2.0 / (np.pi * np.maximum(x, 1e-2))))
            assert np.max(np.abs(got - ref) / env) <= 1e-10

    def test_half_integer_identity_all_ranges(self):
        for x in np.linspace(0.01, 50.0, 300):
            want = math.sqrt(2.0 / (math.pi * x)) * math.sin(x)
            assert bessel_j(0.5, x) == pytest.approx(want, abs=1e-10)


class TestBiasR:
    def test_value_one_at_t_zero(self):
        for s in (0.0, 0.5, 1.0, 2.7):
            for lam in (0.1, 1.0, 25.0):
                assert bias_r(s, 0.0, lam) == 1.0

    def test_sinc_closed_form_zero(self):
        assert bias_r(0.5, math.pi, 1.0) == pytest.approx(0.0, abs=1e-14)

    def test_sinc_identity(self):
        for t in (0.3, 1.7, 8.0, 30.0):
            for lam in (0.25, 1.0, 4.0):
                z = math.sqrt(lam) * t
                assert bias_r(0.5, t, lam) == pytest.approx(math.sin(z) / z, abs=1e-10)

    def test_bound(self):
        assert abs(bias_r(0.5, 10.0, 4.0)) <= 1.0

    def test_bound_random_samples(self):
        r = np.random.default_rng(1)
        for _ in range(10000):
            s = r.uniform(0.0, 4.0)
            t = r.uniform(0.0, 50.0)
            lam = r.uniform(1e-4, 25.0)
            assert abs(bias_r(s, t, lam)) <= 1.0 + 1e-12

    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError):
            bias_r(1.0, 1.0, 0.0)

    def test_time_derivative_zero_at_origin(self):
        assert bias_r_time_derivative(1.0, 0.0, 4.0) == 0.0

    def test_time_derivative_matches_difference(self):
        for s in (0.0, 1.0, 2.0):
            for lam in (0.5, 4.0):
                t, h = 2.3, 1e-5
                fd = (bias_r(s, t + h, lam) - bias_r(s, t - h, lam)) / (2.0 * h)
                assert bias_r_time_derivative(s, t, lam) == pytest.approx(fd, abs=1e-7)


class TestOdeOracle:
    def test_initial_condition(self):
        assert ode_bias_oracle(1.0, 1e-4, 1.0, 500) == pytest.approx(1.0, abs=1e-8)

    def test_sinc_zero(self):
        assert ode_bias_oracle(0.5, math.pi, 1.0, 4000) == pytest.approx(0.0, abs=1e-6)

    def test_j0_zero(self):
        assert ode_bias_oracle(0.0, 2.404825557695773, 1.0, 4000) == pytest.approx(0.0, abs=1e-6)

    def test_min_steps_enforced(self):
        with pytest.raises(ValueError):
            ode_bias_oracle(1.0, 1.0, 1.0, 50)

    def test_grid_agreement_with_closed_form(self):
        for s in (0.0, 0.5, 1.0, 2.0):
            for lam in (0.25, 1.0, 4.0, 25.0):
                for t in (0.1, 1.0, 5.0, 20.0):
                    n = max(2000, int(400 * math.sqrt(lam) * t))
                    got = ode_bias_oracle(s, t, lam, n)
                    want = bias_r(s, t, lam)
                    assert got == pytest.approx(want, abs=1e-6)


class TestFilterG:
    def test_zero_at_t_zero(self):
        assert filter_g(1.0, 0.0, 3.0) == 0.0

    def test_sinc_point(self):
        assert filter_g(0.5, math.pi, 1.0) == pytest.approx(1.0, abs=1e-13)

    def test_large_lambda_bound(self):
        for lam in (10.0, 100.0, 1e4):
            assert filter_g(1.0, 3.0, lam) <= 2.0 / lam

    def test_sqrt_growth_bound(self):
        # sqrt(lam) g(t, lam) stays O(t) (qualitative growth-bound check)
        for t in (0.5, 1.0, 4.0, 16.0):
            vals = [math.sqrt(lam) * filter_g(1.0, t, lam) for lam in np.logspace(-6, 2, 100)]
            assert max(vals) <= 1.1 * t


class TestSpectralSolution:
    def test_consistent_start_is_stationary(self):
        sigma = np.array([2.0, 1.0, 0.5])
        y = np.array([0.4, 1.0, -0.2])
        f0 = y / sigma
        model = SpectralModel(sigma, f0, y, s=1.0)
        for t in (0.0, 0.7, 5.0):
            assert np.allclose(spectral_solution(model, t), f0, atol=1e-14)

    def test_initial_value(self):
        model = SpectralModel([1.0, 0.3], [0.5, -1.0], [0.1, 0.2], s=0.5)
        assert np.allclose(spectral_solution(model, 0.0), [0.5, -1.0])

    def test_single_mode_exact(self):
        model = SpectralModel([1.0], [0.0], [1.0], s=0.5)
        assert spectral_solution(model, math.pi)[0] == pytest.approx(1.0, abs=1e-14)


class TestDiscrepancy:
    def test_chi_at_zero(self):
        model = SpectralModel([2.0, 1.0], [1.0, 1.0], [0.0, 0.0], s=1.0)
        want = math.sqrt(2.0**2 + 1.0) - 2.0 * 0.1
        assert discrepancy_chi(model, 0.0, 2.0, 0.1) == pytest.approx(want, abs=1e-14)

    def test_consistent_start_constant(self):
        sigma = np.array([1.5, 0.5])
        y = np.array([0.3, 0.4])
        model = SpectralModel(sigma, y / sigma, y, s=1.0)
        for t in (0.0, 1.0, 10.0):
            assert discrepancy_chi(model, t, 2.0, 0.3) == pytest.approx(-0.6, abs=1e-13)

    def test_single_mode_at_sinc_zero(self):
        model = SpectralModel([1.0], [0.0], [1.0], s=0.5)
        assert discrepancy_chi(model, math.pi, 2.0, 0.25) == pytest.approx(-0.5, abs=1e-13)


class TestFindStoppingTime:
    def test_sinc_first_crossing(self):
        # residual is |sin t / t|, target 0.5: first root of sin t = t/2
        model = SpectralModel([1.0], [1.0], [0.0], s=0.5)
        out = find_stopping_time(model, tau=2.0, delta=0.25, t_max=20.0)
        assert out.status == "found"
        assert out.time == pytest.approx(1.895494267033981, abs=1e-6)

    def test_initial_flag(self):
        model = SpectralModel([1.0], [1.0], [0.0], s=0.5)
        out = find_stopping_time(model, tau=2.0, delta=1.0, t_max=10.0)
        assert out.status == "initial"
        assert out.time == 0.0

    def test_not_reached(self):
        model = SpectralModel([1.0], [1.0], [0.0], s=0.5)
        out = find_stopping_time(model, tau=2.0, delta=0.0, t_max=5.0)
        assert out.status == "not_reached"
        assert out.time == 5.0

    def test_first_root_not_a_later_one(self):
        # two widely separated modes give an oscillating residual; the scan
        # must return the earliest crossing
        model = SpectralModel([1.0, 0.05], [1.0, 1.0], [0.0, 0.0], s=0.5)
        out = find_stopping_time(model, tau=2.0, delta=0.3, t_max=100.0)
        assert out.status == "found"
        t = np.linspace(0.0, out.time * 0.999, 400)
        vals = [residual_norm(model, ti) for ti in t]
        assert min(vals) > 2.0 * 0.3


class TestContinuousLyapunov:
    @pytest.mark.parametrize("seed,s", [(3, 1.0), (4, 0.0), (5, 2.0)])
    def test_energy_nonincreasing_along_flow(self, seed, s):
        r = np.random.default_rng(seed)
        sigma = np.sort(r.uniform(0.1, 2.0, 15))[::-1]
        f0 = r.standard_normal(15)
        y = sigma * r.standard_normal(15)
        model = SpectralModel(sigma, f0, y, s=s)
        ts = np.linspace(0.0, 40.0, 400)
        e = np.asarray([flow_energy(model, t) for t in ts])
        assert np.all(np.diff(e) <= 1e-10 * e[0])


class TestDiscreteToContinuous:
    def test_arm_iterates_approach_flow(self):
        from soar.operators import DiagonalOperator
        from soar.solvers import SchemeParams, StoppingRule, run

        sigma = np.array([1.0, 0.6, 0.25, 0.1])
        f0 = np.array([0.8, -0.5, 0.3, 1.0])
        y = np.array([0.2, 0.1, -0.05, 0.02])
        model = SpectralModel(sigma, f0, y, s=1.0)
        op = DiagonalOperator(sigma)
        t_final = 4.0
        errs = []
        for dt in (0.2, 0.1, 0.05):
            k = int(round(t_final / dt))
            rec = run(
                "arm", op, y, f0, SchemeParams(s=1.0, dt=dt), StoppingRule.a_priori(k)
            )
            errs.append(np.linalg.norm(rec.f_final - spectral_solution(model, t_final)))
        assert errs[0] > errs[1] > errs[2]
        assert errs[0] / errs[2] >= 2.5  # at least first-order shrinkage over 4x dt


class TestSourceConditionFixture:
    def test_norm_bound_enforced(self):
        with pytest.raises(ValueError):
            SourceConditionFixture(mu=0.5, rho=0.1, v0_coeff=np.ones(10))

    def test_power_law_construction(self):
        fx = SourceConditionFixture.power_law(100, mu=0.5)
        assert fx.v0_coeff.shape == (100,)
        assert np.linalg.norm(fx.v0_coeff) <= fx.rho * (1 + 1e-12)


class TestRateExperiment:
    def test_single_delta_rejected(self):
        fx = SourceConditionFixture.power_law(50, mu=0.5)
        with pytest.raises(ValueError):
            rate_experiment(fx, np.ones(50), 1.0, [1e-3])

    def test_narrow_range_rejected(self):
        fx = SourceConditionFixture.power_law(50, mu=0.5)
        with pytest.raises(ValueError):
            rate_experiment(fx, np.ones(50), 1.0, [1e-3, 2e-3])

    def test_saturation_bound_enforced(self):
        fx = SourceConditionFixture.power_law(50, mu=1.0)
        sigma = 1.0 / np.arange(1, 51)
        with pytest.raises(ValueError):
            rate_experiment(fx, sigma, s=1.0, deltas=[1e-2, 1e-4])

    def test_a_priori_t_slope_is_exact(self):
        n = 400
        fx = SourceConditionFixture.power_law(n, mu=0.5)
        sigma = 1.0 / np.arange(1.0, n + 1.0)
        _, t_slope = rate_experiment(
            fx, sigma, s=1.0, deltas=np.logspace(-2, -4, 5), rule="a_priori"
        )
        assert t_slope == pytest.approx(-0.5, abs=1e-10)
