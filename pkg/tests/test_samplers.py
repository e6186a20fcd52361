"""Langevin kernels: drift maps, seeded stepping and admissibility."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _models import centered_quadratic, pure_l1_model
from proxsapg.errors import AdmissibilityError, InvalidArgument, UnsupportedConfiguration
from proxsapg.model import builtin_gaussian_conjugate, builtin_laplace_scalar, quadratic_model
from proxsapg.oracle import posterior_expectation_1d
from proxsapg.samplers import (ChainState, KernelConfig, check_admissible, drift_map,
                               one_step_second_moment, run_chain, step, step_bound, step_prior)


def _half_sq(theta, x):
    return np.array([0.5 * float(x @ x)])


class TestDriftMap:
    def test_myula_pure_l1(self):
        cfg = KernelConfig("MYULA", 0.1, 1.0)
        np.testing.assert_allclose(drift_map(pure_l1_model(), [1.0], cfg, [2.0]), [1.9])

    def test_pula_quadratic(self):
        cfg = KernelConfig("PULA", 0.1)
        np.testing.assert_allclose(drift_map(quadratic_model(), [1.0], cfg, [2.0]), [1.8])

    def test_myula_without_nonsmooth_part_equals_ula(self):
        model = builtin_gaussian_conjugate(2.0, 1.0).model
        rng = np.random.default_rng(0)
        for _ in range(100):
            gamma = rng.uniform(0.0, 0.09)
            x = rng.normal(scale=5.0, size=1)
            theta = rng.uniform(0.05, 10.0, 1)
            myula = drift_map(model, theta, KernelConfig("MYULA", gamma), x)
            ula = drift_map(model, theta, KernelConfig("ULA", gamma), x)
            np.testing.assert_allclose(myula, ula, rtol=1e-15, atol=1e-15)

    def test_compiled_and_interpreted_agree(self):
        compiled, plain = quadratic_model(), centered_quadratic()
        assert compiled.is_compiled and not plain.is_compiled
        for kind in ("ULA", "MYULA", "PULA"):
            cfg = KernelConfig(kind, 0.3)
            a, _ = run_chain(compiled, [1.0], cfg, ChainState.new([2.0], 5), 200)
            b, _ = run_chain(plain, [1.0], cfg, ChainState.new([2.0], 5), 200)
            np.testing.assert_array_equal(a.x, b.x)

    def test_ula_needs_gradient_of_nonsmooth_part(self):
        with pytest.raises(UnsupportedConfiguration):
            drift_map(builtin_laplace_scalar(2.0, 1.0).model, [1.0], KernelConfig("ULA", 0.1),
                      [1.0])


class TestAdmissibility:
    def test_strongly_convex_bounds(self):
        model = builtin_gaussian_conjugate(2.0, 1.0).model
        assert step_bound(model, "PULA") == pytest.approx(2.0 / 12.05)
        assert step_bound(model, "MYULA", 1.0) == pytest.approx(min(1.0 / 11.0, 2.0 / 12.05))
        assert step_bound(model, "MYULA", 0.6) == pytest.approx((2 - 1 / 0.6) / 11.0)

    def test_coercive_bounds_take_the_larger_regime(self):
        model = builtin_laplace_scalar(2.0, 1.0).model
        # strong convexity gives 2/(m+L) = 1; coercivity gives 0.1/(2*5*1) for MYULA
        assert step_bound(model, "MYULA") == pytest.approx(1.0)
        assert step_bound(model, "PULA") == pytest.approx(2.0)

    def test_step_at_bound_rejected(self):
        model = builtin_gaussian_conjugate(2.0, 1.0).model
        with pytest.raises(AdmissibilityError):
            check_admissible(model, KernelConfig("MYULA", 1.0 / 11.0))
        check_admissible(model, KernelConfig("MYULA", 0.999 / 11.0))

    @pytest.mark.parametrize("kappa", [0.5, 0.55, 2.5])
    def test_kappa_outside_bounds_rejected(self, kappa):
        with pytest.raises(AdmissibilityError):
            KernelConfig("MYULA", 0.1, kappa)

    @pytest.mark.parametrize("gamma", [-0.1, math.inf, math.nan])
    def test_bad_step_rejected(self, gamma):
        with pytest.raises(InvalidArgument):
            KernelConfig("MYULA", gamma)

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidArgument):
            KernelConfig("HMC", 0.1)


class TestStep:
    def test_zero_noise_step_is_drift(self):
        model = builtin_laplace_scalar(2.0, 1.0).model
        cfg = KernelConfig("MYULA", 0.4)
        for x in np.linspace(-4, 4, 9):
            out = step(model, [1.0], cfg, ChainState.new([x], seed=None))
            np.testing.assert_array_equal(out.x, drift_map(model, [1.0], cfg, [x]))
            assert out.steps_taken == 1

    def test_equal_seeds_give_equal_trajectories(self):
        model = builtin_laplace_scalar(2.0, 1.0).model
        cfg = KernelConfig("PULA", 0.5)
        _, a = run_chain(model, [1.0], cfg, ChainState.new([3.0], 42), 10_000, record=True)
        _, b = run_chain(model, [1.0], cfg, ChainState.new([3.0], 42), 10_000, record=True)
        np.testing.assert_array_equal(a.states, b.states)

    def test_step_sequence_matches_single_run(self):
        model = builtin_laplace_scalar(2.0, 1.0).model
        cfg = KernelConfig("MYULA", 0.5)
        s = ChainState.new([1.0], 3)
        for _ in range(25):
            s = step(model, [1.0], cfg, s)
        t, _ = run_chain(model, [1.0], cfg, ChainState.new([1.0], 3), 25)
        np.testing.assert_array_equal(s.x, t.x)

    def test_first_step_mean_over_replicas(self):
        # a separable model in 10^6 dimensions is 10^6 independent scalar chains
        n = 1_000_000
        cfg = KernelConfig("MYULA", 0.1, 1.0)
        out = step(pure_l1_model(n), [1.0], cfg, ChainState.new(np.full(n, 2.0), 9))
        se = out.x.std(ddof=1) / math.sqrt(n)
        assert abs(out.x.mean() - 1.9) <= 3 * se


class TestStepPrior:
    def test_pula_prior_zero_noise(self):
        model = builtin_laplace_scalar(2.0, 1.0, inhomogeneous=True).model
        out = step_prior(model, [1.0], KernelConfig("PULA", 0.1), ChainState.new([2.0]))
        np.testing.assert_allclose(out.x, [1.9])

    def test_prior_determinism(self):
        model = builtin_laplace_scalar(2.0, 1.0, inhomogeneous=True).model
        cfg = KernelConfig("MYULA", 0.005)
        a, b = ChainState.new([2.0], 8), ChainState.new([2.0], 8)
        for _ in range(100):
            a = step_prior(model, [1.0], cfg, a)
            b = step_prior(model, [1.0], cfg, b)
        np.testing.assert_array_equal(a.x, b.x)

    def test_vanishing_prior_potential_is_pure_diffusion(self):
        model = centered_quadratic()
        gamma = 0.1
        out = step_prior(model, [1.0], KernelConfig("MYULA", gamma), ChainState.new([2.0], 17))
        z = np.random.Generator(np.random.Philox(17)).standard_normal((1, 1))[0]
        np.testing.assert_allclose(out.x, 2.0 + math.sqrt(2 * gamma) * z, rtol=1e-15)

    def test_missing_prior_split(self):
        with pytest.raises(UnsupportedConfiguration):
            step_prior(quadratic_model(), [1.0], KernelConfig("MYULA", 0.1), ChainState.new([0.0]))


class TestRunChain:
    def test_zero_steps(self):
        model = quadratic_model()
        s0 = ChainState.new([1.5], 0)
        s1, summ = run_chain(model, [1.0], KernelConfig("MYULA", 0.1), s0, 0, _half_sq)
        np.testing.assert_array_equal(s1.x, s0.x)
        assert summ.count == 0 and s1.steps_taken == 0
        np.testing.assert_array_equal(summ.stat_sum, [0.0])
        with pytest.raises(InvalidArgument):
            summ.mean

    def test_single_step_sum(self):
        model = quadratic_model()
        s1, summ = run_chain(model, [1.0], KernelConfig("MYULA", 0.1), ChainState.new([1.5], 2),
                             1, _half_sq)
        np.testing.assert_allclose(summ.stat_sum, _half_sq(None, s1.x), rtol=1e-15)

    def test_negative_count_rejected(self):
        with pytest.raises(InvalidArgument):
            run_chain(quadratic_model(), [1.0], KernelConfig("MYULA", 0.1), ChainState.new([0.0]), -1)

    def test_wrong_state_dimension_rejected(self):
        with pytest.raises(InvalidArgument):
            run_chain(quadratic_model(), [1.0], KernelConfig("MYULA", 0.1),
                      ChainState.new([0.0, 1.0], 0), 1)

    def test_long_run_mean_matches_quadrature(self):
        inst = builtin_gaussian_conjugate(2.0, 1.0)
        theta = np.array([1.0])
        exact = posterior_expectation_1d(inst, theta)
        cfg = KernelConfig("MYULA", 1e-3)
        state, _ = run_chain(inst.model, theta, cfg, ChainState.new([1.0], 4), 20_000)
        means = []
        for _ in range(50):
            state, summ = run_chain(inst.model, theta, cfg, state, 20_000, inst.estimator.statistic)
            means.append(summ.mean[0])
        se = np.std(means, ddof=1) / math.sqrt(len(means))
        assert abs(np.mean(means) - exact) <= 3 * se


class TestSecondMoment:
    def test_closed_form(self):
        cfg = KernelConfig("MYULA", 0.1)
        assert one_step_second_moment(pure_l1_model(), [1.0], cfg, [2.0]) == pytest.approx(3.81,
                                                                                          abs=1e-14)

    def test_no_noise(self):
        cfg = KernelConfig("MYULA", 0.0)
        assert one_step_second_moment(pure_l1_model(), [1.0], cfg, [2.0]) == 4.0

    def test_monte_carlo(self):
        n = 1_000_000
        cfg = KernelConfig("MYULA", 0.1)
        out = step(pure_l1_model(n), [1.0], cfg, ChainState.new(np.full(n, 2.0), 21))
        sq = out.x ** 2
        se = sq.std(ddof=1) / math.sqrt(n)
        assert abs(sq.mean() - one_step_second_moment(pure_l1_model(), [1.0], cfg, [2.0])) <= 3 * se

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-20, 20), st.floats(0.0, 0.9))
    def test_identity_holds_for_quadratic(self, x, gamma):
        cfg = KernelConfig("PULA", gamma)
        expected = (1 - gamma) ** 2 * x * x + 2 * gamma
        got = one_step_second_moment(quadratic_model(), [1.0], cfg, [x])
        assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)
