import inspect

import numpy as np
import pytest

from collapsekit import (
    ChinchillaFit,
    InfeasibleError,
    SymmetricLaw,
    compression_cost,
    compression_tokens_factor,
    effective_tpp_moe,
    fit_chinchilla,
    normalized_constant_lr_curve,
    normalized_tpp_curve,
    optimal_allocation,
    parameter_wall,
)

# frozen 40-digit-precision evaluations of the closed forms
KD_038 = 4.367115524662534          # (2 - 0.38^-0.35)^(-1/0.35)
COST_038 = 1.659503899371763        # 0.38 * KD_038
ELL_HALF_V1 = 1.1372803136596311    # (1 + 0.5^-0.35) / 2
ELL_QUARTER_K1 = 1.3122523963562355  # (1 + 0.25^-0.35) / 2


def reference_fit(E=1.7, A=100.0, a=0.35, r=20.0):
    return ChinchillaFit(E=E, A=A, alpha=a, B=A * r**a, beta=a)


class TestFitChinchilla:
    def test_noiseless_recovery(self):
        truth = reference_fit()
        pts = [(n, d, truth.evaluate(n, d))
               for n in (1e8, 5e8, 2e9, 8e9)
               for d in (4e9, 2e10, 1e11)]
        fit, norm = fit_chinchilla(pts)
        for name in ("E", "A", "alpha", "B", "beta"):
            got, want = getattr(fit, name), getattr(truth, name)
            assert abs(got - want) <= 1e-6 * max(abs(want), 1e-12), name
        assert norm < 1e-8

    def test_too_few_points_rejected(self):
        pts = [(1e8, 1e9, 3.0), (2e8, 2e9, 2.5), (4e8, 4e9, 2.2)]
        with pytest.raises(ValueError, match="at least 5"):
            fit_chinchilla(pts)

    def test_degenerate_design_rejected(self):
        pts = [(1e8, d, 3.0 - i * 0.1) for i, d in
               enumerate((1e9, 2e9, 4e9, 8e9, 16e9))]
        with pytest.raises(ValueError, match="degenerate"):
            fit_chinchilla(pts)

    def test_noisy_recovery_of_exponents(self):
        # recovery study over 20 seeds on this 8x6 design: median max-exponent
        # error 0.02, 90% of seeds within 0.05; seed 100 gives 0.006
        truth = reference_fit()
        rng = np.random.default_rng(100)
        pts = []
        for n in np.geomspace(3e6, 3e11, 8):
            for d in np.geomspace(3e8, 3e13, 6):
                loss = truth.evaluate(n, d) * (1 + rng.normal(0, 0.01))
                pts.append((float(n), float(d), loss))
        fit, _ = fit_chinchilla(pts, log_space=True)
        assert abs(fit.alpha - truth.alpha) <= 0.05
        assert abs(fit.beta - truth.beta) <= 0.05

    def test_exponent_sanity_bounds_enforced(self):
        with pytest.raises(ValueError):
            ChinchillaFit(E=1.0, A=1.0, alpha=2.5, B=1.0, beta=0.3)


class TestTppCurve:
    def test_endpoint_is_one(self):
        for v in (0.3, 1.0, 10.0):
            for a in (0.2, 0.35, 0.5):
                assert normalized_tpp_curve(1.0, v, a) == 1.0

    def test_frozen_value(self):
        np.testing.assert_allclose(normalized_tpp_curve(0.5, 1.0, 0.35),
                                   ELL_HALF_V1, rtol=1e-14)

    def test_overtrained_runs_drop_earlier(self):
        assert normalized_tpp_curve(0.2, 10.0, 0.35) \
            < normalized_tpp_curve(0.2, 1.0, 0.35)

    def test_pointwise_limit_to_one(self):
        for t in (0.1, 0.5, 0.9):
            vals = [normalized_tpp_curve(t, v, 0.35)
                    for v in (1.0, 10.0, 100.0, 1e4)]
            assert all(b < a for a, b in zip(vals, vals[1:]))
            assert vals[-1] - 1.0 < 0.05

    def test_strictly_decreasing_in_t(self):
        grid = np.linspace(0.05, 1.0, 100)
        for v in (0.5, 1.0, 20.0):
            vals = normalized_tpp_curve(grid, v, 0.35)
            assert np.all(np.diff(vals) < 0)

    def test_t_zero_rejected(self):
        with pytest.raises(ValueError):
            normalized_tpp_curve(0.0, 1.0, 0.35)


class TestConstantLrCurve:
    def test_endpoint(self):
        assert normalized_constant_lr_curve(1.0, 20.0, reference_fit()) == 1.0

    def test_equals_tpp_curve_under_symmetric_law(self):
        fit = reference_fit(A=3.7, a=0.35, r=20.0)
        grid = np.linspace(0.01, 1.0, 257)
        for k in (5.0, 20.0, 234.0):
            a_vals = normalized_constant_lr_curve(grid, k, fit)
            b_vals = normalized_tpp_curve(grid, k / 20.0, 0.35)
            assert np.max(np.abs(a_vals - b_vals)) <= 1e-12

    def test_frozen_value(self):
        fit = ChinchillaFit(E=0.0, A=1.0, alpha=0.35, B=1.0, beta=0.35)
        np.testing.assert_allclose(
            normalized_constant_lr_curve(0.25, 1.0, fit),
            ELL_QUARTER_K1, rtol=1e-14)

    def test_collapse_is_structural(self):
        # model size cannot influence the result: there is no N parameter
        params = inspect.signature(normalized_constant_lr_curve).parameters
        assert "N" not in params and "params" not in params

    def test_asymmetric_fit_rejected(self):
        fit = ChinchillaFit(E=0.0, A=1.0, alpha=0.35, B=1.0, beta=0.34)
        with pytest.raises(ValueError):
            normalized_constant_lr_curve(0.5, 20.0, fit)


class TestCompression:
    def test_no_compression_is_free(self):
        for a in (0.3, 0.35, 0.4):
            assert compression_tokens_factor(1.0, a) == 1.0
            assert compression_cost(1.0, a) == 1.0

    def test_frozen_values(self):
        np.testing.assert_allclose(compression_tokens_factor(0.38, 0.35),
                                   KD_038, rtol=1e-13)
        np.testing.assert_allclose(compression_cost(0.38, 0.35),
                                   COST_038, rtol=1e-13)

    def test_divergence_at_the_wall(self):
        a = 0.35
        wall = parameter_wall(a)
        assert compression_tokens_factor(wall + 1e-9, a) > 1e9

    def test_below_wall_rejected(self):
        a = 0.35
        with pytest.raises(InfeasibleError, match="wall"):
            compression_tokens_factor(parameter_wall(a) - 1e-6, a)
        with pytest.raises(InfeasibleError, match="wall"):
            compression_tokens_factor(parameter_wall(a), a)

    def test_above_one_rejected(self):
        with pytest.raises(InfeasibleError):
            compression_tokens_factor(1.2, 0.35)

    def test_cost_exceeds_one_and_grows_toward_wall(self):
        for a in (0.3, 0.35, 0.4):
            wall = parameter_wall(a)
            grid = np.linspace(wall + 0.01, 1.0, 200)[::-1][1:]  # k_N < 1
            costs = [compression_cost(float(k), a) for k in grid]
            assert all(c > 1.0 for c in costs)
            # decreasing k_N (toward the wall) strictly raises the cost
            assert all(b > a_ for a_, b in zip(costs, costs[1:]))


class TestOptimalAllocation:
    def test_ratio_identity(self):
        law = SymmetricLaw(a=0.35, r=20.0)
        for c in (1e18, 6e20, 3.3e23):
            n, d = optimal_allocation(c, law)
            np.testing.assert_allclose(d / n, 20.0, rtol=1e-12)

    def test_constraint_inversion(self):
        # C = 6 * 20 * N^2 at N = 1e9 must return that N
        law = SymmetricLaw(a=0.35, r=20.0)
        c = 6.0 * 20.0 * (1e9) ** 2
        n, d = optimal_allocation(c, law)
        np.testing.assert_allclose(n, 1e9, rtol=1e-12)
        np.testing.assert_allclose(d, 2e10, rtol=1e-12)

    def test_budget_satisfied(self):
        law = SymmetricLaw(a=0.4, r=25.0)
        c = 7.3e21
        n, d = optimal_allocation(c, law)
        np.testing.assert_allclose(6.0 * n * d, c, rtol=1e-9)

    def test_amplitude_does_not_matter(self):
        law = SymmetricLaw(a=0.35, r=20.0)
        assert optimal_allocation(1e20, law, A=1.0) \
            == optimal_allocation(1e20, law, A=406.0)

    def test_nonpositive_budget_rejected(self):
        with pytest.raises(ValueError):
            optimal_allocation(0.0, SymmetricLaw(a=0.35, r=20.0))

    def test_symmetric_law_implied_b(self):
        law = SymmetricLaw(a=0.35, r=20.0)
        np.testing.assert_allclose(law.implied_b(100.0), 100.0 * 20**0.35,
                                   rtol=1e-15)


class TestMoe:
    def test_dense_case(self):
        assert effective_tpp_moe(20.0, 1) == 20.0

    def test_four_experts(self):
        assert effective_tpp_moe(20.0, 4) == 5.0

    def test_thirty_two_experts(self):
        assert effective_tpp_moe(20.0, 32) == 0.625

    def test_rejects_zero_experts(self):
        with pytest.raises(ValueError):
            effective_tpp_moe(20.0, 0)
