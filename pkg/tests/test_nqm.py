import math

import numpy as np
import pytest

from collapsekit import (
    NqmConfig,
    constant,
    decay_to_zero,
    expected_loss,
    kappa,
    normalized_expected_curve,
    simulate,
)

# closed-form value of the tau=0.5, theta0=0 curve at end of training:
# 1/(4*0.5) * (1 - exp(-4)), evaluated at 40-digit precision
END_LOSS_TAU_HALF = 0.4908421805556329


def cfg(tau=0.5, theta0=0.0, h=1.0, s2=1.0, T=2000, schedule=None):
    return NqmConfig(curvature=h, noise_var=s2, theta0=theta0, tau=tau,
                     total_steps=T, schedule=schedule or constant())


class TestExpectedLoss:
    def test_at_zero_is_initial_bias(self):
        c = cfg(theta0=3.0, h=2.0)
        assert expected_loss(c, 0.0) == 0.5 * 2.0 * 9.0

    def test_variance_floor_limit(self):
        # theta0=0: large t_hat approaches h*sigma2/(4 tau)
        c = cfg(tau=0.05, theta0=0.0)
        floor = c.curvature * c.noise_var / (4.0 * c.tau)
        np.testing.assert_allclose(expected_loss(c, 1.0), floor, rtol=1e-10)

    def test_end_value_frozen(self):
        np.testing.assert_allclose(expected_loss(cfg(), 1.0),
                                   END_LOSS_TAU_HALF, rtol=1e-12)

    def test_floor_strictly_decreasing_in_tau(self):
        taus = [0.1, 0.2, 0.5, 1.0, 2.0]
        finals = [expected_loss(cfg(tau=t), 1.0) for t in taus]
        assert all(b < a for a, b in zip(finals, finals[1:]))

    def test_bias_decay_strictly_increasing_in_tau(self):
        # pure-bias runs: larger tau kills the initialization more slowly
        for t_hat in (0.1, 0.5, 1.0):
            vals = [expected_loss(cfg(tau=t, theta0=1.0, s2=0.0), t_hat)
                    for t in (0.1, 0.3, 1.0, 3.0)]
            assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_rejects_non_constant_schedule(self):
        with pytest.raises(ValueError, match="constant"):
            expected_loss(cfg(schedule=decay_to_zero(0.1)), 0.5)


class TestSimulate:
    def test_noise_free_geometric_decay(self):
        c = cfg(tau=0.5, theta0=1.0, s2=0.0, T=100)
        sim = simulate(c, 1)
        a = c.alpha_peak
        expect = 0.5 * (1 - a) ** (2 * np.arange(1, 101))
        np.testing.assert_allclose(sim.mean_loss, expect, atol=1e-15)

    def test_zero_everything_is_fixed_point(self):
        c = cfg(theta0=0.0, s2=0.0, T=50)
        sim = simulate(c, 4)
        assert np.all(sim.mean_loss == 0.0)

    def test_monte_carlo_matches_closed_form_at_end(self):
        c = cfg()
        sim = simulate(c, 10_000, base_seed=13, grid=[1.0])
        rel = abs(sim.mean_loss[-1] - END_LOSS_TAU_HALF) / END_LOSS_TAU_HALF
        assert rel <= 0.02

    def test_deterministic_given_seed(self):
        c = cfg(T=300)
        a = simulate(c, 5000, base_seed=42)
        b = simulate(c, 5000, base_seed=42)
        assert a.mean_loss.tolist() == b.mean_loss.tolist()

    def test_thread_count_does_not_change_bytes(self):
        c = cfg(T=200)
        a = simulate(c, 10_000, base_seed=9, threads=1)
        b = simulate(c, 10_000, base_seed=9, threads=4)
        assert a.mean_loss.tolist() == b.mean_loss.tolist()

    def test_grid_selection(self):
        c = cfg(T=1000)
        sim = simulate(c, 100, base_seed=1, grid=[0.25, 0.5, 1.0])
        np.testing.assert_allclose(sim.t_hat, [0.25, 0.5, 1.0])

    def test_rejects_alpha_out_of_range(self):
        with pytest.raises(ValueError, match="alpha"):
            NqmConfig(curvature=1.0, noise_var=1.0, theta0=0.0, tau=0.1,
                      total_steps=5)

    def test_schedule_inversion_under_decay(self):
        # constant LR: small tau ends higher (variance floor ~ 1/tau);
        # with decay-to-zero and a bias-dominated start the ordering flips
        d2z = decay_to_zero(0.1)
        lo = simulate(cfg(tau=0.2, theta0=2.0, schedule=d2z), 20_000,
                      base_seed=5, grid=[1.0])
        hi = simulate(cfg(tau=2.0, theta0=2.0, schedule=d2z), 20_000,
                      base_seed=6, grid=[1.0])
        gap = hi.mean_loss[-1] - lo.mean_loss[-1]
        assert gap > 10 * math.hypot(lo.sem[-1], hi.sem[-1])
        # same pair under constant LR orders the other way
        c_lo = expected_loss(cfg(tau=0.2, theta0=2.0), 1.0)
        c_hi = expected_loss(cfg(tau=2.0, theta0=2.0), 1.0)
        assert c_lo > c_hi


class TestNormalizedCurve:
    def test_self_normalization_at_end(self):
        grid = [0.25, 1.0]
        out = normalized_expected_curve(cfg(tau=0.3, theta0=0.5), grid)
        assert out[-1] == 1.0

    def test_curvature_cancels_exactly(self):
        grid = np.linspace(0.05, 1.0, 64)
        a = normalized_expected_curve(cfg(h=0.1), grid)
        b = normalized_expected_curve(cfg(h=10.0), grid)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_noise_scale_cancels_exactly(self):
        grid = np.linspace(0.05, 1.0, 64)
        a = normalized_expected_curve(cfg(s2=0.5), grid)
        b = normalized_expected_curve(cfg(s2=8.0), grid)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_small_tau_drops_more_early(self):
        early_small = normalized_expected_curve(cfg(tau=0.25), [0.1])[0]
        early_large = normalized_expected_curve(cfg(tau=2.0), [0.1])[0]
        assert early_small > early_large

    def test_degenerate_final_rejected(self):
        with pytest.raises(ValueError):
            normalized_expected_curve(cfg(theta0=0.0, s2=0.0), [0.5, 1.0])


class TestKappa:
    def test_zero_bias(self):
        assert kappa(cfg(theta0=0.0)) == 0.0

    def test_direct_formula(self):
        assert kappa(cfg(tau=0.5, theta0=1.0, s2=1.0)) == 1.0

    def test_rejects_zero_noise(self):
        with pytest.raises(ValueError):
            kappa(cfg(s2=0.0))

    def test_small_kappa_matches_zero_kappa_late(self):
        # after ~3 timescales the initialization memory is negligible
        tau = 0.2
        grid = np.linspace(3 * tau, 1.0, 50)
        base = normalized_expected_curve(cfg(tau=tau, theta0=0.0), grid)
        # kappa = 2 tau theta0^2 / s2 = 0.01  =>  theta0 = sqrt(0.01/(2 tau))
        theta0 = math.sqrt(0.01 / (2 * tau))
        pert = normalized_expected_curve(cfg(tau=tau, theta0=theta0), grid)
        # analytic bound on the deviation: kappa * exp(-2*3) / (1 - e^{-2/tau})
        bound = 0.01 * math.exp(-6.0) / (1 - math.exp(-2.0 / tau))
        assert np.max(np.abs(base - pert)) <= bound * 1.1
