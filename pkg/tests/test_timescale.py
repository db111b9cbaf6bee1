import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collapsekit import (
    LrSchedule,
    RunConfig,
    constant,
    decay_to_zero,
    eta_at,
    instantaneous_tau,
    optimal_batch_for_data,
    optimal_tau_for_tpp,
    tau,
)


def config(eta=0.01, wd=0.1, B=10**6, D=10**9, N=10**8, lr_adjust=1.0,
           schedule=None):
    return RunConfig(eta=eta, weight_decay=wd, batch_tokens=B,
                     dataset_tokens=D, params=N, lr_adjust=lr_adjust,
                     schedule=schedule or decay_to_zero(0.1))


class TestEtaAt:
    def test_d2z_warmup_endpoint(self):
        assert eta_at(decay_to_zero(0.1), 0.1) == 1.0

    def test_d2z_decay_endpoint(self):
        assert eta_at(decay_to_zero(0.1), 1.0) == 0.0

    def test_10x_decay_final(self):
        s = LrSchedule("linear_decay", warmup_frac=0.1, decay_ratio=0.1)
        assert eta_at(s, 1.0) == 0.1

    def test_warmup_starts_at_zero(self):
        assert eta_at(decay_to_zero(0.1), 0.0) == 0.0

    def test_no_warmup_constant_is_one_everywhere(self):
        s = constant()
        grid = np.linspace(0, 1, 33)
        np.testing.assert_array_equal(eta_at(s, grid), np.ones(33))

    def test_continuous_and_piecewise_linear(self):
        s = LrSchedule("linear_decay", warmup_frac=0.2, decay_ratio=0.3)
        grid = np.linspace(0, 1, 2001)
        vals = np.asarray(eta_at(s, grid))
        jumps = np.abs(np.diff(vals))
        assert jumps.max() < 0.01  # no discontinuities at this resolution
        # curvature only at the single interior breakpoint t=warmup_frac
        second = np.abs(np.diff(vals, 2))
        assert np.count_nonzero(second > 1e-9) <= 1

    def test_peak_is_exactly_one(self):
        for s in (decay_to_zero(0.1), constant(0.05),
                  LrSchedule("linear_decay", 0.0, 0.5)):
            grid = np.linspace(0, 1, 1001)
            assert np.max(np.asarray(eta_at(s, grid))) == 1.0

    def test_out_of_domain_rejected(self):
        with pytest.raises(ValueError):
            eta_at(constant(), 1.5)


class TestTau:
    def test_direct_formula(self):
        # eta 0.01, lambda 0.1, B 1e6, D 1e9 -> T=1000, tau = 1
        s = tau(config())
        assert s.tau == 1.0
        assert s.alpha == 0.001
        assert s.total_steps == 1000

    def test_zero_weight_decay_gives_infinity(self):
        assert tau(config(wd=0.0)).tau == math.inf

    def test_adjusted_lr_hand_arithmetic(self):
        # independent recomputation with the width multiplier folded in
        eta, adj, wd, B, D = 0.15, 256 / 2048, 0.02, 2 * 10**6, 8 * 10**9
        T = D // B
        expected = 1.0 / (eta * adj * wd * T)
        got = tau(config(eta=eta, wd=wd, B=B, D=D, lr_adjust=adj)).tau
        np.testing.assert_allclose(got, expected, rtol=1e-15)

    @given(st.floats(min_value=1e-3, max_value=1e3))
    @settings(max_examples=60, deadline=None)
    def test_invariant_under_joint_rescale(self, c):
        base = tau(config()).tau
        scaled = tau(config(eta=0.01 * c, wd=0.1 / c)).tau
        assert abs(scaled - base) <= 1e-12 * base

    def test_invariant_under_expert_split(self):
        # routing tokens across E experts divides B and D alike
        base = tau(config(B=2**20, D=2**30)).tau
        for experts in (2, 4, 8, 32):
            split = tau(config(B=2**20 // experts, D=2**30 // experts)).tau
            assert abs(split - base) <= 1e-12 * base


class TestInstantaneousTau:
    def test_constant_schedule_matches_tau(self):
        cfg = config(schedule=constant(0.1))
        base = tau(cfg).tau
        for t in (0.15, 0.4, 0.8, 1.0):
            assert instantaneous_tau(cfg, t) == base

    def test_d2z_midpoint_doubles(self):
        cfg = config(schedule=decay_to_zero(0.1))
        mid = (1.0 + 0.1) / 2.0  # eta = 0.5 exactly
        np.testing.assert_allclose(instantaneous_tau(cfg, mid),
                                   2.0 * tau(cfg).tau, rtol=1e-14)

    def test_d2z_monotone_nondecreasing_after_warmup(self):
        cfg = config(schedule=decay_to_zero(0.1))
        grid = np.linspace(0.1, 1.0, 200)
        vals = [instantaneous_tau(cfg, float(t)) for t in grid]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_eta_zero_gives_sentinel(self):
        cfg = config(schedule=decay_to_zero(0.1))
        assert instantaneous_tau(cfg, 1.0) == math.inf

    def test_product_with_eta_is_constant_post_warmup(self):
        cfg = config(schedule=decay_to_zero(0.1))
        base = tau(cfg).tau
        for t in (0.2, 0.5, 0.9):
            eta = eta_at(cfg.schedule, t)
            np.testing.assert_allclose(instantaneous_tau(cfg, t) * eta, base,
                                       rtol=1e-12)


class TestTransferRules:
    def test_tau_anchor_identity(self):
        assert optimal_tau_for_tpp(20.0, 0.3, 20.0, -0.5) == 0.3

    def test_tau_zero_exponent(self):
        for tpp in (1.0, 20.0, 500.0):
            assert optimal_tau_for_tpp(tpp, 0.3, 20.0, 0.0) == 0.3

    def test_tau_hand_arithmetic(self):
        # (80/20)^-0.5 = 0.5
        np.testing.assert_allclose(
            optimal_tau_for_tpp(80.0, 0.3, 20.0, -0.5), 0.15, rtol=1e-15)

    def test_tau_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            optimal_tau_for_tpp(-1.0, 0.3, 20.0, -0.5)

    def test_batch_anchor_identity(self):
        assert optimal_batch_for_data(5.4e9, 176.0, 5.4e9) == 176.0

    def test_batch_square_root_scaling(self):
        np.testing.assert_allclose(
            optimal_batch_for_data(4 * 5.4e9, 176.0, 5.4e9), 352.0,
            rtol=1e-15)

    def test_batch_arithmetic_oracle(self):
        # 176 * sqrt(21.7/5.4); table-derived batch ladders need not match
        np.testing.assert_allclose(
            optimal_batch_for_data(21.7e9, 176.0, 5.4e9),
            352.81387391885488, rtol=1e-12)

    def test_batch_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            optimal_batch_for_data(0.0, 176.0, 5.4e9)
