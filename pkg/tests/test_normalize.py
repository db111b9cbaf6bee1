import numpy as np
import pytest

from collapsekit import (
    ChinchillaFit,
    CoverageError,
    CurveMeta,
    NormalizedCurve,
    NqmConfig,
    constant,
    decay_to_zero,
    expected_loss,
    normalize_early_align,
    normalize_estimate,
    normalize_final,
    normalized_expected_curve,
    predict,
    residuals,
)
from collapsekit.predictor import PredictorParams
from tests.test_curves import make_curve


def predictor_curve(final_loss=2.3, tau=0.3, tpp=80.0, T=1000, noise=None,
                    seed=0, run_id="run"):
    params = PredictorParams(b_const=0.8, b_exp=-0.6, q_const=2.0, q_exp=-0.25)
    meta = CurveMeta(tau=tau, tpp=tpp, schedule=decay_to_zero(0.1))
    fr = np.arange(1, T + 1) / T
    shape = predict(params, meta, fr)
    if noise:
        rng = np.random.default_rng(seed)
        shape = shape * (1 + rng.normal(0, noise, T))
    return make_curve((final_loss * shape).tolist(), total_steps=T,
                      run_id=run_id), params, meta


class TestNormalizeFinal:
    def test_simple_division(self):
        curve = make_curve([4.0, 3.0, 2.0], steps=[0, 5, 10], total_steps=10)
        out = normalize_final(curve)
        assert [v for _, v in out.points] == [2.0, 1.5, 1.0]
        assert out.normalizer == 2.0

    def test_constant_curve_is_flat_one(self):
        curve = make_curve([3.3, 3.3, 3.3])
        out = normalize_final(curve)
        assert all(v == 1.0 for _, v in out.points)

    def test_matches_closed_form_normalization(self):
        cfg = NqmConfig(curvature=2.0, noise_var=1.5, theta0=0.3, tau=0.4,
                        total_steps=500, schedule=constant())
        fr = np.arange(1, 501) / 500
        losses = np.asarray(expected_loss(cfg, fr))
        curve = make_curve(losses.tolist(), total_steps=500)
        ell = normalize_final(curve).ell()
        want = normalized_expected_curve(cfg, fr)
        assert np.max(np.abs(ell - want)) <= 1e-12

    def test_scale_invariance_power_of_two_is_bitwise(self):
        curve = make_curve([4.0, 3.0, 2.5, 2.0])
        a = normalize_final(curve).points
        b = normalize_final(curve.with_losses(
            (4.0 * curve.losses()).tolist())).points
        assert a == b

    def test_scale_invariance_general(self):
        curve = make_curve([4.0, 3.0, 2.5, 2.0])
        a = normalize_final(curve).ell()
        b = normalize_final(curve.with_losses(
            (3.7 * curve.losses()).tolist())).ell()
        np.testing.assert_allclose(a, b, rtol=1e-14)

    def test_incomplete_curve_rejected(self):
        curve = make_curve([4.0, 3.0], steps=[1, 2], total_steps=10)
        with pytest.raises(CoverageError):
            normalize_final(curve)

    def test_positive_ell_with_zero_offset(self):
        curve = make_curve([4.0, 0.001, 2.0])
        out = normalize_final(curve)
        assert all(v > 0 for _, v in out.points)


class TestEarlyAlign:
    def test_exact_rescale_fixed_point(self):
        curve, _, _ = predictor_curve()
        reference = normalize_final(curve)
        partial = curve.truncate(0.6).with_losses(
            (5.0 * curve.truncate(0.6).losses()).tolist())
        out = normalize_early_align(partial, reference)
        want = 5.0 * reference.normalizer
        assert abs(out.normalizer - want) <= 1e-9 * want

    def test_window_not_covered_rejected(self):
        curve, _, _ = predictor_curve()
        reference = normalize_final(curve)
        with pytest.raises(CoverageError, match="window"):
            normalize_early_align(curve.truncate(0.2), reference)

    def test_synthetic_truth_recovery_with_noise(self):
        curve, params, meta = predictor_curve(final_loss=2.3, noise=0.002,
                                              seed=3)
        fr = np.linspace(0.001, 1.0, 2000)
        ref_pts = tuple(zip(fr.tolist(),
                            predict(params, meta, fr).tolist()))
        reference = NormalizedCurve(points=ref_pts, normalizer=1.0,
                                    method="final_loss")
        partial = curve.truncate(0.5)
        out = normalize_early_align(partial, reference)
        assert abs(out.normalizer - 2.3) <= 0.01 * 2.3

    def test_objective_zero_at_any_positive_rescale(self):
        curve, _, _ = predictor_curve()
        reference = normalize_final(curve)
        for c in (0.1, 1.0, 42.0):
            partial = curve.truncate(0.55).with_losses(
                (c * curve.truncate(0.55).losses()).tolist())
            out = normalize_early_align(partial, reference)
            resid = out.values_at(np.linspace(0.25, 0.5, 64)) \
                - reference.values_at(np.linspace(0.25, 0.5, 64))
            assert np.max(np.abs(resid)) <= 1e-8


class TestNormalizeEstimate:
    def test_direct_evaluation(self):
        fit = ChinchillaFit(E=0.0, A=1.0, alpha=0.35, B=1.0, beta=0.35)
        curve = make_curve([4.0, 3.0], steps=[1, 2], total_steps=10)
        out = normalize_estimate(curve, fit, params=1.0, tokens=1.0)
        assert out.normalizer == 2.0
        assert out.points[0][1] == 2.0

    def test_consistent_with_final_when_fit_exact(self):
        curve, _, _ = predictor_curve(final_loss=2.3)
        final = curve.samples[-1].loss
        fit = ChinchillaFit(E=final - 2e-9, A=1e-9, alpha=0.35, B=1e-9,
                            beta=0.35)
        a = normalize_final(curve).ell()
        b = normalize_estimate(curve, fit, params=1.0, tokens=1.0).ell()
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_nonpositive_estimate_rejected(self):
        class BrokenFit:
            def evaluate(self, n, d):
                return -1.0

        curve = make_curve([4.0, 3.0])
        with pytest.raises(ValueError):
            normalize_estimate(curve, BrokenFit(), params=1e9, tokens=1e10)


class TestResiduals:
    def test_identity_is_zero(self):
        curve, _, _ = predictor_curve()
        a = normalize_final(curve)
        report = residuals(a, a)
        assert report.max_abs() == 0.0
        assert report.max_rolling_mae() == 0.0

    def test_constant_shift_measured_exactly(self):
        curve, _, _ = predictor_curve()
        a = normalize_final(curve)
        shifted = NormalizedCurve(
            points=tuple((t, v + 0.01) for t, v in a.points),
            normalizer=a.normalizer, method=a.method)
        report = residuals(shifted, a)
        vals = [v for _, v in report.points]
        np.testing.assert_allclose(vals, 0.01, rtol=1e-9)
        np.testing.assert_allclose(report.max_rolling_mae(), 0.01, rtol=1e-9)

    def test_nqm_collapse_at_matched_tau(self):
        # curvature cancels in the normalization: matched-tau closed-form
        # curves of different curvature coincide
        grid = np.linspace(0.01, 1.0, 500)
        curves = []
        for h in (0.1, 10.0):
            cfg = NqmConfig(curvature=h, noise_var=1.0, theta0=0.0, tau=0.5,
                            total_steps=500, schedule=constant())
            fr = np.arange(1, 501) / 500
            curves.append(normalize_final(make_curve(
                np.asarray(expected_loss(cfg, fr)).tolist(), total_steps=500)))
        report = residuals(curves[0], curves[1], grid=grid)
        assert report.max_abs() <= 1e-12

    def test_uncovered_grid_rejected(self):
        curve, _, _ = predictor_curve()
        a = normalize_final(curve)
        b = normalize_final(curve)
        with pytest.raises(CoverageError):
            residuals(a, b, grid=[-0.5, 0.5])
