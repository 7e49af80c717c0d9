"""Risk metrics, concentration checks, and the Gaussian-mechanism verifier.

The verifier is checked against a closed-form deficit computed in
tests/_oracles.py from Gaussian CDFs alone; Monte-Carlo frequencies are
frozen from pinned-seed runs.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from inputdp import (
    Dataset,
    PrivacyBudget,
    RngStream,
    calibrate,
    dp_verifier_gaussian_1d,
    empirical_objective,
    excess_empirical_risk,
    learn_non_private,
    linear_regression_loss,
    noise_free_gap,
    noise_ridge_coverage,
    perturb_dataset,
    quad_noise_threshold,
    recommend_reg_cap,
    reconstruct_objective_identity,
    run_check_suite,
    sample_noise_ridge,
    tail_check_chi_square,
    tail_check_gaussian,
    worst_case_quad_stats,
)
from tests._oracles import gaussian_delta_closed_form

BUDGET = PrivacyBudget(epsilon=1.0, delta=0.01)


@pytest.fixture(scope="module")
def small_dataset():
    gen = np.random.default_rng(5)
    x = gen.standard_normal((40, 3))
    x /= np.maximum(1.0, np.linalg.norm(x, axis=1))[:, None]
    y = np.clip(gen.standard_normal(40) * 0.3, -1, 1)
    return Dataset(features=x, labels=y)


class TestExcessRisk:
    def test_zero_at_the_minimizer(self, small_dataset):
        spec = linear_regression_loss(dim=3, radius=1.0)
        baseline = learn_non_private(small_dataset, spec)
        assert excess_empirical_risk(small_dataset, spec, baseline) == 0.0

    def test_equals_explicit_subtraction(self, small_dataset):
        spec = linear_regression_loss(dim=3, radius=1.0)
        baseline = learn_non_private(small_dataset, spec)
        gen = np.random.default_rng(1)
        for _ in range(10):
            w = gen.standard_normal(3)
            w /= max(1.0, float(np.linalg.norm(w)))
            expected = empirical_objective(small_dataset, spec, w) - empirical_objective(
                small_dataset, spec, baseline
            )
            value = excess_empirical_risk(small_dataset, spec, w, baseline=baseline)
            assert value == pytest.approx(expected, abs=1e-15)
            assert value >= 0.0


class TestObjectiveReconstruction:
    def test_zero_noise_reduces_to_clean_objective(self, small_dataset):
        spec = linear_regression_loss(dim=3, radius=1.0)
        from inputdp import NoiseRecord

        record = NoiseRecord(quad_noise=np.zeros((40, 3)), linear_noise=np.zeros((40, 3)))
        w = np.array([0.3, -0.2, 0.1])
        lhs, rhs = reconstruct_objective_identity(
            small_dataset, spec, record, w, reg_cap=4.0, epsilon=1.0
        )
        clean = empirical_objective(small_dataset, spec, w, reg_coeff=4.0 - 2.0)
        assert lhs == pytest.approx(clean, rel=1e-12)
        assert rhs == pytest.approx(clean, rel=1e-12)

    def test_zero_model_sees_only_offsets(self, small_dataset):
        spec = linear_regression_loss(dim=3, radius=1.0)
        cal = calibrate(BUDGET, 40, spec.constants)
        _, record = perturb_dataset(
            small_dataset, spec, cal, RngStream(8, path=(2,)), record_noise=True
        )
        lhs, rhs = reconstruct_objective_identity(
            small_dataset, spec, record, np.zeros(3), reg_cap=4.0, epsilon=1.0
        )
        expected = float(np.mean(small_dataset.labels**2 / 2.0))
        assert lhs == pytest.approx(expected, rel=1e-12)
        assert rhs == pytest.approx(expected, rel=1e-12)

    def test_identity_on_seeded_instances(self, small_dataset):
        spec = linear_regression_loss(dim=3, radius=1.0)
        cal = calibrate(BUDGET, 40, spec.constants)
        gen = np.random.default_rng(77)
        for trial in range(5):
            _, record = perturb_dataset(
                small_dataset, spec, cal, RngStream(9, path=(3, trial)), record_noise=True
            )
            for _ in range(4):
                w = gen.standard_normal(3)
                w *= gen.uniform(0, 1) / float(np.linalg.norm(w))
                lhs, rhs = reconstruct_objective_identity(
                    small_dataset, spec, record, w, reg_cap=8.0, epsilon=1.0
                )
                assert abs(lhs - rhs) <= 1e-9 * (1.0 + abs(lhs))


class TestWorstCaseQuadStats:
    def test_row_geometry(self):
        direction = np.array([3.0, 4.0])
        stats = worst_case_quad_stats(25, 2, direction, smoothness=1.0)
        assert stats.shape == (25, 2)
        expected_row = np.array([0.6, 0.8]) * math.sqrt(2.0 / 25.0)
        assert np.allclose(stats, expected_row, atol=1e-15)

    def test_row_cap_clips(self):
        stats = worst_case_quad_stats(4, 2, np.array([1.0, 0.0]), 1.0, row_cap=0.1)
        assert np.allclose(np.linalg.norm(stats, axis=1), 0.1)

    def test_zero_direction_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            worst_case_quad_stats(4, 2, np.zeros(2), 1.0)


class TestSampleNoiseRidge:
    def test_pure_noise_mean(self):
        # Q = 0: the ridge is ||U w||^2 with mean sd^2; 1e4 draws at
        # n=400, d=5, sd=1.5 (target 2.25, se = sd^2 sqrt(2/n) / 100)
        n, d, sd = 400, 5, 1.5
        quad = np.zeros((n, d))
        w = np.zeros(d)
        w[0] = 1.0
        root = RngStream(21, path=(60,))
        values = np.array(
            [sample_noise_ridge(quad, sd, w, root.child(i)) for i in range(10_000)]
        )
        mean = float(values.mean())
        assert mean == pytest.approx(2.2499289723012823, rel=1e-12)
        assert abs(mean - sd**2) <= 3.0 * (sd**2) * math.sqrt(2.0 / n) / 100.0

    def test_zero_sd_is_exactly_zero(self):
        w = np.array([1.0, 0.0])
        assert sample_noise_ridge(np.ones((5, 2)), 0.0, w, RngStream(0)) == 0.0

    def test_reproducible(self):
        w = np.array([0.0, 1.0])
        quad = np.full((6, 2), 0.1)
        a = sample_noise_ridge(quad, 1.0, w, RngStream(4, path=(4,)))
        b = sample_noise_ridge(quad, 1.0, w, RngStream(4, path=(4,)))
        assert a == b

    def test_requires_unit_direction(self):
        with pytest.raises(ValueError, match="unit"):
            sample_noise_ridge(np.zeros((3, 2)), 1.0, np.array([1.0, 1.0]), RngStream(0))


class TestNoiseRidgeCoverage:
    def test_worst_case_high_confidence(self):
        n, d = 1000, 5
        w = np.zeros(d)
        w[0] = 1.0
        stats = worst_case_quad_stats(n, d, w, 1.0)
        report = noise_ridge_coverage(
            stats, 2.0, w, 0.01, 10_000, RngStream(23, path=(61,)), 1.0
        )
        assert report.trials == 10_000
        assert report.frequency == 1.0
        assert report.passes

    def test_loose_fail_prob(self):
        n, d = 1000, 5
        w = np.zeros(d)
        w[0] = 1.0
        stats = worst_case_quad_stats(n, d, w, 1.0)
        report = noise_ridge_coverage(
            stats, 2.0, w, 0.5, 2_000, RngStream(23, path=(62,)), 1.0
        )
        assert report.frequency == pytest.approx(0.986, abs=1e-12)
        assert report.frequency >= report.target - 3.0 * report.stderr

    def test_degenerate_zero_noise(self):
        n, d = 1000, 5
        w = np.zeros(d)
        w[0] = 1.0
        stats = worst_case_quad_stats(n, d, w, 1.0)
        report = noise_ridge_coverage(
            stats, 0.0, w, 0.01, 100, RngStream(23, path=(63,)), 1.0
        )
        assert report.frequency == 1.0


class TestTailChecks:
    def test_chi_square_frozen_frequencies(self):
        upper, lower = tail_check_chi_square(100, 3.0, 100_000, RngStream(3, path=(53,)))
        assert (upper, lower) == (0.0048, 0.00287)
        bound = math.exp(-3.0)
        allowance = 3.0 * math.sqrt(bound * (1 - bound) / 100_000)
        assert upper <= bound + allowance
        assert lower <= bound + allowance

    def test_chi_square_low_dof(self):
        upper, lower = tail_check_chi_square(1, 0.1, 100_000, RngStream(3, path=(54,)))
        assert (upper, lower) == (0.17582, 0.4542)
        bound = math.exp(-0.1)
        allowance = 3.0 * math.sqrt(bound * (1 - bound) / 100_000)
        assert upper <= bound + allowance
        assert lower <= bound + allowance

    def test_chi_square_validation(self):
        with pytest.raises(ValueError):
            tail_check_chi_square(0, 1.0, 10, RngStream(0))
        with pytest.raises(ValueError):
            tail_check_chi_square(5, 0.0, 10, RngStream(0))

    def test_gaussian_frozen_frequencies(self):
        freq = tail_check_gaussian(2.0, 100_000, RngStream(3, path=(55,)))
        assert freq == 0.0467
        assert freq <= math.exp(-2.0)
        edge = tail_check_gaussian(1.0001, 100_000, RngStream(3, path=(56,)))
        assert edge == 0.31724
        assert edge <= math.exp(-(1.0001**2) / 2.0)

    def test_gaussian_monotone_in_threshold(self):
        freqs = [
            tail_check_gaussian(t, 50_000, RngStream(9, path=(57,)))
            for t in (1.25, 1.5, 2.0, 3.0)
        ]
        assert freqs == [0.21076, 0.13494, 0.04594, 0.00258]
        assert all(a >= b for a, b in zip(freqs, freqs[1:]))

    def test_gaussian_threshold_domain(self):
        with pytest.raises(ValueError, match="t > 1"):
            tail_check_gaussian(1.0, 100, RngStream(1, path=(58,)))


class TestDpVerifier:
    def test_calibrated_scale_matches_closed_form(self):
        sigma = math.sqrt(2.0 * math.log(1.25 / 0.01)) / 0.5
        observed = dp_verifier_gaussian_1d(1.0, sigma, 0.5)
        assert observed == pytest.approx(5.3579560955771413e-05, rel=1e-9)
        exact = gaussian_delta_closed_form(sigma, 0.5, 1.0)
        assert abs(observed - exact) <= 1e-8
        assert observed <= 0.01

    def test_undernoised_scale_is_flagged(self):
        sigma = math.sqrt(2.0 * math.log(1.25 / 0.01)) / 0.5
        observed = dp_verifier_gaussian_1d(1.0, 0.1 * sigma, 0.5)
        assert observed == pytest.approx(0.47101615122892226, rel=1e-9)
        exact = gaussian_delta_closed_form(0.1 * sigma, 0.5, 1.0)
        assert abs(observed - exact) <= 1e-5
        assert observed > 0.01

    def test_huge_noise_has_no_deficit(self):
        assert dp_verifier_gaussian_1d(1.0, 1e6, 0.5) <= 0.0

    def test_monotone_in_sigma(self):
        values = [dp_verifier_gaussian_1d(1.0, s, 0.5) for s in (2.0, 3.0, 4.0, 6.0, 8.0)]
        assert values[0] == pytest.approx(0.052440302526003096, rel=1e-9)
        assert values[-1] == pytest.approx(1.144799591806247e-06, rel=1e-9)
        assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))

    def test_validation(self):
        with pytest.raises(ValueError):
            dp_verifier_gaussian_1d(0.0, 1.0, 0.5)
        with pytest.raises(ValueError):
            dp_verifier_gaussian_1d(1.0, -1.0, 0.5)
        with pytest.raises(ValueError):
            dp_verifier_gaussian_1d(1.0, 1.0, 0.5, grid_size=1)


class TestNoiseFreeGap:
    def test_bounds_hold_on_seeded_trials(self, small_dataset):
        spec = linear_regression_loss(dim=3, radius=1.0)
        cal = calibrate(BUDGET, 40, spec.constants)
        reg_cap = recommend_reg_cap(spec.constants, BUDGET)
        applicable = 0
        for seed in range(40, 50):
            _, record = perturb_dataset(
                small_dataset, spec, cal, RngStream(seed, path=(67,)), record_noise=True
            )
            gap = noise_free_gap(small_dataset, spec, record, reg_cap, BUDGET.epsilon)
            assert set(gap) == {
                "applicable",
                "denom",
                "distance",
                "distance_bound",
                "ridge_at_direction",
                "utility_bound",
                "utility_gap",
            }
            if gap["applicable"]:
                applicable += 1
                assert gap["distance"] <= gap["distance_bound"] * (1 + 1e-9)
                assert gap["utility_gap"] <= gap["utility_bound"] * (1 + 1e-9)
        assert applicable == 10

    def test_rejects_cap_below_floor(self, small_dataset):
        spec = linear_regression_loss(dim=3, radius=1.0)
        cal = calibrate(BUDGET, 40, spec.constants)
        _, record = perturb_dataset(
            small_dataset, spec, cal, RngStream(40, path=(67,)), record_noise=True
        )
        with pytest.raises(ValueError, match="ridge floor"):
            noise_free_gap(small_dataset, spec, record, 1.0, BUDGET.epsilon)


class TestCheckSuite:
    def test_all_checks_pass_with_stable_schema(self):
        records = run_check_suite(seed=0)
        assert len(records) == 16
        for record in records:
            assert set(record) == {
                "check",
                "params",
                "statistic",
                "bound",
                "direction",
                "pass",
            }
            assert record["direction"] in ("<=", ">=")
            assert record["pass"] is True
        names = [r["check"] for r in records]
        assert "noise_ridge_bracket_coverage" in names
        assert "dp_verifier_undernoised_detected" in names
        assert "objective_reconstruction_identity" in names
