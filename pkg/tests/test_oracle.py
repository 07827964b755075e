import numpy as np
import pytest

from covsketch.oracle import (
    PER_ENTRY_ALPHA,
    closed_form_Ekk,
    closed_form_Ekl,
    default_verification_grid,
    moment_matrix_check,
    monte_carlo_Ekl,
    single_sample_closed_form,
    single_sample_expectation_check,
    full_estimator_expectation_check,
    _merge_moments,
)
from covsketch.projection import DistributionSpec


def test_closed_form_Ekk_gaussian():
    E = closed_form_Ekk(DistributionSpec.gaussian(), m=1, p=2, k=0)
    np.testing.assert_allclose(E, np.diag([3.0, 1.0]), rtol=1e-15)


def test_closed_form_Ekk_sparse():
    E = closed_form_Ekk(DistributionSpec.sparse_sign(3), m=2, p=2, k=1)
    np.testing.assert_allclose(E, np.diag([2.0 / 9.0, 8.0 / 9.0]), rtol=1e-14)


def test_closed_form_Ekk_is_diagonal():
    for dist in (DistributionSpec.gaussian(), DistributionSpec.sparse_sign(7)):
        E = closed_form_Ekk(dist, m=3, p=6, k=2)
        assert np.array_equal(E, np.diag(np.diag(E)))


def test_closed_form_Ekl_gaussian():
    E = closed_form_Ekl(DistributionSpec.gaussian(), m=2, p=3, k=0, l=1)
    expected = np.zeros((3, 3))
    expected[0, 1] = 4.0
    expected[1, 0] = 2.0
    np.testing.assert_allclose(E, expected, rtol=1e-15)


def test_closed_form_Ekl_sparse():
    E = closed_form_Ekl(DistributionSpec.sparse_sign(2), m=3, p=3, k=2, l=0)
    assert E[2, 0] == pytest.approx(9.0 / 4.0)
    assert E[0, 2] == pytest.approx(3.0 / 4.0)


def test_closed_form_Ekl_has_exactly_two_nonzeros():
    E = closed_form_Ekl(DistributionSpec.sparse_sign(5), m=4, p=8, k=1, l=6)
    assert np.count_nonzero(E) == 2


def test_closed_form_Ekl_rejects_equal_indices():
    with pytest.raises(ValueError, match="Ekk"):
        closed_form_Ekl(DistributionSpec.gaussian(), m=2, p=3, k=1, l=1)


def test_monte_carlo_Ekl_deterministic_given_seed():
    dist = DistributionSpec.sparse_sign(2)
    a = monte_carlo_Ekl(dist, m=2, p=3, k=0, l=1, trials=10**4, seed=42)
    b = monte_carlo_Ekl(dist, m=2, p=3, k=0, l=1, trials=10**4, seed=42)
    assert np.array_equal(a, b)


def test_monte_carlo_trials_minimum():
    with pytest.raises(ValueError):
        monte_carlo_Ekl(DistributionSpec.gaussian(), 2, 3, 0, 1, trials=100, seed=0)


def test_moment_check_gaussian_Ekl():
    report = moment_matrix_check(DistributionSpec.gaussian(), m=2, p=4, k=0, l=1,
                                 trials=10**5, seed=3)
    assert report.passed
    assert report.target == "Ekl"
    assert report.max_abs_deviation <= report.max_allowed


def test_moment_check_k_equals_l_agrees_with_Ekk():
    report = moment_matrix_check(DistributionSpec.sparse_sign(3), m=2, p=4, k=2, l=2,
                                 trials=10**5, seed=5)
    assert report.passed
    assert report.target == "Ekk"


def test_single_sample_closed_form_gaussian_basis_vector():
    x = np.array([1.0, 0.0])
    closed = single_sample_closed_form(DistributionSpec.gaussian(), m=1, x=x)
    np.testing.assert_allclose(closed, 2.0 * np.outer(x, x) + np.eye(2), rtol=1e-15)


def test_single_sample_closed_form_sign_invariant():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(5)
    dist = DistributionSpec.sparse_sign(4)
    np.testing.assert_allclose(
        single_sample_closed_form(dist, 3, x),
        single_sample_closed_form(dist, 3, -x),
        rtol=0, atol=0,
    )


def test_single_sample_check_gaussian():
    report = single_sample_expectation_check(
        DistributionSpec.gaussian(), m=1, x=np.array([1.0, 0.0]), trials=10**5, seed=11
    )
    assert report.passed


def test_single_sample_check_sparse():
    rng = np.random.default_rng(2)
    report = single_sample_expectation_check(
        DistributionSpec.sparse_sign(5), m=3, x=rng.standard_normal(6),
        trials=10**5, seed=13,
    )
    assert report.passed


def test_single_sample_check_rejects_zero_vector():
    with pytest.raises(ValueError):
        single_sample_expectation_check(DistributionSpec.gaussian(), 2,
                                        np.zeros(4), 10**4, 0)


def test_full_estimator_expectation_check_small_case():
    rng = np.random.default_rng(9)
    data = rng.standard_normal((4, 2))
    report = full_estimator_expectation_check(DistributionSpec.sparse_sign(4), m=3, data=data,
                            trials=2000, seed=21)
    assert report.passed
    assert report.trials == 2000
    assert report.seed == 21
    # the corrected estimator's mean must sit at least as close to the truth
    assert (report.details["unbiased_rel_spectral_error"]
            <= report.details["biased_rel_spectral_error"])


def test_full_estimator_n1_expectation_reduces_to_single_sample():
    # With one sample, the full-estimator expectation is the single-sample
    # closed form divided by the (m^2 + m) mu2^2 rescaling.
    dist = DistributionSpec.sparse_sign(3)
    m = 2
    x = np.array([0.4, -1.1, 2.0])
    cov = np.outer(x, x)
    rhs = cov + (dist.kappa / (m + 1)) * np.diag(np.diag(cov)) \
        + (np.trace(cov) / (m + 1)) * np.eye(3)
    scaled = single_sample_closed_form(dist, m, x) / ((m**2 + m) * dist.mu2**2)
    np.testing.assert_allclose(rhs, scaled, rtol=1e-12)


def test_full_estimator_minimum_trials():
    with pytest.raises(ValueError):
        full_estimator_expectation_check(DistributionSpec.sparse_sign(2), 2, np.ones((3, 2)),
                       trials=10, seed=0)


def test_merge_moments_matches_single_pass():
    rng = np.random.default_rng(3)
    values = rng.standard_normal((500, 2, 2))

    def welford(chunk):
        count, mean, m2 = 0, np.zeros((2, 2)), np.zeros((2, 2))
        for v in chunk:
            count += 1
            delta = v - mean
            mean = mean + delta / count
            m2 = m2 + delta * (v - mean)
        return count, mean, m2

    na, ma, m2a = welford(values[:200])
    nb, mb, m2b = welford(values[200:])
    n, mean, m2 = _merge_moments(na, ma, m2a, nb, mb, m2b)
    assert n == 500
    np.testing.assert_allclose(mean, values.mean(axis=0), rtol=1e-12)
    np.testing.assert_allclose(m2 / n, values.var(axis=0), rtol=1e-10)


def test_pipeline_expectation_sharding_gives_identical_report():
    # Shards are merged in fixed order, so the worker count cannot change
    # the statistics.
    rng = np.random.default_rng(4)
    data = rng.standard_normal((3, 2))
    dist = DistributionSpec.sparse_sign(3)
    # 6000 trials split into three shards of 2500/2500/1000
    serial = full_estimator_expectation_check(dist, 2, data, trials=6000, seed=5, jobs=1)
    parallel = full_estimator_expectation_check(dist, 2, data, trials=6000, seed=5, jobs=2)
    assert serial.max_abs_deviation == parallel.max_abs_deviation
    assert serial.max_allowed == parallel.max_allowed
    assert serial.details == parallel.details


def test_default_grid_reports_and_accounting():
    reports, summary = default_verification_grid(trials=10**4, seed=1)
    assert summary["all_passed"]
    assert all(r.passed for r in reports)
    # Gaussian and four sparse families, Ekk and Ekl each, plus the
    # single-sample and full-pipeline checks.
    assert summary["checks"] == 12
    targets = [r.target for r in reports]
    assert targets.count("Ekk") == 5
    assert targets.count("Ekl") == 5
    assert "SingleSampleExpectation" in targets
    assert "FullEstimatorExpectation" in targets
    assert summary["family_wise_false_failure_bound"] < 0.01
    assert summary["total_entries"] * PER_ENTRY_ALPHA == pytest.approx(
        summary["family_wise_false_failure_bound"]
    )
    for r in reports:
        assert r.passed == (r.max_abs_deviation <= r.max_allowed)
        assert isinstance(r.seed, int)


def test_default_grid_trials_minimum():
    with pytest.raises(ValueError):
        default_verification_grid(trials=100, seed=1)
