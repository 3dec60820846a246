"""Closed-form evaluators and Monte-Carlo estimators against independent oracles."""

import numpy as np
import pytest

from mtaggr.errors import ValidationError
from mtaggr.oracle import (
    BiasDecomposition,
    NoiseModel,
    aggregated_noise_variance,
    coefficient_covariance_check,
    delta_mse_check,
    monte_carlo_bias_variance,
    population_bias_decomposition,
    theoretical_bias_multi,
    theoretical_bias_single,
    theoretical_variance,
)
from mtaggr.synth import SyntheticTask


def make_task(coefficients, noise, feature_std=1.0):
    return SyntheticTask(
        coefficients=np.atleast_2d(coefficients),
        noise_train=None,
        noise_test=None,
        feature_std=feature_std,
        noise=noise,
    )


def identity(d):
    return tuple((k,) for k in range(d))


def analytic_r2_for_partition(w, clusters):
    """Population R^2 of a linear signal on cluster-mean features.

    For independent unit-variance features the cluster means are mutually
    orthogonal, so the projection decomposes per cluster: each contributes
    (sum of member coefficients)^2 / |cluster|, normalized by |w|^2.
    """
    w = np.asarray(w, dtype=float)
    explained = sum(float(np.sum(w[list(c)])) ** 2 / len(c) for c in clusters)
    return explained / float(w @ w)


class TestNoiseModel:
    def test_pair_cases(self):
        assert abs(aggregated_noise_variance(
            NoiseModel.equicorrelated(1.0, 2, 0.0), [0, 1]) - 0.5) < 1e-12
        assert abs(aggregated_noise_variance(
            NoiseModel.equicorrelated(1.0, 2, 1.0), [0, 1]) - 1.0) < 1e-12
        assert aggregated_noise_variance(
            NoiseModel.equicorrelated(1.0, 2, -1.0), [0, 1]) == 0.0

    def test_mixed_sigmas_against_double_sum(self):
        sigmas = np.array([0.5, 1.5, 2.0])
        corr = np.array([[1.0, 0.2, -0.1], [0.2, 1.0, 0.4], [-0.1, 0.4, 1.0]])
        model = NoiseModel(sigmas, corr)
        oracle = sum(
            sigmas[h] * sigmas[k] * corr[h, k] for h in range(3) for k in range(3)
        ) / 9.0
        assert abs(aggregated_noise_variance(model, [0, 1, 2]) - oracle) < 1e-12

    def test_subcluster(self):
        model = NoiseModel.equicorrelated(2.0, 4, 0.5)
        got = aggregated_noise_variance(model, [1, 3])
        assert abs(got - 4.0 / 2.0 * (1 + 0.5)) < 1e-12

    def test_invalid_cluster(self):
        model = NoiseModel.independent(1.0, 2)
        with pytest.raises(ValidationError):
            aggregated_noise_variance(model, [])
        with pytest.raises(ValidationError):
            aggregated_noise_variance(model, [5])

    def test_validation(self):
        with pytest.raises(ValidationError):
            NoiseModel(np.array([-1.0]), np.eye(1))
        with pytest.raises(ValidationError):
            NoiseModel(np.ones(2), np.array([[1.0, 0.2], [0.3, 1.0]]))

    def test_sampling_matches_covariance(self):
        model = NoiseModel.equicorrelated(1.5, 3, 0.4)
        rng = np.random.default_rng(0)
        draws = model.sample(200_000, rng)
        emp = np.cov(draws.T, ddof=1)
        np.testing.assert_allclose(emp, model.covariance(), rtol=0.05, atol=0.02)


class TestClosedForms:
    def test_theoretical_variance_instances(self):
        assert abs(theoretical_variance(1.0, 101, 1) - 0.01) < 1e-15
        assert abs(theoretical_variance(4.0, 2001, 10) - 0.02) < 1e-15
        assert theoretical_variance(1.0, 101, 2) == 2 * theoretical_variance(1.0, 101, 1)
        with pytest.raises(ValidationError):
            theoretical_variance(1.0, 1, 1)

    def test_theoretical_bias_single(self):
        assert theoretical_bias_single(3.0, 1.0) == 0.0
        assert theoretical_bias_single(3.0, 0.0) == 3.0
        assert abs(theoretical_bias_single(2.0, 0.75) - 0.5) < 1e-15

    def test_bias_decomposition_identity(self):
        d = BiasDecomposition.assemble(2.0, 1.5, 0.8, 0.3, 0.1)
        assert d.bias_value == 2.0 - 1.5 * 0.8 + 2 * (0.3 - 0.1)
        assert theoretical_bias_multi(d) == d.bias_value


class TestPopulationDecomposition:
    def test_singleton_matches_analytic_closed_form(self):
        rng = np.random.default_rng(1)
        w = rng.uniform(0.5, 1.0, 6) * rng.choice([-1, 1], 6)
        task = make_task(w, NoiseModel.independent(1.0, 1))
        clusters = ((0, 1), (2, 3, 4), (5,))
        pop = population_bias_decomposition(task, [0], clusters, 0, n_pop=200_000,
                                            seed=3)
        r2 = analytic_r2_for_partition(w, clusters)
        expected = float(w @ w) * (1 - r2)
        assert abs(pop.bias_value - expected) < max(4 * pop.standard_error, 0.02)

    def test_noiseless_identity_partition_bias_zero(self):
        w = np.array([1.0, -0.5, 0.25])
        task = make_task(w, NoiseModel.independent(0.0, 1))
        pop = population_bias_decomposition(task, [0], identity(3), 0, n_pop=20_000,
                                            seed=0)
        assert abs(pop.bias_value) < 1e-10

    def test_budget_validation(self):
        task = make_task(np.ones(2), NoiseModel.independent(1.0, 1))
        with pytest.raises(ValidationError):
            population_bias_decomposition(task, [0], identity(2), 0, n_pop=100)


class TestMonteCarloBiasVariance:
    def test_noiseless_generator(self):
        w = np.array([1.0, 0.5, -0.25, 0.1])
        task = make_task(w, NoiseModel.independent(0.0, 1))
        est = monte_carlo_bias_variance(
            task, [0], identity(4), 0, n_train=200, replicates=100, n_eval=10_000,
            seed=0,
        )
        assert est.noise_term == 0.0
        assert est.variance_term < 1e-20
        assert est.bias_term < 1e-20
        assert est.total_mse < 1e-20

    def test_singleton_variance_matches_formula(self):
        rng = np.random.default_rng(2)
        w = rng.uniform(0.5, 1.0, 5)
        task = make_task(w, NoiseModel.independent(1.0, 1))
        est = monte_carlo_bias_variance(
            task, [0], identity(5), 0, n_train=200, replicates=500, n_eval=10_000,
            seed=1,
        )
        theory = theoretical_variance(1.0, 200, 5)
        assert abs(est.variance_term - theory) <= 0.10 * theory

    def test_pair_with_independent_noise_halves_variance(self):
        rng = np.random.default_rng(3)
        w = rng.uniform(0.5, 1.0, 5)
        task = make_task(np.stack([w, w]), NoiseModel.independent(1.0, 2))
        single = monte_carlo_bias_variance(
            task, [0], identity(5), 0, n_train=200, replicates=500, n_eval=10_000,
            seed=2,
        )
        pair = monte_carlo_bias_variance(
            task, [0, 1], identity(5), 0, n_train=200, replicates=500, n_eval=10_000,
            seed=3,
        )
        assert abs(pair.variance_term - 0.5 * single.variance_term) <= (
            0.15 * 0.5 * single.variance_term
        )

    def test_closure_of_decomposition(self):
        rng = np.random.default_rng(4)
        w = rng.uniform(-1.0, 1.0, (2, 5))
        task = make_task(w, NoiseModel.equicorrelated(1.0, 2, 0.3))
        est = monte_carlo_bias_variance(
            task, [0, 1], ((0, 1), (2,), (3, 4)), 0, n_train=400, replicates=300,
            n_eval=10_000, seed=4,
        )
        lhs = est.variance_term + est.bias_term + est.noise_term
        combined = np.sqrt(est.variance_se**2 + est.bias_se**2 + est.total_se**2)
        assert abs(est.total_mse - lhs) <= 3 * combined

    def test_doubling_d_doubles_variance(self):
        rng = np.random.default_rng(5)
        w = rng.uniform(0.5, 1.0, 10)
        task = make_task(w, NoiseModel.independent(1.0, 1))
        est5 = monte_carlo_bias_variance(
            task, [0], identity(10)[:5] + ((5, 6, 7, 8, 9),), 0,
            n_train=500, replicates=400, n_eval=10_000, seed=6,
        )
        # d = 6 above vs d = 3 below (fixed sigma-bar and n).
        est3 = monte_carlo_bias_variance(
            task, [0], ((0, 1), (2, 3, 4), (5, 6, 7, 8, 9)), 0,
            n_train=500, replicates=400, n_eval=10_000, seed=7,
        )
        ratio = est5.variance_term / est3.variance_term
        assert abs(ratio - 2.0) <= 0.3

    def test_aggregated_bias_matches_population_assembly(self):
        rng = np.random.default_rng(6)
        w = rng.uniform(-1.0, 1.0, (2, 6))
        task = make_task(w, NoiseModel.equicorrelated(0.8, 2, 0.0))
        partition = ((0, 3), (1, 2), (4, 5))
        pop = population_bias_decomposition(task, [0, 1], partition, 0,
                                            n_pop=100_000, seed=8)
        est = monte_carlo_bias_variance(
            task, [0, 1], partition, 0, n_train=4000, replicates=300,
            n_eval=10_000, seed=9,
        )
        combined = np.hypot(est.bias_se, pop.standard_error)
        assert abs(est.bias_term - pop.bias_value) <= 3 * combined

    def test_budget_validation(self):
        task = make_task(np.ones(2), NoiseModel.independent(1.0, 1))
        with pytest.raises(ValidationError):
            monte_carlo_bias_variance(task, [0], identity(2), 0, 100, 50, 10_000)
        with pytest.raises(ValidationError):
            monte_carlo_bias_variance(task, [0], identity(2), 0, 100, 100, 100)

    def test_se_target_warning(self):
        task = make_task(np.ones(3), NoiseModel.independent(1.0, 1))
        est = monte_carlo_bias_variance(
            task, [0], identity(3), 0, n_train=100, replicates=100, n_eval=10_000,
            seed=0, se_target=1e-9,
        )
        assert est.warning is not None


class TestCoefficientCovariance:
    def test_orthonormalized_design_is_isotropic(self):
        rng = np.random.default_rng(7)
        raw = rng.standard_normal((300, 5))
        raw = raw - raw.mean(axis=0)
        q, _ = np.linalg.qr(raw)
        X = q * np.sqrt(299)  # orthogonal columns with unit sample variance
        report = coefficient_covariance_check(X, sigma=1.0, replicates=2000, seed=1)
        theory = np.eye(5) / 299
        np.testing.assert_allclose(np.diag(report.theoretical), np.diag(theory),
                                   rtol=1e-8)
        assert report.max_rel_dev <= 0.10

    def test_correlated_pair_has_negative_off_diagonal(self):
        rng = np.random.default_rng(8)
        z = rng.standard_normal((400, 2))
        X = np.column_stack([z[:, 0], 0.5 * z[:, 0] + np.sqrt(0.75) * z[:, 1]])
        report = coefficient_covariance_check(X, sigma=1.0, replicates=2000, seed=2)
        assert report.theoretical[0, 1] < 0
        assert report.empirical[0, 1] < 0

    def test_zero_noise_is_exact(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((100, 3))
        report = coefficient_covariance_check(X, sigma=0.0, replicates=200, seed=3)
        assert report.max_rel_dev == 0.0
        assert np.allclose(report.empirical, 0.0)


class TestDeltaMse:
    def test_perfectly_correlated_noise_no_variance_gain(self):
        rng = np.random.default_rng(10)
        w = rng.uniform(0.5, 1.0, 4)
        task = make_task(np.stack([w, w + 0.05]), NoiseModel.equicorrelated(1.0, 2, 1.0))
        report = delta_mse_check(task, [0, 1], 0, n_train=300, replicates=300,
                                 n_eval=10_000, seed=0, n_pop=50_000)
        assert abs(report.dvar_theoretical) < 1e-12
        assert abs(report.dvar_empirical) <= 3 * report.dvar_se
        assert report.passed

    def test_independent_pair_variance_gain(self):
        rng = np.random.default_rng(11)
        w = rng.uniform(0.5, 1.0, 4)
        task = make_task(np.stack([w, w + 0.05]), NoiseModel.independent(1.0, 2))
        report = delta_mse_check(task, [0, 1], 0, n_train=300, replicates=300,
                                 n_eval=10_000, seed=1, n_pop=50_000)
        expected = 0.5 * 4 / 299
        assert abs(report.dvar_theoretical - expected) < 1e-12
        assert report.passed

    def test_identical_tasks_no_bias_increase(self):
        rng = np.random.default_rng(12)
        w = rng.uniform(0.5, 1.0, 4)
        task = make_task(np.stack([w, w]), NoiseModel.independent(1.0, 2))
        report = delta_mse_check(task, [0, 1], 0, n_train=300, replicates=300,
                                 n_eval=10_000, seed=2, n_pop=50_000)
        assert abs(report.dbias_theoretical) < 1e-10
        assert abs(report.dbias_empirical) <= 3 * max(report.dbias_se, 1e-12)


class TestFeatureAggregationConsistency:
    def test_profitable_population_reduction_does_not_hurt(self):
        # When the asymptotic inequality favors merging (variance saved
        # exceeds the explained-variance loss), the empirical total MSE of
        # the reduced model must not exceed the full model beyond errors.
        rng = np.random.default_rng(13)
        w = np.full(6, 0.8) + rng.uniform(-0.02, 0.02, 6)
        task = make_task(w, NoiseModel.independent(1.0, 1))
        n_train = 200
        clusters = ((0, 1, 2), (3, 4, 5))
        r2_full = 1.0  # linear signal, identity features
        r2_red = analytic_r2_for_partition(w, clusters)
        var_f = float(w @ w)
        lhs = 1.0 * (6 - 2) / (n_train - 1)
        rhs = var_f * (r2_full - r2_red)
        assert lhs >= rhs  # the merge is profitable in population terms
        full = monte_carlo_bias_variance(
            task, [0], identity(6), 0, n_train, 400, 10_000, seed=3
        )
        reduced = monte_carlo_bias_variance(
            task, [0], clusters, 0, n_train, 400, 10_000, seed=4
        )
        combined = np.hypot(full.total_se, reduced.total_se)
        assert reduced.total_mse <= full.total_mse + 3 * combined

    def test_unprofitable_population_reduction_detected(self):
        w = np.array([1.0, -1.0, 0.8, 0.5])
        n_train = 5000
        clusters = ((0, 1), (2, 3))
        r2_red = analytic_r2_for_partition(w, clusters)
        lhs = 1.0 * (4 - 2) / (n_train - 1)
        rhs = float(w @ w) * (1.0 - r2_red)
        assert lhs < rhs  # aggregation loses too much signal here
