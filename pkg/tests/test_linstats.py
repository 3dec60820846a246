"""Least-squares statistics against hand computations and independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtaggr.errors import ValidationError, ZeroVarianceError
from mtaggr.linstats import Moments, moments, mse, nrmse, ols_fit, r2_score, var_res


def centered(a):
    a = np.asarray(a, dtype=float)
    return a - a.mean(axis=0)


class TestOlsFit:
    def test_exact_linear_single_column(self):
        x = centered(np.arange(10.0))[:, None]
        y = 2.0 * x[:, 0]
        fit = ols_fit(x, y)
        assert abs(fit.coefficients[0] - 2.0) < 1e-10
        assert abs(fit.r2 - 1.0) < 1e-12
        assert fit.n == 10 and fit.d == 1

    def test_orthogonal_target_gives_zero_coefficients(self):
        rng = np.random.default_rng(7)
        X = centered(rng.standard_normal((50, 3)))
        y = centered(rng.standard_normal(50))
        # Explicit Gram-Schmidt against the columns, independent of the
        # solver under test; repeated sweeps handle their correlation.
        for _ in range(30):
            for k in range(3):
                col = X[:, k]
                y = y - (y @ col) / (col @ col) * col
        fit = ols_fit(X, y)
        assert np.max(np.abs(fit.coefficients)) < 1e-10
        assert abs(fit.r2) < 1e-10

    def test_normal_equation_oracle(self):
        # 5-sample, 2-feature instance solved by the explicit 2x2 inverse.
        X = centered(
            np.array([[1.0, 2.0], [2.0, 1.5], [3.0, -1.0], [4.0, 0.5], [5.0, 3.0]])
        )
        y = centered(np.array([2.0, 1.0, 4.0, 3.5, 6.0]))
        a = float(X[:, 0] @ X[:, 0])
        b = float(X[:, 0] @ X[:, 1])
        c = float(X[:, 1] @ X[:, 1])
        det = a * c - b * b
        rhs = X.T @ y
        w_oracle = np.array(
            [(c * rhs[0] - b * rhs[1]) / det, (-b * rhs[0] + a * rhs[1]) / det]
        )
        fit = ols_fit(X, y)
        np.testing.assert_allclose(fit.coefficients, w_oracle, atol=1e-9)

    def test_residuals_orthogonal_to_columns(self):
        rng = np.random.default_rng(3)
        X = centered(rng.standard_normal((40, 4)))
        y = centered(rng.standard_normal(40))
        fit = ols_fit(X, y)
        resid = y - fit.predict(X)
        for k in range(4):
            norm = np.linalg.norm(X[:, k]) * np.linalg.norm(resid)
            assert abs(resid @ X[:, k]) < 1e-8 * max(norm, 1.0)

    def test_duplicate_column_invariance(self):
        rng = np.random.default_rng(11)
        X = centered(rng.standard_normal((80, 4)))
        y = centered(rng.standard_normal(80))
        base = ols_fit(X, y)
        for k in range(4):
            dup = np.column_stack([X, X[:, k]])
            fit = ols_fit(dup, y)
            assert abs(fit.r2 - base.r2) < 1e-8
            np.testing.assert_allclose(fit.predict(dup), base.predict(X), atol=1e-8)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(5)
        X = centered(rng.standard_normal((60, 3)))
        y = centered(rng.standard_normal(60) + X @ [1.0, -2.0, 0.5])
        c = 3.7
        f1 = ols_fit(X, y)
        f2 = ols_fit(X, c * y)
        np.testing.assert_allclose(f2.coefficients, c * f1.coefficients, rtol=1e-9)
        assert abs(f2.mse - c**2 * f1.mse) < 1e-9 * (1 + f1.mse * c**2)
        assert abs(f2.r2 - f1.r2) < 1e-9

    def test_local_optimality_probe(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            X = centered(rng.standard_normal((40, 3)))
            y = centered(rng.standard_normal(40))
            fit = ols_fit(X, y)
            base = np.mean((y - fit.predict(X)) ** 2)
            for k in range(3):
                for delta in (1e-3, -1e-3):
                    w = fit.coefficients.copy()
                    w[k] += delta
                    perturbed = np.mean((y - X @ w) ** 2)
                    assert perturbed >= base - 1e-12 * (1 + base)

    def test_errors(self):
        with pytest.raises(ValidationError):
            ols_fit(np.ones((1, 2)), np.ones(1))
        with pytest.raises(ValidationError):
            ols_fit(np.ones((5, 2)), np.ones(4))
        with pytest.raises(ZeroVarianceError):
            ols_fit(centered(np.random.default_rng(0).standard_normal((5, 1))),
                    np.full(5, 2.0))


class TestR2Score:
    def test_perfect_fit(self):
        rng = np.random.default_rng(2)
        X = centered(rng.standard_normal((30, 2)))
        y = X @ [1.5, -0.5]
        assert abs(r2_score(X, y) - 1.0) < 1e-12

    def test_in_sample_optimism_matches_d_over_n_minus_1(self):
        # Independent target: E[in-sample R^2] = d / (n - 1).
        rng = np.random.default_rng(42)
        n, d, draws = 1000, 10, 200
        values = []
        for _ in range(draws):
            X = centered(rng.standard_normal((n, d)))
            y = centered(rng.standard_normal(n))
            values.append(r2_score(X, y))
        assert abs(np.mean(values) - d / (n - 1)) < 0.005

    def test_zero_variance_errors(self):
        X = centered(np.random.default_rng(0).standard_normal((6, 2)))
        with pytest.raises(ZeroVarianceError):
            r2_score(X, np.zeros(6))


class TestVarRes:
    def test_noiseless(self):
        rng = np.random.default_rng(4)
        X = centered(rng.standard_normal((25, 3)))
        y = X @ [2.0, 0.0, -1.0]
        assert var_res(X, y) < 1e-12

    def test_law_of_large_numbers(self):
        rng = np.random.default_rng(8)
        n = 10_000
        x = centered(rng.standard_normal(n))[:, None]
        y = x[:, 0] + rng.standard_normal(n) * 2.0
        y = y - y.mean()
        assert 3.6 <= var_res(x, y) <= 4.4

    def test_identity_with_r2(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            X = centered(rng.standard_normal((50, 4)))
            y = centered(X @ rng.standard_normal(4) + rng.standard_normal(50))
            dev = y - y.mean()
            var_y = float(dev @ dev) / 49
            lhs = var_res(X, y)
            rhs = var_y * (1.0 - r2_score(X, y))
            assert abs(lhs - rhs) < 1e-10 * (1 + var_y)

    def test_constant_target_is_fine(self):
        X = centered(np.random.default_rng(0).standard_normal((8, 2)))
        assert var_res(X, np.zeros(8)) == 0.0


class TestMoments:
    def test_identical_and_negated(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal(30)
        assert abs(moments(a, a).correlation - 1.0) < 1e-12
        assert abs(moments(a, -a).correlation + 1.0) < 1e-12

    def test_hand_computed_values(self):
        # a = [1,2,3,4], b = [2,4,5,7]: deviations of a are (-1.5,-.5,.5,1.5)
        # so var(a) = 5/3; the cross products sum to 8, so cov = 8/3 and
        # var(b) = 13/3, corr = 8 / sqrt(65).
        m = moments([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 5.0, 7.0])
        assert abs(m.variance_a - 5.0 / 3.0) < 1e-12
        assert abs(m.variance_b - 13.0 / 3.0) < 1e-12
        assert abs(m.covariance - 8.0 / 3.0) < 1e-12
        assert abs(m.correlation - 8.0 / math.sqrt(65.0)) < 1e-12

    def test_zero_variance_returns_partial_result(self):
        m = moments([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        assert m.variance_a == 0.0
        assert m.correlation is None
        assert abs(m.variance_b - 1.0) < 1e-12

    def test_length_errors(self):
        with pytest.raises(ValidationError):
            moments([1.0], [2.0])
        with pytest.raises(ValidationError):
            moments([1.0, 2.0], [1.0, 2.0, 3.0])


class TestMseNrmse:
    def test_identical_vectors(self):
        a = np.arange(5.0)
        assert mse(a, a) == 0.0
        assert nrmse(a, a) == 0.0

    def test_constant_offset(self):
        a = np.arange(6.0)
        for c in (0.5, -2.0):
            assert abs(mse(a + c, a) - c**2) < 1e-12

    def test_against_two_pass_summation(self):
        rng = np.random.default_rng(10)
        p = rng.standard_normal(100)
        a = rng.standard_normal(100)
        oracle = math.fsum((float(x) - float(y)) ** 2 for x, y in zip(p, a)) / 100
        assert abs(mse(p, a) - oracle) < 1e-12
        span = float(a.max() - a.min())
        assert abs(nrmse(p, a) - math.sqrt(oracle) / span) < 1e-12

    def test_zero_range_errors(self):
        with pytest.raises(ZeroVarianceError):
            nrmse(np.arange(3.0), np.ones(3))


@settings(max_examples=25, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-50, max_value=50, allow_nan=False),
        min_size=6,
        max_size=20,
    ),
    st.integers(min_value=0, max_value=2**31),
)
def test_var_res_identity_property(values, seed):
    y = centered(np.asarray(values))
    rng = np.random.default_rng(seed)
    X = centered(rng.standard_normal((len(y), 2)))
    dev = y - y.mean()
    var_y = float(dev @ dev) / (len(y) - 1)
    if var_y == 0.0:
        assert var_res(X, y) >= 0.0
        return
    assert abs(var_res(X, y) - var_y * (1 - r2_score(X, y))) < 1e-10 * (1 + var_y)
    assert r2_score(X, y) <= 1.0
