"""Closed-form asymptotic formulas and the Monte-Carlo estimators that verify them.

The closed forms cover the asymptotic variance of a model trained on an
aggregated target (noise-mean variance times d/(n-1)), the single-task bias
(explained-variance shortfall), and the general aggregated-target bias with
its partial-covariance correction.  The Monte-Carlo side estimates the
variance / bias / noise split of the expected squared error by training many
replicate models and averaging their predictions on a fixed evaluation set.

These estimators only run on synthetic generators: the bias terms need the
noise-free signal, which real data never exposes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ValidationError

if TYPE_CHECKING:
    from .synth import SyntheticTask

__all__ = [
    "NoiseModel",
    "BiasVarianceEstimate",
    "BiasDecomposition",
    "aggregated_noise_variance",
    "theoretical_variance",
    "theoretical_bias_single",
    "theoretical_bias_multi",
    "population_bias_decomposition",
    "monte_carlo_bias_variance",
    "coefficient_covariance_check",
    "delta_mse_check",
]


def _check_correlation(corr: np.ndarray) -> np.ndarray:
    C = np.asarray(corr, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValidationError(f"correlation must be square, got shape {C.shape}")
    if not np.allclose(C, C.T, atol=1e-12):
        raise ValidationError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(C), 1.0, atol=1e-12):
        raise ValidationError("correlation matrix must have unit diagonal")
    if np.linalg.eigvalsh(C).min() < -1e-8:
        raise ValidationError("correlation matrix must be positive semidefinite")
    return C


@dataclass(frozen=True)
class NoiseModel:
    """Per-task noise standard deviations and their correlation matrix."""

    sigmas: np.ndarray
    correlation: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigmas, dtype=float))
        if np.any(s < 0):
            raise ValidationError("noise standard deviations must be nonnegative")
        C = _check_correlation(self.correlation)
        if C.shape[0] != s.shape[0]:
            raise ValidationError(
                f"{s.shape[0]} sigmas but correlation is {C.shape[0]}x{C.shape[0]}"
            )
        s.setflags(write=False)
        C = C.copy()
        C.setflags(write=False)
        object.__setattr__(self, "sigmas", s)
        object.__setattr__(self, "correlation", C)

    @classmethod
    def independent(cls, sigma: float, k: int) -> "NoiseModel":
        return cls(np.full(k, float(sigma)), np.eye(k))

    @classmethod
    def equicorrelated(cls, sigma: float, k: int, rho: float) -> "NoiseModel":
        C = np.full((k, k), float(rho))
        np.fill_diagonal(C, 1.0)
        return cls(np.full(k, float(sigma)), C)

    @property
    def n_tasks(self) -> int:
        return self.sigmas.shape[0]

    def covariance(self) -> np.ndarray:
        return np.outer(self.sigmas, self.sigmas) * self.correlation

    def restrict(self, indices: Sequence[int]) -> "NoiseModel":
        idx = list(indices)
        return NoiseModel(
            self.sigmas[idx], self.correlation[np.ix_(idx, idx)]
        )

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n rows of correlated Gaussian noise, one column per task."""
        vals, vecs = np.linalg.eigh(self.covariance())
        factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
        z = rng.standard_normal((n, self.n_tasks))
        return z @ factor.T


def aggregated_noise_variance(model: NoiseModel, cluster: Sequence[int]) -> float:
    """Exact variance of the mean of the cluster's noise variables."""
    idx = [int(i) for i in cluster]
    if not idx:
        raise ValidationError("cluster must be nonempty")
    for i in idx:
        if i < 0 or i >= model.n_tasks:
            raise ValidationError(f"task index {i} out of range [0, {model.n_tasks})")
    sub = model.covariance()[np.ix_(idx, idx)]
    k = len(idx)
    return max(0.0, float(sub.sum()) / (k * k))


def theoretical_variance(sigma_bar_sq: float, n: int, d: int) -> float:
    """Asymptotic model variance: aggregated noise variance times d / (n - 1)."""
    if n < 2:
        raise ValidationError(f"need n >= 2, got {n}")
    if d < 1:
        raise ValidationError(f"need d >= 1, got {d}")
    return sigma_bar_sq * d / (n - 1)


def theoretical_bias_single(var_f: float, r2: float) -> float:
    """Single-task asymptotic bias: signal variance times (1 - R^2)."""
    return var_f * (1.0 - r2)


@dataclass(frozen=True)
class BiasDecomposition:
    """Scalar ingredients of the aggregated-target asymptotic bias.

    ``bias_value`` is assembled definitionally as
    var_f_i - var_psi * r2_d_iota + 2 * (partial_cov - plain_cov).
    """

    var_f_i: float
    var_psi: float
    r2_d_iota: float
    partial_cov: float
    plain_cov: float
    bias_value: float
    standard_error: float = 0.0
    used_pinv: bool = False

    @classmethod
    def assemble(
        cls,
        var_f_i: float,
        var_psi: float,
        r2_d_iota: float,
        partial_cov: float,
        plain_cov: float,
        standard_error: float = 0.0,
        used_pinv: bool = False,
    ) -> "BiasDecomposition":
        value = var_f_i - var_psi * r2_d_iota + 2.0 * (partial_cov - plain_cov)
        return cls(
            var_f_i, var_psi, r2_d_iota, partial_cov, plain_cov,
            value, standard_error, used_pinv,
        )


def theoretical_bias_multi(decomp: BiasDecomposition) -> float:
    """Aggregated-target asymptotic bias assembled from its decomposition."""
    return (
        decomp.var_f_i
        - decomp.var_psi * decomp.r2_d_iota
        + 2.0 * (decomp.partial_cov - decomp.plain_cov)
    )


def _centered(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=0)


def _aggregate_columns(X: np.ndarray, clusters) -> np.ndarray:
    return np.column_stack([X[:, list(c)].mean(axis=1) for c in clusters])


def _signal(task: "SyntheticTask", X: np.ndarray, index: int) -> np.ndarray:
    return X @ task.coefficients[index]


def _draw_features(task: "SyntheticTask", n: int, rng: np.random.Generator):
    D = task.coefficients.shape[1]
    return rng.standard_normal((n, D)) * task.feature_std


def _partial_cov_terms(
    a: np.ndarray, b: np.ndarray, phi: np.ndarray
) -> tuple[float, float, bool]:
    """(plain covariance, partial covariance given phi, pinv fallback flag)."""
    n = a.shape[0]
    ac = a - a.mean()
    bc = b - b.mean()
    pc = _centered(phi)
    plain = float(ac @ bc) / (n - 1)
    cov_pp = pc.T @ pc / (n - 1)
    cov_pa = pc.T @ ac / (n - 1)
    cov_pb = pc.T @ bc / (n - 1)
    used_pinv = False
    try:
        solved = np.linalg.solve(cov_pp, cov_pb)
    except np.linalg.LinAlgError:
        solved = np.linalg.pinv(cov_pp) @ cov_pb
        used_pinv = True
    partial = plain - float(cov_pa @ solved)
    return plain, partial, used_pinv


def population_bias_decomposition(
    task: "SyntheticTask",
    cluster: Sequence[int],
    feature_clusters,
    task_index: int,
    n_pop: int = 100_000,
    seed: int = 0,
    n_batches: int = 10,
) -> BiasDecomposition:
    """Estimate the bias decomposition on fresh generator samples.

    The aggregated target is evaluated on the noise-free signals: the noise
    contributions to the explained-variance product and to the covariance
    difference cancel exactly, so the assembled bias is unchanged while the
    estimate avoids extra sampling noise.  The standard error comes from
    batch means over the fresh sample.
    """
    if n_pop < 10_000:
        raise ValidationError(f"need n_pop >= 10000, got {n_pop}")
    rng = np.random.default_rng(seed)
    X = _draw_features(task, n_pop, rng)
    f_i = _signal(task, X, task_index)
    cluster = [int(c) for c in cluster]
    psi = np.mean([_signal(task, X, k) for k in cluster], axis=0)
    phi = _aggregate_columns(X, feature_clusters)

    def decompose(sl: slice) -> BiasDecomposition:
        Xs, fs, ps, phis = X[sl], f_i[sl], psi[sl], phi[sl]
        n = fs.shape[0]
        var_f = float(np.var(fs, ddof=1))
        var_psi = float(np.var(ps, ddof=1))
        # Explained variance of psi from phi, via the population projection.
        pc = _centered(phis)
        psc = ps - ps.mean()
        gram = pc.T @ pc
        try:
            coef = np.linalg.solve(gram, pc.T @ psc)
            pinv_used = False
        except np.linalg.LinAlgError:
            coef = np.linalg.pinv(gram) @ (pc.T @ psc)
            pinv_used = True
        fitted = pc @ coef
        explained = float(fitted @ fitted) / (n - 1)
        r2 = explained / var_psi if var_psi > 0 else 0.0
        plain, partial, pinv2 = _partial_cov_terms(ps, fs - ps, phis)
        return BiasDecomposition.assemble(
            var_f, var_psi, r2, partial, plain, used_pinv=pinv_used or pinv2
        )

    full = decompose(slice(None))
    batch = n_pop // n_batches
    values = [
        decompose(slice(b * batch, (b + 1) * batch)).bias_value
        for b in range(n_batches)
    ]
    se = float(np.std(values, ddof=1) / np.sqrt(n_batches))
    return BiasDecomposition.assemble(
        full.var_f_i,
        full.var_psi,
        full.r2_d_iota,
        full.partial_cov,
        full.plain_cov,
        standard_error=se,
        used_pinv=full.used_pinv,
    )


@dataclass(frozen=True)
class BiasVarianceEstimate:
    """Monte-Carlo estimates of the variance / bias / noise split of the MSE.

    The bias term is debiased by the replicate-mean variance; standard
    errors come from a bootstrap over replicates.  ``warning`` is set when a
    requested standard-error target was not met.
    """

    variance_term: float
    bias_term: float
    noise_term: float
    total_mse: float
    variance_se: float
    bias_se: float
    noise_se: float
    total_se: float
    replicates: int
    warning: str | None = None


def monte_carlo_bias_variance(
    task: "SyntheticTask",
    cluster: Sequence[int],
    feature_clusters,
    task_index: int,
    n_train: int,
    replicates: int,
    n_eval: int,
    seed: int = 0,
    noise: NoiseModel | None = None,
    bootstrap: int = 100,
    se_target: float | None = None,
) -> BiasVarianceEstimate:
    """Train replicate models on fresh draws and split their error on task ``task_index``.

    Each replicate draws a fresh training set, trains the aggregated linear
    model (mean target of ``cluster`` on the ``feature_clusters`` means),
    and predicts a shared evaluation set.  The variance term averages the
    across-replicate prediction variance; the bias term compares the mean
    prediction against the true signal; the noise term is the task's own
    noise variance.  ``total_mse`` is estimated independently with fresh
    evaluation noise so the three-way closure is a real check.
    """
    if replicates < 100:
        raise ValidationError(f"need replicates >= 100, got {replicates}")
    if n_eval < 10_000:
        raise ValidationError(f"need n_eval >= 10000, got {n_eval}")
    noise_model = noise if noise is not None else task.noise
    cluster = [int(c) for c in cluster]
    sub_noise = noise_model.restrict(cluster)
    sigma_i = float(noise_model.sigmas[task_index])
    weights = np.mean([task.coefficients[k] for k in cluster], axis=0)

    ss = np.random.SeedSequence(seed)
    eval_seed, noise_seed, *rep_seeds = ss.spawn(replicates + 2)

    rng_eval = np.random.default_rng(eval_seed)
    X_eval = _draw_features(task, n_eval, rng_eval)
    f_eval = _signal(task, X_eval, task_index)
    phi_eval = _aggregate_columns(X_eval, feature_clusters)

    preds = np.empty((replicates, n_eval))
    for r in range(replicates):
        rng = np.random.default_rng(rep_seeds[r])
        X_tr = _draw_features(task, n_train, rng)
        eps = sub_noise.sample(n_train, rng)
        psi_tr = X_tr @ weights + eps.mean(axis=1)
        phi_tr = _aggregate_columns(X_tr, feature_clusters)
        coef, *_ = np.linalg.lstsq(phi_tr, psi_tr, rcond=None)
        preds[r] = phi_eval @ coef

    mean_pred = preds.mean(axis=0)
    point_var = preds.var(axis=0, ddof=1)
    variance_term = float(point_var.mean())
    point_bias = (mean_pred - f_eval) ** 2 - point_var / replicates
    bias_term = max(0.0, float(point_bias.mean()))
    noise_term = sigma_i**2

    rng_noise = np.random.default_rng(noise_seed)
    eps_eval = rng_noise.standard_normal((replicates, n_eval)) * sigma_i
    sq_err = (preds - f_eval[None, :] - eps_eval) ** 2
    per_rep_total = sq_err.mean(axis=1)
    total_mse = float(per_rep_total.mean())

    var_se, bias_se, total_se = _bootstrap_ses(
        preds, f_eval, per_rep_total, bootstrap, rep_seed=ss.spawn(1)[0]
    )
    # The bootstrap resamples replicates only; fold in the independent
    # evaluation-sample error of each mean-over-x term.
    root_n = np.sqrt(n_eval)
    var_se = float(np.hypot(var_se, point_var.std(ddof=1) / root_n))
    bias_se = float(np.hypot(bias_se, point_bias.std(ddof=1) / root_n))
    total_se = float(
        np.hypot(total_se, sq_err.mean(axis=0).std(ddof=1) / root_n)
    )

    warning = None
    if se_target is not None:
        worst = max(var_se, bias_se, total_se)
        if worst > se_target:
            warning = (
                f"replicate budget too small: worst standard error {worst:g} "
                f"exceeds target {se_target:g}"
            )

    return BiasVarianceEstimate(
        variance_term=variance_term,
        bias_term=bias_term,
        noise_term=noise_term,
        total_mse=total_mse,
        variance_se=var_se,
        bias_se=bias_se,
        noise_se=0.0,
        total_se=total_se,
        replicates=replicates,
        warning=warning,
    )


def _bootstrap_ses(preds, f_eval, per_rep_total, n_boot, rep_seed):
    """Bootstrap over replicates, vectorized through multinomial count matrices."""
    if n_boot < 2:
        return 0.0, 0.0, 0.0
    R = preds.shape[0]
    rng = np.random.default_rng(rep_seed)
    counts = rng.multinomial(R, np.full(R, 1.0 / R), size=n_boot) / R  # (B, R)
    m1 = counts @ preds  # bootstrap means, (B, n_eval)
    m2 = counts @ preds**2
    var_b = (m2 - m1**2) * (R / (R - 1))
    var_terms = var_b.mean(axis=1)
    bias_terms = ((m1 - f_eval[None, :]) ** 2).mean(axis=1) - var_terms / R
    total_terms = counts @ per_rep_total
    return (
        float(np.std(var_terms, ddof=1)),
        float(np.std(bias_terms, ddof=1)),
        float(np.std(total_terms, ddof=1)),
    )


@dataclass(frozen=True)
class CoefficientCovarianceReport:
    """Fixed-design coefficient covariance against its closed form."""

    max_rel_dev: float
    empirical: np.ndarray
    theoretical: np.ndarray
    n_compared: int
    replicates: int


def coefficient_covariance_check(
    X,
    sigma: float,
    replicates: int,
    seed: int = 0,
) -> CoefficientCovarianceReport:
    """Compare the coefficient covariance over noise redraws on a fixed design.

    The design matrix is column-centered, so the closed form
    sigma^2 / (n - 1) times the inverse sample covariance equals
    sigma^2 (X'X)^{-1} exactly.  Relative deviations are taken over entries
    whose theoretical magnitude exceeds 1e-6.
    """
    A = np.asarray(X, dtype=float)
    if A.ndim != 2:
        raise ValidationError("X must be 2-D")
    A = A - A.mean(axis=0)
    n, d = A.shape
    gram = A.T @ A
    try:
        theoretical = sigma**2 * np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        raise ValidationError("X'X is singular; the closed form is undefined") from None

    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((n, replicates)) * sigma
    coefs, *_ = np.linalg.lstsq(A, eps, rcond=None)  # (d, replicates)
    empirical = np.cov(coefs, ddof=1) if d > 1 else np.atleast_2d(np.var(coefs, ddof=1))

    mask = np.abs(theoretical) > 1e-6
    if not mask.any():
        max_rel = 0.0
    else:
        max_rel = float(
            np.max(np.abs(empirical[mask] - theoretical[mask]) / np.abs(theoretical[mask]))
        )
    return CoefficientCovarianceReport(
        max_rel_dev=max_rel,
        empirical=empirical,
        theoretical=theoretical,
        n_compared=int(mask.sum()),
        replicates=replicates,
    )


@dataclass(frozen=True)
class DeltaMseReport:
    """Aggregated-vs-single variance drop and bias rise against closed forms."""

    dvar_empirical: float
    dvar_theoretical: float
    dvar_se: float
    dbias_empirical: float
    dbias_theoretical: float
    dbias_se: float
    passed: bool


def delta_mse_check(
    task: "SyntheticTask",
    cluster: Sequence[int],
    task_index: int,
    n_train: int,
    replicates: int,
    n_eval: int = 10_000,
    seed: int = 0,
    n_pop: int = 100_000,
) -> DeltaMseReport:
    """Check the closed-form deltas between single-task and aggregated models."""
    D = task.coefficients.shape[1]
    identity = tuple((k,) for k in range(D))
    single = monte_carlo_bias_variance(
        task, [task_index], identity, task_index, n_train, replicates, n_eval,
        seed=seed,
    )
    agg = monte_carlo_bias_variance(
        task, cluster, identity, task_index, n_train, replicates, n_eval,
        seed=seed + 1,
    )
    sigma_i = float(task.noise.sigmas[task_index])
    sbar = aggregated_noise_variance(task.noise, cluster)
    dvar_theory = (sigma_i**2 - sbar) * D / (n_train - 1)
    dvar_emp = single.variance_term - agg.variance_term
    dvar_se = float(np.hypot(single.variance_se, agg.variance_se))

    pop_single = population_bias_decomposition(
        task, [task_index], identity, task_index, n_pop=n_pop, seed=seed + 2
    )
    pop_agg = population_bias_decomposition(
        task, cluster, identity, task_index, n_pop=n_pop, seed=seed + 2
    )
    dbias_theory = pop_agg.bias_value - pop_single.bias_value
    dbias_emp = agg.bias_term - single.bias_term
    dbias_se = float(
        np.sqrt(
            single.bias_se**2
            + agg.bias_se**2
            + pop_single.standard_error**2
            + pop_agg.standard_error**2
        )
    )

    passed = abs(dvar_emp - dvar_theory) <= 3 * max(dvar_se, 1e-12) and abs(
        dbias_emp - dbias_theory
    ) <= 3 * max(dbias_se, 1e-12)
    return DeltaMseReport(
        dvar_empirical=dvar_emp,
        dvar_theoretical=dvar_theory,
        dvar_se=dvar_se,
        dbias_empirical=dbias_emp,
        dbias_theoretical=dbias_theory,
        dbias_se=dbias_se,
        passed=passed,
    )
