"""Acceptance suite: every criterion at its stated tolerance, one line each.

Budgets and seeds are pinned so the suite is deterministic.  The synthetic
reproduction (criterion 1) targets the reference accuracy numbers of the
default configuration; the property criteria drive the Monte-Carlo checks at
their full budgets.
"""

import time

import numpy as np

from mtaggr.checks import (
    VerifyBudget,
    check_bias_aggregated,
    check_bias_single_task,
    check_coefficient_covariance,
    check_merge_guarantee_features,
    check_merge_guarantee_targets,
    check_variance_formula,
)
from mtaggr.data import center
from mtaggr.synth import SynthConfig, generate, run_trial

BUDGET = VerifyBudget()


def report(number, name, passed, detail):
    status = "PASS" if passed else "FAIL"
    print(f"[{number}] {name}: {status} ({detail})")
    assert passed, f"criterion {number} failed: {detail}"


def test_1_synthetic_benchmark_reproduction():
    t0 = time.time()
    rows = []
    for seed in range(10, 20):
        m = run_trial(SynthConfig(), seed)
        rows.append(
            (m.r2_single, m.r2_phase1, m.r2_phase12,
             m.pct_phase1, m.pct_phase12, m.n_task_clusters)
        )
    r2s, r2p1, r2p12, pct1, pct12, clusters = np.asarray(rows).mean(axis=0)
    elapsed = time.time() - t0
    checks = {
        "single-task R2 in [0.43, 0.53]": 0.43 <= r2s <= 0.53,
        "phase-I R2 in [0.58, 0.70]": 0.58 <= r2p1 <= 0.70,
        "phase-I+II R2 in [0.61, 0.73]": 0.61 <= r2p12 <= 0.73,
        "phase-I MSE change within -29.44 +/- 6": abs(pct1 + 29.44) <= 6.0,
        "phase-I+II MSE change within -35.36 +/- 6": abs(pct12 + 35.36) <= 6.0,
        "cluster count in [1.5, 3.5]": 1.5 <= clusters <= 3.5,
        "runtime under 5 minutes": elapsed < 300.0,
    }
    detail = (
        f"r2={r2s:.3f}/{r2p1:.3f}/{r2p12:.3f} pct={pct1:.2f}/{pct12:.2f} "
        f"clusters={clusters:.1f} elapsed={elapsed:.0f}s"
    )
    failed = [k for k, ok in checks.items() if not ok]
    report(1, "synthetic benchmark reproduction", not failed,
           detail + (f"; failed: {failed}" if failed else ""))


def test_2_variance_formula_grid():
    t0 = time.time()
    result = check_variance_formula(BUDGET, seed=0)
    elapsed = time.time() - t0
    worst = max(d["net_rel_dev"] / d["tolerance"] for d in result.details)
    report(
        2, "asymptotic variance formula",
        result.passed and elapsed < 600.0,
        f"54 cells, worst net deviation {worst:.2f} of tolerance, "
        f"elapsed={elapsed:.0f}s",
    )


def test_3_single_task_bias_formula():
    result = check_bias_single_task(BUDGET, seed=0)
    report(
        3, "single-task bias formula",
        result.passed,
        f"{len(result.details)} partitions, all within 3 standard errors"
        if result.passed else f"details={result.details}",
    )


def test_4_aggregated_bias_formula():
    result = check_bias_aggregated(BUDGET, seed=0)
    report(
        4, "aggregated-target bias formula",
        result.passed,
        f"{len(result.details)} generators, assembly matches brute force"
        if result.passed else f"details={result.details}",
    )


def test_5_target_merge_guarantee():
    result = check_merge_guarantee_targets(BUDGET, seed=0)
    d = result.details[0]
    report(
        5, "target-merge guarantee",
        result.passed,
        f"no-worse fraction {d['no_worse_fraction']:.2f}, orthogonal rejected "
        f"{d['orthogonal_rejected_fraction']:.2f}",
    )


def test_6_feature_merge_guarantee():
    result = check_merge_guarantee_features(BUDGET, seed=0)
    d = result.details[0]
    report(
        6, "feature-merge guarantee",
        result.passed,
        f"no-worse fraction {d['no_worse_fraction']:.2f}, antisymmetric rejected "
        f"{d['antisymmetric_rejected_fraction']:.2f}",
    )


def test_7_tolerance_endpoints():
    from mtaggr.aggregation import nonlin_ctfa

    cfg = SynthConfig()
    train = center(generate(cfg, 10)[0]).dataset
    counts = []
    for eps1 in (-1e6, -100.0, -1.0, 0.0, 1.0, 100.0, 1e6):
        counts.append(nonlin_ctfa(train, eps1, 1e-4, 10).task_partition.n_clusters)
    eps1_ok = (
        counts[0] == cfg.n_tasks
        and counts[-1] == 1
        and all(a >= b for a, b in zip(counts, counts[1:]))
    )

    small = SynthConfig(n_tasks=4, n_features=30, n_train=150, n_test=150,
                        sigma=5.0, feature_std=1.0)
    train2 = center(generate(small, 3)[0]).dataset
    dcounts = []
    for eps2 in (-1.0, 0.0, 1e-5, 1e-4, 1e-3, 1e-2, 2.0):
        result = nonlin_ctfa(train2, 0.0, eps2, 3)
        dcounts.append(float(np.mean([fp.n_clusters for fp in
                                      result.feature_partitions])))
    eps2_ok = (
        dcounts[0] == small.n_features
        and dcounts[-1] == 1.0
        and all(a >= b for a, b in zip(dcounts, dcounts[1:]))
    )
    report(
        7, "tolerance endpoints",
        eps1_ok and eps2_ok,
        f"cluster counts {counts}, reduced feature counts {dcounts}",
    )


def test_8_comparison_budget():
    from mtaggr.aggregation import nonlin_ctfa

    rng = np.random.default_rng(88)
    within = True
    for trial in range(100):
        L = int(rng.integers(2, 7))
        D = int(rng.integers(2, 8))
        cfg = SynthConfig(
            n_tasks=L, n_features=D,
            n_train=int(rng.integers(30, 70)), n_test=10,
            sigma=float(rng.uniform(0.2, 3.0)), feature_std=1.0,
        )
        train = center(generate(cfg, trial)[0]).dataset
        eps1 = float(rng.choice([-1.0, 0.0, 1.0, 1e6]))
        eps2 = float(rng.choice([-1.0, 0.0, 1e-3, 1e6]))
        result = nonlin_ctfa(train, eps1, eps2, seed=trial)
        phase1 = sum(1 for r in result.trace if r.phase == 1)
        phase2 = sum(1 for r in result.trace if r.phase == 2)
        l = result.task_partition.n_clusters
        if phase1 > L * (L - 1) // 2 or phase2 > l * D * (D - 1) // 2:
            within = False
            break
    report(8, "comparison budget", within, "100 randomized trials within bounds")


def test_9_coefficient_covariance():
    result = check_coefficient_covariance(BUDGET, seed=0)
    worst = max(d["max_rel_dev"] for d in result.details)
    report(
        9, "fixed-design coefficient covariance",
        result.passed,
        f"max relative deviation {worst:.3f} at replicates=2000, D in (2, 5)",
    )
