"""Threshold tests and the two-phase driver that aggregates targets, then features.

Phase I greedily partitions the targets: each candidate merge is accepted
when both threshold scalars (a variance-reduction term plus an explained-
variance penalty, computed from three OLS fits on the full feature matrix)
fall at or below ``epsilon1``.  Phase II repeats the same greedy loop over
feature columns for each aggregated target, accepting a merge when the
in-sample R^2 drop from replacing two columns with their mean is at most
``epsilon2``.

Inside the loop the candidate aggregate is the flat mean over the current
members plus the candidate, matching the columns the final output is built
from; the threshold operations themselves default to the two-column mean,
which is the same thing for a singleton cluster.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import Dataset, FeaturePartition, TaskPartition
from .errors import ValidationError, ZeroVarianceError
from .linstats import _core_fit

__all__ = [
    "ThresholdReport",
    "AggregationResult",
    "compute_threshold_targets",
    "compute_threshold_features",
    "aggregation_loop",
    "nonlin_ctfa",
    "nonlin_ctfa_homogeneous",
    "apply_partition",
    "replay",
    "assert_replay",
    "reevaluate_report",
    "result_to_json",
    "result_from_json",
]

# |R_sep - R_aggr| below this is rounding noise from refitting the same span
# (exact-duplicate columns); snap to zero so ties accept at epsilon = 0.
R2_TIE_TOL = 1e-12

# Columns count as centered when |mean| <= this times (1 + rms).
CENTERED_TOL = 1e-7

_SEED_MASK = (1 << 64) - 1


class _FitStats(NamedTuple):
    r2: float
    var_res: float
    varf: float  # explained variance: var(y) - var_res, floored at zero


def _fit_stats(X: np.ndarray, y: np.ndarray) -> _FitStats:
    """Threshold-test statistics of one fit.

    The asymptotic expressions are stated in population quantities, so the
    residual variance here uses the degrees-of-freedom divisor n - rank(X)
    (the unbiased noise estimate) and the R^2 is the matching adjusted
    value.  At the sample sizes the thresholds run at (d comparable to n),
    the plain n-1 statistics are optimistic enough to invert merge
    decisions; the public r2_score / var_res operations keep the plain
    definitions.  The explained variance is floored at zero (a model that
    explains nothing contributes nothing).
    """
    core = _core_fit(X, y)
    if core.target_variance <= 0.0:
        raise ZeroVarianceError("target has zero variance; R^2 is undefined")
    dof = max(core.n - core.rank, 1)
    var_res = core.ss_res / dof
    varf = max(0.0, core.target_variance - var_res)
    return _FitStats(varf / core.target_variance, var_res, varf)


@dataclass(frozen=True)
class ThresholdReport:
    """One recorded accept/reject comparison.

    Phase 1 populates the three-fit scalars and both thresholds; phase 2
    populates the separated/aggregated pair (as ``r_p``/``r_ag``) and the
    R^2 gap.  ``members`` is the open cluster's membership at test time (in
    merge order); ``context`` lists the index sets behind each working
    column of a phase-2 comparison, so any record can be re-evaluated
    standalone.
    """

    phase: int
    cluster_id: int
    candidate: int
    members: tuple[int, ...]
    epsilon: float
    accepted: bool
    r_p: float | None = None
    r_j: float | None = None
    r_ag: float | None = None
    var_p: float | None = None
    var_j: float | None = None
    var_ag: float | None = None
    varf_p: float | None = None
    varf_j: float | None = None
    varf_ag: float | None = None
    threshold1: float | None = None
    threshold2: float | None = None
    r_gap: float | None = None
    task_cluster: int | None = None
    context: tuple[tuple[int, ...], ...] | None = None
    note: str | None = None

    def __post_init__(self):
        if self.phase not in (1, 2):
            raise ValidationError(f"phase must be 1 or 2, got {self.phase}")
        object.__setattr__(self, "members", tuple(int(i) for i in self.members))
        if self.context is not None:
            object.__setattr__(
                self, "context", tuple(tuple(int(i) for i in c) for c in self.context)
            )

    @property
    def candidate_pair(self) -> tuple[int, int]:
        return (self.cluster_id, self.candidate)


def compute_threshold_targets(
    X,
    y_p,
    y_j,
    epsilon: float,
    *,
    X_p=None,
    X_j=None,
    X_ag=None,
    y_ag=None,
    cluster_id: int = 0,
    candidate: int = -1,
    members: tuple[int, ...] = (),
    _p_fit: _FitStats | None = None,
) -> ThresholdReport:
    """Decide whether merging candidate target ``y_j`` into the cluster is kept.

    The aggregate under test defaults to ``(y_p + y_j) / 2`` (the two-task
    case); the loop passes the flat mean over members plus candidate via
    ``y_ag`` for clusters that have already grown.  By default all three
    fits use the shared matrix ``X``; the homogeneous variant passes each
    model's own matrix via ``X_p``/``X_j``/``X_ag`` instead.
    """
    y_p = np.asarray(y_p, dtype=float)
    y_j = np.asarray(y_j, dtype=float)
    if X is None and (X_p is None or X_j is None or X_ag is None):
        raise ValidationError("X is required unless X_p, X_j and X_ag are all given")
    Mp = np.asarray(X_p if X_p is not None else X, dtype=float)
    Mj = np.asarray(X_j if X_j is not None else X, dtype=float)
    Mag = np.asarray(X_ag if X_ag is not None else X, dtype=float)
    if not (Mp.shape[1] == Mj.shape[1] == Mag.shape[1]):
        raise ValidationError("the three model matrices must share a column count")

    y_ag = 0.5 * (y_p + y_j) if y_ag is None else np.asarray(y_ag, dtype=float)
    base = dict(
        phase=1,
        cluster_id=cluster_id,
        candidate=candidate,
        members=tuple(members),
        epsilon=float(epsilon),
    )
    try:
        sp = _p_fit if _p_fit is not None else _fit_stats(Mp, y_p)
        sj = _fit_stats(Mj, y_j)
        sag = _fit_stats(Mag, y_ag)
    except ZeroVarianceError as exc:
        return ThresholdReport(accepted=False, note=str(exc), **base)

    n = y_p.shape[0]
    scale = Mag.shape[1] / (n - 1)
    penalty = 0.5 * (sp.r2 * sp.varf + sj.r2 * sj.varf) - sag.r2 * sag.varf
    t1 = scale * (sag.var_res - sp.var_res) + penalty
    t2 = scale * (sag.var_res - sj.var_res) + penalty
    return ThresholdReport(
        accepted=bool(t1 <= epsilon and t2 <= epsilon),
        r_p=sp.r2,
        r_j=sj.r2,
        r_ag=sag.r2,
        var_p=sp.var_res,
        var_j=sj.var_res,
        var_ag=sag.var_res,
        varf_p=sp.varf,
        varf_j=sj.varf,
        varf_ag=sag.varf,
        threshold1=t1,
        threshold2=t2,
        **base,
    )


def _merge_columns(
    X: np.ndarray, p_col: int, j_col: int, merged: np.ndarray | None = None
) -> np.ndarray:
    if merged is None:
        merged = 0.5 * (X[:, p_col] + X[:, j_col])
    keep = [k for k in range(X.shape[1]) if k != j_col]
    out = X[:, keep].copy()
    out[:, keep.index(p_col)] = merged
    return out


def compute_threshold_features(
    X_curr,
    y,
    p_col: int,
    j_col: int,
    epsilon: float,
    *,
    merged=None,
    cluster_id: int = 0,
    candidate: int = -1,
    members: tuple[int, ...] = (),
    task_cluster: int | None = None,
    context: tuple[tuple[int, ...], ...] | None = None,
    _sep_fit: _FitStats | None = None,
) -> ThresholdReport:
    """Decide whether working columns ``p_col`` and ``j_col`` merge into their mean.

    ``X_curr`` is the current working matrix (unvisited original columns plus
    aggregated cluster means).  The aggregated model replaces the two columns
    with their mean (the two-column mean by default; the loop passes the flat
    mean over the underlying original columns via ``merged``); the merge is
    kept when the in-sample R^2 drop is at most ``epsilon``.
    """
    M = np.asarray(X_curr, dtype=float)
    yv = np.asarray(y, dtype=float)
    d = M.shape[1]
    if not (0 <= p_col < d and 0 <= j_col < d) or p_col == j_col:
        raise ValidationError(f"invalid column pair ({p_col}, {j_col}) for d={d}")
    base = dict(
        phase=2,
        cluster_id=cluster_id,
        candidate=candidate,
        members=tuple(members),
        epsilon=float(epsilon),
        task_cluster=task_cluster,
        context=context,
    )
    try:
        sep = _sep_fit if _sep_fit is not None else _fit_stats(M, yv)
        agg = _fit_stats(_merge_columns(M, p_col, j_col, merged), yv)
    except ZeroVarianceError as exc:
        return ThresholdReport(accepted=False, note=str(exc), **base)

    gap = sep.r2 - agg.r2
    if abs(gap) < R2_TIE_TOL:
        gap = 0.0
    return ThresholdReport(
        accepted=bool(gap <= epsilon),
        r_p=sep.r2,
        r_ag=agg.r2,
        var_p=sep.var_res,
        var_ag=agg.var_res,
        varf_p=sep.varf,
        varf_ag=agg.varf,
        r_gap=gap,
        **base,
    )


def _phase2_context(
    closed: list[list[int]], members: list[int], visited: set[int], size: int
) -> list[tuple[int, ...]]:
    context = [tuple(sorted(c)) for c in closed]
    context.append(tuple(sorted(members)))
    context.extend((k,) for k in range(size) if k not in visited)
    return context


def _columns_for(context, features: np.ndarray) -> np.ndarray:
    return np.column_stack([features[:, list(c)].mean(axis=1) for c in context])


def aggregation_loop(
    items,
    phase: int,
    epsilon: float,
    *,
    features,
    targets=None,
    target=None,
    task_cluster: int | None = None,
) -> tuple[tuple[tuple[int, ...], ...], list[ThresholdReport]]:
    """Greedy single-pass aggregation of ``items``, shared by both phases.

    Walks the items in the given order; each unvisited item opens a cluster
    and every later unvisited item is tested for a merge.  The cluster mean
    is recomputed from the current members before each test.  Returns the
    clusters (creation order, members sorted ascending) and the full trace.
    """
    order = [int(i) for i in items]
    if not order:
        raise ValidationError("items must be nonempty")
    if phase not in (1, 2):
        raise ValidationError(f"phase must be 1 or 2, got {phase}")
    X = np.asarray(features, dtype=float)
    if phase == 1:
        if targets is None:
            raise ValidationError("phase 1 requires the target matrix")
        Z = np.asarray(targets, dtype=float)
        size = Z.shape[1]
    else:
        if target is None:
            raise ValidationError("phase 2 requires an aggregated target")
        y = np.asarray(target, dtype=float)
        size = X.shape[1]
    for i in order:
        if i < 0 or i >= size:
            raise ValidationError(f"item index {i} out of range [0, {size})")

    visited: set[int] = set()
    closed: list[list[int]] = []
    trace: list[ThresholdReport] = []
    # Cache of the separated-model fit (phase 2) / cluster-mean fit (phase 1);
    # both only change when a merge is accepted.
    cached = None

    for pos, i in enumerate(order):
        if i in visited:
            continue
        members = [i]
        visited.add(i)
        cluster_id = len(closed)
        cached = None
        for j in order[pos + 1 :]:
            if j in visited:
                continue
            if phase == 1:
                y_p = Z[:, members].mean(axis=1)
                if cached is None:
                    try:
                        cached = _fit_stats(X, y_p)
                    except ZeroVarianceError:
                        cached = None
                report = compute_threshold_targets(
                    X,
                    y_p,
                    Z[:, j],
                    epsilon,
                    y_ag=Z[:, members + [j]].mean(axis=1),
                    cluster_id=cluster_id,
                    candidate=j,
                    members=tuple(members),
                    _p_fit=cached,
                )
            else:
                context = _phase2_context(closed, members, visited, size)
                M = _columns_for(context, X)
                p_col = len(closed)
                j_col = context.index((j,))
                if cached is None:
                    try:
                        cached = _fit_stats(M, y)
                    except ZeroVarianceError:
                        cached = None
                report = compute_threshold_features(
                    M,
                    y,
                    p_col,
                    j_col,
                    epsilon,
                    merged=X[:, members + [j]].mean(axis=1),
                    cluster_id=cluster_id,
                    candidate=j,
                    members=tuple(members),
                    task_cluster=task_cluster,
                    context=tuple(context),
                    _sep_fit=cached,
                )
            trace.append(report)
            if report.accepted:
                members.append(j)
                visited.add(j)
                cached = None
        closed.append(members)

    clusters = tuple(tuple(sorted(c)) for c in closed)
    return clusters, trace


@dataclass(frozen=True)
class AggregationResult:
    """Complete output of a run: both partitions, the trace, and the knobs."""

    task_partition: TaskPartition
    feature_partitions: tuple[FeaturePartition, ...]
    trace: tuple[ThresholdReport, ...]
    seed: int
    epsilon1: float
    epsilon2: float
    homogeneous: bool = False

    def __post_init__(self):
        if len(self.feature_partitions) != self.task_partition.n_clusters:
            raise ValidationError(
                f"{len(self.feature_partitions)} feature partitions for "
                f"{self.task_partition.n_clusters} task clusters"
            )
        object.__setattr__(self, "feature_partitions", tuple(self.feature_partitions))
        object.__setattr__(self, "trace", tuple(self.trace))
        object.__setattr__(self, "seed", int(self.seed) & _SEED_MASK)


def _check_centered(matrix: np.ndarray, what: str) -> None:
    means = np.abs(matrix.mean(axis=0))
    scale = 1.0 + np.sqrt(np.mean(matrix**2, axis=0))
    worst = int(np.argmax(means - CENTERED_TOL * scale))
    if means[worst] > CENTERED_TOL * scale[worst]:
        raise ValidationError(
            f"{what} column {worst} has mean {matrix[:, worst].mean():g}; "
            "center the dataset first"
        )


def _task_order(n_tasks: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(int(seed) & _SEED_MASK)
    return rng.permutation(n_tasks)


def nonlin_ctfa(
    dataset: Dataset, epsilon1: float, epsilon2: float, seed: int
) -> AggregationResult:
    """Run both phases on a centered dataset with shared features.

    Phase I visits the targets in a seed-shuffled order to avoid systematic
    ordering bias; phase II visits the features in dataset order, once per
    task cluster, against that cluster's mean target.
    """
    _check_centered(dataset.features, "feature")
    _check_centered(dataset.targets, "target")

    order = _task_order(dataset.n_tasks, seed)
    clusters, trace = aggregation_loop(
        order, 1, epsilon1, features=dataset.features, targets=dataset.targets
    )
    task_partition = TaskPartition.from_clusters(clusters, dataset.targets)

    feature_partitions: list[FeaturePartition] = []
    full_trace = list(trace)
    for ci in range(task_partition.n_clusters):
        psi = task_partition.aggregated_targets[:, ci]
        fclusters, ftrace = aggregation_loop(
            range(dataset.n_features),
            2,
            epsilon2,
            features=dataset.features,
            target=psi,
            task_cluster=ci,
        )
        feature_partitions.append(
            FeaturePartition.from_clusters(fclusters, dataset.features)
        )
        full_trace.extend(ftrace)

    return AggregationResult(
        task_partition=task_partition,
        feature_partitions=tuple(feature_partitions),
        trace=tuple(full_trace),
        seed=seed,
        epsilon1=epsilon1,
        epsilon2=epsilon2,
    )


def nonlin_ctfa_homogeneous(
    dataset: Dataset, epsilon: float, seed: int
) -> AggregationResult:
    """Single-phase variant for per-task feature slabs.

    A candidate merge averages targets exactly as in phase 1 and averages
    the feature slabs columnwise; each of the three threshold fits uses its
    own model's matrix (the cluster's mean slab, the candidate's slab, and
    the mean slab over members plus candidate).
    """
    if dataset.per_task_features is None:
        raise ValidationError("homogeneous variant requires per_task_features")
    slabs = dataset.per_task_features
    Y = dataset.targets
    _check_centered(Y, "target")
    for t, slab in enumerate(slabs):
        _check_centered(slab, f"task {t} feature")

    order = _task_order(dataset.n_tasks, seed)
    visited: set[int] = set()
    closed: list[list[int]] = []
    trace: list[ThresholdReport] = []

    order_list = [int(i) for i in order]
    for pos, i in enumerate(order_list):
        if i in visited:
            continue
        members = [i]
        visited.add(i)
        cluster_id = len(closed)
        cached = None
        slab_p = None
        for j in order_list[pos + 1 :]:
            if j in visited:
                continue
            y_p = Y[:, members].mean(axis=1)
            if slab_p is None:
                slab_p = np.mean([slabs[k] for k in members], axis=0)
            slab_ag = np.mean([slabs[k] for k in members + [j]], axis=0)
            if cached is None:
                try:
                    cached = _fit_stats(slab_p, y_p)
                except ZeroVarianceError:
                    cached = None
            report = compute_threshold_targets(
                None,
                y_p,
                Y[:, j],
                epsilon,
                X_p=slab_p,
                X_j=slabs[j],
                X_ag=slab_ag,
                y_ag=Y[:, members + [j]].mean(axis=1),
                cluster_id=cluster_id,
                candidate=j,
                members=tuple(members),
                _p_fit=cached,
            )
            trace.append(report)
            if report.accepted:
                members.append(j)
                visited.add(j)
                cached = None
                slab_p = None
        closed.append(members)

    clusters = tuple(tuple(sorted(c)) for c in closed)
    task_partition = TaskPartition.from_clusters(clusters, Y)
    identity = tuple((k,) for k in range(dataset.n_features))
    feature_partitions = tuple(
        FeaturePartition.from_clusters(identity, dataset.features)
        for _ in range(task_partition.n_clusters)
    )
    return AggregationResult(
        task_partition=task_partition,
        feature_partitions=feature_partitions,
        trace=tuple(trace),
        seed=seed,
        epsilon1=epsilon,
        epsilon2=epsilon,
        homogeneous=True,
    )


def apply_partition(
    dataset: Dataset, result: AggregationResult
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Reduce a dataset with a fitted result: one (mean target, reduced X) per cluster.

    Works on any dataset with the same dimensions as the one the result was
    fitted on (typically the test split).  When the dataset carries per-task
    slabs, the reduced features of a cluster are the mean slab of its
    members, aggregated by that cluster's feature partition.
    """
    clusters = result.task_partition.clusters
    if max(max(c) for c in clusters) >= dataset.n_tasks:
        raise ValidationError("task partition indexes beyond the dataset's tasks")
    out: list[tuple[np.ndarray, np.ndarray]] = []
    for ci, cluster in enumerate(clusters):
        y = dataset.targets[:, list(cluster)].mean(axis=1)
        fpart = result.feature_partitions[ci]
        if max(max(c) for c in fpart.clusters) >= dataset.n_features:
            raise ValidationError(
                "feature partition indexes beyond the dataset's features"
            )
        if dataset.per_task_features is not None:
            source = np.mean([dataset.per_task_features[k] for k in cluster], axis=0)
        else:
            source = dataset.features
        X = np.column_stack(
            [source[:, list(fc)].mean(axis=1) for fc in fpart.clusters]
        )
        out.append((y, X))
    return out


# ---------------------------------------------------------------------------
# Trace replay
# ---------------------------------------------------------------------------


def replay(dataset: Dataset, result: AggregationResult) -> AggregationResult:
    """Re-run the algorithm with the stored seed and tolerances."""
    if result.homogeneous:
        return nonlin_ctfa_homogeneous(dataset, result.epsilon1, result.seed)
    return nonlin_ctfa(dataset, result.epsilon1, result.epsilon2, result.seed)


def assert_replay(dataset: Dataset, result: AggregationResult) -> None:
    """Verify that re-running reproduces every recorded comparison.

    Raises ValidationError on the first mismatch in decisions, membership,
    or recorded scalars.
    """
    fresh = replay(dataset, result)
    if len(fresh.trace) != len(result.trace):
        raise ValidationError(
            f"replay produced {len(fresh.trace)} comparisons, "
            f"recorded {len(result.trace)}"
        )
    scalar_fields = (
        "r_p", "r_j", "r_ag", "var_p", "var_j", "var_ag",
        "varf_p", "varf_j", "varf_ag", "threshold1", "threshold2", "r_gap",
    )
    for k, (old, new) in enumerate(zip(result.trace, fresh.trace)):
        if (
            old.phase != new.phase
            or set(old.members) != set(new.members)
            or old.candidate != new.candidate
            or old.accepted != new.accepted
        ):
            raise ValidationError(f"trace record {k} does not replay: {old} vs {new}")
        for f in scalar_fields:
            a, b = getattr(old, f), getattr(new, f)
            if (a is None) != (b is None):
                raise ValidationError(f"trace record {k}: field {f} presence differs")
            if a is not None and not np.isclose(a, b, rtol=1e-9, atol=1e-12):
                raise ValidationError(
                    f"trace record {k}: field {f} differs ({a} vs {b})"
                )
    if fresh.task_partition.clusters != result.task_partition.clusters:
        raise ValidationError("replayed task partition differs")


def reevaluate_report(
    dataset: Dataset, result: AggregationResult, report: ThresholdReport
) -> ThresholdReport:
    """Re-run a single recorded comparison standalone on the stored data."""
    members = list(report.members)
    extended = members + [report.candidate]
    if report.phase == 1:
        y_p = dataset.targets[:, members].mean(axis=1)
        y_j = dataset.targets[:, report.candidate]
        y_ag = dataset.targets[:, extended].mean(axis=1)
        if result.homogeneous:
            slabs = dataset.per_task_features
            if slabs is None:
                raise ValidationError("homogeneous result needs per-task slabs")
            slab_p = np.mean([slabs[k] for k in members], axis=0)
            return compute_threshold_targets(
                None,
                y_p,
                y_j,
                report.epsilon,
                X_p=slab_p,
                X_j=slabs[report.candidate],
                X_ag=np.mean([slabs[k] for k in extended], axis=0),
                y_ag=y_ag,
                cluster_id=report.cluster_id,
                candidate=report.candidate,
                members=report.members,
            )
        return compute_threshold_targets(
            dataset.features,
            y_p,
            y_j,
            report.epsilon,
            y_ag=y_ag,
            cluster_id=report.cluster_id,
            candidate=report.candidate,
            members=report.members,
        )

    if report.context is None or report.task_cluster is None:
        raise ValidationError("phase-2 record lacks its working-column context")
    psi = result.task_partition.aggregated_targets[:, report.task_cluster]
    M = _columns_for(report.context, dataset.features)
    p_col = report.context.index(tuple(sorted(report.members)))
    j_col = report.context.index((report.candidate,))
    return compute_threshold_features(
        M,
        psi,
        p_col,
        j_col,
        report.epsilon,
        merged=dataset.features[:, extended].mean(axis=1),
        cluster_id=report.cluster_id,
        candidate=report.candidate,
        members=report.members,
        task_cluster=report.task_cluster,
        context=report.context,
    )


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

_TRACE_KEYS = (
    "phase", "cluster", "candidate", "members", "task_cluster",
    "r_p", "r_j", "r_ag", "var_p", "var_j", "var_ag",
    "varf_p", "varf_j", "varf_ag",
    "threshold1", "threshold2", "r_gap", "epsilon", "accepted", "note", "context",
)


def _report_to_dict(r: ThresholdReport) -> dict:
    return {
        "phase": r.phase,
        "cluster": r.cluster_id,
        "candidate": r.candidate,
        "members": list(r.members),
        "task_cluster": r.task_cluster,
        "r_p": r.r_p,
        "r_j": r.r_j,
        "r_ag": r.r_ag,
        "var_p": r.var_p,
        "var_j": r.var_j,
        "var_ag": r.var_ag,
        "varf_p": r.varf_p,
        "varf_j": r.varf_j,
        "varf_ag": r.varf_ag,
        "threshold1": r.threshold1,
        "threshold2": r.threshold2,
        "r_gap": r.r_gap,
        "epsilon": r.epsilon,
        "accepted": r.accepted,
        "note": r.note,
        "context": None if r.context is None else [list(c) for c in r.context],
    }


def _report_from_dict(d: dict) -> ThresholdReport:
    missing = [k for k in _TRACE_KEYS if k not in d]
    if missing:
        raise ValidationError(f"trace record is missing keys {missing}")
    context = d["context"]
    return ThresholdReport(
        phase=int(d["phase"]),
        cluster_id=int(d["cluster"]),
        candidate=int(d["candidate"]),
        members=tuple(d["members"]),
        epsilon=float(d["epsilon"]),
        accepted=bool(d["accepted"]),
        r_p=d["r_p"],
        r_j=d["r_j"],
        r_ag=d["r_ag"],
        var_p=d["var_p"],
        var_j=d["var_j"],
        var_ag=d["var_ag"],
        varf_p=d["varf_p"],
        varf_j=d["varf_j"],
        varf_ag=d["varf_ag"],
        threshold1=d["threshold1"],
        threshold2=d["threshold2"],
        r_gap=d["r_gap"],
        task_cluster=d["task_cluster"],
        context=None if context is None else tuple(tuple(c) for c in context),
        note=d["note"],
    )


def result_to_json(result: AggregationResult) -> str:
    doc = {
        "seed": result.seed,
        "epsilon1": result.epsilon1,
        "epsilon2": result.epsilon2,
        "task_clusters": [list(c) for c in result.task_partition.clusters],
        "feature_clusters": [
            [list(c) for c in fp.clusters] for fp in result.feature_partitions
        ],
        "trace": [_report_to_dict(r) for r in result.trace],
    }
    return json.dumps(doc, indent=2) + "\n"


def result_from_json(text: str, dataset: Dataset) -> AggregationResult:
    """Rebuild a result against the dataset it was fitted on."""
    doc = json.loads(text)
    for key in ("seed", "epsilon1", "epsilon2", "task_clusters", "feature_clusters",
                "trace"):
        if key not in doc:
            raise ValidationError(f"result document is missing key {key!r}")
    task_partition = TaskPartition.from_clusters(doc["task_clusters"], dataset.targets)
    source = dataset.features
    feature_partitions = tuple(
        FeaturePartition.from_clusters(fc, source) for fc in doc["feature_clusters"]
    )
    trace = tuple(_report_from_dict(d) for d in doc["trace"])
    homogeneous = dataset.per_task_features is not None and all(
        len(c) == 1 for fp in feature_partitions for c in fp.clusters
    )
    return AggregationResult(
        task_partition=task_partition,
        feature_partitions=feature_partitions,
        trace=trace,
        seed=int(doc["seed"]),
        epsilon1=float(doc["epsilon1"]),
        epsilon2=float(doc["epsilon2"]),
        homogeneous=homogeneous,
    )


def write_result(result: AggregationResult, path) -> None:
    Path(path).write_text(result_to_json(result), encoding="utf-8")


def read_result(path, dataset: Dataset) -> AggregationResult:
    return result_from_json(Path(path).read_text(encoding="utf-8"), dataset)
