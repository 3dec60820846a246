"""Core dataset and partition types plus CSV ingestion and centering.

A :class:`Dataset` is an n x D feature matrix paired with an n x L target
matrix.  The homogeneous variant additionally carries one n x D feature slab
per task; in that case ``features`` holds the elementwise mean of the slabs
as a shared view.

All types are immutable after construction and safe to share across
concurrent workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError

__all__ = [
    "Dataset",
    "TaskPartition",
    "FeaturePartition",
    "CenterResult",
    "load_dataset",
    "save_dataset",
    "center",
]

# Aggregated columns must match recomputed means this tightly.
MEAN_CONSISTENCY_TOL = 1e-12


def _locked(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise ValidationError(
            f"{what} contains a non-finite entry at row {bad[0]}, column {bad[1]}"
        )


@dataclass(frozen=True)
class Dataset:
    """Immutable tabular dataset with shared features and one or more targets."""

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...] = ()
    target_names: tuple[str, ...] = ()
    per_task_features: tuple[np.ndarray, ...] | None = None

    def __post_init__(self):
        X = _locked(np.atleast_2d(self.features))
        Y = np.asarray(self.targets, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        Y = _locked(Y)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValidationError("features and targets must be 2-D")
        n, D = X.shape
        if Y.shape[0] != n:
            raise ValidationError(
                f"features have {n} rows but targets have {Y.shape[0]}"
            )
        if n < 2:
            raise ValidationError(f"need at least 2 rows, got {n}")
        if D < 1 or Y.shape[1] < 1:
            raise ValidationError("need at least one feature and one target column")
        _check_finite(X, "features")
        _check_finite(Y, "targets")

        fnames = tuple(self.feature_names) or tuple(f"x{k}" for k in range(D))
        tnames = tuple(self.target_names) or tuple(f"y{k}" for k in range(Y.shape[1]))
        if len(fnames) != D:
            raise ValidationError(f"expected {D} feature names, got {len(fnames)}")
        if len(tnames) != Y.shape[1]:
            raise ValidationError(
                f"expected {Y.shape[1]} target names, got {len(tnames)}"
            )

        slabs = self.per_task_features
        if slabs is not None:
            if len(slabs) != Y.shape[1]:
                raise ValidationError(
                    f"expected {Y.shape[1]} per-task slabs, got {len(slabs)}"
                )
            locked_slabs = []
            for k, slab in enumerate(slabs):
                S = _locked(np.atleast_2d(slab))
                if S.shape != (n, D):
                    raise ValidationError(
                        f"per-task slab {k} has shape {S.shape}, expected {(n, D)}"
                    )
                _check_finite(S, f"per-task slab {k}")
                locked_slabs.append(S)
            slabs = tuple(locked_slabs)

        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", Y)
        object.__setattr__(self, "feature_names", fnames)
        object.__setattr__(self, "target_names", tnames)
        object.__setattr__(self, "per_task_features", slabs)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_tasks(self) -> int:
        return self.targets.shape[1]


def _validate_partition(clusters: Sequence[Sequence[int]], size: int, what: str):
    """Disjointness and full cover over range(size), checked exactly."""
    norm: list[tuple[int, ...]] = []
    seen: set[int] = set()
    for c in clusters:
        members = tuple(int(i) for i in c)
        if not members:
            raise ValidationError(f"{what}: empty cluster")
        for i in members:
            if i < 0 or i >= size:
                raise ValidationError(f"{what}: index {i} out of range [0, {size})")
            if i in seen:
                raise ValidationError(f"{what}: index {i} appears in two clusters")
            seen.add(i)
        norm.append(members)
    if len(seen) != size:
        missing = sorted(set(range(size)) - seen)
        raise ValidationError(f"{what}: indices {missing} are not covered")
    return tuple(norm)


def _cluster_means(matrix: np.ndarray, clusters) -> np.ndarray:
    cols = [matrix[:, list(c)].mean(axis=1) for c in clusters]
    return np.column_stack(cols)


def _check_mean_consistency(stored: np.ndarray, matrix: np.ndarray, clusters, what: str):
    recomputed = _cluster_means(matrix, clusters)
    if stored.shape != recomputed.shape:
        raise ValidationError(
            f"{what}: aggregated columns have shape {stored.shape}, "
            f"expected {recomputed.shape}"
        )
    err = np.max(np.abs(stored - recomputed))
    scale = 1.0 + np.max(np.abs(recomputed), initial=0.0)
    if err > MEAN_CONSISTENCY_TOL * scale:
        raise ValidationError(
            f"{what}: aggregated column deviates from recomputed mean by {err:g}"
        )


@dataclass(frozen=True)
class TaskPartition:
    """Disjoint cover of task indices with the mean target column per cluster."""

    clusters: tuple[tuple[int, ...], ...]
    aggregated_targets: np.ndarray
    _source: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "aggregated_targets", _locked(self.aggregated_targets))
        if self._source is not None:
            size = self._source.shape[1]
            norm = _validate_partition(self.clusters, size, "task partition")
            object.__setattr__(self, "clusters", norm)
            _check_mean_consistency(
                self.aggregated_targets, self._source, norm, "task partition"
            )
            object.__setattr__(self, "_source", None)
        else:
            object.__setattr__(
                self, "clusters", tuple(tuple(int(i) for i in c) for c in self.clusters)
            )

    @classmethod
    def from_clusters(cls, clusters, targets: np.ndarray) -> "TaskPartition":
        Y = np.asarray(targets, dtype=float)
        norm = _validate_partition(clusters, Y.shape[1], "task partition")
        return cls(norm, _cluster_means(Y, norm), _source=Y)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


@dataclass(frozen=True)
class FeaturePartition:
    """Disjoint cover of feature indices with the mean feature column per cluster."""

    clusters: tuple[tuple[int, ...], ...]
    aggregated_features: np.ndarray
    _source: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "aggregated_features", _locked(self.aggregated_features)
        )
        if self._source is not None:
            size = self._source.shape[1]
            norm = _validate_partition(self.clusters, size, "feature partition")
            object.__setattr__(self, "clusters", norm)
            _check_mean_consistency(
                self.aggregated_features, self._source, norm, "feature partition"
            )
            object.__setattr__(self, "_source", None)
        else:
            object.__setattr__(
                self, "clusters", tuple(tuple(int(i) for i in c) for c in self.clusters)
            )

    @classmethod
    def from_clusters(cls, clusters, features: np.ndarray) -> "FeaturePartition":
        X = np.asarray(features, dtype=float)
        norm = _validate_partition(clusters, X.shape[1], "feature partition")
        return cls(norm, _cluster_means(X, norm), _source=X)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


# ---------------------------------------------------------------------------
# Centering
# ---------------------------------------------------------------------------


def _center_columns(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two-pass mean removal so the residual mean is ~ulp even for large columns."""
    m1 = a.mean(axis=0)
    out = a - m1
    m2 = out.mean(axis=0)
    out -= m2
    return out, m1 + m2


@dataclass(frozen=True)
class CenterResult:
    """A centered dataset plus the column means that were removed.

    ``transform`` centers another dataset (typically a test split) with the
    means captured here, which keeps train and test in the same coordinates.
    ``constant_columns`` labels the zero-variance columns that centering
    turned into all-zero columns.
    """

    dataset: Dataset
    feature_means: np.ndarray
    target_means: np.ndarray
    per_task_feature_means: tuple[np.ndarray, ...] | None
    constant_columns: tuple[str, ...]

    def transform(self, other: Dataset) -> Dataset:
        if other.n_features != len(self.feature_means):
            raise ValidationError(
                f"dataset has {other.n_features} features, expected "
                f"{len(self.feature_means)}"
            )
        if other.n_tasks != len(self.target_means):
            raise ValidationError(
                f"dataset has {other.n_tasks} targets, expected "
                f"{len(self.target_means)}"
            )
        slabs = None
        if other.per_task_features is not None:
            if self.per_task_feature_means is None:
                raise ValidationError("centering was fit without per-task slabs")
            slabs = tuple(
                slab - m
                for slab, m in zip(other.per_task_features, self.per_task_feature_means)
            )
        return Dataset(
            features=other.features - self.feature_means,
            targets=other.targets - self.target_means,
            feature_names=other.feature_names,
            target_names=other.target_names,
            per_task_features=slabs,
        )


def center(dataset: Dataset) -> CenterResult:
    """Remove column means from every feature and target column.

    Constant columns become all-zero and are reported in
    ``constant_columns`` rather than treated as an error; downstream fits
    handle them through the minimum-norm policy.
    """
    X, fmeans = _center_columns(dataset.features)
    Y, tmeans = _center_columns(dataset.targets)

    constant: list[str] = []
    for k in range(X.shape[1]):
        if np.all(X[:, k] == X[0, k]):
            constant.append(f"feature:{dataset.feature_names[k]}")
    for k in range(Y.shape[1]):
        if np.all(Y[:, k] == Y[0, k]):
            constant.append(f"target:{dataset.target_names[k]}")

    slab_means = None
    slabs = None
    if dataset.per_task_features is not None:
        centered_slabs = []
        means = []
        for t, slab in enumerate(dataset.per_task_features):
            S, m = _center_columns(slab)
            centered_slabs.append(S)
            means.append(m)
            for k in range(S.shape[1]):
                if np.all(S[:, k] == S[0, k]):
                    constant.append(
                        f"task{t}_feature:{dataset.feature_names[k]}"
                    )
        slabs = tuple(centered_slabs)
        slab_means = tuple(means)

    centered = Dataset(
        features=X,
        targets=Y,
        feature_names=dataset.feature_names,
        target_names=dataset.target_names,
        per_task_features=slabs,
    )
    return CenterResult(
        dataset=centered,
        feature_means=_locked(fmeans),
        target_means=_locked(tmeans),
        per_task_feature_means=slab_means,
        constant_columns=tuple(constant),
    )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

_SHARED_ROLES = {"feature", "target", "ignore"}


def _parse_cell(cell: str, line: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ValidationError(
            f"line {line}, column {column!r}: non-numeric value {cell.strip()!r}"
        ) from None
    if not math.isfinite(value):
        raise ValidationError(
            f"line {line}, column {column!r}: non-finite value {cell.strip()!r}"
        )
    return value


def load_dataset(path, schema: Mapping[str, str]) -> Dataset:
    """Load a CSV file into a validated :class:`Dataset`.

    ``schema`` maps column names to roles: ``"feature"``, ``"target"``,
    ``"ignore"``, or ``"feature:<target name>"`` for per-task feature slabs
    (homogeneous variant).  Header columns absent from the schema are
    ignored; schema entries naming absent columns are an error.  Column
    order in the file is preserved.
    """
    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")

    with p.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{p}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise ValidationError(f"{p}: duplicate column names in header")

        unknown = sorted(set(schema) - set(header))
        if unknown:
            raise ValidationError(
                f"schema names columns not present in {p}: {unknown}"
            )

        roles: dict[str, str] = {}
        for name in header:
            role = schema.get(name, "ignore")
            if role not in _SHARED_ROLES and not role.startswith("feature:"):
                raise ValidationError(
                    f"column {name!r}: unknown role {role!r}"
                )
            roles[name] = role

        feature_cols = [c for c in header if roles[c] == "feature"]
        target_cols = [c for c in header if roles[c] == "target"]
        slab_cols: dict[str, list[str]] = {}
        for c in header:
            if roles[c].startswith("feature:"):
                owner = roles[c].split(":", 1)[1]
                slab_cols.setdefault(owner, []).append(c)

        if slab_cols:
            if feature_cols:
                raise ValidationError(
                    "cannot mix shared 'feature' columns with per-task "
                    "'feature:<target>' columns"
                )
            owners = set(slab_cols)
            targets_set = set(target_cols)
            if owners != targets_set:
                raise ValidationError(
                    f"per-task feature owners {sorted(owners)} do not match "
                    f"target columns {sorted(targets_set)}"
                )
            widths = {t: len(cols) for t, cols in slab_cols.items()}
            if len(set(widths.values())) != 1:
                raise ValidationError(
                    f"per-task slabs must have equal column counts, got {widths}"
                )
        if not feature_cols and not slab_cols:
            raise ValidationError("schema selects zero feature columns")
        if not target_cols:
            raise ValidationError("schema selects zero target columns")

        index = {name: k for k, name in enumerate(header)}
        rows: list[list[float]] = []
        for raw in reader:
            line = reader.line_num
            if len(raw) != len(header):
                raise ValidationError(
                    f"line {line}: expected {len(header)} fields, got {len(raw)}"
                )
            rows.append(
                [_parse_cell(cell, line, header[k]) for k, cell in enumerate(raw)]
            )

    if len(rows) < 2:
        raise ValidationError(f"{p}: need at least 2 data rows, got {len(rows)}")
    table = np.asarray(rows, dtype=float)

    targets = table[:, [index[c] for c in target_cols]]
    if slab_cols:
        slabs = tuple(
            table[:, [index[c] for c in slab_cols[t]]] for t in target_cols
        )
        features = np.mean(np.stack(slabs), axis=0)
        feature_names = tuple(slab_cols[target_cols[0]])
        return Dataset(
            features=features,
            targets=targets,
            feature_names=feature_names,
            target_names=tuple(target_cols),
            per_task_features=slabs,
        )

    features = table[:, [index[c] for c in feature_cols]]
    return Dataset(
        features=features,
        targets=targets,
        feature_names=tuple(feature_cols),
        target_names=tuple(target_cols),
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write the shared feature view and targets as CSV (exact float repr)."""
    p = Path(path)
    with p.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + list(dataset.target_names))
        for i in range(dataset.n_samples):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [repr(float(v)) for v in dataset.targets[i]]
            writer.writerow(row)


def schema_for(dataset: Dataset) -> dict[str, str]:
    """Schema that reloads a file written by :func:`save_dataset`."""
    schema = {name: "feature" for name in dataset.feature_names}
    schema.update({name: "target" for name in dataset.target_names})
    return schema
