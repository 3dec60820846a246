"""Command-line entry point: aggregate, synth, sweep, and verify subcommands.

Every command is a pure function of its input files, flags, and seed, and
writes byte-identical outputs on repeated invocation.  Exit codes: 0 success,
1 validation (including I/O), 2 numerical, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import linstats
from .aggregation import (
    apply_partition,
    nonlin_ctfa,
    nonlin_ctfa_homogeneous,
    result_to_json,
)
from .checks import VerifyBudget, run_checks
from .data import center, load_dataset, save_dataset
from .errors import NumericalError, ValidationError
from .synth import SynthConfig, generate, sweep

DEFAULT_SEED = 0

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_VERIFY = 3


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tasks", type=int, default=10, help="number of targets")
    p.add_argument("--features", type=int, default=100, help="number of features")
    p.add_argument("--samples", type=int, default=250, help="training rows")
    p.add_argument("--test-samples", type=int, default=250, help="test rows")
    p.add_argument("--sigma", type=float, default=10.0, help="noise standard deviation")
    p.add_argument("--feature-std", type=float, default=2.0,
                   help="feature standard deviation")
    p.add_argument("--epsilon1", type=float, default=0.0,
                   help="target-merge tolerance")
    p.add_argument("--epsilon2", type=float, default=1e-4,
                   help="feature-merge tolerance")
    p.add_argument("--repeats", type=int, default=10, help="seeds per sweep point")


def _config_from_args(args) -> SynthConfig:
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        allowed = {f.name for f in dataclass_fields(SynthConfig)}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise ValidationError(f"unknown config keys {unknown}")
        if "noise_correlation" in doc and doc["noise_correlation"] is not None:
            doc["noise_correlation"] = np.asarray(doc["noise_correlation"], float)
        if "coefficient_intervals" in doc:
            doc["coefficient_intervals"] = tuple(
                tuple(pair) for pair in doc["coefficient_intervals"]
            )
        return SynthConfig(**doc)
    return SynthConfig(
        n_tasks=args.tasks,
        n_features=args.features,
        n_train=args.samples,
        n_test=args.test_samples,
        sigma=args.sigma,
        feature_std=args.feature_std,
        epsilon1=args.epsilon1,
        epsilon2=args.epsilon2,
        n_repeats=args.repeats,
    )


def _build_schema(header_targets: list[str], ignore: list[str], homogeneous: bool,
                  path) -> dict[str, str]:
    """Targets and ignores are named; the rest of the header become features.

    In homogeneous mode feature columns must be named ``<feature>@<target>``
    and are routed to that target's slab.
    """
    import csv

    p = Path(path)
    if not p.exists():
        raise ValidationError(f"no such file: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        try:
            header = [h.strip() for h in next(csv.reader(fh))]
        except StopIteration:
            raise ValidationError(f"{p}: empty file") from None
    schema: dict[str, str] = {}
    targets = set(header_targets)
    ignores = set(ignore)
    missing = sorted((targets | ignores) - set(header))
    if missing:
        raise ValidationError(f"columns {missing} not present in {p}")
    for name in header:
        if name in targets:
            schema[name] = "target"
        elif name in ignores:
            schema[name] = "ignore"
        elif homogeneous:
            if "@" not in name:
                raise ValidationError(
                    f"homogeneous mode: feature column {name!r} must be named "
                    "<feature>@<target>"
                )
            owner = name.rsplit("@", 1)[1]
            if owner not in targets:
                raise ValidationError(
                    f"column {name!r} names unknown target {owner!r}"
                )
            schema[name] = f"feature:{owner}"
        else:
            schema[name] = "feature"
    return schema


def _in_sample_r2(pred: np.ndarray, actual: np.ndarray) -> float:
    err = linstats.mse(pred, actual)
    dev = actual - actual.mean()
    denom = float(dev @ dev) / len(actual)
    return 1.0 - err / denom if denom > 0 else 0.0


def cmd_aggregate(args) -> int:
    targets = [t for t in args.targets.split(",") if t]
    ignore = [c for c in (args.ignore or "").split(",") if c]
    schema = _build_schema(targets, ignore, args.homogeneous, args.input)
    dataset = load_dataset(args.input, schema)
    centering = center(dataset)
    centered = centering.dataset

    if args.homogeneous:
        eps = args.epsilon if args.epsilon is not None else args.epsilon1
        result = nonlin_ctfa_homogeneous(centered, eps, args.seed)
    else:
        result = nonlin_ctfa(centered, args.epsilon1, args.epsilon2, args.seed)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result_to_json(result), encoding="utf-8")

    reduced = apply_partition(centered, result)
    if args.csv:
        import csv as _csv

        for ci, (y, X) in enumerate(reduced):
            with (out / f"reduced_cluster{ci}.csv").open(
                "w", newline="", encoding="utf-8"
            ) as fh:
                writer = _csv.writer(fh)
                writer.writerow(
                    [f"phi{k}" for k in range(X.shape[1])] + [f"y_cluster{ci}"]
                )
                for r in range(X.shape[0]):
                    writer.writerow(
                        [repr(float(v)) for v in X[r]] + [repr(float(y[r]))]
                    )

    lines = [
        f"tasks: {centered.n_tasks} -> {result.task_partition.n_clusters} clusters",
    ]
    for ci, cluster in enumerate(result.task_partition.clusters):
        names = [centered.target_names[t] for t in cluster]
        d_red = result.feature_partitions[ci].n_clusters
        lines.append(
            f"  cluster {ci}: {len(cluster)} targets ({', '.join(names)}), "
            f"{d_red} reduced features"
        )
    lines.append("in-sample R^2 per task (single-task -> aggregated):")
    for ci, (y, X) in enumerate(reduced):
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        pred = X @ coef
        for t in result.task_partition.clusters[ci]:
            actual = centered.targets[:, t]
            if centered.per_task_features is not None:
                single_X = centered.per_task_features[t]
            else:
                single_X = centered.features
            single_coef, *_ = np.linalg.lstsq(single_X, actual, rcond=None)
            before = _in_sample_r2(single_X @ single_coef, actual)
            after = _in_sample_r2(pred, actual)
            lines.append(
                f"  {centered.target_names[t]}: {before:.4f} -> {after:.4f}"
            )
    if centering.constant_columns:
        lines.append(f"constant columns: {', '.join(centering.constant_columns)}")
    summary = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    if not args.quiet:
        sys.stdout.write(summary)
    return EXIT_OK


def cmd_synth(args) -> int:
    config = _config_from_args(args)
    train, test, truth = generate(config, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    doc = {
        "seed": args.seed,
        "sigma": config.sigma,
        "feature_std": config.feature_std,
        "coefficients": [[float(v) for v in row] for row in truth.coefficients],
    }
    (out / "truth.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if not args.quiet:
        print(
            f"wrote {out / 'train.csv'} ({config.n_train} rows), "
            f"{out / 'test.csv'} ({config.n_test} rows)"
        )
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    values = [v for v in args.values.split(",") if v]
    if not values:
        raise ValidationError("--values must list at least one value")
    table = sweep(config, args.axis, values, base_seed=args.seed, jobs=args.jobs)
    table.to_csv(args.out)
    if not args.quiet:
        print(f"wrote {args.out} ({len(table.rows)} rows)")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = [n for n in (args.checks or "").split(",") if n] or None
    if args.quick:
        budget = VerifyBudget.quick()
    else:
        budget = VerifyBudget()
    overrides = {}
    if args.replicates is not None:
        overrides["replicates"] = args.replicates
    if args.n_eval is not None:
        overrides["n_eval"] = args.n_eval
    if args.n_pop is not None:
        overrides["n_pop"] = args.n_pop
    if args.draws is not None:
        overrides["draws"] = args.draws
    if overrides:
        from dataclasses import replace as dc_replace

        budget = dc_replace(budget, **overrides)

    results = run_checks(names, budget, seed=args.seed, jobs=args.jobs)
    doc = {
        "all_passed": all(r.passed for r in results),
        "checks": [r.to_dict() for r in results],
    }
    Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(
            f"{status} {r.name}: theoretical={r.theoretical:.6g} "
            f"empirical={r.empirical:.6g} se={r.standard_error:.3g}"
        )
    if not doc["all_passed"]:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtaggr",
        description=(
            "Two-phase mean aggregation of targets and features for "
            "multi-task linear regression."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("aggregate", help="cluster targets, then features, from a CSV")
    p.add_argument("--input", required=True, help="CSV file with a header row")
    p.add_argument("--targets", required=True,
                   help="comma-separated target column names")
    p.add_argument("--ignore", default="", help="comma-separated columns to drop")
    p.add_argument("--homogeneous", action="store_true",
                   help="per-task feature slabs named <feature>@<target>")
    p.add_argument("--epsilon1", type=float, default=0.0)
    p.add_argument("--epsilon2", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=None,
                   help="tolerance for the homogeneous variant")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--csv", action=argparse.BooleanOptionalAction, default=True,
                   help="also write one reduced CSV per cluster")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--config", default=None, help="JSON file of generator settings")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out-dir", default="out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sweep", help="re-run the benchmark along one axis")
    p.add_argument("--axis", required=True,
                   help="one of n_train, D, L, sigma, epsilon1, epsilon2")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--config", default=None, help="JSON file of generator settings")
    _add_config_flags(p)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the closed-form verification suite")
    p.add_argument("--checks", default="",
                   help="comma-separated check names (default: all)")
    p.add_argument("--quick", action="store_true", help="reduced sampling budgets")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--n-eval", type=int, default=None)
    p.add_argument("--n-pop", type=int, default=None)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="verification_report.json")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; map onto the validation code.
        return EXIT_VALIDATION if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
