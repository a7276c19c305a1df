"""Batch command line: analyze a CSV dataset or run a simulation preset.

Exit codes: 0 success, 2 configuration/schema error, 3 estimation failure,
4 partial failure (some estimators failed; a report was still written).
"""

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .estimators import EstimatorConfig, estimate
from .exceptions import DoubleweightError, ParseError, SchemaError
from .missing import PartialCovariates
from .simulation import (
    DgpSpec,
    paired_variance_gap,
    run_monte_carlo,
    write_replications_csv,
    write_summary_json,
)
from .variance import bootstrap_variance, sandwich_variance

DEFAULT_MISSING_TOKENS = ("", "NA")
SCHEMA_VERSION = "1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_PARTIAL = 4


@dataclass
class RunConfig:
    """Everything one ``analyze`` invocation needs."""

    input_path: str
    outcome: str
    treatment: str
    covariates: list = field(default_factory=list)
    partial_covariates: list = field(default_factory=list)
    methods: list = field(default_factory=lambda: ["unadj", "x-reg", "x-ps", "dr"])
    variance_methods: list = field(default_factory=lambda: ["sandwich"])
    bootstrap_reps: int = 200
    seed: int = 0
    output_path: str = None
    missing_tokens: tuple = DEFAULT_MISSING_TOKENS
    emodel_design: str = "full-mim"


def _is_missing(cell, tokens):
    return cell.strip().lower() in tokens


def _parse_float(cell, row, column):
    try:
        return float(cell)
    except ValueError:
        raise ParseError(
            f"cannot parse {cell!r} as a number (row {row}, column {column!r})",
            row=row,
            column=column,
        ) from None


def ingest_csv(path, config: RunConfig) -> Dataset:
    """Read a headered CSV into a Dataset per the configured column roles."""
    tokens = {t.strip().lower() for t in config.missing_tokens} | {""}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: no header row") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    col = {name: idx for idx, name in enumerate(header)}
    needed = (
        [config.outcome, config.treatment]
        + list(config.covariates)
        + list(config.partial_covariates)
    )
    for name in needed:
        if name not in col:
            raise SchemaError(f"column {name!r} not found in header {header}")

    n = len(rows)
    y = np.zeros(n)
    r_y = np.zeros(n, dtype=np.int8)
    z = np.zeros(n, dtype=np.int8)
    x = np.zeros((n, len(config.covariates)))
    w = np.zeros((n, len(config.partial_covariates)))
    mask = np.zeros((n, len(config.partial_covariates)), dtype=np.int8)

    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based, counting the header
        if len(row) != len(header):
            raise ParseError(
                f"row {rownum} has {len(row)} fields, expected {len(header)}",
                row=rownum,
            )
        cell = row[col[config.treatment]]
        if _is_missing(cell, tokens):
            raise SchemaError(
                f"missing treatment value (row {rownum}, column {config.treatment!r})",
                row=rownum,
                column=config.treatment,
            )
        zval = _parse_float(cell, rownum, config.treatment)
        if zval not in (0.0, 1.0):
            raise SchemaError(
                f"treatment must be 0 or 1, got {cell!r} "
                f"(row {rownum}, column {config.treatment!r})",
                row=rownum,
                column=config.treatment,
            )
        z[i] = int(zval)
        cell = row[col[config.outcome]]
        if _is_missing(cell, tokens):
            r_y[i] = 0
        else:
            r_y[i] = 1
            y[i] = _parse_float(cell, rownum, config.outcome)
        for j, name in enumerate(config.covariates):
            cell = row[col[name]]
            if _is_missing(cell, tokens):
                raise SchemaError(
                    f"missing value in fully observed covariate "
                    f"(row {rownum}, column {name!r})",
                    row=rownum,
                    column=name,
                )
            x[i, j] = _parse_float(cell, rownum, name)
        for j, name in enumerate(config.partial_covariates):
            cell = row[col[name]]
            if _is_missing(cell, tokens):
                mask[i, j] = 0
            else:
                mask[i, j] = 1
                w[i, j] = _parse_float(cell, rownum, name)

    return Dataset(
        y=y,
        r_y=r_y,
        z=z,
        covariates=PartialCovariates(
            fully_observed=x,
            partial=w,
            observed_mask=mask,
            x_labels=tuple(config.covariates),
            w_labels=tuple(config.partial_covariates),
        ),
    )


def export_csv(ds: Dataset, path, outcome="y", treatment="z"):
    """Inverse of ingest_csv: observed values verbatim, missing cells empty."""
    pc = ds.covariates
    header = [outcome, treatment] + list(pc.x_labels) + list(pc.w_labels)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i in range(ds.n):
            row = [repr(float(ds.y[i])) if ds.r_y[i] == 1 else ""]
            row.append(str(int(ds.z[i])))
            row.extend(repr(float(v)) for v in pc.fully_observed[i])
            for j in range(pc.n_partial):
                row.append(
                    repr(float(pc.partial[i, j])) if pc.observed_mask[i, j] == 1 else ""
                )
            writer.writerow(row)


def _finite_or_none(value):
    if value is None:
        return None
    value = float(value)
    return value if np.isfinite(value) else None


def run_analysis(config: RunConfig):
    """Run every configured estimator and variance method; build the report.

    Returns (report dict, exit code).  The report is written to
    config.output_path when set.
    """
    ds = ingest_csv(config.input_path, config)
    report = {
        "schema_version": SCHEMA_VERSION,
        "input": config.input_path,
        "n": ds.n,
        "n_observed_outcomes": ds.n_observed_outcomes,
        "seed": config.seed,
        "estimators": {},
    }
    failures = 0
    for method_index, method in enumerate(config.methods):
        cfg = EstimatorConfig(
            method=method, emodel_design=config.emodel_design, name=method
        )
        entry = {
            "estimate": None,
            "se": {},
            "ci95": {},
            "diagnostics": {},
            "error": None,
            "error_code": None,
        }
        try:
            fit = estimate(ds, cfg)
            entry["estimate"] = _finite_or_none(fit.tau_hat)
            entry["diagnostics"] = {
                "n_used": fit.n_used,
                **{
                    key: (list(val) if isinstance(val, tuple) else val)
                    for key, val in fit.diagnostics.items()
                },
            }
            for vm in config.variance_methods:
                if vm == "sandwich":
                    rep = sandwich_variance(ds, cfg, fit)
                elif vm == "bootstrap":
                    rep = bootstrap_variance(
                        ds, cfg, config.bootstrap_reps, (config.seed, method_index)
                    )
                else:
                    raise SchemaError(f"unknown variance method {vm!r}")
                entry["se"][vm] = _finite_or_none(rep.se)
                entry["ci95"][vm] = (
                    [float(rep.ci95[0]), float(rep.ci95[1])] if rep.ci95 else None
                )
        except (DoubleweightError, np.linalg.LinAlgError) as exc:
            failures += 1
            entry["error"] = str(exc)
            entry["error_code"] = type(exc).__name__
        report["estimators"][method] = entry

    if config.output_path:
        with open(config.output_path, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
            f.write("\n")
    if failures == len(config.methods):
        return report, EXIT_ESTIMATION
    if failures:
        return report, EXIT_PARTIAL
    return report, EXIT_OK


def _split_csv_arg(value):
    return [part.strip() for part in value.split(",") if part.strip()]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="doubleweight",
        description=(
            "Treatment-effect estimation for randomized experiments with "
            "missing outcomes and partially missing covariates."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="estimate treatment effects from a CSV file")
    pa.add_argument("--data", required=True)
    pa.add_argument("--outcome", required=True)
    pa.add_argument("--treatment", required=True)
    pa.add_argument("--covariates", default="", help="comma-separated column names")
    pa.add_argument("--partial-covariates", default="")
    pa.add_argument("--method", default="unadj,x-reg,x-ps,dr")
    pa.add_argument("--variance", default="sandwich")
    pa.add_argument("--bootstrap-reps", type=int, default=200)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out", default=None)
    pa.add_argument(
        "--missing-tokens",
        default="NA",
        help="comma-separated missing-value tokens; empty cells always count",
    )
    pa.add_argument(
        "--e-design",
        default="full-mim",
        choices=["full-mim", "fully-observed-only", "imputed-only", "empty"],
    )

    ps = sub.add_parser("simulate", help="run a Monte Carlo simulation preset")
    ps.add_argument("--dgp", required=True)
    ps.add_argument("--n", type=int, default=None)
    ps.add_argument("--e", type=float, default=None)
    ps.add_argument("--reps", type=int, default=2000)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out-prefix", default="simulation")
    ps.add_argument("--workers", type=int, default=1)
    return parser


def _simulation_configs(dgp_name):
    if dgp_name == "sinusoidal":
        return [
            EstimatorConfig(method="unadj", name="unadj"),
            EstimatorConfig(method="x-reg", name="x-reg"),
            EstimatorConfig(method="x-ps", name="x-ps"),
        ]
    return [
        EstimatorConfig(method="x-ps", emodel_design="empty", name="unadj"),
        EstimatorConfig(method="x-ps", emodel_design="fully-observed-only", name="x-ps(x)"),
        EstimatorConfig(method="x-ps", emodel_design="imputed-only", name="x-ps(imp)"),
        EstimatorConfig(method="x-ps", emodel_design="full-mim", name="x-ps(mim)"),
    ]


def _ordering_checks(dgp_name, summary):
    """Qualitative precision orderings printed after a simulation run."""
    out = []
    devs = {
        label: summary.tau_hats[:, j][np.isfinite(summary.tau_hats[:, j])]
        for j, label in enumerate(summary.labels)
    }
    if dgp_name == "sinusoidal":
        gap, se = paired_variance_gap(devs["x-reg"], devs["unadj"])
        out.append(("var(x-reg) > var(unadj) by 2 MC SE", gap > 2 * se))
        gap, se = paired_variance_gap(devs["unadj"], devs["x-ps"])
        out.append(("var(x-ps) < var(unadj) by 2 MC SE", gap > 2 * se))
    else:
        order = ["x-ps(mim)", "x-ps(imp)", "x-ps(x)", "unadj"]
        variances = [float(np.var(devs[k], ddof=1)) for k in order]
        out.append(
            ("var(mim) <= var(imp) <= var(x) <= var(unadj)",
             all(a <= b for a, b in zip(variances, variances[1:])))
        )
        for other in order[1:]:
            gap, se = paired_variance_gap(devs[other], devs["x-ps(mim)"])
            out.append((f"var({other}) > var(mim) by 2 MC SE", gap > 2 * se))
    return out


def _cmd_analyze(args):
    config = RunConfig(
        input_path=args.data,
        outcome=args.outcome,
        treatment=args.treatment,
        covariates=_split_csv_arg(args.covariates),
        partial_covariates=_split_csv_arg(args.partial_covariates),
        methods=_split_csv_arg(args.method),
        variance_methods=_split_csv_arg(args.variance),
        bootstrap_reps=args.bootstrap_reps,
        seed=args.seed,
        output_path=args.out,
        missing_tokens=tuple(_split_csv_arg(args.missing_tokens)) or ("",),
        emodel_design=args.e_design,
    )
    for m in config.methods:
        if m not in ("unadj", "x-reg", "x-ps", "dr"):
            print(f"unknown method {m!r}", file=sys.stderr)
            return EXIT_CONFIG
    if args.bootstrap_reps < 2 and "bootstrap" in config.variance_methods:
        print("--bootstrap-reps must be at least 2", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report, code = run_analysis(config)
    except (ParseError, SchemaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not config.output_path:
        json.dump(report, sys.stdout, indent=2, sort_keys=True)
        print()
    return code


def _cmd_simulate(args):
    if args.dgp not in ("sinusoidal", "latent-class"):
        print(
            f"unknown DGP {args.dgp!r}; presets: sinusoidal, latent-class",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    if args.reps < 1:
        print("--reps must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    defaults = {"sinusoidal": (1000, 0.5), "latent-class": (500, 0.2)}
    n_default, e_default = defaults[args.dgp]
    dgp = DgpSpec(
        name=args.dgp,
        n=args.n if args.n is not None else n_default,
        e=args.e if args.e is not None else e_default,
        seed=args.seed,
    )
    summary = run_monte_carlo(
        dgp,
        _simulation_configs(args.dgp),
        reps=args.reps,
        seed=args.seed,
        workers=args.workers,
    )
    json_path = f"{args.out_prefix}_summary.json"
    csv_path = f"{args.out_prefix}_replications.csv"
    write_summary_json(summary, json_path)
    write_replications_csv(summary, csv_path)
    print(f"wrote {json_path} and {csv_path}")
    if args.reps >= 2:
        for desc, ok in _ordering_checks(args.dgp, summary):
            print(f"[{'PASS' if ok else 'FAIL'}] {desc}")
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "analyze":
        return _cmd_analyze(args)
    return _cmd_simulate(args)


if __name__ == "__main__":
    sys.exit(main())
