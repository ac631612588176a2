"""Command-line interface: fit, test, simulate, diagnose.

Input CSVs carry a header row; column 1 is the group identifier,
column 2 the response, and the remaining columns the fixed-effect
covariates. The random-effect design comes from the config (currently
the per-group intercept). Reports are line-delimited JSON records with
floats serialized to 17 significant digits, so reruns with the same
inputs and seed are byte-identical.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
degeneracy.
"""

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import __version__
from .debias import DebiasedInference, PipelineConfig, full_pipeline, p_group
from .design import build_design
from .diagnostics import (
    DEFAULT_C_THRESHOLD,
    default_grid_cells,
    grid_rows,
    run_assumption_cell,
    run_assumption_grid,
)
from .errors import (
    ConfoundedRandomEffectsError,
    ConvergenceError,
    DataError,
    DegenerateColumnError,
    DegenerateFitError,
    PipelineError,
)
from .simulate import (
    ScenarioConfig,
    benchmark_grid,
    report_rows,
    run_comparison,
    run_group_tests,
    run_single_tests,
    scenario_meta,
)


class UsageError(ValueError):
    """Bad flags, bad config keys, missing required settings."""


# ---------------------------------------------------------------------------
# Analysis configuration (file + flags; flags win)
# ---------------------------------------------------------------------------


@dataclass
class AnalysisConfig:
    seed: int
    alpha: float = 0.05
    eta: float = 0.005
    ridge_lambda: Union[str, float] = "auto"
    n_mc: int = 100_000
    fwer: str = "none"
    groups: list = field(default_factory=list)
    random_effect: str = "intercept"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise UsageError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.eta < 0.5:
            raise UsageError(f"eta must lie in (0, 1/2), got {self.eta}")
        if self.n_mc < 1000:
            raise UsageError(f"n-mc must be >= 1000, got {self.n_mc}")
        if self.fwer not in ("none", "bonferroni"):
            raise UsageError(f"fwer must be 'none' or 'bonferroni', got {self.fwer!r}")
        if self.random_effect != "intercept":
            raise UsageError(
                f"unsupported random_effect {self.random_effect!r}; only "
                "'intercept' is available"
            )
        if self.ridge_lambda != "auto":
            try:
                lam = float(self.ridge_lambda)
            except (TypeError, ValueError):
                raise UsageError(
                    f"lambda-ridge must be 'auto' or a number, got {self.ridge_lambda!r}"
                ) from None
            if lam <= 0:
                raise UsageError(f"lambda-ridge must be > 0, got {lam}")
            self.ridge_lambda = lam

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            seed=self.seed,
            alpha=self.alpha,
            eta=self.eta,
            ridge_lambda=self.ridge_lambda,
            n_mc=self.n_mc,
        )


_CONFIG_KEYS = {
    "alpha",
    "eta",
    "ridge_lambda",
    "n_mc",
    "seed",
    "fwer",
    "group",
    "random_effect",
}


def load_config_file(path: Path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment; repeated
    ``group`` keys accumulate."""
    out: dict = {"groups": []}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        if key == "group":
            out["groups"].append(parse_group_spec(value))
        else:
            out[key] = value
    return out


def parse_group_spec(spec: str) -> list[int]:
    """1-based indices with ranges: '3', '1-100', '1,4-6,9'."""
    indices: list[int] = []
    for piece in spec.split(","):
        piece = piece.strip()
        if not piece:
            continue
        try:
            if "-" in piece:
                lo_s, hi_s = piece.split("-", 1)
                lo, hi = int(lo_s), int(hi_s)
                if lo < 1 or hi < lo:
                    raise ValueError
                indices.extend(range(lo - 1, hi))
            else:
                value = int(piece)
                if value < 1:
                    raise ValueError
                indices.append(value - 1)
        except ValueError:
            raise UsageError(
                f"bad group spec {spec!r}: pieces must be 1-based indices or "
                "lo-hi ranges"
            ) from None
    if not indices:
        raise UsageError(f"group spec {spec!r} selects no indices")
    return sorted(set(indices))


def resolve_analysis_config(args) -> AnalysisConfig:
    """Merge config file (if any) with flags; flags override the file."""
    file_values = load_config_file(args.config) if args.config else {"groups": []}
    merged: dict = {}
    casts = {
        "alpha": float,
        "eta": float,
        "n_mc": int,
        "seed": int,
        "fwer": str,
        "ridge_lambda": str,
        "random_effect": str,
    }
    for key, cast in casts.items():
        if key in file_values:
            try:
                merged[key] = cast(file_values[key])
            except ValueError:
                raise UsageError(
                    f"config key {key!r} has bad value {file_values[key]!r}"
                ) from None
    flag_map = {
        "alpha": args.alpha,
        "eta": args.eta,
        "n_mc": args.n_mc,
        "seed": args.seed,
        "fwer": args.fwer,
        "ridge_lambda": args.lambda_ridge,
    }
    for key, value in flag_map.items():
        if value is not None:
            merged[key] = value
    groups = list(file_values.get("groups", []))
    if getattr(args, "group", None):
        groups = [parse_group_spec(spec) for spec in args.group]
    merged["groups"] = groups
    if "seed" not in merged:
        raise UsageError("a seed is required (--seed or 'seed =' in the config file)")
    return AnalysisConfig(**merged)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def read_grouped_csv(path: Path):
    """Read (group_ids, y, x, covariate_names) from the input contract.

    Raises DataError with the offending line and column named.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read input {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if len(header) < 3:
            raise DataError(
                f"{path}: need at least 3 columns (group, response, covariates), "
                f"got {len(header)}"
            )
        names = [name.strip() for name in header[2:]]
        group_ids: list[str] = []
        ys: list[float] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(header)} fields, "
                    f"got {len(row)}"
                )
            group_ids.append(row[0].strip())
            try:
                ys.append(float(row[1]))
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}, column '{header[1].strip()}': "
                    f"cannot parse {row[1]!r} as a number"
                ) from None
            values = []
            for k, cell in enumerate(row[2:]):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}, column '{names[k]}': cannot "
                        f"parse {cell!r} as a number"
                    ) from None
            rows.append(values)
        if not rows:
            raise DataError(f"{path}: no data rows")
    return group_ids, np.array(ys), np.array(rows), names


# ---------------------------------------------------------------------------
# Report serialization (17 significant digits, canonical key order)
# ---------------------------------------------------------------------------


def _fmt_value(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return "null"
        return format(value, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt_value(v) for v in value) + "]"
    if isinstance(value, dict):
        return serialize_record(value)
    raise TypeError(f"cannot serialize {type(value)!r}")


def serialize_record(record: dict) -> str:
    parts = (f"{json.dumps(str(k))}: {_fmt_value(v)}" for k, v in record.items())
    return "{" + ", ".join(parts) + "}"


def write_records(path: Path, records: Sequence[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for record in records:
            fh.write(serialize_record(record) + "\n")
    return path


def write_long_csv(path: Path, rows: Sequence[dict], fields: Sequence[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow(
                [
                    _fmt_value(row.get(name)).strip('"')
                    if row.get(name) is not None
                    else ""
                    for name in fields
                ]
            )
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _config_record(cfg: AnalysisConfig, command: str, extra: dict) -> dict:
    record = {
        "record": "summary",
        "command": command,
        "version": __version__,
        "alpha": cfg.alpha,
        "eta": cfg.eta,
        "ridge_lambda": cfg.ridge_lambda if isinstance(cfg.ridge_lambda, str) else float(cfg.ridge_lambda),
        "n_mc": cfg.n_mc,
        "seed": cfg.seed,
        "fwer": cfg.fwer,
        "random_effect": cfg.random_effect,
    }
    record.update(extra)
    return record


def _fit_design(input_path: Path, cfg: AnalysisConfig):
    group_ids, y, raw_x, names = read_grouped_csv(input_path)
    raw_zu = np.ones((len(group_ids), 1))
    design = build_design(raw_x, raw_zu, group_ids, y=y)
    return design, names


def _run_inference(design, cfg: AnalysisConfig) -> DebiasedInference:
    return full_pipeline(design, cfg.pipeline_config())


def _coefficient_records(
    inference: DebiasedInference, design, names, cfg: AnalysisConfig
) -> list[dict]:
    p = design.p
    scale = design.x_scale
    estimate = inference.estimate
    bonf = np.minimum(1.0, inference.p_single * p)
    threshold_p = inference.p_single if cfg.fwer == "none" else bonf
    records = []
    for j in range(p):
        reportable = bool(inference.ci_reportable[j])
        record = {
            "record": "coefficient",
            "index": j + 1,
            "name": names[j],
            "estimate": float(estimate[j] * scale[j]) if reportable else None,
            "beta_corr": float(inference.beta_corr[j]),
            "p_value": float(inference.p_single[j]),
        }
        if cfg.fwer == "bonferroni":
            record["p_bonferroni"] = float(bonf[j])
        record["significant"] = bool(threshold_p[j] <= cfg.alpha)
        record["ci_lower"] = (
            float(inference.ci_lower[j] * scale[j]) if reportable else None
        )
        record["ci_upper"] = (
            float(inference.ci_upper[j] * scale[j]) if reportable else None
        )
        record["reportable"] = reportable
        records.append(record)
    return records


def _fit_summary_extra(input_path, design, inference) -> dict:
    vc = inference.varcomp
    sc = inference.screening
    return {
        "input": str(input_path),
        "n_obs": design.n_obs,
        "p": design.p,
        "m_groups": design.m_groups,
        "q": design.q,
        "ridge_lambda_resolved": inference.ridge_lambda,
        "lambda_l": sc.lambda_l,
        "rho_z": sc.rho_z,
        "sigma_scaled": sc.sigma_scaled,
        "support_size": int(sc.support_hat.size),
        "sigma2": vc.sigma2_hat,
        "tau2_raw": vc.tau2_hat,
        "tau2": vc.tau2_plugin,
        "rank_xs": vc.rank_xs,
        "rank_xtilde": vc.rank_xtilde,
        "n_unreportable": int(np.sum(~inference.ci_reportable)),
    }


def cmd_fit(input_path: Path, cfg: AnalysisConfig, out_dir: Path) -> Path:
    """Fit the full inference pipeline on a CSV and write the report."""
    design, names = _fit_design(input_path, cfg)
    inference = _run_inference(design, cfg)
    records = [
        _config_record(cfg, "fit", _fit_summary_extra(input_path, design, inference))
    ]
    records.extend(_coefficient_records(inference, design, names, cfg))
    return write_records(Path(out_dir) / "fit_report.jsonl", records)


def cmd_test(input_path: Path, cfg: AnalysisConfig, out_dir: Path) -> Path:
    """Group-null Monte-Carlo tests on a CSV; one record per group."""
    if not cfg.groups:
        raise UsageError("cmd test needs at least one --group (or config 'group =')")
    design, names = _fit_design(input_path, cfg)
    inference = _run_inference(design, cfg)
    for group in cfg.groups:
        if group[-1] >= design.p:
            raise UsageError(
                f"group index {group[-1] + 1} exceeds the number of covariates "
                f"{design.p}"
            )
    records = [
        _config_record(cfg, "test", _fit_summary_extra(input_path, design, inference))
    ]
    streams = np.random.SeedSequence(cfg.seed).spawn(len(cfg.groups))
    for group, stream in zip(cfg.groups, streams):
        result = p_group(
            inference.fit,
            design,
            inference.varcomp.sigma2_hat,
            inference.varcomp.tau2_plugin,
            inference.beta_corr,
            inference.kappa,
            inference.c_slack,
            group,
            n_mc=cfg.n_mc,
            seed=stream,
        )
        records.append(
            {
                "record": "group_test",
                "group": [j + 1 for j in result.group],
                "p_value": result.p_value,
                "mc_stderr": result.mc_stderr,
                "n_mc": result.n_mc,
                "observed_stat": result.observed,
            }
        )
    return write_records(Path(out_dir) / "test_report.jsonl", records)


_LONG_FIELDS = [
    "model",
    "p",
    "q",
    "b",
    "d",
    "m_groups",
    "n_per_group",
    "replicates",
    "seed",
    "metric",
    "value",
    "stderr",
]


def cmd_simulate(args) -> tuple[Path, Path]:
    """Run simulation scenarios; write a JSONL report and a long CSV."""
    model = args.model.upper()
    if model not in ("M1", "M2"):
        raise UsageError(f"--model must be m1 or m2, got {args.model!r}")
    if args.seed is None:
        raise UsageError("--seed is required")
    replicates = args.replicates if args.replicates else 200
    kind = args.kind
    try:
        if args.grid:
            scenarios = benchmark_grid(model, args.seed, replicates)
        else:
            scenarios = [
                ScenarioConfig(
                    seed=args.seed,
                    model=model,
                    p=args.p if args.p else 300,
                    q=args.q if args.q else 1,
                    b=args.b if args.b is not None else 1.0,
                    d=args.d if args.d is not None else 5,
                    n_replicates=replicates,
                    alpha=args.alpha if args.alpha is not None else 0.05,
                )
            ]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows: list[dict] = []
    records: list[dict] = []
    for cfg in scenarios:
        try:
            if kind == "single":
                report = run_single_tests(cfg)
            elif kind == "group":
                report = run_group_tests(cfg)
            elif kind == "comparison":
                report = run_comparison(cfg)
            else:
                raise UsageError(f"unknown --kind {kind!r}")
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        scenario_rows = report_rows(cfg, report)
        rows.extend(scenario_rows)
        records.append(
            {
                "record": "scenario",
                "kind": kind,
                **scenario_meta(cfg),
                "metrics": {
                    row["metric"]: {"value": row["value"], "stderr": row["stderr"]}
                    for row in scenario_rows
                },
            }
        )
    out_dir = Path(args.out_dir)
    summary = {
        "record": "summary",
        "command": "simulate",
        "version": __version__,
        "model": model,
        "kind": kind,
        "grid": bool(args.grid),
        "replicates": replicates,
        "seed": args.seed,
        "n_scenarios": len(scenarios),
    }
    report_path = write_records(
        out_dir / "simulation_report.jsonl", [summary] + records
    )
    csv_path = write_long_csv(out_dir / "simulation_long.csv", rows, _LONG_FIELDS)
    return report_path, csv_path


_DIAG_FIELDS = ["p", "d", "replicates", "seed", "metric", "value", "stderr"]


def cmd_diagnose(args) -> tuple[Path, Path]:
    """Run the design-diagnostic ensemble; write proportion tables."""
    if args.seed is None:
        raise UsageError("--seed is required")
    replicates = args.replicates if args.replicates else 300
    if (args.p is None) != (args.d is None):
        raise UsageError("--p and --d must be given together (or neither)")
    if args.p is not None:
        if args.d < 1 or args.d > args.p:
            raise UsageError(f"--d must lie in [1, p], got {args.d}")
        cells = [(args.p, args.d)]
    else:
        cells = default_grid_cells()
    results = run_assumption_grid(cells, n_replicates=replicates, seed=args.seed)
    rows = grid_rows(results, args.seed)
    out_dir = Path(args.out_dir)
    summary = {
        "record": "summary",
        "command": "diagnose",
        "version": __version__,
        "replicates": replicates,
        "seed": args.seed,
        "c_threshold": DEFAULT_C_THRESHOLD,
        "cells": [[p, d] for p, d in cells],
    }
    cell_records = [
        {
            "record": "cell",
            "p": cell.p,
            "d": cell.d,
            "replicates": cell.n_replicates,
            "prop_t_ir_lt_1": cell.prop_t_ir,
            "prop_t_4_lt_c": cell.prop_t_4,
        }
        for cell in results
    ]
    report_path = write_records(
        out_dir / "diagnostics_report.jsonl", [summary] + cell_records
    )
    csv_path = write_long_csv(out_dir / "diagnostics_long.csv", rows, _DIAG_FIELDS)
    return report_path, csv_path


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_analysis_flags(parser):
    parser.add_argument("--input", required=True, help="input CSV path")
    parser.add_argument("--config", type=Path, help="key = value config file")
    parser.add_argument("--alpha", type=float, help="test level (default 0.05)")
    parser.add_argument("--eta", type=float, help="slack exponent (default 0.005)")
    parser.add_argument(
        "--lambda-ridge",
        dest="lambda_ridge",
        help="ridge penalty, 'auto' (=1/N) or a number",
    )
    parser.add_argument("--n-mc", dest="n_mc", type=int, help="Monte-Carlo draws")
    parser.add_argument("--seed", type=int, help="RNG seed (required)")
    parser.add_argument(
        "--fwer", choices=["none", "bonferroni"], help="family-wise adjustment"
    )
    parser.add_argument("--out-dir", dest="out_dir", default=".", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="lmmridge",
        description=(
            "De-biased ridge inference for high-dimensional grouped regression"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit_p = sub.add_parser("fit", help="per-coefficient tests and intervals")
    _add_analysis_flags(fit_p)

    test_p = sub.add_parser("test", help="group-null Monte-Carlo tests")
    _add_analysis_flags(test_p)
    test_p.add_argument(
        "--group",
        action="append",
        help="1-based indices, e.g. '1-100' or '3,5,9' (repeatable)",
    )

    sim_p = sub.add_parser("simulate", help="run simulation scenarios")
    sim_p.add_argument("--model", default="m1", help="m1 (correlated) or m2 (independent)")
    sim_p.add_argument("--p", type=int, help="number of fixed effects")
    sim_p.add_argument("--q", type=int, help="random effects per group")
    sim_p.add_argument("--b", type=float, help="signal magnitude")
    sim_p.add_argument("--d", type=int, help="number of nonzero coefficients")
    sim_p.add_argument("--replicates", type=int, help="replicates per scenario")
    sim_p.add_argument("--seed", type=int, help="RNG seed (required)")
    sim_p.add_argument("--alpha", type=float, help="test level")
    sim_p.add_argument(
        "--kind",
        choices=["single", "group", "comparison"],
        default="single",
        help="metric family to compute",
    )
    sim_p.add_argument(
        "--grid", action="store_true", help="run the full 16-scenario benchmark grid"
    )
    sim_p.add_argument("--out-dir", dest="out_dir", default=".")

    diag_p = sub.add_parser("diagnose", help="design-assumption proportion tables")
    diag_p.add_argument("--p", type=int, help="fixed effects (single cell)")
    diag_p.add_argument("--d", type=int, help="active coefficients (single cell)")
    diag_p.add_argument("--replicates", type=int, help="replicates per cell")
    diag_p.add_argument("--seed", type=int, help="RNG seed (required)")
    diag_p.add_argument("--out-dir", dest="out_dir", default=".")
    return parser


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, PipelineError) and exc.__cause__ is not None:
        return _exit_code(exc.__cause__)
    if isinstance(
        exc,
        (
            DegenerateColumnError,
            ConfoundedRandomEffectsError,
            DegenerateFitError,
            ConvergenceError,
            PipelineError,
        ),
    ):
        return 3
    if isinstance(exc, DataError):
        return 2
    if isinstance(exc, UsageError):
        return 1
    raise exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in ("fit", "test"):
            cfg = resolve_analysis_config(args)
            out_dir = Path(args.out_dir)
            if args.command == "fit":
                path = cmd_fit(Path(args.input), cfg, out_dir)
                print(f"wrote {path}")
            else:
                path = cmd_test(Path(args.input), cfg, out_dir)
                print(f"wrote {path}")
        elif args.command == "simulate":
            report_path, csv_path = cmd_simulate(args)
            print(f"wrote {report_path}")
            print(f"wrote {csv_path}")
        elif args.command == "diagnose":
            report_path, csv_path = cmd_diagnose(args)
            print(f"wrote {report_path}")
            print(f"wrote {csv_path}")
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (
        DataError,
        DegenerateColumnError,
        ConfoundedRandomEffectsError,
        DegenerateFitError,
        ConvergenceError,
        PipelineError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
