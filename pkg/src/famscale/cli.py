"""Command-line front end.

Subcommands bind ingestion, fitting, and analysis into reproducible runs:
identical inputs and seed produce byte-identical outputs except for a single
``created_at`` timestamp per file. Every output embeds a run manifest with
the toolkit version, the seed, and a digest of the fully resolved
configuration.

Exit codes: 0 success, 2 input/validation error, 3 numerical/fit error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import __version__
from .analysis import (
    compute_frontier,
    efficiency_leverage,
    el_curve,
    isoloss_contour,
    plan_isoflop_group,
)
from .branch import BranchParams, fit_branch, predict_branch_loss
from .config import (
    archs_from,
    branch_fit_config_from,
    config_digest,
    fit_config_from,
    load_config,
)
from .familial import FamilialParams, fit, predict_loss
from .fitting import FitError, FitReport
from .flops import ComputeBudget
from .records import (
    ValidationError,
    branches_to_csv,
    load_branches,
    load_runs,
    runs_to_csv,
    synth_branches,
    synth_runs,
)

#: Environment variable selecting the worker-thread count. Results are
#: independent of its value by construction; grid starts are evaluated in a
#: fixed order and reduced deterministically.
THREADS_ENV_VAR = "FAMSCALE_THREADS"


@dataclass(frozen=True)
class RunManifest:
    """Provenance block embedded in every output file."""

    subcommand: str
    config_path: str | None
    input_paths: tuple[str, ...]
    output_path: str
    seed: int
    toolkit_version: str
    config_digest: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "subcommand": self.subcommand,
            "config_path": self.config_path,
            "input_paths": list(self.input_paths),
            "output_path": self.output_path,
            "seed": self.seed,
            "toolkit_version": self.toolkit_version,
            "config_digest": self.config_digest,
        }


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 1")
    return value


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _write_json(path: str, payload: Mapping[str, Any], manifest: RunManifest) -> None:
    doc = {"manifest": manifest.to_dict(), "created_at": _now(), **payload}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _csv_preamble(manifest: RunManifest) -> list[str]:
    return [
        "manifest: " + json.dumps(manifest.to_dict(), sort_keys=True),
        "created_at: " + _now(),
    ]


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence[str]], manifest: RunManifest) -> None:
    lines = [f"# {p}" for p in _csv_preamble(manifest)]
    lines.append(",".join(header))
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_bytes(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return p.read_bytes()


def _load_params_file(path: str) -> FamilialParams:
    doc = json.loads(_read_bytes(path).decode("utf-8"))
    if isinstance(doc, dict) and "params" in doc and isinstance(doc["params"], dict):
        inner = doc["params"].get("linear", doc["params"])
    else:
        inner = doc
    try:
        return FamilialParams(
            E=float(inner["E"]),
            A=float(inner["A"]),
            B=float(inner["B"]),
            alpha=float(inner["alpha"]),
            beta=float(inner["beta"]),
            gamma=float(inner["gamma"]),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"params file {path} lacks familial coefficients: {exc}") from None


def _make_manifest(args, subcommand: str, inputs: Sequence[str], out: str, seed: int, resolved) -> RunManifest:
    return RunManifest(
        subcommand=subcommand,
        config_path=getattr(args, "config", None),
        input_paths=tuple(inputs),
        output_path=out,
        seed=seed,
        toolkit_version=__version__,
        config_digest=config_digest(resolved),
    )


def _resolved_with_flags(args) -> dict[str, Any]:
    resolved = load_config(getattr(args, "config", None))
    kappa = getattr(args, "kappa", None)
    if kappa is not None:
        resolved["exit_overhead_fraction"] = float(kappa)
    max_starts = getattr(args, "max_starts", None)
    if max_starts is not None:
        resolved["fit"]["max_starts"] = int(max_starts)
        resolved["branch_fit"]["max_starts"] = int(max_starts)
    seed = getattr(args, "seed", None)
    if seed is not None:
        resolved["fit"]["seed"] = int(seed)
        resolved["branch_fit"]["seed"] = int(seed)
        resolved["synth"] = dict(resolved["synth"])
        resolved["synth"]["seed"] = int(seed)
    return resolved


def _holdout_metrics_runs(params: FamilialParams, records) -> dict[str, Any]:
    rel = [
        abs(predict_loss(params, r.n_params, r.tokens, r.granularity) - r.loss) / r.loss
        for r in records
    ]
    return {
        "count": len(rel),
        "max_rel_error": max(rel),
        "mean_rel_error": sum(rel) / len(rel),
    }


def _holdout_metrics_branches(params: BranchParams, records) -> dict[str, Any]:
    rel = [
        abs(
            predict_branch_loss(params, r.dense_loss, r.upstream_count, r.downstream_count, r.tokens)
            - r.branch_loss
        )
        / r.branch_loss
        for r in records
    ]
    return {
        "count": len(rel),
        "max_rel_error": max(rel),
        "mean_rel_error": sum(rel) / len(rel),
    }


def _residuals_csv(out_json_path: str, report: FitReport, manifest: RunManifest) -> str:
    path = str(Path(out_json_path).with_suffix("")) + "_residuals.csv"
    rows = [(str(i), _fmt(r)) for i, r in report.residuals]
    _write_csv(path, ("record_index", "log_residual"), rows, manifest)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fit_familial(args) -> int:
    resolved = _resolved_with_flags(args)
    config = fit_config_from(resolved)
    records = load_runs(_read_bytes(args.runs), args.format)
    if not records:
        raise ValueError(f"no records in {args.runs}")

    report = fit(records, config)
    manifest = _make_manifest(args, "fit-familial", [args.runs], args.out, config.seed, resolved)

    holdout = None
    if args.holdout:
        holdout_records = load_runs(_read_bytes(args.holdout), args.format)
        holdout = _holdout_metrics_runs(report.best, holdout_records)
        manifest = _make_manifest(
            args, "fit-familial", [args.runs, args.holdout], args.out, config.seed, resolved
        )

    payload = {
        "law": "familial",
        "params": {
            "linear": report.best.as_dict(),
            "log": dict(zip(report.param_names, report.best_point)),
        },
        "holdout": holdout,
        "config_echo": resolved,
        **report.to_dict(),
    }
    _write_json(args.out, payload, manifest)
    _residuals_csv(args.out, report, manifest)

    p = report.best
    print(
        f"fitted familial law: E={p.E:.6g} A={p.A:.6g} B={p.B:.6g} "
        f"alpha={p.alpha:.6g} beta={p.beta:.6g} gamma={p.gamma:.6g}"
    )
    print(f"objective: {report.best_objective:.10g}")
    if report.warnings:
        for w in report.warnings:
            print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_fit_branch(args) -> int:
    resolved = _resolved_with_flags(args)
    config = branch_fit_config_from(resolved)
    records = load_branches(_read_bytes(args.branches), args.format)
    if not records:
        raise ValueError(f"no records in {args.branches}")

    report = fit_branch(records, config)
    inputs = [args.branches]
    holdout = None
    if args.holdout:
        holdout_records = load_branches(_read_bytes(args.holdout), args.format)
        holdout = _holdout_metrics_branches(report.best, holdout_records)
        inputs.append(args.holdout)
    manifest = _make_manifest(args, "fit-branch", inputs, args.out, config.seed, resolved)

    payload = {
        "law": "branch",
        "params": report.best.as_dict(),
        "holdout": holdout,
        "config_echo": resolved,
        **report.to_dict(),
    }
    _write_json(args.out, payload, manifest)
    _residuals_csv(args.out, report, manifest)

    p = report.best
    print(
        f"fitted branch law: alpha_b={p.alpha_b:.6g} beta_b={p.beta_b:.6g} "
        f"d_d={p.d_d:.6g} a_exp={p.a_exp:.6g}"
    )
    print(
        "identifiable products: "
        f"alpha_b*d_d^a={report.extras['alpha_b_dd_a']:.6g} "
        f"beta_b*d_d^a={report.extras['beta_b_dd_a']:.6g}"
    )
    print(f"objective: {report.best_objective:.10g}")
    if report.warnings:
        for w in report.warnings:
            print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    params = _load_params_file(args.params)
    loss = predict_loss(params, args.n, args.d, args.g)
    print(f"{loss:.10g}")
    return 0


def cmd_frontier(args) -> int:
    resolved = _resolved_with_flags(args)
    params = _load_params_file(args.params)
    granularity = args.granularity if args.granularity is not None else int(
        resolved["frontier"]["granularity"]
    )
    if args.flops:
        flops_values = sorted(float(x) for x in args.flops.split(","))
    else:
        flops_values = [float(x) for x in resolved["frontier"]["flops"]]
    kappa = float(resolved["exit_overhead_fraction"])

    points = compute_frontier(params, granularity, flops_values, kappa)
    manifest = _make_manifest(args, "frontier", [args.params], args.out, 0, resolved)

    rows = [
        (_fmt(p.flops), _fmt(p.n_opt), _fmt(p.d_opt), _fmt(p.loss_opt), str(p.granularity),
         str(int(p.bracket_edge)))
        for p in points
    ]
    _write_csv(
        args.out,
        ("flops", "n_opt", "d_opt", "loss_opt", "granularity", "bracket_edge"),
        rows,
        manifest,
    )
    _write_json(
        str(Path(args.out).with_suffix(".json")),
        {
            "kind": "frontier",
            "params": params.as_dict(),
            "exit_overhead_fraction": kappa,
            "granularity": granularity,
            "points": [
                {
                    "flops": p.flops,
                    "n_opt": p.n_opt,
                    "d_opt": p.d_opt,
                    "loss_opt": p.loss_opt,
                    "granularity": p.granularity,
                    "bracket_edge": p.bracket_edge,
                }
                for p in points
            ],
        },
        manifest,
    )
    if args.contour_targets:
        targets = sorted(float(x) for x in args.contour_targets.split(","))
        n_values = np.logspace(6, 13, args.contour_points)
        rows = []
        for target in targets:
            for n, d in isoloss_contour(params, granularity, target, n_values):
                rows.append(
                    (_fmt(target), _fmt(n), _fmt(d) if d is not None else "",
                     str(int(d is not None)))
                )
        _write_csv(
            str(Path(args.out).with_suffix("")) + "_contours.csv",
            ("target_loss", "n_params", "tokens", "feasible"),
            rows,
            manifest,
        )
    for p in points:
        print(f"C={p.flops:.3e}  N*={p.n_opt:.6e}  D*={p.d_opt:.6e}  L*={p.loss_opt:.6f}")
    return 0


def cmd_el(args) -> int:
    resolved = _resolved_with_flags(args)
    params = _load_params_file(args.params)
    section = resolved["el"]
    granularities = (
        [int(x) for x in args.granularities.split(",")]
        if args.granularities
        else [int(x) for x in section["granularities"]]
    )
    lo = args.flops_lo if args.flops_lo is not None else float(section["flops_lo"])
    hi = args.flops_hi if args.flops_hi is not None else float(section["flops_hi"])
    ppd = args.points_per_decade if args.points_per_decade is not None else int(
        section["points_per_decade"]
    )
    size_policy = args.size_policy or str(section["size_policy"])
    kappa = float(resolved["exit_overhead_fraction"])

    points = el_curve(params, granularities, (lo, hi), ppd, kappa, size_policy)
    manifest = _make_manifest(args, "el", [args.params], args.out, 0, resolved)

    header = ("flops", "granularity", "dense_avg_loss", "familial_loss", "el", "bracket_edge")

    def row(p) -> tuple[str, ...]:
        return (
            _fmt(p.flops), str(p.granularity), _fmt(p.dense_avg_loss),
            _fmt(p.familial_loss), _fmt(p.el), str(int(p.bracket_edge)),
        )

    _write_csv(args.out, header, [row(p) for p in points], manifest)
    out_base = Path(args.out)
    for g in granularities:
        per_g = [p for p in points if p.granularity == g]
        path = str(out_base.with_suffix("")) + f"_g{g}.csv"
        _write_csv(path, header, [row(p) for p in per_g], manifest)
    _write_json(
        str(out_base.with_suffix(".json")),
        {
            "kind": "el_curve",
            "params": params.as_dict(),
            "exit_overhead_fraction": kappa,
            "size_policy": size_policy,
            "granularities": granularities,
            "flops_range": [lo, hi],
            "points_per_decade": ppd,
            "points": [
                {
                    "flops": p.flops,
                    "granularity": p.granularity,
                    "dense_avg_loss": p.dense_avg_loss,
                    "familial_loss": p.familial_loss,
                    "el": p.el,
                    "bracket_edge": p.bracket_edge,
                }
                for p in points
            ],
        },
        manifest,
    )
    print(f"wrote {len(points)} EL points for G in {granularities}")
    return 0


def cmd_plan(args) -> int:
    resolved = _resolved_with_flags(args)
    archs = archs_from(resolved)
    kappa = float(resolved["exit_overhead_fraction"])
    budget = ComputeBudget(total_flops=float(args.flops), group_label=f"C={args.flops:g}")
    rows = plan_isoflop_group(budget, archs, kappa, resolved["param_count_mode"])
    manifest = _make_manifest(args, "plan", [], args.out, 0, resolved)

    _write_csv(
        args.out,
        ("name", "n_params", "granularity", "tokens"),
        [(r.name, _fmt(r.n_params), str(r.granularity), _fmt(r.tokens)) for r in rows],
        manifest,
    )
    _write_json(
        str(Path(args.out).with_suffix(".json")),
        {
            "kind": "isoflop_plan",
            "budget_flops": float(args.flops),
            "exit_overhead_fraction": kappa,
            "rows": [
                {"name": r.name, "n_params": r.n_params, "granularity": r.granularity, "tokens": r.tokens}
                for r in rows
            ],
        },
        manifest,
    )
    for r in rows:
        print(f"{r.name:>8}  N={r.n_params:.6e}  G={r.granularity}  D={r.tokens:.6e}")
    return 0


def cmd_synth(args) -> int:
    resolved = _resolved_with_flags(args)
    section = resolved["synth"]
    seed = args.seed if args.seed is not None else int(section.get("seed", 0))
    noise = args.noise_sigma if args.noise_sigma is not None else float(section["noise_sigma"])
    kappa = float(resolved["exit_overhead_fraction"])
    manifest = _make_manifest(args, "synth", [], args.out, seed, resolved)

    if args.kind == "runs":
        p = section["params"]
        params = FamilialParams(
            E=float(p["E"]), A=float(p["A"]), B=float(p["B"]),
            alpha=float(p["alpha"]), beta=float(p["beta"]), gamma=float(p["gamma"]),
        )
        design = [
            (ComputeBudget(float(c), f"C={float(c):.0e}"), float(n), int(g))
            for c in section["budgets"]
            for n in section["n_params"]
            for g in section["granularities"]
        ]
        records = synth_runs(params, design, kappa, noise, seed)
        if args.format == "csv":
            text_rows = runs_to_csv(records, preamble=_csv_preamble(manifest))
            Path(args.out).write_text(text_rows, encoding="utf-8")
        else:
            _write_json(args.out, {"kind": "runs", "records": [asdict(r) for r in records]}, manifest)
    else:
        bp = section["branch_params"]
        params = BranchParams(
            alpha_b=float(bp["alpha_b"]), beta_b=float(bp["beta_b"]),
            d_d=float(bp["d_d"]), a_exp=float(bp["a_exp"]),
        )
        dense = float(section["branch_dense_loss"])
        design = [
            (int(p_), int(q), float(d), dense)
            for p_ in section["branch_upstream"]
            for q in section["branch_downstream"]
            for d in section["branch_tokens"]
        ]
        records = synth_branches(params, design, noise, seed)
        if args.format == "csv":
            text_rows = branches_to_csv(records, preamble=_csv_preamble(manifest))
            Path(args.out).write_text(text_rows, encoding="utf-8")
        else:
            _write_json(args.out, {"kind": "branches", "records": [asdict(r) for r in records]}, manifest)

    print(f"wrote {len(records)} synthetic {args.kind} records to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="famscale",
        description="Scaling-law estimation and compute planning for multi-exit model families.",
    )
    parser.add_argument("--version", action="version", version=f"famscale {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p, seed=True):
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--kappa", type=float, help="per-exit FLOPs overhead fraction")
        if seed:
            p.add_argument("--seed", type=int, help="seed for subsampling / synthesis")

    p = sub.add_parser("fit-familial", help="fit the family loss law to run records")
    p.add_argument("--runs", required=True, help="runs CSV/JSON file")
    p.add_argument("--holdout", help="held-out runs file for validation metrics")
    p.add_argument("--out", required=True, help="output report JSON path")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--max-starts", type=int, help="cap on grid starts")
    add_common(p)
    p.set_defaults(func=cmd_fit_familial)

    p = sub.add_parser("fit-branch", help="fit the branch penalty law to branch records")
    p.add_argument("--branches", required=True, help="branches CSV/JSON file")
    p.add_argument("--holdout", help="held-out branches file for validation metrics")
    p.add_argument("--out", required=True, help="output report JSON path")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--max-starts", type=int, help="cap on grid starts")
    add_common(p)
    p.set_defaults(func=cmd_fit_branch)

    p = sub.add_parser("eval", help="evaluate a familial law at one (N, D, G)")
    p.add_argument("--params", required=True, help="params JSON (bare or fit report)")
    p.add_argument("--n", type=float, required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--g", type=int, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("frontier", help="compute-efficient frontier over budgets")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True, help="output CSV path (JSON written alongside)")
    p.add_argument("--granularity", type=int)
    p.add_argument("--flops", help="comma-separated budgets, e.g. 1e19,1e20")
    p.add_argument("--contour-targets", help="isoloss targets, e.g. 2.4,2.6,2.8")
    p.add_argument("--contour-points", type=int, default=64,
                   help="model sizes sampled per contour")
    add_common(p, seed=False)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("el", help="efficiency-leverage curves over budgets")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True, help="output CSV path (per-G CSVs and JSON alongside)")
    p.add_argument("--granularities", help="comma-separated, e.g. 3,4,5,6")
    p.add_argument("--flops-lo", type=float)
    p.add_argument("--flops-hi", type=float)
    p.add_argument("--points-per-decade", type=int)
    p.add_argument("--size-policy")
    add_common(p, seed=False)
    p.set_defaults(func=cmd_el)

    p = sub.add_parser("plan", help="IsoFLOP experiment plan from an architecture table")
    p.add_argument("--flops", type=float, required=True, help="shared compute budget")
    p.add_argument("--out", required=True)
    add_common(p, seed=False)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("synth", help="generate synthetic run or branch records")
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["runs", "branches"], default="runs")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _threads()  # validated for interface consistency; evaluation order is fixed
        return args.func(args)
    except ValidationError as exc:
        for idx, msg in exc.rejections:
            print(f"error: row {idx}: {msg}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        for s in exc.per_start[:20]:
            print(f"  start={s.start} objective={s.objective} reason={s.termination_reason}",
                  file=sys.stderr)
        return 3
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
