"""Run and branch observation records: validation, I/O, and synthesis.

CSV schemas (fixed column order, reals written with 17 significant digits so
round-trips are exact):

    runs:     n_params,tokens,granularity,loss,flops_group,flops
    branches: upstream_count,downstream_count,tokens,branch_loss,dense_loss,family_label,branch_size

``flops`` may be empty. JSON mirrors the same field names as an array of
objects. Lines starting with ``#`` are treated as comments on load.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Literal, Sequence, Union

import numpy as np

from .flops import ComputeBudget, tokens_for_budget

__all__ = [
    "RunRecord",
    "BranchRecord",
    "ExitLossVector",
    "ValidationError",
    "load_runs",
    "load_branches",
    "save_runs",
    "save_branches",
    "runs_to_csv",
    "branches_to_csv",
    "aggregate_exit_losses",
    "synth_runs",
    "synth_branches",
]

Format = Literal["csv", "json"]

RUNS_HEADER = ("n_params", "tokens", "granularity", "loss", "flops_group", "flops")
BRANCHES_HEADER = (
    "upstream_count",
    "downstream_count",
    "tokens",
    "branch_loss",
    "dense_loss",
    "family_label",
    "branch_size",
)


class ValidationError(ValueError):
    """Raised when one or more rows fail validation.

    ``rejections`` holds (row_index, reason) pairs, one per bad row; row
    indices are 1-based over data rows (header excluded).
    """

    def __init__(self, rejections: list[tuple[int, str]]):
        self.rejections = rejections
        lines = "; ".join(f"row {i}: {msg}" for i, msg in rejections)
        super().__init__(f"{len(rejections)} invalid row(s): {lines}")


@dataclass(frozen=True)
class RunRecord:
    """One training observation: size, tokens, granularity, measured loss."""

    n_params: float
    tokens: float
    granularity: int
    loss: float
    flops_group: str = ""
    flops: float | None = None

    def __post_init__(self) -> None:
        if not self.n_params > 0:
            raise ValueError("n_params must be positive")
        if not self.tokens > 0:
            raise ValueError("tokens must be positive")
        if self.granularity < 1:
            raise ValueError("granularity must be >= 1")
        if not self.loss > 0:
            raise ValueError("loss must be positive")
        if self.flops is not None and not self.flops > 0:
            raise ValueError("flops must be positive when present")


@dataclass(frozen=True)
class BranchRecord:
    """One branch observation with its size-matched dense baseline loss."""

    upstream_count: int
    downstream_count: int
    tokens: float
    branch_loss: float
    dense_loss: float
    family_label: str = ""
    branch_size: float = 1.0

    def __post_init__(self) -> None:
        if self.upstream_count < 0:
            raise ValueError("upstream_count must be >= 0")
        if self.downstream_count < 0:
            raise ValueError("downstream_count must be >= 0")
        if not self.tokens > 0:
            raise ValueError("tokens must be positive")
        if not self.branch_loss > 0:
            raise ValueError("branch_loss must be positive")
        if not self.dense_loss > 0:
            raise ValueError("dense_loss must be positive")
        if not self.branch_size > 0:
            raise ValueError("branch_size must be positive")


@dataclass(frozen=True)
class ExitLossVector:
    """Per-exit losses with aggregation weights summing to one."""

    per_exit_losses: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "per_exit_losses", tuple(float(x) for x in self.per_exit_losses))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.per_exit_losses) != len(self.weights):
            raise ValueError("per_exit_losses and weights must have equal length")
        if len(self.per_exit_losses) == 0:
            raise ValueError("at least one exit is required")
        if any(not x > 0 for x in self.per_exit_losses):
            raise ValueError("per-exit losses must be positive")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1 within 1e-12")

    @classmethod
    def equal(cls, per_exit_losses: Sequence[float]) -> "ExitLossVector":
        g = len(per_exit_losses)
        return cls(tuple(per_exit_losses), tuple(1.0 / g for _ in range(g)))


def aggregate_exit_losses(exits: ExitLossVector) -> float:
    """Weighted family loss; with equal weights this is exactly the mean."""
    w = np.asarray(exits.weights)
    if np.all(w == w[0]):
        return float(np.mean(exits.per_exit_losses))
    return float(np.dot(w, exits.per_exit_losses))


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _read_text(source: Union[bytes, IO[bytes], IO[str]]) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _parse_float(raw: str, fname: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"{fname} is not a number: {raw!r}") from None


def _parse_int(raw: str, fname: str) -> int:
    value = _parse_float(raw, fname)
    if value != int(value):
        raise ValueError(f"{fname} must be an integer: {raw!r}")
    return int(value)


def _run_from_fields(fields: dict) -> RunRecord:
    flops = fields.get("flops")
    if flops in (None, ""):
        flops_val = None
    else:
        flops_val = float(flops) if not isinstance(flops, str) else _parse_float(flops, "flops")
    return RunRecord(
        n_params=_coerce_float(fields, "n_params"),
        tokens=_coerce_float(fields, "tokens"),
        granularity=_coerce_int(fields, "granularity"),
        loss=_coerce_float(fields, "loss"),
        flops_group=str(fields.get("flops_group", "") or ""),
        flops=flops_val,
    )


def _branch_from_fields(fields: dict) -> BranchRecord:
    return BranchRecord(
        upstream_count=_coerce_int(fields, "upstream_count"),
        downstream_count=_coerce_int(fields, "downstream_count"),
        tokens=_coerce_float(fields, "tokens"),
        branch_loss=_coerce_float(fields, "branch_loss"),
        dense_loss=_coerce_float(fields, "dense_loss"),
        family_label=str(fields.get("family_label", "") or ""),
        branch_size=_coerce_float(fields, "branch_size"),
    )


def _coerce_float(fields: dict, name: str) -> float:
    raw = fields.get(name)
    if raw is None or raw == "":
        raise ValueError(f"{name} is missing")
    return _parse_float(raw, name) if isinstance(raw, str) else float(raw)


def _coerce_int(fields: dict, name: str) -> int:
    raw = fields.get(name)
    if raw is None or raw == "":
        raise ValueError(f"{name} is missing")
    return _parse_int(raw, name) if isinstance(raw, str) else int(raw)


def _load_table(
    source: Union[bytes, IO[bytes], IO[str]],
    fmt: Format,
    header: tuple[str, ...],
    builder,
) -> list:
    text = _read_text(source)
    records = []
    rejections: list[tuple[int, str]] = []

    if fmt == "csv":
        lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not lines:
            raise ValueError("empty input: missing CSV header")
        reader = csv.reader(lines)
        head = [h.strip() for h in next(reader)]
        if head != list(header):
            raise ValueError(f"malformed header: expected {','.join(header)}, got {','.join(head)}")
        for idx, row in enumerate(reader, start=1):
            if len(row) != len(header):
                rejections.append((idx, f"expected {len(header)} fields, got {len(row)}"))
                continue
            fields = dict(zip(header, (v.strip() for v in row)))
            try:
                records.append(builder(fields))
            except ValueError as exc:
                rejections.append((idx, str(exc)))
    elif fmt == "json":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed JSON: {exc}") from None
        if not isinstance(payload, list):
            raise ValueError("JSON input must be an array of objects")
        for idx, obj in enumerate(payload, start=1):
            if not isinstance(obj, dict):
                rejections.append((idx, "entry is not an object"))
                continue
            try:
                records.append(builder(obj))
            except ValueError as exc:
                rejections.append((idx, str(exc)))
    else:
        raise ValueError(f"unknown format: {fmt!r}")

    if rejections:
        raise ValidationError(rejections)
    return records


def load_runs(source: Union[bytes, IO[bytes], IO[str]], fmt: Format = "csv") -> list[RunRecord]:
    """Parse and validate run records; raises ValidationError listing every bad row."""
    return _load_table(source, fmt, RUNS_HEADER, _run_from_fields)


def load_branches(
    source: Union[bytes, IO[bytes], IO[str]], fmt: Format = "csv"
) -> list[BranchRecord]:
    """Parse and validate branch records; raises ValidationError listing every bad row."""
    return _load_table(source, fmt, BRANCHES_HEADER, _branch_from_fields)


# ---------------------------------------------------------------------------
# Saving
# ---------------------------------------------------------------------------


def _fmt_real(x: float | None) -> str:
    return "" if x is None else format(float(x), ".17g")


def runs_to_csv(records: Iterable[RunRecord], preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(RUNS_HEADER) + "\n")
    for r in records:
        out.write(
            f"{_fmt_real(r.n_params)},{_fmt_real(r.tokens)},{r.granularity},"
            f"{_fmt_real(r.loss)},{r.flops_group},{_fmt_real(r.flops)}\n"
        )
    return out.getvalue()


def branches_to_csv(records: Iterable[BranchRecord], preamble: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for line in preamble:
        out.write(f"# {line}\n")
    out.write(",".join(BRANCHES_HEADER) + "\n")
    for r in records:
        out.write(
            f"{r.upstream_count},{r.downstream_count},{_fmt_real(r.tokens)},"
            f"{_fmt_real(r.branch_loss)},{_fmt_real(r.dense_loss)},"
            f"{r.family_label},{_fmt_real(r.branch_size)}\n"
        )
    return out.getvalue()


def save_runs(records: Iterable[RunRecord], fmt: Format = "csv") -> str:
    if fmt == "csv":
        return runs_to_csv(records)
    return json.dumps([asdict(r) for r in records], indent=2, sort_keys=True) + "\n"


def save_branches(records: Iterable[BranchRecord], fmt: Format = "csv") -> str:
    if fmt == "csv":
        return branches_to_csv(records)
    return json.dumps([asdict(r) for r in records], indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


def synth_runs(
    true_params,
    design: Sequence[tuple[Union[ComputeBudget, float], float, int]],
    exit_overhead_fraction: float,
    noise_sigma: float,
    seed: int,
) -> list[RunRecord]:
    """Generate run records from a known law over an IsoFLOP design.

    Each design point (budget, n_params, granularity) gets its token count
    from the budget, a loss from ``true_params``, and multiplicative
    lognormal noise exp(eps), eps ~ N(0, noise_sigma), from a seeded
    generator. Identical arguments produce bit-identical records.
    """
    from .familial import predict_loss

    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if len(design) == 0:
        raise ValueError("design must be non-empty")

    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise_sigma, size=len(design)) if noise_sigma > 0 else np.zeros(len(design))

    out = []
    for (budget, n_params, granularity), e in zip(design, eps):
        if isinstance(budget, ComputeBudget):
            flops, label = budget.total_flops, budget.group_label
        else:
            flops, label = float(budget), format(float(budget), ".3g")
        tokens = tokens_for_budget(flops, n_params, granularity, exit_overhead_fraction)
        loss = predict_loss(true_params, n_params, tokens, granularity) * float(np.exp(e))
        out.append(
            RunRecord(
                n_params=float(n_params),
                tokens=tokens,
                granularity=int(granularity),
                loss=float(loss),
                flops_group=label,
                flops=flops,
            )
        )
    return out


def synth_branches(
    true_params,
    design: Sequence[tuple[int, int, float, float]],
    noise_sigma: float,
    seed: int,
    family_label: str = "synth",
    branch_size: float = 1e9,
) -> list[BranchRecord]:
    """Generate branch records (P, Q, tokens, dense_loss) from a known law."""
    from .branch import predict_branch_loss

    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    if len(design) == 0:
        raise ValueError("design must be non-empty")

    rng = np.random.default_rng(seed)
    eps = rng.normal(0.0, noise_sigma, size=len(design)) if noise_sigma > 0 else np.zeros(len(design))

    out = []
    for (p, q, tokens, dense_loss), e in zip(design, eps):
        loss = predict_branch_loss(true_params, dense_loss, p, q, tokens) * float(np.exp(e))
        out.append(
            BranchRecord(
                upstream_count=int(p),
                downstream_count=int(q),
                tokens=float(tokens),
                branch_loss=float(loss),
                dense_loss=float(dense_loss),
                family_label=family_label,
                branch_size=branch_size,
            )
        )
    return out
