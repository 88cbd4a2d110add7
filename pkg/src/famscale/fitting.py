"""Shared multi-start fitting machinery.

Both law fits use the same recipe: a Huber objective on log-residuals,
minimized by the quasi-Newton routine from every point of an initialization
grid (or a deterministic stratified subsample of it), keeping the solution
with the lowest final objective. Ties break toward the lexicographically
smallest start point, so concurrent and sequential execution agree.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Generic, Sequence, TypeVar

import numpy as np

from .numerics import MinimizeResult, OptimizerOptions, minimize

__all__ = [
    "FitConfig",
    "BranchFitConfig",
    "StartResult",
    "FitReport",
    "FitError",
    "stratified_subsample",
    "run_multistart",
]

P = TypeVar("P")


class FitError(RuntimeError):
    """All grid starts failed; carries per-start diagnostics."""

    def __init__(self, message: str, per_start: Sequence["StartResult"]):
        super().__init__(message)
        self.per_start = tuple(per_start)


def _grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    n = int(round((hi - lo) / step)) + 1
    return tuple(lo + i * step for i in range(n))


@dataclass(frozen=True)
class FitConfig:
    """Configuration for the six-parameter family-law fit.

    Grids seed the optimizer in the log-domain coordinates
    (e, a, b, alpha, beta, gamma); the optimization itself is unconstrained.
    ``max_starts`` caps the grid product via deterministic stratified
    subsampling driven by ``seed``.
    """

    huber_delta: float = 1e-3
    grid_e: tuple[float, ...] = _grid(-1.0, 1.0, 0.5)
    grid_a: tuple[float, ...] = _grid(0.5, 25.0, 4.9)
    grid_b: tuple[float, ...] = _grid(0.5, 25.0, 4.9)
    grid_alpha: tuple[float, ...] = _grid(0.0, 2.0, 0.5)
    grid_beta: tuple[float, ...] = _grid(0.0, 2.0, 0.5)
    grid_gamma: tuple[float, ...] = _grid(0.0, 2.0, 0.5)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    max_starts: int | None = 2000
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be > 0")
        for name in ("grid_e", "grid_a", "grid_b", "grid_alpha", "grid_beta", "grid_gamma"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be non-empty")
        if self.max_starts is not None and self.max_starts < 1:
            raise ValueError("max_starts must be >= 1 when set")

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("e", "a", "b", "alpha", "beta", "gamma")

    def grids(self) -> tuple[tuple[float, ...], ...]:
        return (
            self.grid_e,
            self.grid_a,
            self.grid_b,
            self.grid_alpha,
            self.grid_beta,
            self.grid_gamma,
        )

    def start_points(self) -> list[tuple[float, ...]]:
        full = list(itertools.product(*self.grids()))
        return stratified_subsample(full, self.max_starts, self.seed)


@dataclass(frozen=True)
class BranchFitConfig:
    """Configuration for the four-parameter branch-law fit.

    Coordinates are (log alpha_b, log beta_b, log d_d, a_exp); the log
    parameterization keeps penalty weights and the token scale positive.
    ``pin_dd`` fixes the reported token scale after fitting ("smallest_d"
    uses the smallest token count in the dataset); predictions are invariant
    to this choice.
    """

    huber_delta: float = 1e-3
    grid_log_alpha: tuple[float, ...] = (-9.0, -6.0, -3.0, 0.0)
    grid_log_beta: tuple[float, ...] = (-9.0, -6.0, -3.0, 0.0)
    grid_log_dd: tuple[float, ...] = (10.0, 13.0, 16.0, 19.0, 22.0)
    grid_a_exp: tuple[float, ...] = (0.0, 0.5, 1.0, 1.5, 2.0)
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    max_starts: int | None = 2000
    seed: int = 0
    pin_dd: float | str = "smallest_d"

    def __post_init__(self) -> None:
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be > 0")
        for name in ("grid_log_alpha", "grid_log_beta", "grid_log_dd", "grid_a_exp"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be non-empty")
        if isinstance(self.pin_dd, str) and self.pin_dd != "smallest_d":
            raise ValueError("pin_dd must be a positive number or 'smallest_d'")
        if not isinstance(self.pin_dd, str) and not self.pin_dd > 0:
            raise ValueError("pin_dd must be a positive number or 'smallest_d'")

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("log_alpha_b", "log_beta_b", "log_d_d", "a_exp")

    def grids(self) -> tuple[tuple[float, ...], ...]:
        return (self.grid_log_alpha, self.grid_log_beta, self.grid_log_dd, self.grid_a_exp)

    def start_points(self) -> list[tuple[float, ...]]:
        full = list(itertools.product(*self.grids()))
        return stratified_subsample(full, self.max_starts, self.seed)


@dataclass(frozen=True)
class StartResult:
    """Final state of the optimizer launched from one grid point."""

    start: tuple[float, ...]
    objective: float
    converged: bool
    termination_reason: str
    iterations: int


@dataclass(frozen=True)
class FitReport(Generic[P]):
    """Outcome of a multi-start fit.

    ``boundary_hit`` marks coordinates whose winning start sat at a grid
    extreme while the fitted value also fell beyond every interior grid
    value; such fits may be artifacts of the grid limits. ``extras`` carries
    law-specific derived quantities (e.g. identifiable products).
    """

    best: P
    best_objective: float
    best_point: tuple[float, ...]
    best_start: tuple[float, ...]
    param_names: tuple[str, ...]
    per_start: tuple[StartResult, ...]
    boundary_hit: dict[str, bool]
    residuals: tuple[tuple[int, float], ...]
    warnings: tuple[str, ...]
    unidentifiable: tuple[str, ...]
    huber_delta: float
    seed: int
    n_grid_points: int
    extras: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-ready view (law-specific params are added by the caller)."""
        return {
            "best_objective": self.best_objective,
            "best_point": dict(zip(self.param_names, self.best_point)),
            "best_start": dict(zip(self.param_names, self.best_start)),
            "boundary_hit": dict(self.boundary_hit),
            "warnings": list(self.warnings),
            "unidentifiable": list(self.unidentifiable),
            "huber_delta": self.huber_delta,
            "seed": self.seed,
            "n_grid_points": self.n_grid_points,
            "n_starts_run": len(self.per_start),
            "extras": dict(self.extras),
            "residuals": [[i, r] for i, r in self.residuals],
            "per_start": [
                {
                    "start": list(s.start),
                    "objective": s.objective,
                    "converged": s.converged,
                    "termination_reason": s.termination_reason,
                    "iterations": s.iterations,
                }
                for s in self.per_start
            ],
        }


def stratified_subsample(
    points: list[tuple[float, ...]], cap: int | None, seed: int
) -> list[tuple[float, ...]]:
    """Pick at most ``cap`` points, one per contiguous stratum of the list.

    The list order (lexicographic grid order) defines the strata, so every
    region of the grid stays represented; the draw within each stratum is
    seeded and therefore reproducible.
    """
    n = len(points)
    if cap is None or cap >= n:
        return list(points)
    rng = np.random.default_rng(seed)
    edges = np.linspace(0, n, cap + 1).astype(int)
    picks = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        picks.append(points[int(rng.integers(lo, hi))] if hi > lo else points[int(lo)])
    return picks


def run_multistart(
    value_and_gradient: Callable[[np.ndarray], tuple[float, np.ndarray]],
    starts: Sequence[tuple[float, ...]],
    options: OptimizerOptions,
) -> tuple[int, list[MinimizeResult]]:
    """Minimize from every start; return (winner index, all results).

    The winner has the lowest finite final objective; ties break toward the
    lexicographically smallest start tuple. Raises FitError when no start
    produces a finite value.
    """
    objective = lambda x: value_and_gradient(x)[0]  # noqa: E731
    gradient = lambda x: value_and_gradient(x)[1]  # noqa: E731

    results: list[MinimizeResult] = []
    best_idx = -1
    best_key: tuple[float, tuple[float, ...]] | None = None
    for i, start in enumerate(starts):
        res = minimize(
            objective, gradient, np.asarray(start, dtype=float), options,
            value_and_gradient=value_and_gradient,
        )
        results.append(res)
        if np.isfinite(res.value):
            key = (float(res.value), tuple(start))
            if best_key is None or key < best_key:
                best_key = key
                best_idx = i

    if best_idx < 0:
        diag = [
            StartResult(tuple(s), float(r.value), r.converged, r.termination_reason, r.iterations)
            for s, r in zip(starts, results)
        ]
        raise FitError("every start point failed with a non-finite objective", diag)
    return best_idx, results


def boundary_flags(
    grids: Sequence[tuple[float, ...]],
    param_names: Sequence[str],
    best_start: Sequence[float],
    best_point: Sequence[float],
) -> dict[str, bool]:
    """Grid-extreme diagnostics for the winning solution, per coordinate."""
    flags: dict[str, bool] = {}
    for grid, name, start, fitted in zip(grids, param_names, best_start, best_point):
        lo, hi = min(grid), max(grid)
        interior = sorted(grid)[1:-1] if len(grid) > 2 else []
        if interior:
            below = start == lo and fitted < min(interior)
            above = start == hi and fitted > max(interior)
        else:
            below = start == lo and fitted < lo
            above = start == hi and fitted > hi
        flags[name] = bool(below or above)
    return flags
