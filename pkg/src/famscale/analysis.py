"""Derived analyses over fitted laws.

Compute-efficient frontiers, isoloss contours, IsoFLOP experiment plans, and
Efficiency Leverage (EL) curves. EL compares a family against G independently
trained dense models sized like its branches: the dense side splits the same
total budget so that all G dense models share one token count, which keeps
total dense compute exactly equal to the family budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .familial import FamilialParams, invert_for_tokens, predict_loss
from .flops import ArchConfig, ComputeBudget, approx_params, branch_sizes, tokens_for_budget

__all__ = [
    "FrontierPoint",
    "ELPoint",
    "PlanRow",
    "compute_frontier",
    "isoloss_contour",
    "plan_isoflop_group",
    "efficiency_leverage",
    "el_curve",
    "loss_surface",
]

# Search bracket for the optimal model size, in parameters.
_N_BRACKET = (1e6, 1e13)
_COARSE_POINTS = 64
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_INV_PHI_SQ = (3.0 - math.sqrt(5.0)) / 2.0
# Bracket width tolerance in log N; ~relative 1e-6 in N.
_GSS_TOL = 1e-6


@dataclass(frozen=True)
class FrontierPoint:
    """Loss-minimizing allocation of one compute budget at fixed granularity."""

    flops: float
    n_opt: float
    d_opt: float
    loss_opt: float
    granularity: int
    bracket_edge: bool = False


@dataclass(frozen=True)
class ELPoint:
    """Efficiency Leverage of a family against its dense baseline set."""

    flops: float
    granularity: int
    dense_avg_loss: float
    familial_loss: float
    el: float
    bracket_edge: bool = False


@dataclass(frozen=True)
class PlanRow:
    """One experiment of an IsoFLOP group."""

    name: str
    n_params: float
    granularity: int
    tokens: float


def _frontier_objective(params: FamilialParams, granularity: int, flops: float, kappa: float):
    def loss_at(ln_n: float) -> float:
        n = math.exp(ln_n)
        d = tokens_for_budget(flops, n, granularity, kappa)
        return predict_loss(params, n, d, granularity)

    return loss_at


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimize a unimodal f on [lo, hi]; returns the midpoint of the final bracket."""
    a, b = lo, hi
    h = b - a
    c = a + _INV_PHI_SQ * h
    d = a + _INV_PHI * h
    yc, yd = f(c), f(d)
    while h > tol:
        if yc < yd:
            b, d, yd = d, c, yc
            h = b - a
            c = a + _INV_PHI_SQ * h
            yc = f(c)
        else:
            a, c, yc = c, d, yd
            h = b - a
            d = a + _INV_PHI * h
            yd = f(d)
    return 0.5 * (a + b)


def compute_frontier(
    params: FamilialParams,
    granularity: int,
    flops_values: Sequence[float],
    exit_overhead_fraction: float,
) -> list[FrontierPoint]:
    """Compute-optimal (N, D) per budget, by coarse scan plus golden section.

    A 64-point log grid over N in [1e6, 1e13] brackets the minimum, then
    golden-section search refines it to ~1e-6 relative in N. Points whose
    coarse minimum lands on the bracket boundary are flagged, not dropped.
    """
    flops_values = [float(c) for c in flops_values]
    if any(c <= 0 for c in flops_values):
        raise ValueError("flops_values must be positive")
    if any(b <= a for a, b in zip(flops_values, flops_values[1:])):
        raise ValueError("flops_values must be sorted ascending")

    ln_grid = np.linspace(math.log(_N_BRACKET[0]), math.log(_N_BRACKET[1]), _COARSE_POINTS)
    out = []
    for flops in flops_values:
        f = _frontier_objective(params, granularity, flops, exit_overhead_fraction)
        coarse = np.array([f(t) for t in ln_grid])
        i = int(np.argmin(coarse))
        if i == 0 or i == _COARSE_POINTS - 1:
            n_opt = math.exp(ln_grid[i])
            out.append(
                FrontierPoint(
                    flops=flops,
                    n_opt=n_opt,
                    d_opt=tokens_for_budget(flops, n_opt, granularity, exit_overhead_fraction),
                    loss_opt=float(coarse[i]),
                    granularity=granularity,
                    bracket_edge=True,
                )
            )
            continue
        t_opt = _golden_section(f, ln_grid[i - 1], ln_grid[i + 1], _GSS_TOL)
        n_opt = math.exp(t_opt)
        out.append(
            FrontierPoint(
                flops=flops,
                n_opt=n_opt,
                d_opt=tokens_for_budget(flops, n_opt, granularity, exit_overhead_fraction),
                loss_opt=f(t_opt),
                granularity=granularity,
            )
        )
    return out


def isoloss_contour(
    params: FamilialParams,
    granularity: int,
    target_loss: float,
    n_values: Sequence[float],
) -> list[tuple[float, float | None]]:
    """(N, D) pairs achieving ``target_loss``; D is None where infeasible."""
    if any(n <= 0 for n in n_values):
        raise ValueError("n_values must be positive")
    return [
        (float(n), invert_for_tokens(params, target_loss, n, granularity)) for n in n_values
    ]


def plan_isoflop_group(
    budget: Union[ComputeBudget, float],
    archs: Sequence[ArchConfig],
    exit_overhead_fraction: float,
    param_count_mode: str = "gated",
) -> list[PlanRow]:
    """Experiment plan: token budget per architecture under one shared budget."""
    if len(archs) == 0:
        raise ValueError("archs must be non-empty")
    rows = []
    for arch in archs:
        n = approx_params(arch, param_count_mode)
        g = arch.granularity
        rows.append(
            PlanRow(
                name=arch.name,
                n_params=float(n),
                granularity=g,
                tokens=tokens_for_budget(budget, n, g, exit_overhead_fraction),
            )
        )
    return rows


def efficiency_leverage(
    fam_params: FamilialParams,
    granularity: int,
    flops: float,
    exit_overhead_fraction: float,
    size_policy: Union[str, Sequence[float]] = "proportional",
) -> ELPoint:
    """Dense-to-family average-loss ratio at one matched compute budget.

    Family side: the compute-optimal allocation at this granularity. Dense
    side: G dense models sized by ``size_policy`` relative to the family's
    optimal backbone, all trained on one shared token count
    ``flops / (6 * sum(sizes))`` so the summed dense compute matches the
    family budget exactly; their losses come from the same law at G = 1.
    """
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    point = compute_frontier(fam_params, granularity, [flops], exit_overhead_fraction)[0]
    familial_loss = point.loss_opt

    sizes = branch_sizes(point.n_opt, granularity, size_policy)
    d_dense = flops / (6.0 * sum(sizes))
    dense_losses = [predict_loss(fam_params, n, d_dense, 1) for n in sizes]
    dense_avg = sum(dense_losses) / len(dense_losses)

    return ELPoint(
        flops=float(flops),
        granularity=granularity,
        dense_avg_loss=float(dense_avg),
        familial_loss=float(familial_loss),
        el=float(dense_avg / familial_loss),
        bracket_edge=point.bracket_edge,
    )


def loss_surface(
    params: FamilialParams,
    granularity: int,
    n_range: tuple[float, float],
    d_range: tuple[float, float],
    points_per_axis: int = 25,
) -> list[tuple[float, float, float]]:
    """Plot-ready (N, D, loss) grid over log-spaced axes at fixed granularity."""
    n_lo, n_hi = n_range
    d_lo, d_hi = d_range
    if not 0 < n_lo < n_hi or not 0 < d_lo < d_hi:
        raise ValueError("ranges must satisfy 0 < lo < hi")
    if points_per_axis < 2:
        raise ValueError("points_per_axis must be >= 2")
    ns = np.logspace(math.log10(n_lo), math.log10(n_hi), points_per_axis)
    ds = np.logspace(math.log10(d_lo), math.log10(d_hi), points_per_axis)
    return [
        (float(n), float(d), predict_loss(params, float(n), float(d), granularity))
        for n in ns
        for d in ds
    ]


def el_curve(
    fam_params: FamilialParams,
    granularities: Sequence[int],
    flops_range: tuple[float, float],
    points_per_decade: int,
    exit_overhead_fraction: float,
    size_policy: Union[str, Sequence[float]] = "proportional",
) -> list[ELPoint]:
    """EL over a log-spaced budget sweep, ordered by (granularity, flops)."""
    lo, hi = flops_range
    if not 0 < lo < hi:
        raise ValueError("flops_range must satisfy 0 < lo < hi")
    if points_per_decade < 1:
        raise ValueError("points_per_decade must be >= 1")
    n_points = max(1, round(math.log10(hi / lo) * points_per_decade))
    budgets = np.logspace(math.log10(lo), math.log10(hi), n_points)
    out = []
    for g in granularities:
        for c in budgets:
            out.append(
                efficiency_leverage(fam_params, g, float(c), exit_overhead_fraction, size_policy)
            )
    return out
