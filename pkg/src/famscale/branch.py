"""Branch-level loss law: penalty of neighboring exits on one branch.

A branch with P exits upstream (shallower) and Q downstream (deeper) pays

    L(P, Q, D) = L_dense + (alpha_b*P + beta_b*Q) * (d_d / D)**a_exp

on top of its size-matched dense baseline. The penalty is linear in the
counts and decays as training tokens grow. Only the products
``alpha_b * d_d**a_exp`` and ``beta_b * d_d**a_exp`` (plus ``a_exp``) are
identifiable from data: rescaling d_d can be absorbed into the weights, so
the fit pins d_d to a configurable reference for readable output and also
reports the invariant products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .fitting import (
    BranchFitConfig,
    FitReport,
    StartResult,
    boundary_flags,
    run_multistart,
)
from .numerics import huber as _huber
from .numerics import huber_derivative as _huber_derivative

if TYPE_CHECKING:
    from .records import BranchRecord

__all__ = [
    "BranchParams",
    "predict_branch_loss",
    "fit_branch",
    "upstream_negligibility",
]


@dataclass(frozen=True)
class BranchParams:
    """Coefficients of the branch penalty law."""

    alpha_b: float
    beta_b: float
    d_d: float
    a_exp: float

    def __post_init__(self) -> None:
        if self.alpha_b < 0:
            raise ValueError("alpha_b must be >= 0")
        if self.beta_b < 0:
            raise ValueError("beta_b must be >= 0")
        if not self.d_d > 0:
            raise ValueError("d_d must be > 0")
        if not np.isfinite(self.a_exp):
            raise ValueError("a_exp must be finite")

    def identifiable_products(self) -> tuple[float, float]:
        """(alpha_b * d_d**a_exp, beta_b * d_d**a_exp): invariant under d_d rescaling."""
        scale = self.d_d**self.a_exp
        return self.alpha_b * scale, self.beta_b * scale

    def pinned_to(self, d_ref: float) -> "BranchParams":
        """Equivalent parameters with the token scale fixed at ``d_ref``."""
        if not d_ref > 0:
            raise ValueError("d_ref must be > 0")
        factor = (self.d_d / d_ref) ** self.a_exp
        return BranchParams(self.alpha_b * factor, self.beta_b * factor, d_ref, self.a_exp)

    def as_dict(self) -> dict[str, float]:
        return {
            "alpha_b": self.alpha_b,
            "beta_b": self.beta_b,
            "d_d": self.d_d,
            "a_exp": self.a_exp,
        }


def predict_branch_loss(
    params: BranchParams,
    dense_loss: float,
    upstream_count: int,
    downstream_count: int,
    tokens: float,
):
    """Branch loss given its dense baseline and neighbor counts.

    Exactly ``dense_loss`` when no other exits exist (P = Q = 0).
    """
    if np.any(np.asarray(tokens) <= 0):
        raise ValueError("tokens must be positive")
    if np.any(np.asarray(dense_loss) <= 0):
        raise ValueError("dense_loss must be positive")
    p = np.asarray(upstream_count)
    q = np.asarray(downstream_count)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("branch counts must be >= 0")
    penalty = (params.alpha_b * p + params.beta_b * q) * (
        params.d_d / np.asarray(tokens, dtype=float)
    ) ** params.a_exp
    out = np.asarray(dense_loss, dtype=float) + penalty
    return float(out) if out.ndim == 0 else out


def upstream_negligibility(params: BranchParams, tokens: float) -> float:
    """Per-branch upstream-to-downstream penalty ratio alpha_b / beta_b.

    Token-independent because both penalties share the same decay factor;
    ``tokens`` is validated for interface consistency only. Returns NaN when
    beta_b is zero (the ratio is undefined).
    """
    if not tokens > 0:
        raise ValueError("tokens must be positive")
    if params.beta_b == 0:
        return math.nan
    return params.alpha_b / params.beta_b


@dataclass(frozen=True)
class _BranchArrays:
    p: np.ndarray
    q: np.ndarray
    ln_d: np.ndarray
    dense: np.ndarray
    ln_obs: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence["BranchRecord"]) -> "_BranchArrays":
        if len(records) == 0:
            raise ValueError("records must be non-empty")
        return cls(
            p=np.array([float(r.upstream_count) for r in records]),
            q=np.array([float(r.downstream_count) for r in records]),
            ln_d=np.log([r.tokens for r in records]),
            dense=np.array([r.dense_loss for r in records]),
            ln_obs=np.log([r.branch_loss for r in records]),
        )


def _value_and_grad(
    theta: np.ndarray, data: _BranchArrays, huber_delta: float
) -> tuple[float, np.ndarray]:
    la, lb, ld, a = theta
    # Wild starts can overflow the decay factor (and produce inf*0 = nan at
    # zero counts); the non-finite objective is recovered by line-search
    # backtracking upstream.
    with np.errstate(over="ignore", invalid="ignore"):
        decay = np.exp(a * (ld - data.ln_d))
        alpha_p = np.exp(la) * data.p
        beta_q = np.exp(lb) * data.q
        pred = data.dense + (alpha_p + beta_q) * decay
    if not np.all(np.isfinite(pred)):
        return float("inf"), np.full(4, np.nan)
    r = np.log(pred) - data.ln_obs
    value = float(np.sum(_huber(r, huber_delta)))
    hd = _huber_derivative(r, huber_delta)
    w = hd / pred
    grad = np.array(
        [
            np.sum(w * alpha_p * decay),
            np.sum(w * beta_q * decay),
            np.sum(w * (alpha_p + beta_q) * decay * a),
            np.sum(w * (alpha_p + beta_q) * decay * (ld - data.ln_d)),
        ]
    )
    return value, grad


def branch_objective(
    log_params: Sequence[float], records: Sequence["BranchRecord"], huber_delta: float
) -> float:
    """Huber objective over (log alpha_b, log beta_b, log d_d, a_exp)."""
    data = _BranchArrays.from_records(records)
    value, _ = _value_and_grad(np.asarray(log_params, dtype=float), data, huber_delta)
    return value


def branch_objective_gradient(
    log_params: Sequence[float], records: Sequence["BranchRecord"], huber_delta: float
) -> np.ndarray:
    data = _BranchArrays.from_records(records)
    _, grad = _value_and_grad(np.asarray(log_params, dtype=float), data, huber_delta)
    return grad


def _design_warnings(records: Sequence["BranchRecord"]) -> tuple[list[str], list[str]]:
    warnings: list[str] = []
    unidentifiable: list[str] = []
    if len(records) < 4:
        warnings.append(f"degenerate design: only {len(records)} records (< 4)")
    if len({r.tokens for r in records}) < 2:
        warnings.append("degenerate design: single distinct tokens value")
        unidentifiable.extend(["log_d_d", "a_exp"])
    if not any(r.upstream_count > 0 for r in records):
        warnings.append("no record with upstream_count > 0")
        unidentifiable.append("log_alpha_b")
    if not any(r.downstream_count > 0 for r in records):
        warnings.append("no record with downstream_count > 0")
        unidentifiable.append("log_beta_b")
    return warnings, unidentifiable


def fit_branch(
    records: Sequence["BranchRecord"], config: BranchFitConfig
) -> FitReport[BranchParams]:
    """Multi-start Huber fit of the branch law; same recipe as the family fit.

    The reported parameters have d_d pinned to ``config.pin_dd`` (default:
    the smallest token count in the data); ``extras`` carries the invariant
    products alpha_b*d_d**a_exp and beta_b*d_d**a_exp.
    """
    if len(records) == 0:
        raise ValueError("records must be non-empty")
    warnings, unidentifiable = _design_warnings(records)

    # Canonical order keeps the fit bit-identical under input permutations.
    canon = sorted(
        records,
        key=lambda r: (r.upstream_count, r.downstream_count, r.tokens, r.branch_loss),
    )
    data = _BranchArrays.from_records(canon)

    vag = lambda theta: _value_and_grad(theta, data, config.huber_delta)  # noqa: E731
    starts = config.start_points()
    best_idx, results = run_multistart(vag, starts, config.optimizer)

    per_start = tuple(
        StartResult(tuple(s), float(r.value), r.converged, r.termination_reason, r.iterations)
        for s, r in zip(starts, results)
    )
    winner = results[best_idx]
    best_point = tuple(float(v) for v in winner.point)
    la, lb, ld, a = best_point
    fitted = BranchParams(float(np.exp(la)), float(np.exp(lb)), float(np.exp(ld)), a)

    d_ref = min(r.tokens for r in records) if config.pin_dd == "smallest_d" else float(config.pin_dd)
    best = fitted.pinned_to(d_ref)
    prod_alpha, prod_beta = fitted.identifiable_products()

    # Residuals follow the caller's record order (elementwise, so exact).
    pred = predict_branch_loss(
        fitted,
        np.array([r.dense_loss for r in records]),
        np.array([float(r.upstream_count) for r in records]),
        np.array([float(r.downstream_count) for r in records]),
        np.array([r.tokens for r in records]),
    )
    res = np.log(pred) - np.log([r.branch_loss for r in records])
    residuals = tuple((i, float(v)) for i, v in enumerate(res))

    return FitReport(
        best=best,
        best_objective=float(winner.value),
        best_point=best_point,
        best_start=tuple(starts[best_idx]),
        param_names=config.param_names,
        per_start=per_start,
        boundary_hit=boundary_flags(
            config.grids(), config.param_names, starts[best_idx], best_point
        ),
        residuals=residuals,
        warnings=tuple(warnings),
        unidentifiable=tuple(unidentifiable),
        huber_delta=config.huber_delta,
        seed=config.seed,
        n_grid_points=int(np.prod([len(g) for g in config.grids()])),
        extras={"alpha_b_dd_a": float(prod_alpha), "beta_b_dd_a": float(prod_beta)},
    )
