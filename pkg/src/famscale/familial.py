"""The granularity-extended family loss law and its robust fit.

The law is L(N, D, G) = (E + A*N**-alpha + B*D**-beta) * G**gamma: an
additive power-law decay toward an irreducible floor E, scaled by a
multiplicative granularity factor. Fitting happens in the log domain, with
E = exp(e), A = exp(a), B = exp(b) to keep the coefficients positive, a
log-sum-exp evaluation so nothing overflows, and a Huber penalty on
log-residuals so transient loss spikes cannot skew the fit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .fitting import (
    FitConfig,
    FitReport,
    StartResult,
    boundary_flags,
    run_multistart,
)
from .numerics import huber as _huber
from .numerics import huber_derivative as _huber_derivative

if TYPE_CHECKING:
    from .records import RunRecord

__all__ = [
    "FamilialParams",
    "predict_loss",
    "predict_log_loss",
    "objective",
    "objective_gradient",
    "fit",
    "invert_for_tokens",
]


@dataclass(frozen=True)
class FamilialParams:
    """Six coefficients of the family loss law.

    E, A, B are strictly positive (the fit guarantees this through its
    exponential parameterization); ``e``/``a``/``b`` expose their logs.
    """

    E: float
    A: float
    B: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self) -> None:
        for name in ("E", "A", "B"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("alpha", "beta", "gamma"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def e(self) -> float:
        return float(np.log(self.E))

    @property
    def a(self) -> float:
        return float(np.log(self.A))

    @property
    def b(self) -> float:
        return float(np.log(self.B))

    @classmethod
    def from_log(
        cls, e: float, a: float, b: float, alpha: float, beta: float, gamma: float
    ) -> "FamilialParams":
        return cls(
            E=float(np.exp(e)),
            A=float(np.exp(a)),
            B=float(np.exp(b)),
            alpha=float(alpha),
            beta=float(beta),
            gamma=float(gamma),
        )

    def to_log_array(self) -> np.ndarray:
        return np.array([self.e, self.a, self.b, self.alpha, self.beta, self.gamma])

    def as_dict(self) -> dict[str, float]:
        return {
            "E": self.E,
            "A": self.A,
            "B": self.B,
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
        }


def _validate_inputs(n_params, tokens, granularity) -> None:
    if np.any(np.asarray(n_params) <= 0):
        raise ValueError("n_params must be positive")
    if np.any(np.asarray(tokens) <= 0):
        raise ValueError("tokens must be positive")
    if np.any(np.asarray(granularity) <= 0):
        raise ValueError("granularity must be positive")


def predict_loss(params: FamilialParams, n_params, tokens, granularity):
    """Family-average loss at (N, D, G); scalars or arrays broadcast."""
    _validate_inputs(n_params, tokens, granularity)
    n = np.asarray(n_params, dtype=float)
    d = np.asarray(tokens, dtype=float)
    g = np.asarray(granularity, dtype=float)
    core = params.E + params.A * n ** -params.alpha + params.B * d ** -params.beta
    out = core * g**params.gamma
    return float(out) if out.ndim == 0 else out


def predict_log_loss(log_params: Sequence[float], n_params, tokens, granularity):
    """log of :func:`predict_loss` from log-domain coefficients.

    ``log_params`` is (e, a, b, alpha, beta, gamma). The three additive
    terms are combined with a shifted log-sum-exp, so the result stays
    finite even where exp(a - alpha*log N) would overflow a float.
    """
    _validate_inputs(n_params, tokens, granularity)
    e, a, b, alpha, beta, gamma = (float(v) for v in log_params)
    ln_n = np.log(np.asarray(n_params, dtype=float))
    ln_d = np.log(np.asarray(tokens, dtype=float))
    ln_g = np.log(np.asarray(granularity, dtype=float))
    out = _lse3(e, a - alpha * ln_n, b - beta * ln_d) + gamma * ln_g
    return float(out) if np.ndim(out) == 0 else out


def _lse3(x, y, z):
    """Elementwise log(exp(x) + exp(y) + exp(z)) with max shift."""
    m = np.maximum(x, np.maximum(y, z))
    return m + np.log(np.exp(x - m) + np.exp(y - m) + np.exp(z - m))


@dataclass(frozen=True)
class _RunArrays:
    """Precomputed log-domain columns of a run dataset."""

    ln_n: np.ndarray
    ln_d: np.ndarray
    ln_g: np.ndarray
    ln_loss: np.ndarray

    @classmethod
    def from_records(cls, records: Sequence["RunRecord"]) -> "_RunArrays":
        if len(records) == 0:
            raise ValueError("records must be non-empty")
        return cls(
            ln_n=np.log([r.n_params for r in records]),
            ln_d=np.log([r.tokens for r in records]),
            ln_g=np.log([float(r.granularity) for r in records]),
            ln_loss=np.log([r.loss for r in records]),
        )


def _residuals(theta: np.ndarray, data: _RunArrays) -> tuple[np.ndarray, ...]:
    """Log-residuals plus the softmax weights of the three LSE terms."""
    e, a, b, alpha, beta, gamma = theta
    t_e = e
    t_a = a - alpha * data.ln_n
    t_b = b - beta * data.ln_d
    m = np.maximum(t_e, np.maximum(t_a, t_b))
    w_e = np.exp(t_e - m)
    w_a = np.exp(t_a - m)
    w_b = np.exp(t_b - m)
    total = w_e + w_a + w_b
    log_pred = m + np.log(total) + gamma * data.ln_g
    r = log_pred - data.ln_loss
    return r, w_e / total, w_a / total, w_b / total


def _value_and_grad(
    theta: np.ndarray, data: _RunArrays, huber_delta: float
) -> tuple[float, np.ndarray]:
    r, w_e, w_a, w_b = _residuals(theta, data)
    value = float(np.sum(_huber(r, huber_delta)))
    hd = _huber_derivative(r, huber_delta)
    grad = np.array(
        [
            np.sum(hd * w_e),
            np.sum(hd * w_a),
            np.sum(hd * w_b),
            -np.sum(hd * w_a * data.ln_n),
            -np.sum(hd * w_b * data.ln_d),
            np.sum(hd * data.ln_g),
        ]
    )
    return value, grad


def objective(
    log_params: Sequence[float], records: Sequence["RunRecord"], huber_delta: float
) -> float:
    """Sum of Huber losses of the log-residuals over all records."""
    data = _RunArrays.from_records(records)
    value, _ = _value_and_grad(np.asarray(log_params, dtype=float), data, huber_delta)
    return value


def objective_gradient(
    log_params: Sequence[float], records: Sequence["RunRecord"], huber_delta: float
) -> np.ndarray:
    """Analytic gradient of :func:`objective` wrt (e, a, b, alpha, beta, gamma)."""
    data = _RunArrays.from_records(records)
    _, grad = _value_and_grad(np.asarray(log_params, dtype=float), data, huber_delta)
    return grad


def _design_warnings(records: Sequence["RunRecord"]) -> tuple[list[str], list[str]]:
    warnings: list[str] = []
    unidentifiable: list[str] = []
    if len(records) < 7:
        warnings.append(f"degenerate design: only {len(records)} records (< 7)")
    n_distinct = len({r.n_params for r in records})
    d_distinct = len({r.tokens for r in records})
    g_distinct = len({r.granularity for r in records})
    if n_distinct < 2:
        warnings.append("degenerate design: single distinct n_params value")
        unidentifiable.extend(["a", "alpha"])
    if d_distinct < 2:
        warnings.append("degenerate design: single distinct tokens value")
        unidentifiable.extend(["b", "beta"])
    if g_distinct < 2:
        warnings.append("degenerate design: single distinct granularity value")
        unidentifiable.append("gamma")
    return warnings, unidentifiable


def fit(records: Sequence["RunRecord"], config: FitConfig) -> FitReport[FamilialParams]:
    """Multi-start Huber fit of the family law to observed runs.

    Every grid start (or a deterministic stratified subsample of size
    ``config.max_starts``) is minimized independently; the lowest final
    objective wins, with ties broken toward the lexicographically smallest
    start. Degenerate designs are reported through ``warnings`` and
    ``unidentifiable`` rather than rejected.
    """
    if len(records) == 0:
        raise ValueError("records must be non-empty")
    warnings, unidentifiable = _design_warnings(records)

    # Canonical record order makes the fit bit-identical under permutations
    # of the input (summation order would otherwise leak into the result).
    canon = sorted(records, key=lambda r: (r.n_params, r.tokens, r.granularity, r.loss))
    data = _RunArrays.from_records(canon)

    vag = lambda theta: _value_and_grad(theta, data, config.huber_delta)  # noqa: E731
    starts = config.start_points()
    best_idx, results = run_multistart(vag, starts, config.optimizer)

    per_start = tuple(
        StartResult(tuple(s), float(r.value), r.converged, r.termination_reason, r.iterations)
        for s, r in zip(starts, results)
    )
    winner = results[best_idx]
    best_point = tuple(float(v) for v in winner.point)
    best = FamilialParams.from_log(*best_point)

    # Residuals follow the caller's record order (elementwise, so exact).
    res, _, _, _ = _residuals(np.asarray(best_point), _RunArrays.from_records(records))
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
    )


def invert_for_tokens(
    params: FamilialParams, target_loss: float, n_params: float, granularity: int
) -> float | None:
    """Token count needed to reach ``target_loss`` at fixed (N, G).

    Returns None when the target is infeasible: at or below the N-limited
    floor (E + A*N**-alpha) * G**gamma, no finite token count suffices.
    """
    if not target_loss > 0:
        raise ValueError("target_loss must be > 0")
    if not params.beta > 0:
        raise ValueError("inversion requires beta > 0 (no token dependence otherwise)")
    _validate_inputs(n_params, 1.0, granularity)
    g_term = float(granularity) ** -params.gamma
    remainder = target_loss * g_term - params.E - params.A * float(n_params) ** -params.alpha
    if remainder <= 0:
        return None
    return float((params.B / remainder) ** (1.0 / params.beta))
