"""Foundational numerical primitives.

Stable log-sum-exp, Huber loss, a deterministic limited-memory quasi-Newton
minimizer with backtracking line search, and a central-difference gradient
checker. Everything here is a pure function of its inputs: identical inputs
yield bit-identical outputs, and nothing holds shared mutable state.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

__all__ = [
    "OptimizerOptions",
    "MinimizeResult",
    "TerminationReason",
    "log_sum_exp",
    "huber",
    "huber_derivative",
    "minimize",
    "finite_diff_gradient",
]

TerminationReason = Literal[
    "gradient_tol", "step_tol", "max_iter", "line_search_fail", "non_finite"
]

# Armijo sufficient-decrease constant and backtracking factor.
_ARMIJO_C1 = 1e-4
_BACKTRACK_FACTOR = 0.5


@dataclass(frozen=True)
class OptimizerOptions:
    """Knobs for :func:`minimize`.

    Attributes:
        max_iterations: Hard cap on quasi-Newton iterations.
        gradient_tolerance: Stop when the gradient max-norm drops below this.
        step_tolerance: Stop when the accepted step max-norm drops below this.
        history_size: Number of curvature pairs kept for the two-loop update.
        line_search_max_backtracks: Step halvings tried before giving up;
            also bounds recovery from non-finite objective values.
    """

    max_iterations: int = 2000
    gradient_tolerance: float = 1e-9
    step_tolerance: float = 1e-12
    history_size: int = 10
    line_search_max_backtracks: int = 50

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.gradient_tolerance < 0:
            raise ValueError("gradient_tolerance must be >= 0")
        if self.step_tolerance < 0:
            raise ValueError("step_tolerance must be >= 0")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if self.line_search_max_backtracks < 1:
            raise ValueError("line_search_max_backtracks must be >= 1")


@dataclass(frozen=True)
class MinimizeResult:
    """Outcome of one :func:`minimize` run."""

    point: np.ndarray
    value: float
    gradient_norm: float
    iterations: int
    converged: bool
    termination_reason: TerminationReason


def log_sum_exp(xs: Sequence[float] | np.ndarray) -> float:
    """log(sum(exp(xs))) computed with a max shift so nothing overflows.

    Entries may be -inf (they contribute nothing); at least one entry must
    be finite. The result is always >= max(xs).
    """
    arr = np.asarray(xs, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("log_sum_exp requires a non-empty 1-D input")
    m = float(np.max(arr))
    if m == -np.inf:
        raise ValueError("log_sum_exp requires at least one finite entry")
    return m + float(np.log(np.sum(np.exp(arr - m))))


def huber(r, delta: float):
    """Huber penalty: r**2/2 inside |r| <= delta, linear tail outside.

    Accepts scalars or arrays; the output matches the input shape.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    # min() keeps the discarded quadratic branch from overflowing on huge residuals.
    out = np.where(a <= delta, 0.5 * np.minimum(a, delta) ** 2, delta * (a - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def huber_derivative(r, delta: float):
    """d/dr of :func:`huber`: r inside the quadratic region, delta*sign(r) outside."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    r = np.asarray(r, dtype=float)
    out = np.where(np.abs(r) <= delta, r, delta * np.sign(r))
    return float(out) if out.ndim == 0 else out


def finite_diff_gradient(
    objective: Callable[[np.ndarray], float],
    x: Sequence[float] | np.ndarray,
    h: float,
) -> np.ndarray:
    """Central-difference gradient estimate with step h per coordinate."""
    if h <= 0:
        raise ValueError("h must be > 0")
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (objective(x + e) - objective(x - e)) / (2.0 * h)
    return grad


def _two_loop_direction(
    grad: np.ndarray,
    s_hist: deque[np.ndarray],
    y_hist: deque[np.ndarray],
    rho_hist: deque[float],
) -> np.ndarray:
    """L-BFGS two-loop recursion; returns the descent direction -H*grad."""
    q = grad.copy()
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
        a = rho * float(np.dot(s, q))
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= float(np.dot(s, y)) / float(np.dot(y, y))
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return -q


def minimize(
    objective: Callable[[np.ndarray], float],
    gradient: Callable[[np.ndarray], np.ndarray],
    start: Sequence[float] | np.ndarray,
    options: OptimizerOptions = OptimizerOptions(),
    *,
    value_and_gradient: Callable[[np.ndarray], tuple[float, np.ndarray]] | None = None,
) -> MinimizeResult:
    """Limited-memory quasi-Newton descent from ``start``.

    Backtracking Armijo line search (sufficient-decrease 1e-4, halving 0.5);
    non-finite trial values are handled by backtracking further, up to
    ``line_search_max_backtracks``. The returned value never exceeds the
    objective at the start point, and the whole procedure is deterministic.

    ``value_and_gradient``, when given, is used in place of separate
    objective/gradient calls at accepted points (they typically share work).
    """
    x = np.asarray(start, dtype=float).copy()

    def eval_both(p: np.ndarray) -> tuple[float, np.ndarray]:
        if value_and_gradient is not None:
            f, g = value_and_gradient(p)
            return float(f), np.asarray(g, dtype=float)
        return float(objective(p)), np.asarray(gradient(p), dtype=float)

    f, g = eval_both(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return MinimizeResult(x, f, float("nan"), 0, False, "non_finite")

    gnorm = float(np.max(np.abs(g))) if g.size else 0.0
    if gnorm <= options.gradient_tolerance:
        return MinimizeResult(x, f, gnorm, 0, True, "gradient_tol")

    s_hist: deque[np.ndarray] = deque(maxlen=options.history_size)
    y_hist: deque[np.ndarray] = deque(maxlen=options.history_size)
    rho_hist: deque[float] = deque(maxlen=options.history_size)

    for iteration in range(1, options.max_iterations + 1):
        d = _two_loop_direction(g, s_hist, y_hist, rho_hist)
        gtd = float(np.dot(g, d))
        if gtd >= 0.0:
            d = -g
            gtd = -float(np.dot(g, g))

        # First step is scaled down when the gradient is large; afterwards
        # the unit quasi-Newton step is tried first.
        if not s_hist:
            g1 = float(np.sum(np.abs(g)))
            step = min(1.0, 1.0 / g1) if g1 > 1.0 else 1.0
        else:
            step = 1.0

        f_new = float("nan")
        x_new = x
        g_cand: np.ndarray | None = None
        accepted = False
        for _ in range(options.line_search_max_backtracks):
            x_new = x + step * d
            if value_and_gradient is not None:
                f_trial, g_cand = value_and_gradient(x_new)
                f_new = float(f_trial)
            else:
                f_new = float(objective(x_new))
            if np.isfinite(f_new) and f_new <= f + _ARMIJO_C1 * step * gtd:
                accepted = True
                break
            step *= _BACKTRACK_FACTOR
        if not accepted:
            reason: TerminationReason = (
                "non_finite" if not np.isfinite(f_new) else "line_search_fail"
            )
            return MinimizeResult(x, f, gnorm, iteration, False, reason)

        g_new = (
            np.asarray(g_cand, dtype=float)
            if g_cand is not None
            else np.asarray(gradient(x_new), dtype=float)
        )
        if not np.all(np.isfinite(g_new)):
            return MinimizeResult(x_new, f_new, float("nan"), iteration, False, "non_finite")

        s = x_new - x
        y = g_new - g
        sy = float(np.dot(s, y))
        # Skip pairs that would break positive definiteness (or underflow).
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)) and float(np.dot(y, y)) > 0.0:
            s_hist.append(s)
            y_hist.append(y)
            rho_hist.append(1.0 / sy)

        x, f, g = x_new, f_new, g_new
        gnorm = float(np.max(np.abs(g)))
        if gnorm <= options.gradient_tolerance:
            return MinimizeResult(x, f, gnorm, iteration, True, "gradient_tol")
        if float(np.max(np.abs(s))) <= options.step_tolerance:
            return MinimizeResult(x, f, gnorm, iteration, True, "step_tol")

    return MinimizeResult(x, f, gnorm, options.max_iterations, False, "max_iter")
