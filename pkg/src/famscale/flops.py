"""Parameter counts, per-token training FLOPs, and token budgets.

The dense training-cost model is the standard 6*N FLOPs per token. Each
intermediate exit head adds a configurable fraction ``kappa`` of that cost,
so a family with granularity G trains at ``6*N*(1 + kappa*(G-1))`` FLOPs per
token and receives correspondingly fewer tokens under a fixed budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence, Union

__all__ = [
    "ArchConfig",
    "ComputeBudget",
    "ParamCountMode",
    "approx_params",
    "flops_per_token",
    "tokens_for_budget",
    "branch_sizes",
]

ParamCountMode = Literal["gated", "ungated", "tied_embeddings"]

#: Documented default vocabulary size used when an architecture table omits it.
DEFAULT_VOCAB_SIZE = 128000

#: Documented default per-exit FLOPs overhead fraction.
DEFAULT_EXIT_OVERHEAD = 0.05


@dataclass(frozen=True)
class ArchConfig:
    """One row of an architecture table.

    ``exit_layers`` lists the intermediate layers carrying extra prediction
    heads (strictly increasing, all below ``n_layers``); the final layer's
    head is implicit, so granularity is ``len(exit_layers) + 1``.
    """

    name: str
    d_model: int
    ffn_size: int
    num_attention_heads: int
    n_layers: int
    vocab_size: int = DEFAULT_VOCAB_SIZE
    exit_layers: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        for fname in ("d_model", "ffn_size", "num_attention_heads", "n_layers", "vocab_size"):
            if getattr(self, fname) < 1:
                raise ValueError(f"{fname} must be a positive count")
        if self.d_model % self.num_attention_heads != 0:
            raise ValueError("d_model must be divisible by num_attention_heads")
        object.__setattr__(self, "exit_layers", tuple(int(x) for x in self.exit_layers))
        prev = 0
        for layer in self.exit_layers:
            if layer <= prev:
                raise ValueError("exit_layers must be strictly increasing")
            if not 1 <= layer <= self.n_layers - 1:
                raise ValueError("exit_layers must lie in [1, n_layers - 1]")
            prev = layer

    @property
    def granularity(self) -> int:
        return len(self.exit_layers) + 1


@dataclass(frozen=True)
class ComputeBudget:
    """A fixed total training compute, in FLOPs, with a human label."""

    total_flops: float
    group_label: str = ""

    def __post_init__(self) -> None:
        if not self.total_flops > 0:
            raise ValueError("total_flops must be > 0")


def _budget_flops(budget: Union[ComputeBudget, float]) -> float:
    flops = budget.total_flops if isinstance(budget, ComputeBudget) else float(budget)
    if not flops > 0:
        raise ValueError("compute budget must be > 0 FLOPs")
    return flops


def approx_params(arch: ArchConfig, mode: ParamCountMode = "gated") -> int:
    """Approximate backbone parameter count for an architecture row.

    Default counting assumes a gated (3-matrix) FFN block and untied
    input/output embeddings:

        n_layers * (4*d_model**2 + 3*d_model*ffn_size) + 2*vocab_size*d_model

    ``mode`` switches to an ungated (2-matrix) FFN or to tied embeddings.
    """
    d, f = arch.d_model, arch.ffn_size
    if mode == "gated":
        per_layer = 4 * d * d + 3 * d * f
        embed = 2 * arch.vocab_size * d
    elif mode == "ungated":
        per_layer = 4 * d * d + 2 * d * f
        embed = 2 * arch.vocab_size * d
    elif mode == "tied_embeddings":
        per_layer = 4 * d * d + 3 * d * f
        embed = arch.vocab_size * d
    else:
        raise ValueError(f"unknown param-count mode: {mode!r}")
    return arch.n_layers * per_layer + embed


def flops_per_token(
    n_params: float, granularity: int, exit_overhead_fraction: float
) -> float:
    """Training FLOPs per token: ``6*N*(1 + kappa*(G-1))``.

    Granularity 1 reduces exactly to the dense estimate ``6*N``.
    """
    if not n_params > 0:
        raise ValueError("n_params must be > 0")
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    if exit_overhead_fraction < 0:
        raise ValueError("exit_overhead_fraction must be >= 0")
    return 6.0 * n_params * (1.0 + exit_overhead_fraction * (granularity - 1))


def tokens_for_budget(
    budget: Union[ComputeBudget, float],
    n_params: float,
    granularity: int,
    exit_overhead_fraction: float,
) -> float:
    """Token budget implied by a fixed compute constraint.

    Strictly decreasing in granularity whenever the exit overhead is
    positive: extra heads raise the per-token cost, so fewer tokens fit.
    """
    return _budget_flops(budget) / flops_per_token(
        n_params, granularity, exit_overhead_fraction
    )


def branch_sizes(
    n_params: float,
    granularity: int,
    policy: Union[Literal["proportional"], Sequence[float]] = "proportional",
) -> list[float]:
    """Parameter sizes of the G deployable sub-models of a family.

    The proportional policy places exits at evenly spaced parameter
    fractions: ``g * n_params / granularity`` for g = 1..G, so the last
    entry is always the full backbone. An explicit list (strictly
    increasing, length G, ending at ``n_params``) overrides it.
    """
    if not n_params > 0:
        raise ValueError("n_params must be > 0")
    if granularity < 1:
        raise ValueError("granularity must be >= 1")
    if isinstance(policy, str):
        if policy != "proportional":
            raise ValueError(f"unknown branch-size policy: {policy!r}")
        # Last entry is the full backbone, kept exact rather than recomputed.
        sizes = [g * n_params / granularity for g in range(1, granularity)]
        sizes.append(float(n_params))
        return sizes

    sizes = [float(s) for s in policy]
    if len(sizes) != granularity:
        raise ValueError("explicit size list length must equal granularity")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("explicit size list must be strictly increasing")
    if any(s <= 0 for s in sizes):
        raise ValueError("branch sizes must be positive")
    if abs(sizes[-1] - n_params) > 1e-9 * n_params:
        raise ValueError("explicit size list must end at n_params")
    return sizes
