"""Run configuration: defaults, YAML overrides, and content digests.

A single YAML file can steer every subcommand. Any subset of keys may be
given; missing keys fall back to the defaults below, and a handful of CLI
flags (seed, kappa, max-starts) override the file. The digest of the fully
resolved configuration is embedded in every output so reruns are auditable.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Mapping

import yaml

from .fitting import BranchFitConfig, FitConfig
from .flops import ArchConfig
from .numerics import OptimizerOptions

__all__ = [
    "DEFAULT_CONFIG",
    "REFERENCE_FAMILIAL_COEFFS",
    "load_config",
    "resolve_config",
    "config_digest",
    "fit_config_from",
    "branch_fit_config_from",
    "archs_from",
    "optimizer_options_from",
]

#: Reference coefficients of a representative fitted familial law. Used as
#: the default generator for synthetic data and in the bundled examples.
REFERENCE_FAMILIAL_COEFFS = {
    "E": 1.0059,
    "A": 403.4289,
    "alpha": 0.2982,
    "B": 2980.058,
    "beta": 0.3412,
    "gamma": 0.0333,
}

_OPTIMIZER_DEFAULTS = {
    "max_iterations": 2000,
    "gradient_tolerance": 1e-9,
    "step_tolerance": 1e-12,
    "history_size": 10,
    "line_search_max_backtracks": 50,
}

#: Bundled reference architecture table: four dense baselines plus three
#: multi-exit variants sharing their backbones.
_DEFAULT_ARCHITECTURES = [
    {"name": "1B", "d_model": 1536, "ffn_size": 4608, "num_attention_heads": 12, "n_layers": 19, "exit_layers": []},
    {"name": "2B", "d_model": 2048, "ffn_size": 6144, "num_attention_heads": 16, "n_layers": 27, "exit_layers": []},
    {"name": "3B", "d_model": 2304, "ffn_size": 6912, "num_attention_heads": 18, "n_layers": 36, "exit_layers": []},
    {"name": "4B", "d_model": 2560, "ffn_size": 7680, "num_attention_heads": 20, "n_layers": 41, "exit_layers": []},
    {"name": "fam2B", "d_model": 2048, "ffn_size": 6144, "num_attention_heads": 16, "n_layers": 27, "exit_layers": [10]},
    {"name": "fam3B", "d_model": 2304, "ffn_size": 6912, "num_attention_heads": 18, "n_layers": 36, "exit_layers": [6, 20]},
    {"name": "fam4B", "d_model": 2560, "ffn_size": 7680, "num_attention_heads": 20, "n_layers": 41, "exit_layers": [4, 16, 18]},
]

DEFAULT_CONFIG: dict[str, Any] = {
    "vocab_size": 128000,
    "param_count_mode": "gated",
    "exit_overhead_fraction": 0.05,
    "fit": {
        "huber_delta": 1e-3,
        "max_starts": 2000,
        "seed": 0,
        "grid_e": [-1.0, -0.5, 0.0, 0.5, 1.0],
        "grid_a": [0.5, 5.4, 10.3, 15.2, 20.1, 25.0],
        "grid_b": [0.5, 5.4, 10.3, 15.2, 20.1, 25.0],
        "grid_alpha": [0.0, 0.5, 1.0, 1.5, 2.0],
        "grid_beta": [0.0, 0.5, 1.0, 1.5, 2.0],
        "grid_gamma": [0.0, 0.5, 1.0, 1.5, 2.0],
        "optimizer": dict(_OPTIMIZER_DEFAULTS),
    },
    "branch_fit": {
        "huber_delta": 1e-3,
        "max_starts": 2000,
        "seed": 0,
        "grid_log_alpha": [-9.0, -6.0, -3.0, 0.0],
        "grid_log_beta": [-9.0, -6.0, -3.0, 0.0],
        "grid_log_dd": [10.0, 13.0, 16.0, 19.0, 22.0],
        "grid_a_exp": [0.0, 0.5, 1.0, 1.5, 2.0],
        "pin_dd": "smallest_d",
        "optimizer": dict(_OPTIMIZER_DEFAULTS),
    },
    "architectures": _DEFAULT_ARCHITECTURES,
    "frontier": {
        "granularity": 1,
        "flops": [1e19, 3.16e19, 1e20, 3.16e20, 1e21],
    },
    "el": {
        "granularities": [3, 4, 5, 6],
        "flops_lo": 1e19,
        "flops_hi": 1e21,
        "points_per_decade": 20,
        "size_policy": "proportional",
    },
    "synth": {
        "params": dict(REFERENCE_FAMILIAL_COEFFS),
        "budgets": [1e19, 1e20, 1e21],
        "n_params": [1e8, 3.1622776601683795e8, 1e9, 3.1622776601683795e9, 1e10],
        "granularities": [1, 2, 3, 4],
        "noise_sigma": 0.0,
        "branch_params": {"alpha_b": 1e-3, "beta_b": 0.0397, "d_d": 2.75e6, "a_exp": 0.5734},
        "branch_upstream": [0, 1],
        "branch_downstream": [0, 1, 2, 3],
        "branch_tokens": [1e7, 1e8, 1e9, 1e10],
        "branch_dense_loss": 2.5,
    },
}


def _deep_merge(base: Mapping[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in base.items():
        if key in override and isinstance(value, Mapping) and isinstance(override[key], Mapping):
            out[key] = _deep_merge(value, override[key])
        elif key in override:
            out[key] = override[key]
        else:
            out[key] = value
    for key, value in override.items():
        if key not in base:
            out[key] = value
    return out


def load_config(path: str | None) -> dict[str, Any]:
    """Resolved configuration: defaults overlaid with the YAML file, if any."""
    if path is None:
        return resolve_config({})
    with open(path, "r", encoding="utf-8") as fh:
        loaded = yaml.safe_load(fh)
    if loaded is None:
        loaded = {}
    if not isinstance(loaded, dict):
        raise ValueError(f"config file must contain a mapping: {path}")
    return resolve_config(loaded)


def resolve_config(overrides: Mapping[str, Any]) -> dict[str, Any]:
    return _deep_merge(DEFAULT_CONFIG, overrides)


def config_digest(resolved: Mapping[str, Any]) -> str:
    """Stable content hash of a resolved configuration."""
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def optimizer_options_from(section: Mapping[str, Any]) -> OptimizerOptions:
    merged = {**_OPTIMIZER_DEFAULTS, **dict(section)}
    return OptimizerOptions(
        max_iterations=int(merged["max_iterations"]),
        gradient_tolerance=float(merged["gradient_tolerance"]),
        step_tolerance=float(merged["step_tolerance"]),
        history_size=int(merged["history_size"]),
        line_search_max_backtracks=int(merged["line_search_max_backtracks"]),
    )


def fit_config_from(resolved: Mapping[str, Any]) -> FitConfig:
    section = resolved["fit"]
    max_starts = section.get("max_starts")
    return FitConfig(
        huber_delta=float(section["huber_delta"]),
        grid_e=tuple(float(x) for x in section["grid_e"]),
        grid_a=tuple(float(x) for x in section["grid_a"]),
        grid_b=tuple(float(x) for x in section["grid_b"]),
        grid_alpha=tuple(float(x) for x in section["grid_alpha"]),
        grid_beta=tuple(float(x) for x in section["grid_beta"]),
        grid_gamma=tuple(float(x) for x in section["grid_gamma"]),
        optimizer=optimizer_options_from(section.get("optimizer", {})),
        max_starts=None if max_starts is None else int(max_starts),
        seed=int(section["seed"]),
    )


def branch_fit_config_from(resolved: Mapping[str, Any]) -> BranchFitConfig:
    section = resolved["branch_fit"]
    max_starts = section.get("max_starts")
    pin_dd = section.get("pin_dd", "smallest_d")
    return BranchFitConfig(
        huber_delta=float(section["huber_delta"]),
        grid_log_alpha=tuple(float(x) for x in section["grid_log_alpha"]),
        grid_log_beta=tuple(float(x) for x in section["grid_log_beta"]),
        grid_log_dd=tuple(float(x) for x in section["grid_log_dd"]),
        grid_a_exp=tuple(float(x) for x in section["grid_a_exp"]),
        optimizer=optimizer_options_from(section.get("optimizer", {})),
        max_starts=None if max_starts is None else int(max_starts),
        seed=int(section["seed"]),
        pin_dd=pin_dd if isinstance(pin_dd, str) else float(pin_dd),
    )


def archs_from(resolved: Mapping[str, Any]) -> list[ArchConfig]:
    vocab = int(resolved["vocab_size"])
    archs = []
    for row in resolved["architectures"]:
        archs.append(
            ArchConfig(
                name=str(row["name"]),
                d_model=int(row["d_model"]),
                ffn_size=int(row["ffn_size"]),
                num_attention_heads=int(row["num_attention_heads"]),
                n_layers=int(row["n_layers"]),
                vocab_size=int(row.get("vocab_size", vocab)),
                exit_layers=tuple(int(x) for x in row.get("exit_layers", [])),
            )
        )
    return archs
