"""Shared fixtures: reference laws, synthetic designs, held-out grids."""

from __future__ import annotations

import numpy as np
import pytest

import famscale as fs

# Reference coefficients of a representative fitted familial law; also the
# package's default synthetic-data generator (see famscale.config).
REF_FAMILIAL = fs.FamilialParams(
    E=1.0059, A=403.4289, B=2980.058, alpha=0.2982, beta=0.3412, gamma=0.0333
)

# Reference coefficients of a representative fitted branch law.
REF_BRANCH = fs.BranchParams(alpha_b=1e-3, beta_b=0.0397, d_d=2.75e6, a_exp=0.5734)

# IsoFLOP design used throughout: 3 budgets x 5 sizes x 4 granularities.
BUDGETS = (1e19, 1e20, 1e21)
N_VALUES = tuple(np.logspace(8, 10, 5))
G_VALUES = (1, 2, 3, 4)
KAPPA = 0.05

# Held-out evaluation grid, disjoint from the training design.
HELDOUT_N = tuple(np.logspace(8.2, 9.8, 5))
HELDOUT_D = tuple(np.logspace(9.5, 11.5, 5))
HELDOUT_G = (1, 2, 3, 4)


def iso_design():
    return [(c, n, g) for c in BUDGETS for n in N_VALUES for g in G_VALUES]


def heldout_max_rel_err(params: fs.FamilialParams, truth: fs.FamilialParams) -> float:
    """Worst relative prediction gap between two laws on the held-out grid."""
    worst = 0.0
    for n in HELDOUT_N:
        for d in HELDOUT_D:
            for g in HELDOUT_G:
                p = fs.predict_loss(params, n, d, g)
                t = fs.predict_loss(truth, n, d, g)
                worst = max(worst, abs(p - t) / t)
    return worst


def branch_design(d_values=None):
    if d_values is None:
        d_values = np.logspace(7, 10, 6)
    return [
        (p, q, float(d), 2.5 + 0.2 * (1e9 / float(d)) ** 0.1)
        for p in (0, 1)
        for q in (0, 1, 2, 3)
        for d in d_values
    ]


@pytest.fixture(scope="session")
def ref_params() -> fs.FamilialParams:
    return REF_FAMILIAL


@pytest.fixture(scope="session")
def ref_branch_params() -> fs.BranchParams:
    return REF_BRANCH


@pytest.fixture(scope="session")
def noiseless_runs() -> list[fs.RunRecord]:
    return fs.synth_runs(REF_FAMILIAL, iso_design(), KAPPA, 0.0, seed=0)


@pytest.fixture(scope="session")
def noiseless_branches() -> list[fs.BranchRecord]:
    return fs.synth_branches(REF_BRANCH, branch_design(), 0.0, seed=0)
