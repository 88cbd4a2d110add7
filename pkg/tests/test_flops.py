import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from famscale.flops import (
    ArchConfig,
    ComputeBudget,
    approx_params,
    branch_sizes,
    flops_per_token,
    tokens_for_budget,
)

# Reference architecture rows (vocab 128000) and their hand-evaluated
# gated/untied parameter counts.
REF_ROWS = [
    ("1B", 1536, 4608, 12, 19, 975_962_112),
    ("2B", 2048, 6144, 16, 27, 1_996_488_704),
    ("3B", 2304, 6912, 18, 36, 3_074_162_688),
    ("4B", 2560, 7680, 20, 41, 4_148_428_800),
]


class TestArchConfig:
    def test_granularity(self):
        arch = ArchConfig("fam4B", 2560, 7680, 20, 41, exit_layers=(4, 16, 18))
        assert arch.granularity == 4

    def test_dense_granularity_is_one(self):
        assert ArchConfig("1B", 1536, 4608, 12, 19).granularity == 1

    def test_rejects_nondivisible_heads(self):
        with pytest.raises(ValueError):
            ArchConfig("x", 100, 300, 7, 10)

    def test_rejects_bad_exit_layers(self):
        with pytest.raises(ValueError):
            ArchConfig("x", 128, 384, 4, 10, exit_layers=(3, 3))
        with pytest.raises(ValueError):
            ArchConfig("x", 128, 384, 4, 10, exit_layers=(10,))
        with pytest.raises(ValueError):
            ArchConfig("x", 128, 384, 4, 10, exit_layers=(0,))


class TestApproxParams:
    @pytest.mark.parametrize("name,d,f,h,l,expected", REF_ROWS)
    def test_reference_rows(self, name, d, f, h, l, expected):
        arch = ArchConfig(name, d, f, h, l, vocab_size=128000)
        assert approx_params(arch) == expected

    def test_unit_size(self):
        arch = ArchConfig("unit", 1, 1, 1, 1, vocab_size=1)
        assert approx_params(arch) == 9

    def test_vocab_linearity(self):
        a1 = ArchConfig("a", 64, 192, 4, 3, vocab_size=1000)
        a2 = ArchConfig("a", 64, 192, 4, 3, vocab_size=2000)
        assert approx_params(a2) - approx_params(a1) == 2 * 64 * 1000

    def test_modes(self):
        arch = ArchConfig("m", 64, 192, 4, 3, vocab_size=1000)
        gated = approx_params(arch, "gated")
        ungated = approx_params(arch, "ungated")
        tied = approx_params(arch, "tied_embeddings")
        assert gated - ungated == 3 * 64 * 192
        assert gated - tied == 1000 * 64
        with pytest.raises(ValueError):
            approx_params(arch, "bogus")

    def test_monotone_in_each_dimension(self):
        base = ArchConfig("b", 64, 192, 4, 3, vocab_size=1000)
        assert approx_params(ArchConfig("b", 128, 192, 4, 3, vocab_size=1000)) > approx_params(base)
        assert approx_params(ArchConfig("b", 64, 256, 4, 3, vocab_size=1000)) > approx_params(base)
        assert approx_params(ArchConfig("b", 64, 192, 4, 4, vocab_size=1000)) > approx_params(base)
        assert approx_params(ArchConfig("b", 64, 192, 4, 3, vocab_size=2000)) > approx_params(base)


class TestFlopsPerToken:
    def test_dense_case(self):
        for kappa in (0.0, 0.05, 0.5):
            assert flops_per_token(1e9, 1, kappa) == 6e9

    def test_with_overhead(self):
        # 6e9 * (1 + 0.05*2) evaluated by hand
        assert flops_per_token(1e9, 3, 0.05) == pytest.approx(6.6e9, rel=1e-15)

    def test_zero_overhead_identity(self):
        for g in (1, 2, 5, 9):
            assert flops_per_token(2.5e8, g, 0.0) == 6 * 2.5e8

    def test_rejects_bad_granularity(self):
        with pytest.raises(ValueError):
            flops_per_token(1e9, 0, 0.05)


class TestTokensForBudget:
    def test_direct_division(self):
        budget = ComputeBudget(6e21, "g")
        assert tokens_for_budget(budget, 1e9, 1, 0.0) == 1e12

    def test_formula_instantiation(self):
        c, n = 3.7e20, 2.2e9
        assert tokens_for_budget(c, n, 2, 0.05) == pytest.approx(c / (6 * n * 1.05), rel=1e-15)

    def test_monotone_in_granularity(self):
        d4 = tokens_for_budget(1e20, 1e9, 4, 0.05)
        d1 = tokens_for_budget(1e20, 1e9, 1, 0.05)
        assert d4 < d1

    @given(
        st.floats(min_value=1e15, max_value=1e24),
        st.floats(min_value=1e6, max_value=1e12),
        st.integers(min_value=1, max_value=10),
        st.floats(min_value=0.0, max_value=1.0),
    )
    def test_budget_roundtrip(self, c, n, g, kappa):
        d = tokens_for_budget(c, n, g, kappa)
        assert d * flops_per_token(n, g, kappa) == pytest.approx(c, rel=1e-12)


class TestBranchSizes:
    def test_proportional(self):
        assert branch_sizes(4e9, 4) == [1e9, 2e9, 3e9, 4e9]

    def test_degenerate_family(self):
        assert branch_sizes(3.3e8, 1) == [3.3e8]

    def test_explicit(self):
        assert branch_sizes(2e9, 2, [0.5e9, 2e9]) == [0.5e9, 2e9]

    def test_explicit_must_end_at_n(self):
        with pytest.raises(ValueError):
            branch_sizes(2e9, 2, [0.5e9, 1.9e9])

    def test_explicit_must_be_increasing(self):
        with pytest.raises(ValueError):
            branch_sizes(2e9, 3, [1e9, 1e9, 2e9])

    @given(st.floats(min_value=1e3, max_value=1e12), st.integers(min_value=1, max_value=12))
    def test_increasing_and_max_is_n(self, n, g):
        sizes = branch_sizes(n, g)
        assert len(sizes) == g
        assert all(b > a for a, b in zip(sizes, sizes[1:]))
        assert sizes[-1] == n
