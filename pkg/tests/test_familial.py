import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import famscale as fs
from conftest import KAPPA, REF_FAMILIAL, heldout_max_rel_err, iso_design

# Frozen regression constants, evaluated independently at 40-digit precision
# from the reference coefficients.
REF_LOSS_N1E9_D2E10_G1 = 2.7524288517340283
REF_LOSS_N1E8_D1E9_G3 = 5.3915779167117643
REF_LOSS_N5E9_D1E11_G4 = 2.1458055753193490
TWO_POW_GAMMA = 1.0233502473123335  # 2**0.0333

small_cfg = fs.FitConfig(max_starts=100, seed=0)


def random_params(rng) -> fs.FamilialParams:
    return fs.FamilialParams(
        E=float(rng.uniform(0.7, 1.5)),
        A=float(np.exp(rng.uniform(4, 8))),
        B=float(np.exp(rng.uniform(5, 10))),
        alpha=float(rng.uniform(0.2, 0.5)),
        beta=float(rng.uniform(0.25, 0.55)),
        gamma=float(rng.uniform(0.0, 0.1)),
    )


class TestFamilialParams:
    def test_log_linear_agreement(self):
        p = REF_FAMILIAL
        assert np.exp(p.e) == pytest.approx(p.E, rel=1e-12)
        assert np.exp(p.a) == pytest.approx(p.A, rel=1e-12)
        assert np.exp(p.b) == pytest.approx(p.B, rel=1e-12)

    def test_from_log_roundtrip(self):
        p = fs.FamilialParams.from_log(*REF_FAMILIAL.to_log_array())
        assert p.E == pytest.approx(REF_FAMILIAL.E, rel=1e-12)
        assert p.alpha == REF_FAMILIAL.alpha

    def test_rejects_nonpositive_coefficients(self):
        with pytest.raises(ValueError):
            fs.FamilialParams(E=0.0, A=1.0, B=1.0, alpha=0.3, beta=0.3, gamma=0.0)
        with pytest.raises(ValueError):
            fs.FamilialParams(E=1.0, A=-2.0, B=1.0, alpha=0.3, beta=0.3, gamma=0.0)


class TestPredictLoss:
    def test_frozen_reference_values(self):
        assert fs.predict_loss(REF_FAMILIAL, 1e9, 2e10, 1) == pytest.approx(
            REF_LOSS_N1E9_D2E10_G1, rel=1e-14
        )
        assert fs.predict_loss(REF_FAMILIAL, 1e8, 1e9, 3) == pytest.approx(
            REF_LOSS_N1E8_D1E9_G3, rel=1e-14
        )
        assert fs.predict_loss(REF_FAMILIAL, 5e9, 1e11, 4) == pytest.approx(
            REF_LOSS_N5E9_D1E11_G4, rel=1e-14
        )

    def test_g1_multiplier_is_exactly_one(self):
        dense = REF_FAMILIAL.E + REF_FAMILIAL.A * 1e9**-REF_FAMILIAL.alpha + \
            REF_FAMILIAL.B * 2e10**-REF_FAMILIAL.beta
        assert fs.predict_loss(REF_FAMILIAL, 1e9, 2e10, 1) == dense

    def test_g_ratio_constant(self):
        r1 = fs.predict_loss(REF_FAMILIAL, 1e9, 2e10, 2) / fs.predict_loss(
            REF_FAMILIAL, 1e9, 2e10, 1
        )
        r2 = fs.predict_loss(REF_FAMILIAL, 3e8, 5e11, 2) / fs.predict_loss(
            REF_FAMILIAL, 3e8, 5e11, 1
        )
        assert r1 == pytest.approx(TWO_POW_GAMMA, rel=1e-12)
        assert r2 == pytest.approx(TWO_POW_GAMMA, rel=1e-12)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            fs.predict_loss(REF_FAMILIAL, -1e9, 2e10, 1)
        with pytest.raises(ValueError):
            fs.predict_loss(REF_FAMILIAL, 1e9, 0.0, 1)
        with pytest.raises(ValueError):
            fs.predict_loss(REF_FAMILIAL, 1e9, 2e10, 0)

    def test_monotonicity_sweeps(self):
        ns = np.logspace(7, 11, 40)
        losses_n = fs.predict_loss(REF_FAMILIAL, ns, 1e10, 1)
        assert np.all(np.diff(losses_n) < 0)
        ds = np.logspace(8, 12, 40)
        losses_d = fs.predict_loss(REF_FAMILIAL, 1e9, ds, 1)
        assert np.all(np.diff(losses_d) < 0)
        losses_g = [fs.predict_loss(REF_FAMILIAL, 1e9, 1e10, g) for g in range(1, 9)]
        assert np.all(np.diff(losses_g) > 0)

    def test_always_above_floor(self):
        for g in (1, 2, 4):
            floor = REF_FAMILIAL.E * g**REF_FAMILIAL.gamma
            assert fs.predict_loss(REF_FAMILIAL, 1e12, 1e14, g) > floor


class TestPredictLogLoss:
    def test_degenerate_floor_only_law(self):
        # A = B = 0 limit via a = b = -inf; loss 1 at the floor
        out = fs.predict_log_loss((0.0, -np.inf, -np.inf, 0.5, 0.5, 0.7), 1e9, 1e10, 1)
        assert out == 0.0

    def test_matches_linear_form(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(100):
            p = random_params(rng)
            n = 10 ** rng.uniform(6, 12)
            d = 10 ** rng.uniform(7, 13)
            g = int(rng.integers(1, 7))
            lhs = np.exp(fs.predict_log_loss(p.to_log_array(), n, d, g))
            rhs = fs.predict_loss(p, n, d, g)
            worst = max(worst, abs(lhs - rhs) / rhs)
        assert worst <= 1e-12

    def test_finite_where_linear_form_overflows(self):
        # exp(a) alone would overflow; the log-domain path must stay finite.
        out = fs.predict_log_loss((0.0, 800.0, 5.0, 2.0, 0.3, 0.0), 1e9, 1e10, 1)
        assert np.isfinite(out)

    def test_g1_contributes_zero(self):
        theta = REF_FAMILIAL.to_log_array()
        theta_nogamma = theta.copy()
        theta_nogamma[5] = 0.0
        a = fs.predict_log_loss(theta, 1e9, 1e10, 1)
        b = fs.predict_log_loss(theta_nogamma, 1e9, 1e10, 1)
        assert a == b


class TestObjective:
    def test_zero_on_self_generated_data(self, noiseless_runs):
        obj = fs.objective(REF_FAMILIAL.to_log_array(), noiseless_runs, 1e-3)
        assert obj == pytest.approx(0.0, abs=1e-24)

    def test_single_record_at_huber_boundary(self):
        # Observation off by exactly delta in log space: objective = delta**2 / 2.
        rec = fs.RunRecord(1e9, 1e10, 1, fs.predict_loss(REF_FAMILIAL, 1e9, 1e10, 1))
        theta = REF_FAMILIAL.to_log_array()
        delta = 1e-3
        rec_off = fs.RunRecord(rec.n_params, rec.tokens, rec.granularity,
                               rec.loss * float(np.exp(delta)))
        assert fs.objective(theta, [rec_off], delta) == pytest.approx(delta**2 / 2, rel=1e-9)

    def test_order_invariance(self, noiseless_runs):
        rng = np.random.default_rng(5)
        theta = REF_FAMILIAL.to_log_array() + rng.normal(0, 0.1, 6)
        shuffled = list(noiseless_runs)
        rng.shuffle(shuffled)
        a = fs.objective(theta, noiseless_runs, 1e-3)
        b = fs.objective(theta, shuffled, 1e-3)
        assert a == pytest.approx(b, rel=1e-12)

    def test_empty_records_rejected(self):
        with pytest.raises(ValueError):
            fs.objective(REF_FAMILIAL.to_log_array(), [], 1e-3)


class TestObjectiveGradient:
    def test_zero_at_perfect_fit(self, noiseless_runs):
        # Residuals sit at the 1e-16 roundoff floor, so the gradient does too.
        g = fs.objective_gradient(REF_FAMILIAL.to_log_array(), noiseless_runs, 1e-3)
        np.testing.assert_allclose(g, np.zeros(6), atol=1e-12)

    def test_gamma_component_structure(self):
        # Single record: d/dgamma = huber'(r, delta) * log(G); zero at G = 1.
        rec1 = fs.RunRecord(1e9, 1e10, 1, 2.0)
        rec3 = fs.RunRecord(1e9, 1e10, 3, 2.0)
        theta = REF_FAMILIAL.to_log_array()
        delta = 1e-3
        g1 = fs.objective_gradient(theta, [rec1], delta)
        assert g1[5] == 0.0
        g3 = fs.objective_gradient(theta, [rec3], delta)
        r = fs.predict_log_loss(theta, 1e9, 1e10, 3) - np.log(2.0)
        expected = fs.huber_derivative(float(r), delta) * np.log(3.0)
        assert g3[5] == pytest.approx(expected, rel=1e-12)

    def test_matches_finite_differences(self, noiseless_runs):
        rng = np.random.default_rng(11)
        for _ in range(10):
            theta = REF_FAMILIAL.to_log_array() + rng.normal(0, 0.25, 6)
            g_an = fs.objective_gradient(theta, noiseless_runs, 1e-3)
            g_fd = fs.finite_diff_gradient(
                lambda t: fs.objective(t, noiseless_runs, 1e-3), theta, 1e-6
            )
            rel = np.max(np.abs(g_an - g_fd)) / max(np.max(np.abs(g_an)), 1e-8)
            assert rel <= 1e-5


class TestFit:
    def test_recovers_generating_law(self, noiseless_runs):
        report = fs.fit(noiseless_runs, small_cfg)
        assert heldout_max_rel_err(report.best, REF_FAMILIAL) <= 1e-3
        assert report.best_objective <= 1e-12
        assert not any(report.boundary_hit.values())

    def test_deterministic_and_order_invariant(self, noiseless_runs):
        cfg = fs.FitConfig(max_starts=40, seed=0)
        rep1 = fs.fit(noiseless_runs, cfg)
        rep2 = fs.fit(list(reversed(noiseless_runs)), cfg)
        assert rep1.best == rep2.best
        assert rep1.best_objective == rep2.best_objective

    def test_best_objective_is_min_over_starts(self, noiseless_runs):
        report = fs.fit(noiseless_runs, small_cfg)
        finite = [s.objective for s in report.per_start if np.isfinite(s.objective)]
        assert report.best_objective == min(finite)

    def test_residuals_cover_all_records(self, noiseless_runs):
        report = fs.fit(noiseless_runs, small_cfg)
        assert len(report.residuals) == len(noiseless_runs)
        assert [i for i, _ in report.residuals] == list(range(len(noiseless_runs)))

    def test_all_g1_flags_gamma_unidentifiable(self):
        design = [(c, n, 1) for c in (1e19, 1e20, 1e21) for n in np.logspace(8, 10, 5)]
        recs = fs.synth_runs(REF_FAMILIAL, design, KAPPA, 0.0, seed=0)
        report = fs.fit(recs, fs.FitConfig(max_starts=40, seed=0))
        assert "gamma" in report.unidentifiable
        assert any("granularity" in w for w in report.warnings)
        # dense coefficients are still recovered
        errs = [
            abs(fs.predict_loss(report.best, n, d, 1) - fs.predict_loss(REF_FAMILIAL, n, d, 1))
            / fs.predict_loss(REF_FAMILIAL, n, d, 1)
            for n in np.logspace(8.2, 9.8, 4)
            for d in np.logspace(9.5, 11.5, 4)
        ]
        assert max(errs) <= 1e-3

    def test_too_few_records_warns(self):
        design = [(1e19, n, g) for n, g in [(1e8, 1), (1e9, 2), (1e10, 3)]]
        recs = fs.synth_runs(REF_FAMILIAL, design, KAPPA, 0.0, seed=0)
        report = fs.fit(recs, fs.FitConfig(max_starts=20, seed=0))
        assert any("records" in w for w in report.warnings)


class TestInvertForTokens:
    def test_roundtrip(self):
        for n in (1e8, 1e9, 7e10):
            for g in (1, 2, 4):
                d = 3.3e10
                target = fs.predict_loss(REF_FAMILIAL, n, d, g)
                d_back = fs.invert_for_tokens(REF_FAMILIAL, target, n, g)
                assert d_back == pytest.approx(d, rel=1e-10)

    def test_below_floor_infeasible(self):
        target = REF_FAMILIAL.E * 2**REF_FAMILIAL.gamma * 0.999
        assert fs.invert_for_tokens(REF_FAMILIAL, target, 1e9, 2) is None

    def test_n_limited_floor_infeasible(self):
        g = 2
        target = (REF_FAMILIAL.E + REF_FAMILIAL.A * 1e9**-REF_FAMILIAL.alpha) * \
            g**REF_FAMILIAL.gamma
        assert fs.invert_for_tokens(REF_FAMILIAL, target, 1e9, g) is None

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValueError):
            fs.invert_for_tokens(REF_FAMILIAL, 0.0, 1e9, 1)


@given(
    st.floats(min_value=0.8, max_value=1.4),
    st.floats(min_value=0.01, max_value=0.2),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=6),
)
@settings(max_examples=60)
def test_g_ratio_identity_property(e_val, gamma, g1, g2):
    """predict(., G2) / predict(., G1) == (G2/G1)**gamma to 1e-12 relative."""
    p = fs.FamilialParams(E=e_val, A=100.0, B=1000.0, alpha=0.3, beta=0.35, gamma=gamma)
    ratio = fs.predict_loss(p, 1e9, 1e10, g2) / fs.predict_loss(p, 1e9, 1e10, g1)
    assert ratio == pytest.approx((g2 / g1) ** gamma, rel=1e-12)
