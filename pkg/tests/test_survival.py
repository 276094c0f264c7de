"""Weighted Cox fitting, Breslow and composite-rate baselines, absolute risk."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskcal import (COHORT, FINITE_POPULATION, absolute_risk,
                     breslow_baseline, compute_fp_truth, cox_model_at,
                     fit_weighted_cox, par_baseline)
from riskcal.errors import ConvergenceError, ValidationError

from conftest import flat_registry, make_sample, random_sample

TOY = dict(x=[1.0, 2.0, 3.0, 4.0], d=[1.0, 1.0, 0.0, 0.0],
           covariates={"z": [1.0, 0.0, 1.0, 0.0]})


def nelson_aalen(x, d, t):
    """Independent Nelson-Aalen evaluation."""
    x = np.asarray(x)
    d = np.asarray(d)
    total = 0.0
    for tau in np.unique(x[d == 1]):
        if tau <= t:
            total += np.sum((x == tau) & (d == 1)) / np.sum(x >= tau)
    return total


class TestCoxFit:
    def test_four_unit_closed_form(self):
        s = make_sample(COHORT, **TOY)
        fit = fit_weighted_cox(s, np.ones(4), ("z",))
        assert fit.beta[0] == pytest.approx(np.log(np.sqrt(2.0)), abs=1e-8)

    def test_constant_weight_rescaling_is_noop(self):
        rng = np.random.default_rng(1)
        s = random_sample(rng, 60)
        w = rng.uniform(0.5, 4.0, 60)
        f1 = fit_weighted_cox(s, w, ("z1",), tol=1e-12)
        f2 = fit_weighted_cox(s, 7.0 * w, ("z1",), tol=1e-12)
        assert f2.beta == pytest.approx(f1.beta, abs=1e-12)
        t = np.linspace(0.0, s.x.max(), 20)
        assert breslow_baseline(f2)(t) == pytest.approx(
            breslow_baseline(f1)(t), abs=1e-12)
        reg = flat_registry(horizon=float(s.x.max()) + 1)
        assert par_baseline(f2, reg, t_max=5.0)(t.clip(max=5.0)) == pytest.approx(
            par_baseline(f1, reg, t_max=5.0)(t.clip(max=5.0)), abs=1e-12)

    def test_score_norm_below_tolerance(self):
        rng = np.random.default_rng(9)
        s = random_sample(rng, 100, p_cov=2)
        fit = fit_weighted_cox(s, rng.uniform(0.5, 3.0, 100), ("z1", "z2"),
                               tol=1e-10)
        assert fit.score_norm < 1e-10

    def test_monotone_covariate_separation(self):
        # covariate perfectly ordered with event times: partial likelihood
        # is monotone in beta
        s = make_sample(COHORT, [1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, 1.0],
                        covariates={"z": [4.0, 3.0, 2.0, 1.0]})
        with pytest.raises(ConvergenceError):
            fit_weighted_cox(s, np.ones(4), ("z",), tol=1e-13, max_iter=500)

    def test_rank_deficient_design_rejected(self):
        s = make_sample(COHORT, [1.0, 2.0, 3.0], [1.0, 1.0, 0.0],
                        covariates={"a": [1.0, 2.0, 3.0], "b": [2.0, 4.0, 6.0]})
        with pytest.raises(ValidationError):
            fit_weighted_cox(s, np.ones(3), ("a", "b"))


class TestBreslowBaseline:
    def test_reduces_to_nelson_aalen_at_null(self):
        s = make_sample(COHORT, [1.0, 2.0, 3.0], [1.0, 1.0, 0.0],
                        covariates={"z": [0.5, -0.5, 0.0]})
        fit = cox_model_at(s, np.ones(3), ("z",), np.zeros(1))
        assert breslow_baseline(fit)(2.0) == pytest.approx(1 / 3 + 1 / 2,
                                                           abs=1e-12)

    def test_zero_before_first_event(self):
        s = make_sample(COHORT, **TOY)
        fit = fit_weighted_cox(s, np.ones(4), ("z",))
        assert breslow_baseline(fit)(0.5) == 0.0
        assert breslow_baseline(fit)(0.0) == 0.0

    def test_weighted_hand_evaluation(self):
        x = np.array([1.0, 2.0, 2.0, 3.0, 4.0])
        d = np.array([1.0, 1.0, 0.0, 1.0, 0.0])
        z = np.array([0.2, -0.1, 0.4, 0.0, -0.3])
        w = np.array([1.0, 2.0, 0.5, 1.5, 1.0])
        beta = np.array([0.3])
        s = make_sample(COHORT, x, d, covariates={"z": z})
        fit = cox_model_at(s, w, ("z",), beta)
        lam = breslow_baseline(fit)

        def s0(tau):
            at = x >= tau
            return np.sum(w[at] * np.exp(beta[0] * z[at]))

        expected = (w[0] / s0(1.0)) + (w[1] / s0(2.0)) + (w[3] / s0(3.0))
        assert lam(3.5) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_null_model_matches_independent_nelson_aalen(self, seed):
        rng = np.random.default_rng(seed)
        s = random_sample(rng, 40)
        fit = cox_model_at(s, np.ones(40), ("z1",), np.zeros(1))
        lam = breslow_baseline(fit)
        for t in (0.5, 1.5, 3.0):
            assert lam(t) == pytest.approx(nelson_aalen(s.x, s.d, t),
                                           abs=1e-12)


class TestParBaseline:
    def test_null_effect_recovers_registry_hazard(self):
        rng = np.random.default_rng(3)
        s = random_sample(rng, 50)
        fit = cox_model_at(s, np.ones(50), ("z1",), np.zeros(1))
        reg = flat_registry(rate=0.02, horizon=20.0)
        # keep t_max inside the observed follow-up so risk sets stay nonempty
        lam = par_baseline(fit, reg, t_max=5.0)
        assert lam(2.5) == pytest.approx(0.05, abs=1e-12)
        assert lam(5.0) == pytest.approx(0.10, abs=1e-12)

    def test_single_unit_ratio_collapses(self):
        # with one unit at risk on [0, x], S0_free/S0 = exp(-beta * z)
        beta, z, x = 0.7, 1.3, 6.0
        s = make_sample(COHORT, [x], [1.0], covariates={"z": [z]})
        fit = cox_model_at(s, np.ones(1), ("z",), np.array([beta]))
        reg = flat_registry(rate=0.03, horizon=20.0)
        lam = par_baseline(fit, reg, t_max=5.0)
        assert lam(5.0) == pytest.approx(0.03 * 5.0 * np.exp(-beta * z),
                                         rel=1e-10)

    def test_hazard_gap_is_error(self):
        rng = np.random.default_rng(3)
        s = random_sample(rng, 20)
        fit = cox_model_at(s, np.ones(20), ("z1",), np.zeros(1))
        reg = flat_registry(horizon=4.0)
        with pytest.raises(ValidationError):
            par_baseline(fit, reg, t_max=8.0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_monotone_from_zero_both_methods(self, seed):
        rng = np.random.default_rng(seed)
        s = random_sample(rng, 40)
        fit = fit_weighted_cox(s, rng.uniform(0.5, 3.0, 40), ("z1",))
        reg = flat_registry(horizon=float(s.x.max()) + 1.0)
        grid = np.linspace(0.0, float(s.x.max()), 25)
        for lam in (breslow_baseline(fit),
                    par_baseline(fit, reg, t_max=float(grid[-1]))):
            vals = lam(grid)
            assert vals[0] == 0.0
            assert np.all(np.diff(vals) >= -1e-15)


class TestAbsoluteRisk:
    def test_zero_time_zero_risk(self):
        s = make_sample(COHORT, **TOY)
        fit = fit_weighted_cox(s, np.ones(4), ("z",))
        est = absolute_risk(fit.beta, breslow_baseline(fit), [1.0], 0.0)
        assert est.r_hat == 0.0

    def test_half_risk_identity(self):
        # Lambda0(t) * exp(beta z) = log 2 gives r = 1/2
        s = make_sample(COHORT, **TOY)
        fit = fit_weighted_cox(s, np.ones(4), ("z",))
        lam = breslow_baseline(fit)
        t = 2.5
        z = np.log(np.log(2.0) / lam(t)) / fit.beta[0]
        est = absolute_risk(fit.beta, lam, [z], t)
        assert est.r_hat == pytest.approx(0.5, rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_risk_in_unit_interval_and_nondecreasing(self, seed):
        rng = np.random.default_rng(seed)
        s = random_sample(rng, 40)
        fit = fit_weighted_cox(s, np.ones(40), ("z1",))
        lam = breslow_baseline(fit)
        z = [float(rng.standard_normal())]
        risks = [absolute_risk(fit.beta, lam, z, t).r_hat
                 for t in np.linspace(0.0, float(s.x.max()), 15)]
        assert all(0.0 <= r <= 1.0 for r in risks)
        assert np.all(np.diff(risks) >= -1e-15)

    def test_negative_time_rejected(self):
        s = make_sample(COHORT, **TOY)
        fit = fit_weighted_cox(s, np.ones(4), ("z",))
        with pytest.raises(ValidationError):
            absolute_risk(fit.beta, breslow_baseline(fit), [0.0], -1.0)


class TestFpTruth:
    def test_toy_population_closed_form(self):
        fp = make_sample(FINITE_POPULATION, **TOY)
        beta, lam, _ = compute_fp_truth(fp, ("z",))
        assert beta[0] == pytest.approx(np.log(np.sqrt(2.0)), abs=1e-8)
        assert lam(0.0) == 0.0

    def test_requires_unit_weights(self):
        fp = make_sample(FINITE_POPULATION, **TOY)
        object.__setattr__(fp, "w", np.full(4, 2.0))
        with pytest.raises(ValidationError):
            compute_fp_truth(fp, ("z",))
