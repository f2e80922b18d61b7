import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hyperdrift.constants import (
    check_generator_bound,
    decay_constants,
    feasible_horizon,
    generator_bound,
    khasminskii_bound,
    khasminskii_ratio,
    lambda_threshold,
    proof_constants,
    rho,
    rho_upper,
)
from hyperdrift.errors import DomainError, ThresholdNotMetError
from hyperdrift.model import ModelConstants, bang_bang_model, ou_model, smooth_model

BB = bang_bang_model(0.5).declared
SMOOTH = smooth_model().declared
OU = ou_model(2).declared


def consts(a=0.5, s=math.sqrt(2), D=1.0, B=1.0, K_alpha=0.0, K_sigma=0.0, alpha=0.5):
    return ModelConstants(K_alpha, K_sigma, K_alpha, K_sigma, max(alpha, a), a, s, B, D)


constant_sets = st.builds(
    consts,
    a=st.floats(0, 2),
    s=st.floats(0.1, 3),
    D=st.floats(0.01, 3),
    B=st.floats(0.1, 2),
    K_alpha=st.floats(0, 2),
    K_sigma=st.floats(0, 1),
)


class TestRho:
    def test_zero_time(self):
        assert rho(0.0, 3.0, BB) == 0.0
        assert rho_upper(0.0, 3.0, BB) == 0.0

    def test_worked_value(self):
        assert rho(1.0, 1.0, BB) == pytest.approx(2.930, abs=1e-3)
        assert rho(1.0, 1.0, BB) == pytest.approx(oracles.RHO_EXAMPLE, rel=1e-14)

    def test_no_drift(self):
        c = consts(a=0.0, s=1.0)
        assert rho(1.0, 1.0, c) == pytest.approx(5 / 3, rel=1e-14)

    def test_upper_worked_value(self):
        assert rho_upper(1.0, 1.0, BB) == pytest.approx(3.0, rel=1e-14)

    def test_domain(self):
        with pytest.raises(DomainError):
            rho(-1.0, 1.0, BB)
        with pytest.raises(DomainError):
            rho_upper(1.0, 0.4, BB)

    @settings(max_examples=100, deadline=None)
    @given(constant_sets, st.floats(0, 10), st.floats(1e-3, 10), st.floats(0.5, 100))
    def test_properties(self, c, t, dt, lam):
        assert rho(t + dt, lam, c) > rho(t, lam, c)
        assert rho(t, lam, c) == pytest.approx(oracles.rho(t, lam, c.norm_alpha_d_inf, c.norm_sigma_inf), rel=1e-12)
        assert rho_upper(t, lam, c) >= rho(t, lam, c) * (1 - 1e-14)


class TestThreshold:
    def test_ou(self):
        assert lambda_threshold(OU) == (0.5, math.inf)

    def test_drift_growth_only(self):
        c = ModelConstants(3, 0, 3, 0, 0, 0, 1, 1, 0)
        assert lambda_threshold(c)[0] == pytest.approx(4.0)

    def test_bang_bang_frozen(self):
        assert proof_constants(BB) == pytest.approx((3.0, 1.0, 2.0), rel=1e-14)
        Lam, delta = lambda_threshold(BB)
        assert delta == pytest.approx(oracles.BANGBANG_DELTA, rel=1e-9)
        assert Lam == pytest.approx(oracles.BANGBANG_LAMBDA, rel=1e-9)
        k1, k2, k3 = 3.0, 1.0, 2.0
        root = delta / (1 - 1e-9)
        assert 1 - k2 * root - (k1 + k3) * math.sqrt(root) == pytest.approx(math.exp(-0.5), rel=1e-9)

    def test_smooth_frozen(self):
        Lam, delta = lambda_threshold(SMOOTH)
        assert delta == pytest.approx(oracles.SMOOTH_DELTA, rel=1e-9)
        assert Lam == pytest.approx(oracles.SMOOTH_LAMBDA, rel=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(constant_sets)
    def test_matches_closed_form(self, c):
        Lam, delta = lambda_threshold(c)
        ref_Lam, ref_delta = oracles.threshold(c.norm_alpha_d_inf, c.norm_sigma_inf, c.norm_D_inf, c.B_sigma, c.K)
        assert delta == pytest.approx(ref_delta, rel=1e-8)
        assert Lam == pytest.approx(ref_Lam, rel=1e-8)

    @settings(max_examples=100, deadline=None)
    @given(constant_sets, st.sampled_from(["norm_D_inf", "norm_alpha_d_inf", "norm_sigma_inf", "K_alpha"]), st.floats(0.01, 2))
    def test_monotone(self, c, name, bump):
        bigger = dataclasses.replace(c, **{name: getattr(c, name) + bump})
        assert lambda_threshold(bigger)[0] >= lambda_threshold(c)[0] * (1 - 1e-9)


class TestDecayConstants:
    def test_ou(self):
        dc = decay_constants(1.0, OU, 2)
        assert dc.C1 == pytest.approx(math.sqrt(2))
        assert dc.C2 == pytest.approx(1.0)
        assert dc.t0 == pytest.approx(1.0, rel=1e-8)

    def test_bang_bang_frozen(self):
        lam = 2 * oracles.BANGBANG_LAMBDA
        dc = decay_constants(lam, BB, 2)
        assert dc.t0 == pytest.approx(oracles.BANGBANG_T0_AT_2LAMBDA, rel=1e-6)
        assert dc.C2 == pytest.approx(oracles.BANGBANG_C2_AT_2LAMBDA, rel=1e-8)
        assert dc.C1 == pytest.approx(oracles.BANGBANG_C1_AT_2LAMBDA, rel=1e-6)
        assert dc.witness == pytest.approx(oracles.BANGBANG_WITNESS_AT_2LAMBDA, rel=1e-6)

    def test_matches_ternary_search(self):
        for lam in (1.2 * oracles.BANGBANG_LAMBDA, 5 * oracles.BANGBANG_LAMBDA):
            dc = decay_constants(lam, BB, 2)
            _, ref = oracles.best_rate(lam, 0.5, math.sqrt(2), 1.0, 1.0, 0.0)
            assert dc.C2 == pytest.approx(ref, rel=1e-9)

    def test_just_above_threshold(self):
        Lam, _ = lambda_threshold(BB)
        dc = decay_constants(1.01 * Lam, BB, 2)
        assert 0 < dc.witness < dc.C2
        assert dc.witness < decay_constants(2 * Lam, BB, 2).witness

    def test_below_threshold(self):
        with pytest.raises(ThresholdNotMetError) as err:
            decay_constants(0.1, BB, 2)
        assert err.value.threshold == pytest.approx(oracles.BANGBANG_LAMBDA, rel=1e-9)
        assert "166.5" in str(err.value)

    @settings(max_examples=40, deadline=None)
    @given(st.sampled_from([BB, SMOOTH, OU]), st.floats(1.0001, 10.0))
    def test_invariants_over_sweep(self, c, factor):
        Lam, delta = lambda_threshold(c)
        dc = decay_constants(factor * Lam, c, 2)
        assert 0 < dc.t0 < 1 / dc.lam
        assert dc.t0 < delta
        assert dc.q_at_t0 < 1
        assert dc.C1 >= math.sqrt(2)
        assert dc.C2 > 0
        assert dc.witness > 0

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0, 3), st.floats(0.5, 50))
    def test_smooth_dissipative_limit(self, k_alpha, extra):
        c = ModelConstants(k_alpha, 0, k_alpha, 0, 0, 0, 1, 1, 0)
        lam = max(0.5, 4 * k_alpha / 3) + extra
        dc = decay_constants(lam, c, 2)
        assert dc.C2 == pytest.approx(lam - k_alpha, rel=1e-12)
        assert dc.witness == pytest.approx(2 * (lam - k_alpha) / lam, rel=1e-6)


class TestKhasminskii:
    def test_no_jump(self):
        for t in (0.0, 1.0, 100.0):
            assert khasminskii_bound(t, 1.0, OU, 0.1) == 1.0

    def test_block_counts(self):
        t0 = feasible_horizon(1.0, BB, 0.5)
        assert khasminskii_ratio(t0, 1.0, BB) == pytest.approx(0.5, rel=1e-10)
        assert khasminskii_bound(t0 / 2, 1.0, BB, t0) == pytest.approx(2.0, rel=1e-9)
        assert khasminskii_bound(2.5 * t0, 1.0, BB, t0) == pytest.approx(8.0, rel=1e-9)

    def test_infeasible(self):
        with pytest.raises(DomainError):
            khasminskii_bound(1.0, 1.0, BB, 10.0)
        with pytest.raises(DomainError):
            khasminskii_bound(-1.0, 1.0, BB, 0.01)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0.2, 0.9))
    def test_nondecreasing(self, t, dt, qt):
        t0 = feasible_horizon(1.0, BB, qt)
        assert khasminskii_bound(t + dt, 1.0, BB, t0) >= khasminskii_bound(t, 1.0, BB, t0)


class TestGenerator:
    def test_ou(self):
        gen = generator_bound(OU, 1.0)
        assert (gen.K1_gen, gen.K2_gen) == (pytest.approx(2.0), 1.0)
        x = np.random.default_rng(0).normal(size=(100, 2)) * 3
        margins = check_generator_bound(ou_model(2), x)
        np.testing.assert_allclose(margins, np.sum(x * x, axis=1), rtol=1e-12, atol=1e-12)

    def test_bang_bang_value(self):
        assert generator_bound(BB, 1.0).K1_gen == pytest.approx(2.25)

    @pytest.mark.parametrize("builder", [bang_bang_model, smooth_model])
    def test_sampled_points(self, builder):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1000, 2))
        x *= (10 * rng.uniform(size=(1000, 1))) / np.linalg.norm(x, axis=1, keepdims=True)
        assert np.all(check_generator_bound(builder(), x) >= -1e-12)

    def test_positive_lambda(self):
        with pytest.raises(DomainError):
            generator_bound(BB, 0.0)
