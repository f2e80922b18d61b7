import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdrift.errors import DomainError, InvalidStateError
from hyperdrift.model import (
    CONSTANT_FIELDS,
    HyperplaneDriftModel,
    ModelConstants,
    bang_bang_model,
    build_model,
    drift_eval,
    jump_matrix,
    ou_model,
    smooth_model,
    validate_model,
)


def scalar_jump_model(up=2.0, down=-1.0):
    declared = ModelConstants(0, 0, 0, 0, max(abs(up), abs(down)), max(abs(up), abs(down)), 1, 1, abs(up - down))
    return HyperplaneDriftModel(
        name="scalar",
        dim_d=1,
        dim_m=1,
        lam=1.0,
        alpha_plus=lambda x: np.full_like(x, up),
        alpha_minus=lambda x: np.full_like(x, down),
        sigma=lambda x: np.ones((x.shape[0], 1, 1)),
        declared=declared,
    )


finite = st.floats(-50, 50, allow_nan=False)


class TestDrift:
    def test_ou_is_linear(self):
        np.testing.assert_array_equal(drift_eval(ou_model(2, 1.0), [3.0, 4.0]), [-3.0, -4.0])

    def test_bang_bang_lower_branch(self):
        np.testing.assert_allclose(drift_eval(bang_bang_model(0.5), [0.2, -0.1]), [-0.2, -0.4])

    def test_on_hyperplane_uses_upper_branch(self):
        np.testing.assert_allclose(drift_eval(bang_bang_model(0.5), [1.0, 0.0]), [-1.0, 0.5])

    def test_batch_matches_single(self):
        m = smooth_model()
        xs = np.array([[0.3, -1.0], [2.0, 0.5], [-1.0, 0.0]])
        batch = drift_eval(m, xs)
        for row, x in zip(batch, xs):
            np.testing.assert_allclose(row, drift_eval(m, x))

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [0.0, np.inf]])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InvalidStateError):
            drift_eval(ou_model(), bad)

    @settings(max_examples=50, deadline=None)
    @given(finite, st.floats(1e-3, 50), st.floats(1e-9, 1e-6))
    def test_continuous_off_hyperplane(self, x1, x2, h):
        m = smooth_model()
        for sign in (1.0, -1.0):
            x = np.array([x1, sign * x2])
            y = x + np.array([h, sign * min(h, x2 / 2)])
            assert np.linalg.norm(drift_eval(m, y) - drift_eval(m, x)) < 10 * h + 1e-12


class TestJumpMatrix:
    def test_continuous_drift_gives_zero(self):
        np.testing.assert_array_equal(jump_matrix(ou_model(3), [1.0, -2.0, 0.0]), np.zeros((3, 3)))

    def test_bang_bang(self):
        D = jump_matrix(bang_bang_model(0.5), [0.7, 0.0])
        np.testing.assert_allclose(D, [[0.0, 0.0], [0.0, 1.0]])
        assert np.linalg.norm(D) == pytest.approx(1.0)

    def test_scalar_difference(self):
        np.testing.assert_array_equal(jump_matrix(scalar_jump_model(2.0, -1.0), [0.0]), [[3.0]])

    def test_off_hyperplane_rejected(self):
        with pytest.raises(DomainError):
            jump_matrix(bang_bang_model(), [0.0, 0.1])

    @settings(max_examples=50, deadline=None)
    @given(finite, st.floats(-2, 2), st.floats(0, 1), st.floats(0.5, 2))
    def test_only_last_column_nonzero(self, x1, a, c, s0):
        D = jump_matrix(smooth_model(a=a, c=c, s0=s0, b=0.1), [x1, 0.0])
        assert np.all(D[:, :-1] == 0.0)

    @settings(max_examples=30, deadline=None)
    @given(finite, finite)
    def test_equal_branches_have_zero_norm(self, x1, x2):
        D = jump_matrix(smooth_model(c=0.0), [x1, 0.0])
        assert np.linalg.norm(D) == 0.0
        D = jump_matrix(ou_model(2), [x2, 0.0])
        assert np.linalg.norm(D) == 0.0


class TestValidation:
    def test_ou_passes_with_unit_rayleigh(self):
        rep = validate_model(ou_model(2), n_samples=500, seed=1)
        assert rep.passed
        assert rep.get("B_sigma").sampled == pytest.approx(1.0)

    def test_under_declared_alpha_fails(self):
        m = bang_bang_model(0.5)
        bad = dataclasses.replace(m.declared, norm_alpha_inf=0.4)
        rep = validate_model(dataclasses.replace(m, declared=bad), n_samples=500, seed=1)
        assert not rep.passed
        assert [f.condition for f in rep.failures()] == ["A1"]

    @pytest.mark.parametrize("builder", [ou_model, bang_bang_model, smooth_model])
    def test_built_in_declarations_hold(self, builder):
        assert validate_model(builder(), n_samples=2000, seed=3).passed

    def test_sampled_lipschitz_below_declaration(self):
        rep = validate_model(smooth_model(a=0.5), n_samples=3000, seed=5)
        chk = rep.get("K_alpha_tilde")
        assert 0 < chk.sampled <= chk.declared

    def test_zero_samples_rejected(self):
        with pytest.raises(DomainError):
            validate_model(ou_model(), n_samples=0)


class TestConstruction:
    def test_constants_round_trip(self):
        c = smooth_model().declared
        assert ModelConstants.from_mapping(c.as_dict()) == c
        assert tuple(c.as_dict()) == CONSTANT_FIELDS

    def test_missing_and_unknown_constants(self):
        d = bang_bang_model().declared.as_dict()
        with pytest.raises(DomainError, match="missing"):
            ModelConstants.from_mapping({k: v for k, v in d.items() if k != "B_sigma"})
        with pytest.raises(DomainError, match="unknown"):
            ModelConstants.from_mapping({**d, "extra": 1.0})

    @pytest.mark.parametrize("value", [-1.0, math.inf, math.nan])
    def test_bad_constant(self, value):
        with pytest.raises(DomainError):
            ModelConstants(value, 0, 0, 0, 0, 0, 1, 1, 0)

    def test_K(self):
        c = smooth_model(a=0.2, b=0.2).declared
        assert c.K == pytest.approx(0.2 * math.sqrt(2) + 0.5 * 0.08)

    def test_lambda_must_be_positive(self):
        with pytest.raises(DomainError):
            ou_model(lam=0.0)

    def test_registry(self):
        m = build_model("bangbang", 3, 3, 2.0, {"c": 0.25})
        assert (m.dim_d, m.lam, m.family) == (3, 2.0, (0.0, 0.25, 1.0, 0.0))
        with pytest.raises(DomainError):
            build_model("nope", 2, 2, 1.0)
        with pytest.raises(DomainError):
            build_model("smooth", 3, 3, 1.0)
        with pytest.raises(DomainError):
            build_model("ou", 2, 2, 1.0, {"bogus": 1})

    def test_family_validation(self):
        m = ou_model(3)
        with pytest.raises(DomainError):
            dataclasses.replace(m, family=(0.5, 0.0, 1.0, 0.0))

    def test_smooth_needs_ellipticity(self):
        with pytest.raises(DomainError):
            smooth_model(s0=0.1, b=0.2)
