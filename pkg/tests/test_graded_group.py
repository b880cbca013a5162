import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flaglab.graded_group import (block_norms, dilate, euclid_in_fields, fields_from_euclid,
                                  group_from_json, invariant_fields, inverse, make_group, multiply,
                                  partial_norm, smooth_norm, symbolic_associativity,
                                  symbolic_inverse, verify_group_axioms)
from flaglab.polynomial import Poly

BUILTIN = [make_group("abelian", d=[1, 1, 2]), make_group("heisenberg"), make_group("engel_step3")]
coords = st.floats(-3, 3, allow_nan=False)
# zero or far from underflow, so rho ** d stays representable in the checks
tame = st.one_of(st.just(0.0), st.floats(1e-100, 3), st.floats(-3, -1e-100))


def points(N):
    return arrays(np.float64, (N,), elements=coords)


@pytest.mark.parametrize("g", BUILTIN, ids=lambda g: g.name)
def test_builtin_groups_are_associative_symbolically(g):
    assert symbolic_associativity(g)
    assert symbolic_inverse(g)


@pytest.mark.parametrize("g", BUILTIN, ids=lambda g: g.name)
def test_axiom_residuals_at_machine_precision(g):
    r = verify_group_axioms(g, samples=1000, seed=1)
    assert r["associativity_residual"] < 1e-13
    assert r["inverse_residual"] < 1e-13
    assert r["dilation_residual"] <= 1e-12


def test_heisenberg_product_oracle():
    H = make_group("heisenberg")
    out = multiply(H, [1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    # third coordinate picks up x1 * y2
    np.testing.assert_allclose(out, [5.0, 7.0, 9.0 + 5.0])
    assert not H.is_abelian
    assert H.Q == 4


def test_heisenberg_inverse_oracle():
    H = make_group("heisenberg")
    np.testing.assert_allclose(inverse(H, [1.0, 2.0, 3.0]), [-1.0, -2.0, -3.0 + 2.0])


@settings(max_examples=50, deadline=None)
@given(points(4), points(4), st.floats(0.1, 10))
def test_engel_dilations_are_automorphisms(x, y, r):
    g = make_group("engel_step3")
    lhs = dilate(g, r, multiply(g, x, y))
    rhs = multiply(g, dilate(g, r, x), dilate(g, r, y))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(points(3))
def test_inverse_is_two_sided(x):
    H = make_group("heisenberg")
    np.testing.assert_allclose(multiply(H, inverse(H, x), x), 0, atol=1e-12)
    np.testing.assert_allclose(multiply(H, x, inverse(H, x)), 0, atol=1e-12)


def test_custom_law_rejects_late_coordinates():
    law = {1: [], 2: [(1, (0, 1), (0, 0))]}
    with pytest.raises(ValueError, match="depends on x_2"):
        make_group("custom", d=[1, 1], law=law)


def test_custom_law_rejects_inhomogeneous_monomial():
    law = {1: [], 2: [], 3: [(1, (1, 0, 0), (0, 0, 0))]}
    with pytest.raises(ValueError, match="not homogeneous"):
        make_group("custom", d=[1, 1, 2], law=law)


@pytest.mark.parametrize("kw, msg", [
    ({"d": [0, 1]}, "positive"),
    ({"d": [2, 1]}, "nondecreasing"),
])
def test_dilation_exponent_validation(kw, msg):
    with pytest.raises(ValueError, match=msg):
        make_group("abelian", **kw)


def test_blocks_must_partition_coordinates():
    with pytest.raises(ValueError, match="do not partition"):
        make_group("abelian", d=[1, 1, 1], blocks=(2, 2))


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown group kind"):
        make_group("lorentz")


def test_json_roundtrip_preserves_law():
    g = make_group("engel_step3")
    back = group_from_json(g.dumps())
    assert back.d == g.d and back.blocks == g.blocks
    assert all(a == b for a, b in zip(back.law, g.law))
    assert json.loads(g.dumps())["N"] == 4


def test_left_invariant_fields_of_heisenberg():
    H = make_group("heisenberg")
    F = invariant_fields(H, "left")
    # X_2 = d_2 + x_1 d_3
    assert F.P(1, 2) == Poly.var(0, 3)
    assert F.P(0, 2).is_zero()
    # [X_1, X_2] = d_3
    br = F.bracket(0, 1)
    assert br[2] == Poly.const(1, 3) and br[0].is_zero() and br[1].is_zero()


def test_euclidean_derivatives_through_fields_roundtrip():
    g = make_group("engel_step3")
    f = Poly.var(0, 4) ** 2 * Poly.var(1, 4) + Poly.var(2, 4) * Poly.var(0, 4) + Poly.var(3, 4)
    for orders in [(0,), (1,), (0, 1), (1, 2)]:
        exp = fields_from_euclid(g, orders)
        direct = f
        for k in orders:
            direct = direct.diff(k)
        assert exp.apply(f) == direct
        assert exp.check_degrees()


def test_euclid_matrix_is_unipotent():
    B = euclid_in_fields(make_group("heisenberg"))
    for k in range(3):
        assert B[k][k] == Poly.const(1, 3)


def test_fields_order_guard():
    with pytest.raises(ValueError, match="symbolic guard"):
        fields_from_euclid(make_group("heisenberg"), (0, 0, 0, 0, 0))


def test_partial_and_block_norms():
    H = make_group("heisenberg")
    x = np.array([3.0, -4.0, 9.0])
    assert partial_norm(H, x, 0) == 4.0
    assert partial_norm(H, x, 1) == 3.0
    np.testing.assert_allclose(block_norms(H, x), [4.0, 3.0])


@settings(max_examples=100, deadline=None)
@given(points(3), st.floats(0.05, 20))
def test_smooth_norm_is_homogeneous(x, r):
    d = [1, 1, 2]
    rho = smooth_norm(x, d)
    xr = x * np.array([r, r, r * r])
    np.testing.assert_allclose(smooth_norm(xr, d), r * rho, rtol=1e-12, atol=1e-300)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3,), elements=tame).filter(lambda v: np.any(v != 0)))
def test_smooth_norm_solves_its_defining_equation(x):
    d = np.array([1.0, 1.0, 2.0])
    rho = smooth_norm(x, d)
    np.testing.assert_allclose(np.sum((x / rho ** d) ** 2), 1.0, rtol=1e-12)


def test_smooth_norm_oracles():
    assert smooth_norm(np.array([3.0, 4.0]), [1, 1]) == pytest.approx(5.0)
    assert smooth_norm(np.array([0.0, 0.0, 4.0]), [1, 1, 2]) == pytest.approx(2.0)
    assert smooth_norm(np.zeros(3), [1, 1, 2]) == 0.0


def test_dilation_rejects_nonpositive_factor():
    with pytest.raises(ValueError):
        dilate(make_group("heisenberg"), 0.0, np.zeros(3))


def test_dimension_mismatch_is_reported():
    with pytest.raises(ValueError, match="dimension"):
        multiply(make_group("heisenberg"), np.zeros(2), np.zeros(2))


def test_homogeneous_dimension_is_exact():
    g = make_group("abelian", d=[Fraction(1, 2), 1, 2])
    assert g.Q == Fraction(7, 2)
