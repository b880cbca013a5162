import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flaglab.bump_calculus import (CancellationError, ClosureBump, Grid, GridFunction, TensorBump,
                                   annular_decompose, block_marginal, dilate_index, dump_grid,
                                   exact_seminorm, fd_derivative, first_block_decompose,
                                   integrate_axes, iterated_primitives, l1_norm, load_grid,
                                   mollifier_split, primitives, reconstruct_from_primitives,
                                   relative_l2, resum_annular, sample, scaled_field_identity,
                                   seminorm, spectral_derivative, strong_cancellation,
                                   tensor_expand, weak_cancellation_fit)
from flaglab.combinatorics import Partition
from flaglab.graded_group import make_group, smooth_norm
from flaglab.polynomial import Poly
from flaglab.profiles import profile, profile_mass

HEIS_D = (1, 1, 2)
# integral of exp(1 - sec^2(pi t / 2)) over (-1, 1), by adaptive quadrature at 1e-13
COSBUMP_MASS = profile_mass("cosbump")


def gauss(scales, orders=None, poly=None):
    return TensorBump.product("gauss", scales, orders=orders, poly=poly)


def test_gauss_mass_oracle():
    g = Grid.cube(2, 8.0, 257)
    assert l1_norm(gauss((1.0, 2.0)), g) == pytest.approx(math.pi / 2, rel=1e-12)


def test_profile_derivative_matches_closed_form():
    t = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(profile("gauss", 2, t), (4 * t * t - 2) * np.exp(-t * t), atol=1e-14)


def test_cosbump_is_compact_and_normalized():
    assert profile("cosbump", 0, np.array([0.0]))[0] == 1.0
    assert profile("cosbump", 0, np.array([1.0, -1.2]))[0] == 0.0
    assert 0.5 < COSBUMP_MASS < 1.0


def test_tensor_derivatives_are_exact():
    x0 = Poly.var(0, 2)
    f = gauss((1.0, 0.5), poly=x0 * x0)
    pts = np.array([[0.3, -0.7], [1.1, 0.2]])
    x, y = pts[:, 0], pts[:, 1]
    expected = (2 * x - 2 * x ** 3) * np.exp(-x * x) * np.exp(-0.25 * y * y)
    np.testing.assert_allclose(f.d(0)(pts), expected, rtol=1e-13)


def test_closure_derivative_is_sixth_order():
    f = ClosureBump(lambda x: np.sin(x[..., 0]) * np.exp(x[..., 1]), 2, step=1e-2)
    pts = np.array([[0.4, 0.1]])
    assert f.d(0)(pts)[0] == pytest.approx(math.cos(0.4) * math.exp(0.1), abs=1e-11)


def test_dilate_index_preserves_mass():
    p = Partition((2, 1))
    g = Grid((40.0, 40.0, 200.0), (801, 801, 401))
    f = dilate_index(gauss((1.0, 1.0, 1.0)), (1, 2), p, HEIS_D)
    assert l1_norm(f, Grid((12.0, 12.0, 90.0), (241, 241, 241))) == pytest.approx(math.pi ** 1.5, rel=1e-6)
    with pytest.raises(ValueError, match="monotone"):
        dilate_index(gauss((1.0, 1.0, 1.0)), (2, 1), p, HEIS_D)
    assert g.N == 3


def test_grid_validation():
    with pytest.raises(ValueError, match="odd"):
        Grid((1.0,), (4,))
    with pytest.raises(ValueError, match="shape"):
        GridFunction(Grid((1.0,), (5,)), np.zeros(4))
    with pytest.raises(ValueError, match="finite"):
        GridFunction(Grid((1.0,), (3,)), np.array([0.0, np.nan, 0.0]))


def test_dump_roundtrip_and_layout():
    g = Grid((2.0, 3.0), (5, 7))
    gf = sample(gauss((1.0, 1.0)), g)
    blob = dump_grid(gf)
    head, body = blob.split(b"\n", 1)
    assert head.startswith(b"{") and len(body) == 8 * 35
    # x1 varies fastest
    first = np.frombuffer(body[:16], "<f8")
    np.testing.assert_array_equal(first, gf.values[:2, 0])
    back = load_grid(blob)
    assert back.grid == g
    np.testing.assert_array_equal(back.values, gf.values)
    with pytest.raises(ValueError, match="bytes"):
        load_grid(blob[:-8])


def test_fd_derivative_fourth_order():
    errs = []
    for n in (65, 129):
        x = np.linspace(-1, 1, n)
        h = x[1] - x[0]
        errs.append(np.abs(fd_derivative(np.sin(x), h, 0) - np.cos(x[2:-2])).max())
    assert errs[0] / errs[1] > 14


def test_seminorm_matches_exact():
    f = gauss((1.0, 1.0))
    g = Grid.cube(2, 5.0, 201)
    assert seminorm(sample(f, g), 1) == pytest.approx(exact_seminorm(f, g, 1), rel=1e-5)
    with pytest.raises(ValueError, match="coarse"):
        seminorm(sample(f, Grid.cube(2, 5.0, 5)), 2)


def test_schwartz_seminorm_weights_tails():
    f = sample(gauss((1.0,)), Grid.cube(1, 6.0, 601))
    assert seminorm(f, 0, "schwartz", M=4) > seminorm(f, 0)


def test_strong_cancellation_detection():
    p = Partition((1, 1))
    g = Grid.cube(2, 6.0, 129)
    assert strong_cancellation(sample(gauss((1.0, 1.0), (1, 1)), g), p).strong
    assert not strong_cancellation(sample(gauss((1.0, 1.0), (1, 0)), g), p).strong


def test_weak_cancellation_exponent():
    # f = d1 d2 G + 2^{-gap} G(x1) d2 G(x2): the block-1 marginal decays like 2^{-gap}
    p = Partition((1, 1))
    g = Grid.cube(2, 7.0, 129)
    gap = 3
    f = gauss((1.0, 1.0), (1, 1)) + gauss((1.0, 1.0), (0, 1)) * 2.0 ** -gap
    rep = weak_cancellation_fit(sample(f, g), p, (0, gap))
    ref = np.abs(sample(f, g).values).max()
    expected = -math.log2(math.sqrt(math.pi) * 2.0 ** -gap * np.abs(sample(gauss((1.0,), (1,)), Grid.cube(1, 7.0, 129)).values).max() / ref) / gap
    assert rep.epsilon == pytest.approx(expected, rel=1e-6)


def test_mollifier_split_identities():
    p = Partition((1, 1))
    g = Grid.cube(2, 6.0, 129)
    f = sample(gauss((1.0, 0.8), poly=Poly.var(0, 2) + 1), g)
    L, M = mollifier_split(f, p, 0)
    np.testing.assert_allclose(L.values + M.values, f.values, atol=1e-15)
    assert np.abs(block_marginal(L, p, [0])).max() < 1e-12
    np.testing.assert_allclose(block_marginal(M, p, [0]), block_marginal(f, p, [0]), atol=1e-10)
    L01 = mollifier_split(mollifier_split(f, p, 1)[0], p, 0)[0]
    L10 = mollifier_split(mollifier_split(f, p, 0)[0], p, 1)[0]
    np.testing.assert_allclose(L01.values, L10.values, atol=1e-10)


def test_primitive_of_derivative_recovers_generator():
    g = Grid.cube(1, 8.0, 1025)
    G = gauss((1.0,))
    F = sample(G.d(0), g)
    (psi,) = primitives(F, (0,))
    # the chi-correction vanishes because f has zero mass
    np.testing.assert_allclose(psi.values, sample(G, g).values, atol=1e-6)
    assert relative_l2(reconstruct_from_primitives([psi], (0,)), F.values) < 1e-6


def test_primitive_keeps_oddness():
    g = Grid.cube(2, 8.0, 129)
    f = gauss((1.0, 1.0), poly=Poly.var(0, 2) * Poly.var(1, 2))
    (psi,) = primitives(sample(f, g), (0,), (1,))
    np.testing.assert_allclose(psi.values, -psi.values[:, ::-1], atol=1e-12)


def test_iterated_primitives_reconstruct():
    g = Grid.cube(2, 8.0, 129)
    F = sample(gauss((1.0, 1.3), (1, 1)), g)
    parts = iterated_primitives(F, (0,), (1,))
    rec = sum(spectral_derivative(spectral_derivative(v.values, g.h[l], l), g.h[k], k)
              for (k, l), v in parts.items())
    assert relative_l2(rec, F.values) < 1e-6


def test_primitives_preconditions():
    g = Grid.cube(1, 8.0, 257)
    with pytest.raises(CancellationError):
        primitives(sample(gauss((1.0,)), g), (0,))
    with pytest.raises(ValueError, match="disjoint"):
        primitives(sample(gauss((1.0,), (1,)), g), (0,), (0,))


def test_annular_resummation():
    psi = gauss((1.0, 1.0, 1.0))
    parts = annular_decompose(psi, HEIS_D, terms=12)
    x = np.random.default_rng(0).uniform(-8, 8, (500, 3))
    x = x[smooth_norm(x, HEIS_D) <= 8]
    assert np.abs(resum_annular(parts, HEIS_D)(x) - psi(x)).max() < 1e-6


def test_annular_terms_live_in_unit_ball():
    parts = annular_decompose(gauss((1.0, 1.0, 1.0)), HEIS_D, terms=4)
    x = np.random.default_rng(1).uniform(-3, 3, (2000, 3))
    out = x[smooth_norm(x, HEIS_D) > 1.0]
    for t in parts:
        assert np.abs(t(out)).max() == 0.0


def test_annular_compact_input_is_one_term():
    psi = TensorBump.product("cosbump", (4.0, 4.0, 16.0))
    parts = annular_decompose(psi, HEIS_D, terms=4)
    x = np.random.default_rng(2).uniform(-1, 1, (2000, 3))
    assert all(np.abs(t(x)).max() == 0.0 for t in parts[1:])
    np.testing.assert_allclose(parts[0](x), psi(x), atol=1e-15)


def test_annular_mean_zero_is_inherited():
    G = gauss((1.0,))
    parts = annular_decompose(G.d(0), (1,), terms=6, primitive_rep=[((1,), G)])
    g = Grid.cube(1, 1.1, 2201)
    for t in parts:
        v = sample(t, g).values
        assert abs(integrate_axes(v, g, [0])) < 1e-8 * max(integrate_axes(np.abs(v), g, [0]), 1e-300)


def test_first_block_resummation_and_inner_annulus():
    p = Partition((1, 1))
    phi = TensorBump.product("cosbump", (1.0, 1.0)).d(0)
    dec = first_block_decompose(phi, p, (1, 1), terms=10)
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (400, 2))
    m = dec.exact_region(x)
    assert np.abs(dec.resum(x[m]) - phi(x[m])).max() < 1e-6
    y = np.column_stack([rng.uniform(-1 / 8, 1 / 8, 200), rng.uniform(-1, 1, 200)])
    assert max(np.abs(dec.term(-k)(y)).max() for k in range(10)) < 1e-10


def test_first_block_preconditions():
    p = Partition((1, 1))
    phi = TensorBump.product("cosbump", (1.0, 1.0))
    with pytest.raises(CancellationError):
        first_block_decompose(phi, p, (1, 1), check_grid=Grid.cube(2, 1.0, 65))
    dec = first_block_decompose(phi.d(0), p, (1, 1))
    with pytest.raises(ValueError, match="j <= 0"):
        dec.term(1)


def test_tensor_expand_rank_one():
    te = tensor_expand(TensorBump.product("cosbump", (1.0, 1.0)), 2)
    assert te.energy_fractions()[0] >= 0.99
    assert te.residual < 1e-4


def test_tensor_expand_general_bump():
    phi = TensorBump.product("cosbump", (1.0, 1.0)) + TensorBump.product("cosbump", (2.0, 1.5), orders=(1, 0))
    te = tensor_expand(phi, 2, tol=1e-4)
    pts = np.random.default_rng(4).uniform(-1, 1, (500, 2))
    assert np.abs(te(pts) - phi(pts)).max() < 1e-4 * np.abs(phi(pts)).max()
    # smooth compactly supported input: coefficients fall off faster than any low power
    assert te.decay_slope < -3


def test_tensor_expand_budget():
    with pytest.raises(ValueError, match="not reached"):
        tensor_expand(TensorBump.product("cosbump", (1.0, 1.0)), 2, tol=1e-14, max_modes=4)


@pytest.mark.parametrize("I, k", [((0, 0, 0), 1), ((0, 1, 2), 1), ((-1, 0, 3), 0)])
def test_scaled_field_identity(I, k):
    H = make_group("heisenberg")
    r = scaled_field_identity(H, gauss((1.0, 1.0, 1.0)), I, k, Grid.cube(3, 3.0, 13))
    assert r["residual"] < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(0.8, 2.0), st.floats(-1.0, 1.0))
def test_spectral_derivative_of_gaussian(s, c):
    # tails below 1e-20 at the box edge, so periodization is invisible
    g = Grid.cube(1, 10.0, 513)
    f = TensorBump.product("gauss", (s,))
    x = g.axis(0)[:, None] - c
    dv = spectral_derivative(f(x), g.h[0], 0)
    np.testing.assert_allclose(dv, f.d(0)(x), atol=1e-9)
