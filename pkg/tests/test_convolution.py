import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from flaglab.bump_calculus import Grid, TensorBump, sample
from flaglab.combinatorics import Partition, shuffles
from flaglab.convolution import (GaussSum, ThetaCache, cauchy_check, compose_classes, convolve,
                                 convolve_factors, convolve_separable, cotlar_stein_sweep,
                                 cross_norm_table, fit_decay, fourier_oracle, free_index_rows,
                                 gauss_derivative_l1, gauss_sum_ft, numeric_theta_check,
                                 quadrature_for, reflect, separable_l1, separable_sup,
                                 verify_decay, verify_support_lemma)
from flaglab.graded_group import make_group
from flaglab.kernel_lab import gauss_derivative_transform, gauss_family, monotone_window
from flaglab.polynomial import Poly

R1 = make_group("abelian", N=1, d=[1], blocks=[1])
HEIS = make_group("heisenberg")
P11 = Partition((1, 1))


def gauss(scales, orders=None, poly=None):
    return TensorBump.product("gauss", scales, orders=orders, poly=poly)


def half_gauss_oracle(x):
    # e^{-t^2} * e^{-t^2} = sqrt(pi / 2) e^{-x^2 / 2}
    return math.sqrt(math.pi / 2) * np.exp(-x * x / 2)


def test_direct_quadrature_matches_oracle():
    G = gauss((1.0,))
    q = quadrature_for(G, (1,), box=(8.0,), count=257, grow=False)
    x = np.linspace(-3, 3, 13)[:, None]
    np.testing.assert_allclose(convolve(R1, G, G, q, at=x), half_gauss_oracle(x[:, 0]), atol=1e-12)


def test_fft_matches_direct():
    G = gauss((1.0,))
    q = quadrature_for(G, (1,), box=(8.0,), count=257, grow=False)
    grid = Grid((4.0,), (int(round(8 / q.box[0] * 128)) + 1,))
    fast = convolve(R1, G, G, q, at=grid, method="fft")
    slow = convolve(R1, G, G, q, at=grid)
    np.testing.assert_allclose(fast.values, slow.values, atol=1e-13)
    np.testing.assert_allclose(fast.values, half_gauss_oracle(grid.axis(0)), atol=1e-12)


def test_quadrature_box_grows_until_mass_is_captured():
    q = quadrature_for(gauss((0.25,)), (1,))
    assert q.leakage < 1e-6
    assert q.box[0] >= 8.0


def test_convolve_argument_checks():
    G = gauss((1.0,))
    g = Grid((4.0,), (33,))
    with pytest.raises(TypeError):
        convolve(R1, sample(G, g), G, at=g)
    with pytest.raises(ValueError, match="abelian"):
        convolve(HEIS, gauss((1.0, 1.0, 1.0)), gauss((1.0, 1.0, 1.0)), at=Grid.cube(3, 1.0, 5),
                 method="fft")
    with pytest.raises(ValueError, match="unknown method"):
        convolve(R1, G, G, at=np.zeros((1, 1)), method="spectral")


def test_heisenberg_convolution_does_not_commute():
    f = gauss((1.0, 1.0, 1.0), poly=Poly.var(0, 3) + 0.5)
    h = gauss((1.0, 1.0, 1.0), poly=Poly.var(1, 3) + 0.5)
    box = (5.0, 5.0, 8.0)
    x = np.array([[0.7, -0.4, 0.9]])
    fh = convolve(HEIS, f, h, quadrature_for(h, HEIS.d, box=box, count=41, grow=False), at=x)
    hf = convolve(HEIS, h, f, quadrature_for(f, HEIS.d, box=box, count=41, grow=False), at=x)
    assert abs(fh[0] - hf[0]) > 1e-3 * abs(fh[0])


def test_heisenberg_convolution_respects_the_first_layer_flip():
    # (x1, x2, x3) -> (-x1, -x2, x3) is an automorphism fixing the gaussian
    G = gauss((1.0, 1.0, 1.0))
    q = quadrature_for(G, HEIS.d, box=(5.0, 5.0, 6.0), count=33, grow=False)
    x = np.array([[0.5, 0.3, 0.2], [-0.5, -0.3, 0.2]])
    v = convolve(HEIS, G, G, q, at=x)
    assert v[0] == pytest.approx(v[1], rel=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.floats(0.3, 3.0), st.integers(0, 3), st.floats(0.3, 3.0),
       st.floats(-2.0, 2.0))
def test_closed_form_factor_convolution(o1, a1, o2, a2, x):
    f1, f2 = (0, "gauss", o1, a1, 1.0), (0, "gauss", o2, a2, 1.0)
    o, c, amp = convolve_factors(f1, f2)[2:]
    lhs = amp * gauss((c,), orders=(o,))(np.array([[x]]))[0]
    g1, g2 = gauss((a1,), orders=(o1,)), gauss((a2,), orders=(o2,))
    rhs, _ = integrate.quad(lambda t: g1(np.array([[x - t]]))[0] * g2(np.array([[t]]))[0],
                            -np.inf, np.inf, epsabs=1e-13)
    assert lhs == pytest.approx(rhs, rel=1e-8, abs=1e-12)


def test_closed_form_factor_checks():
    with pytest.raises(TypeError):
        convolve_factors((0, "cosbump", 0, 1.0, 1.0), (0, "gauss", 0, 1.0, 1.0))
    with pytest.raises(ValueError, match="integrable"):
        convolve_factors((0, "gauss", 0, 0.0, 1.0), (0, "gauss", 0, 1.0, 1.0))


def test_separable_convolution_and_reflection():
    f = gauss((1.0, 2.0), orders=(1, 0))
    x = np.array([[0.3, -0.2]])
    assert reflect(f)(x)[0] == pytest.approx(f(-x)[0], rel=1e-14)
    fg = convolve_separable(f, gauss((1.0, 1.0)))
    # g' * g = (sqrt(pi) / 2) g'(t / sqrt 2) and e^{-4t^2} * e^{-t^2} = sqrt(pi / 5) e^{-4 t^2 / 5}
    first = math.sqrt(math.pi) / 2 * gauss((1.0,), orders=(1,))(np.array([[0.3 / math.sqrt(2)]]))[0]
    expected = first * math.sqrt(math.pi / 5) * math.exp(-0.8 * 0.04)
    assert fg(x)[0] == pytest.approx(expected, rel=1e-12)


def test_l1_and_sup_closed_forms():
    assert gauss_derivative_l1(0) == pytest.approx(math.sqrt(math.pi), rel=1e-10)
    # int |g'| = 2 sup g = 2
    assert gauss_derivative_l1(1) == pytest.approx(2.0, rel=1e-10)
    f = gauss((2.0,), orders=(1,))
    # the profile derivative is not rescaled, so only the 1 / scale Jacobian remains
    assert separable_l1(f) == pytest.approx(1.0, rel=1e-10)
    assert separable_sup(gauss((1.0, 3.0))) == pytest.approx(1.0)


def test_support_lemma_on_abelian_group():
    g = make_group("abelian", d=[1, 1])
    rep = verify_support_lemma(g, pairs=3, seed=2, count=21, qcount=13)
    assert rep.passed
    # compact supports add: radius of f * h is at most the sum of the radii
    assert max(rep.constants) <= 2.0 + 2 * rep.extra["grid_step"]


def test_fit_decay_exact_line():
    eps, r2 = fit_decay([(g, 3.0 - 0.5 * g) for g in range(6)])
    assert eps == pytest.approx(0.5)
    assert r2 == pytest.approx(1.0)


def test_decay_of_cancelling_pair():
    phi = gauss((1.0,), orders=(1,))
    rep = verify_decay(phi, phi, Partition((1,)), (1,), span=6)
    assert rep.passed
    assert 0.8 <= rep.eps <= 1.2


def test_decay_needs_cancellation():
    G = gauss((1.0,))
    rep = verify_decay(G, G, Partition((1,)), (1,), span=6)
    assert not rep.passed


def test_closed_form_theta_against_fft():
    phi = gauss((1.0,), orders=(1,))
    assert numeric_theta_check(phi, phi, 0, 2) < 1e-8


def test_cross_norms_and_budget():
    fam = gauss_family(Partition((1,)), (1,), order=2)
    tab = cross_norm_table(fam, monotone_window(1, -2, 2))
    assert tab.eps > 0
    for I in tab.window:
        for J in tab.window:
            # the L1 norm of a convolution is symmetric under swapping the roles in R
            assert tab.left[(I, J)] == pytest.approx(tab.right[(I, J)], rel=1e-12)
    with pytest.raises(ValueError, match="budget"):
        cross_norm_table(gauss_family(P11, (1, 1)), monotone_window(2, -10, 10))


def test_cotlar_stein_sums_saturate():
    sums, _ = cotlar_stein_sweep(gauss_family(Partition((1,)), (1,), order=2), ks=(3, 4, 5))
    assert sums[-1] < 1.05 * sums[-2]


def test_gauss_sum_matches_tensor_bump():
    b = gauss((1.0, 0.5), orders=(2, 1)) + gauss((2.0, 1.0), orders=(0, 3)) * 0.25
    gs = GaussSum.from_bump(b)
    x = np.random.default_rng(0).uniform(-2, 2, (50, 2))
    np.testing.assert_allclose(gs(x), b(x), atol=1e-13)
    np.testing.assert_allclose(gs.deriv((1, 0))(x), b.d(0)(x), atol=1e-12)
    with pytest.raises(TypeError):
        GaussSum.from_bump(TensorBump.product("cosbump", (1.0,)))


def test_gauss_sum_marginal_and_transform():
    gs = GaussSum.from_bump(gauss((2.0, 1.0), orders=(0, 1)))
    np.testing.assert_allclose(gs.marginal_factor([0]), [math.sqrt(math.pi) / 2])
    np.testing.assert_allclose(gs.marginal_factor([1]), [0.0])
    xi = np.array([[0.5, 1.5], [-2.0, 0.3]])
    expected = (gauss_derivative_transform(0, xi[:, 0] / 2) / 2) * gauss_derivative_transform(1, xi[:, 1])
    np.testing.assert_allclose(gauss_sum_ft(gs, xi), expected, rtol=1e-13)


def test_dilation_of_gauss_sum_preserves_mass():
    gs = GaussSum.from_bump(gauss((1.0, 1.0)))
    big = gs.dilate((3, 1), (1, 2))
    np.testing.assert_allclose(big.marginal_factor([0, 1]) * big.amp, [math.pi], rtol=1e-13)


def test_composition_classes_resum_to_product_multiplier():
    fam = gauss_family(P11, (1, 1))
    win = monotone_window(2, -1, 1)
    kernels = compose_classes(fam, fam, win, win)
    assert set(kernels) <= set(shuffles(2, 2))
    assert sum(k.pairs for k in kernels.values()) == len(win) ** 2
    xi = np.random.default_rng(3).uniform(-3, 3, (64, 2))
    assert fourier_oracle(fam, fam, win, win, kernels, xi) < 1e-12


def test_theta_cache_is_shift_invariant():
    fam = gauss_family(P11, (1, 1))
    cache = ThetaCache(fam, fam, T=6)
    mu = shuffles(2, 2)[0]
    a, na = cache.get(mu, (0, 2))
    b, nb = cache.get(mu, (5, 7))
    assert a is b and na == nb


def test_free_index_rows_land_on_the_target():
    mu = shuffles(2, 2)[0]
    rows = free_index_rows(P11, P11, mu, (0, 2), T=3)
    assert rows and all(K == (0, 2) for _, _, K in rows)


def test_free_index_sums_converge():
    fam = gauss_family(P11, (1, 1))
    for mu in shuffles(2, 2):
        coarse = cauchy_check(fam, fam, mu, (0, 2), T=8)["change"]
        fine = cauchy_check(fam, fam, mu, (0, 2), T=16)["change"]
        # the tails shrink geometrically in the truncation depth
        assert fine < coarse / 100
        assert cauchy_check(fam, fam, mu, (0, 2), T=24)["change"] < 1e-6
