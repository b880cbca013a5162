"""One-dimensional profiles and cutoffs shared by the constructions.

Profiles carry exact derivatives of every order (generated with sympy and
compiled once). Cutoffs are built from the standard smooth step
e^{-1/u} / (e^{-1/u} + e^{-1/(1-u)}).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import sympy as sp
from scipy import integrate

_t = sp.Symbol("t", real=True)

_PROFILE_EXPR = {
    "gauss": sp.exp(-_t ** 2),
    # C-infinity bump on (-1, 1) built from cosine; peak value 1 at 0
    "cosbump": sp.exp(1 - 1 / sp.cos(sp.pi * _t / 2) ** 2),
}

# where the bump expression is evaluated; outside it is below e^{-4e5}
_BUMP_CUT = 0.999


@lru_cache(maxsize=None)
def _compiled(name, order):
    expr = sp.diff(_PROFILE_EXPR[name], _t, order)
    return sp.lambdify(_t, sp.simplify(expr) if order < 3 else expr, "numpy")


def profile(name, order, t):
    """order-th derivative of the named profile at t."""
    t = np.asarray(t, dtype=float)
    f = _compiled(name, int(order))
    if name == "gauss":
        return np.broadcast_to(f(t), t.shape).astype(float)
    inside = np.abs(t) < _BUMP_CUT
    out = np.zeros(t.shape)
    ti = t[inside]
    if ti.size:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out[inside] = np.broadcast_to(f(ti), ti.shape)
    return out


@lru_cache(maxsize=None)
def profile_mass(name):
    if name == "gauss":
        return float(np.sqrt(np.pi))
    return integrate.quad(lambda s: float(profile(name, 0, s)), -1, 1, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def smooth_step(u):
    """0 for u <= 0, 1 for u >= 1, smooth in between."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def plateau(t, inner, outer):
    """1 for t <= inner, 0 for t >= outer."""
    return smooth_step((outer - np.asarray(t, float)) / (outer - inner))


def annulus_cutoff(t):
    """eta with support in [1/4, 1]; sum over k in Z of eta(2^{-k} t) is 1 for t > 0."""
    return plateau(t, 0.5, 1.0) - plateau(2 * np.asarray(t, float), 0.5, 1.0)


def annulus_core(t):
    """eta_0 = 1 - sum_{k >= 1} eta(2^{-k} t), equal to the plateau itself."""
    return plateau(t, 0.5, 1.0)


def shell_cutoff(t):
    """eta with support in [1/2, 2]; sum over l <= 0 of eta(2^{-l} t) is 1 on (0, 1]."""
    return plateau(t, 1.0, 2.0) - plateau(2 * np.asarray(t, float), 1.0, 2.0)


def ramp(t, lo, hi):
    """0 for t <= lo, 1 for t >= hi."""
    return smooth_step((np.asarray(t, float) - lo) / (hi - lo))


def dyadic_bump(t):
    """eta with support in [1/2, 4] and sum over j in Z of eta(2^j t) = 1 for t > 0."""
    t = np.asarray(t, float)
    return plateau(t, 1.0, 4.0) - plateau(2 * t, 1.0, 4.0)
