"""Sparse multivariate polynomials with exact rational coefficients.

A polynomial is a dict mapping exponent tuples to coefficients. Coefficients
are ``Fraction`` whenever the inputs are exact, so homogeneity and
associativity checks can be done without rounding.
"""
from __future__ import annotations

from fractions import Fraction
from numbers import Rational

import numpy as np


def _exact(c):
    if isinstance(c, (int, Rational)):
        return Fraction(c)
    return c


class Poly:
    """Polynomial in ``nvars`` variables.

    >>> x = Poly.var(0, 2); y = Poly.var(1, 2)
    >>> str(x * y + 1)
    '1 + x1*x2'
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars, terms=None):
        self.nvars = int(nvars)
        clean = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.nvars:
                raise ValueError(f"exponent {alpha} has wrong length for {self.nvars} variables")
            if c != 0:
                clean[alpha] = clean.get(alpha, 0) + _exact(c)
        self.terms = {a: c for a, c in clean.items() if c != 0}

    # constructors
    @classmethod
    def zero(cls, nvars):
        return cls(nvars)

    @classmethod
    def const(cls, c, nvars):
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def var(cls, i, nvars):
        alpha = [0] * nvars
        alpha[i] = 1
        return cls(nvars, {tuple(alpha): 1})

    @classmethod
    def monomial(cls, alpha, c=1):
        return cls(len(alpha), {tuple(alpha): c})

    # algebra
    def _coerce(self, other):
        if isinstance(other, Poly):
            if other.nvars != self.nvars:
                raise ValueError("variable count mismatch")
            return other
        return Poly.const(other, self.nvars)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for a, c in other.terms.items():
            out[a] = out.get(a, 0) + c
        return Poly(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.nvars, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            return Poly(self.nvars, {a: c * _exact(other) for a, c in self.terms.items()})
        other = self._coerce(other)
        out = {}
        for a, c in self.terms.items():
            for b, e in other.terms.items():
                k = tuple(x + y for x, y in zip(a, b))
                out[k] = out.get(k, 0) + c * e
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, k):
        out = Poly.const(1, self.nvars)
        for _ in range(int(k)):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other, self.nvars)
        return self.nvars == other.nvars and (self - other).is_zero()

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def is_zero(self):
        return not self.terms

    def diff(self, i):
        out = {}
        for a, c in self.terms.items():
            if a[i]:
                b = list(a)
                b[i] -= 1
                out[tuple(b)] = c * a[i]
        return Poly(self.nvars, out)

    def variables(self):
        """Indices of variables that actually occur."""
        return sorted({i for a in self.terms for i, e in enumerate(a) if e})

    def weighted_degrees(self, weights):
        """Set of weighted degrees sum(alpha_j * w_j) over the monomials."""
        w = [Fraction(x) for x in weights]
        return {sum(e * wj for e, wj in zip(a, w)) for a in self.terms}

    def is_homogeneous(self, weights, degree):
        degree = Fraction(degree)
        if degree < 0:
            return self.is_zero()
        return all(dg == degree for dg in self.weighted_degrees(weights))

    def offending_monomial(self, weights, degree):
        """First monomial whose weighted degree differs from ``degree``."""
        w = [Fraction(x) for x in weights]
        for a, c in sorted(self.terms.items()):
            if Fraction(degree) < 0 or sum(e * wj for e, wj in zip(a, w)) != Fraction(degree):
                return a, c
        return None

    def compose(self, subs):
        """Substitute polynomial ``subs[i]`` for variable i."""
        if len(subs) != self.nvars:
            raise ValueError("need one substitution per variable")
        m = subs[0].nvars if subs else 0
        out = Poly.zero(m)
        powers = [dict() for _ in subs]

        def pw(i, e):
            if e not in powers[i]:
                powers[i][e] = subs[i] ** e
            return powers[i][e]

        for a, c in self.terms.items():
            term = Poly.const(c, m)
            for i, e in enumerate(a):
                if e:
                    term = term * pw(i, e)
            out = out + term
        return out

    def embed(self, nvars, positions):
        """Rename variable i to ``positions[i]`` in a ring of ``nvars`` variables."""
        out = {}
        for a, c in self.terms.items():
            b = [0] * nvars
            for i, e in enumerate(a):
                b[positions[i]] += e
            out[tuple(b)] = c
        return Poly(nvars, out)

    def scale_vars(self, factors):
        """p(f_1 x_1, ..., f_n x_n) with float or exact factors."""
        out = {}
        for a, c in self.terms.items():
            s = c
            for e, f in zip(a, factors):
                if e:
                    s = s * _exact(f) ** e
            out[a] = s
        return Poly(self.nvars, out)

    def __call__(self, x):
        """Evaluate at points ``x`` with trailing axis of length nvars."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.nvars:
            raise ValueError("point dimension mismatch")
        out = np.zeros(x.shape[:-1])
        for a, c in self.terms.items():
            t = np.full(x.shape[:-1], float(c))
            for i, e in enumerate(a):
                if e:
                    t = t * x[..., i] ** e
            out = out + t
        return out

    def max_abs_coeff(self):
        return max((abs(float(c)) for c in self.terms.values()), default=0.0)

    def __repr__(self):
        return f"Poly({self.nvars}, {self})"

    def __str__(self):
        if not self.terms:
            return "0"
        parts = []
        for a, c in sorted(self.terms.items(), key=lambda t: (sum(t[0]), t[0][::-1])):
            mono = "*".join(f"x{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(a) if e)
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        return " + ".join(parts)

    # serialization
    def to_list(self):
        return [{"c": _json_num(c), "a": list(a)} for a, c in sorted(self.terms.items())]

    @classmethod
    def from_list(cls, nvars, items):
        return cls(nvars, {tuple(t["a"]): _parse_num(t["c"]) for t in items})


def _json_num(c):
    if isinstance(c, Fraction):
        return str(c) if c.denominator != 1 else int(c)
    return float(c)


def _parse_num(c):
    if isinstance(c, str):
        return Fraction(c)
    if isinstance(c, int):
        return Fraction(c)
    return c


class HomoPolynomial(Poly):
    """Poly with a declared weighted degree, checked on construction."""

    __slots__ = ("weights", "degree")

    def __init__(self, nvars, terms, weights, degree):
        super().__init__(nvars, terms)
        self.weights = tuple(Fraction(w) for w in weights)
        self.degree = Fraction(degree)
        bad = self.offending_monomial(self.weights, self.degree)
        if bad is not None:
            raise ValueError(
                f"monomial {bad[1]}*x^{bad[0]} has weighted degree "
                f"{sum(e * w for e, w in zip(bad[0], self.weights))}, declared {self.degree}"
            )

    @classmethod
    def of(cls, p: Poly, weights, degree):
        return cls(p.nvars, p.terms, weights, degree)
