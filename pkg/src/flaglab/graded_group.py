"""Homogeneous nilpotent groups on R^N with polynomial group laws.

The law has the triangular form (x*y)_k = x_k + y_k + M_k(x, y), where M_k
depends only on earlier coordinates and is homogeneous of degree d_k for the
dilations (r.x)_j = r^{d_j} x_j.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .polynomial import Poly, HomoPolynomial


@dataclass(frozen=True)
class DilationStructure:
    exponents: tuple

    def __post_init__(self):
        ex = tuple(Fraction(e) for e in self.exponents)
        if any(e <= 0 for e in ex):
            raise ValueError("dilation exponents must be positive")
        if any(a > b for a, b in zip(ex, ex[1:])):
            raise ValueError("dilation exponents must be nondecreasing")
        object.__setattr__(self, "exponents", ex)

    @property
    def N(self):
        return len(self.exponents)

    @property
    def Q(self):
        return sum(self.exponents, Fraction(0))

    def as_float(self):
        return np.array([float(e) for e in self.exponents])


@dataclass(frozen=True, eq=False)
class GroupSpec:
    """Immutable description of a graded group.

    ``law[k]`` is M_k as a polynomial in the 2N variables (x_1..x_N, y_1..y_N).
    """

    dil: DilationStructure
    blocks: tuple
    law: tuple
    name: str = "custom"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self):
        return self.dil.N

    @property
    def d(self):
        return self.dil.exponents

    @property
    def Q(self):
        return self.dil.Q

    @property
    def is_abelian(self):
        return all(m.is_zero() for m in self.law)

    def block_slices(self):
        out, start = [], 0
        for a in self.blocks:
            out.append(slice(start, start + a))
            start += a
        return out

    def block_dims(self):
        """Homogeneous dimension of each block."""
        return [sum(self.d[s], Fraction(0)) for s in self.block_slices()]

    @cached_property
    def product_polys(self):
        N = self.N
        return tuple(Poly.var(k, 2 * N) + Poly.var(N + k, 2 * N) + self.law[k] for k in range(N))

    @cached_property
    def inverse_polys(self):
        """Polynomials for x^{-1}, solved coordinate by coordinate."""
        N = self.N
        inv = []
        for k in range(N):
            # y_k = -x_k - M_k(x, y) with y_<k already known
            subs = [Poly.var(j, N) for j in range(N)] + [
                inv[j] if j < k else Poly.zero(N) for j in range(N)
            ]
            inv.append(-Poly.var(k, N) - self.law[k].compose(subs))
        return tuple(inv)

    @cached_property
    def _law_float(self):
        return [_compile(m) for m in self.law]

    @cached_property
    def _inv_float(self):
        return [_compile(p) for p in self.inverse_polys]

    def to_json(self):
        N = self.N
        law = []
        for k, m in enumerate(self.law):
            monos = []
            for a, c in sorted(m.terms.items()):
                monos.append({"c": _num(c), "ax": list(a[:N]), "ay": list(a[N:])})
            law.append({"k": k + 1, "monomials": monos})
        return {"N": N, "d": [_num(e) for e in self.d], "blocks": list(self.blocks), "law": law}

    def dumps(self):
        return json.dumps(self.to_json(), sort_keys=True)


def _num(c):
    c = Fraction(c)
    return int(c) if c.denominator == 1 else str(c)


def _compile(p: Poly):
    """Vectorized evaluator for a Poly as (exponent matrix, coefficients)."""
    if p.is_zero():
        return None
    A = np.array(list(p.terms.keys()), dtype=int)
    c = np.array([float(v) for v in p.terms.values()])
    return A, c


def _eval_compiled(comp, z):
    if comp is None:
        return np.zeros(z.shape[:-1])
    A, c = comp
    out = np.zeros(z.shape[:-1])
    for row, cc in zip(A, c):
        t = np.full(z.shape[:-1], cc)
        for i in np.nonzero(row)[0]:
            t = t * z[..., i] ** row[i]
        out += t
    return out


def check_law(d, law):
    """Raise ValueError naming the first monomial that breaks triangularity or homogeneity."""
    N = len(d)
    weights = list(d) + list(d)
    for k, m in enumerate(law):
        if m.nvars != 2 * N:
            raise ValueError(f"M_{k + 1} must have {2 * N} variables")
        for a, c in sorted(m.terms.items()):
            late = [i for i, e in enumerate(a) if e and (i % N) >= k]
            if late:
                i = late[0]
                side = "x" if i < N else "y"
                raise ValueError(
                    f"M_{k + 1} monomial {c}*{_mono_str(a, N)} depends on {side}_{i % N + 1}; "
                    f"only coordinates before {k + 1} are allowed"
                )
        bad = m.offending_monomial(weights, d[k])
        if bad is not None:
            a, c = bad
            raise ValueError(
                f"M_{k + 1} monomial {c}*{_mono_str(a, N)} is not homogeneous of degree {d[k]}"
            )


def _mono_str(a, N):
    parts = []
    for i, e in enumerate(a):
        if e:
            v = ("x" if i < N else "y") + str(i % N + 1)
            parts.append(v + (f"^{e}" if e > 1 else ""))
    return "*".join(parts) or "1"


def _law_from_monomials(N, spec):
    """spec: {k (1-based): [(c, ax, ay), ...]}"""
    law = []
    for k in range(1, N + 1):
        terms = {}
        for c, ax, ay in spec.get(k, []):
            terms[tuple(ax) + tuple(ay)] = c
        law.append(Poly(2 * N, terms))
    return law


def make_group(kind, N=None, d=None, blocks=None, law=None, name=None):
    """Build a GroupSpec.

    kind is one of "abelian", "heisenberg", "engel_step3", "custom".
    ``law`` for custom groups is a list of Polys in 2N variables or a dict
    {k: [(c, ax, ay), ...]} with 1-based k.
    """
    if kind == "abelian":
        if d is None:
            d = [1] * (N or 1)
        N = len(d)
        law = [Poly.zero(2 * N) for _ in range(N)]
    elif kind == "heisenberg":
        N, d = 3, [1, 1, 2]
        law = _law_from_monomials(3, {3: [(1, (1, 0, 0), (0, 1, 0))]})
        blocks = blocks or (2, 1)
    elif kind == "engel_step3":
        # filiform algebra [X1,X2]=X3, [X1,X3]=X4, BCH truncated at degree 3
        N, d = 4, [1, 1, 2, 3]
        h, t = Fraction(1, 2), Fraction(1, 12)
        law = _law_from_monomials(4, {
            3: [(h, (1, 0, 0, 0), (0, 1, 0, 0)), (-h, (0, 1, 0, 0), (1, 0, 0, 0))],
            4: [
                (h, (1, 0, 0, 0), (0, 0, 1, 0)), (-h, (0, 0, 1, 0), (1, 0, 0, 0)),
                # (x1 - y1)(x1 y2 - x2 y1) / 12
                (t, (2, 0, 0, 0), (0, 1, 0, 0)), (-t, (1, 1, 0, 0), (1, 0, 0, 0)),
                (-t, (1, 0, 0, 0), (1, 1, 0, 0)), (t, (0, 1, 0, 0), (2, 0, 0, 0)),
            ],
        })
        blocks = blocks or (2, 1, 1)
    elif kind == "custom":
        if d is None or law is None:
            raise ValueError("custom groups need d and law")
        N = len(d)
        if isinstance(law, dict):
            law = _law_from_monomials(N, law)
    else:
        raise ValueError(f"unknown group kind {kind!r}")
    dil = DilationStructure(tuple(d))
    law = tuple(law)
    if len(law) != N:
        raise ValueError("law needs one polynomial per coordinate")
    check_law(dil.exponents, law)
    blocks = tuple(blocks) if blocks is not None else (N,)
    if sum(blocks) != N or any(b < 1 for b in blocks):
        raise ValueError(f"blocks {blocks} do not partition {N}")
    return GroupSpec(dil, blocks, law, name or kind)


def group_from_json(doc):
    if isinstance(doc, str):
        doc = json.loads(doc)
    N = doc["N"]
    spec = {}
    for entry in doc["law"]:
        spec[entry["k"]] = [
            (Fraction(m["c"]) if isinstance(m["c"], (int, str)) else m["c"], m["ax"], m["ay"])
            for m in entry["monomials"]
        ]
    d = [Fraction(x) for x in doc["d"]]
    return make_group("custom", d=d, law=_law_from_monomials(N, spec), blocks=doc.get("blocks"))


def _pts(g, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != g.N:
        raise ValueError(f"point has dimension {x.shape[-1]}, group has N={g.N}")
    return x


def multiply(g: GroupSpec, x, y):
    x, y = _pts(g, x), _pts(g, y)
    x, y = np.broadcast_arrays(x, y)
    z = np.concatenate([x, y], axis=-1)
    out = x + y
    for k, comp in enumerate(g._law_float):
        if comp is not None:
            out[..., k] = out[..., k] + _eval_compiled(comp, z)
    return out


def inverse(g: GroupSpec, x):
    x = _pts(g, x)
    return np.stack([_eval_compiled(c, x) for c in g._inv_float], axis=-1)


def dilate(g: GroupSpec, r, x):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("dilation factor must be positive")
    x = _pts(g, x)
    return x * np.power(r[..., None], g.dil.as_float())


def partial_norm(g: GroupSpec, x, block):
    """Sup-type homogeneous norm of block ``block`` (0-based)."""
    x = _pts(g, x)
    s = g.block_slices()[block]
    d = g.dil.as_float()[s]
    return np.max(np.abs(x[..., s]) ** (1.0 / d), axis=-1)


def block_norms(g: GroupSpec, x):
    x = _pts(g, x)
    return np.stack([partial_norm(g, x, l) for l in range(len(g.blocks))], axis=-1)


def smooth_norm(x, d):
    """Smooth homogeneous norm: the rho with sum x_j^2 rho^{-2 d_j} = 1.

    Equal to |x|^{1/d} when all exponents agree. Used by the dyadic
    decompositions, which need a norm that is smooth away from 0.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray([float(e) for e in d])
    if np.all(d == d[0]):
        return np.sqrt(np.sum(x * x, axis=-1)) ** (1.0 / d[0])
    # Newton in u = log rho on the convex decreasing log sum; started at the
    # largest single-coordinate estimate it increases monotonically to the root
    zero = np.all(x == 0, axis=-1)
    with np.errstate(divide="ignore"):
        lx = np.log(np.abs(x))
    u = np.max(lx / d, axis=-1)
    u = np.where(zero, 0.0, u)
    for _ in range(60):
        e = np.exp(2 * (lx - d * u[..., None]))
        S = np.where(zero, 1.0, e.sum(axis=-1))
        slope = np.where(zero, 1.0, (2 * d * e).sum(axis=-1) / S)
        step = np.log(S) / slope
        u = u + step
        if np.max(np.abs(step), initial=0.0) < 1e-15:
            break
    out = np.exp(u)
    return np.where(np.all(x == 0, axis=-1), 0.0, out)


# ---------------------------------------------------------------- vector fields

class FieldTable:
    """Coefficients of N vector fields: field k = sum_l coeff[k][l] d/dx_l."""

    def __init__(self, g, coeff, side):
        self.g = g
        self.coeff = coeff
        self.side = side

    def P(self, k, l):
        """Off-diagonal coefficient of d/dx_l in field k (0-based)."""
        return self.coeff[k][l] - (1 if k == l else 0)

    def apply(self, k, f: Poly):
        out = Poly.zero(f.nvars)
        for l, c in enumerate(self.coeff[k]):
            if not c.is_zero():
                out = out + c * f.diff(l)
        return out

    def apply_word(self, word, f: Poly):
        for k in reversed(word):
            f = self.apply(k, f)
        return f

    def bracket(self, a, b):
        """Coefficients of [Z_a, Z_b] as a list of N Polys."""
        N = self.g.N
        return [self.apply(a, self.coeff[b][l]) - self.apply(b, self.coeff[a][l]) for l in range(N)]

    def __str__(self):
        names = {"left": "X", "right": "Y"}[self.side]
        lines = []
        for k in range(self.g.N):
            parts = []
            for l, c in enumerate(self.coeff[k]):
                if c.is_zero():
                    continue
                s = str(c)
                parts.append(f"d{l + 1}" if s == "1" else f"({s})*d{l + 1}")
            lines.append(f"{names}{k + 1} = " + " + ".join(parts))
        return "\n".join(lines)


def invariant_fields(g: GroupSpec, side="left"):
    """Left (X) or right (Y) invariant fields agreeing with d/dx_k at 0.

    Left: X_k f(x) = d/dt f(x * t e_k), so the coefficient of d_l is
    dM_l/dy_k (x, 0). Right uses dM_l/dx_k (0, x).
    """
    key = ("fields", side)
    if key in g._cache:
        return g._cache[key]
    N = g.N
    xs = [Poly.var(j, N) for j in range(N)]
    zero = [Poly.zero(N)] * N
    if side == "left":
        subs = xs + zero
        offset = N
    elif side == "right":
        subs = zero + xs
        offset = 0
    else:
        raise ValueError("side must be 'left' or 'right'")
    coeff = []
    for k in range(N):
        row = []
        for l in range(N):
            if l == k:
                row.append(Poly.const(1, N))
            else:
                p = g.law[l].diff(offset + k).compose(subs)
                row.append(HomoPolynomial.of(p, g.d, g.d[l] - g.d[k]) if not p.is_zero() else p)
        coeff.append(row)
    t = FieldTable(g, coeff, side)
    g._cache[key] = t
    return t


def euclid_in_fields(g: GroupSpec, side="left"):
    """Matrix B with d/dx_k = sum_l B[k][l] Z_l, B[k][l] homogeneous of degree d_l - d_k."""
    key = ("euclid", side)
    if key in g._cache:
        return g._cache[key]
    N = g.N
    F = invariant_fields(g, side)
    P = [[F.P(k, l) for l in range(N)] for k in range(N)]
    ident = [[Poly.const(1 if k == l else 0, N) for l in range(N)] for k in range(N)]
    B = [row[:] for row in ident]
    term = [row[:] for row in ident]
    for _ in range(N):  # P is nilpotent, so the Neumann series is finite
        term = _matmul(term, [[-p for p in row] for row in P])
        B = [[B[k][l] + term[k][l] for l in range(N)] for k in range(N)]
    for k in range(N):
        for l in range(N):
            if not B[k][l].is_zero():
                HomoPolynomial.of(B[k][l], g.d, g.d[l] - g.d[k])
    g._cache[key] = B
    return B


def _matmul(A, B):
    n = len(A)
    return [[sum((A[i][k] * B[k][j] for k in range(n)), Poly.zero(A[0][0].nvars)) for j in range(n)]
            for i in range(n)]


class FieldExpansion:
    """Operator sum_w q_w(x) Z_{w_1} ... Z_{w_s} with polynomial multipliers on the left."""

    def __init__(self, fields, terms, orders):
        self.fields = fields
        self.terms = terms
        self.orders = tuple(orders)

    def apply(self, f: Poly):
        out = Poly.zero(f.nvars)
        for w, q in self.terms.items():
            out = out + q * self.fields.apply_word(w, f)
        return out

    def check_degrees(self):
        """Each multiplier has degree sum(d_w) - sum(d_orders)."""
        d = self.fields.g.d
        target = sum((d[k] for k in self.orders), Fraction(0))
        for w, q in self.terms.items():
            HomoPolynomial.of(q, d, sum((d[k] for k in w), Fraction(0)) - target)
        return True

    def __str__(self):
        name = {"left": "X", "right": "Y"}[self.fields.side]
        parts = []
        for w, q in sorted(self.terms.items()):
            word = "".join(f"{name}{k + 1}" for k in w)
            s = str(q)
            parts.append(word if s == "1" else f"({s})*{word}")
        return " + ".join(parts) or "0"


MAX_EUCLID_ORDER = 4


def fields_from_euclid(g: GroupSpec, orders, side="left"):
    """Express d_{k_1} ... d_{k_r} (0-based k's) through invariant fields."""
    orders = tuple(orders)
    if len(orders) > MAX_EUCLID_ORDER:
        raise ValueError(f"order {len(orders)} exceeds the symbolic guard {MAX_EUCLID_ORDER}")
    F = invariant_fields(g, side)
    B = euclid_in_fields(g, side)
    N = g.N
    terms = {(): Poly.const(1, N)}
    for k in reversed(orders):
        new = {}
        for w, q in terms.items():
            for l in range(N):
                b = B[k][l]
                if b.is_zero():
                    continue
                # Z_l (q W) = Z_l(q) W + q Z_l W
                zq = F.apply(l, q)
                if not zq.is_zero():
                    new[w] = new.get(w, Poly.zero(N)) + b * zq
                key = (l,) + w
                new[key] = new.get(key, Poly.zero(N)) + b * q
        terms = {w: q for w, q in new.items() if not q.is_zero()}
    return FieldExpansion(F, terms, orders)


# ---------------------------------------------------------------- verification

def symbolic_associativity(g: GroupSpec):
    N = g.N
    X = [Poly.var(j, 3 * N) for j in range(N)]
    Y = [Poly.var(N + j, 3 * N) for j in range(N)]
    Z = [Poly.var(2 * N + j, 3 * N) for j in range(N)]
    prod = g.product_polys
    xy = [p.compose(X + Y) for p in prod]
    yz = [p.compose(Y + Z) for p in prod]
    left = [p.compose(xy + Z) for p in prod]
    right = [p.compose(X + yz) for p in prod]
    return all(a == b for a, b in zip(left, right))


def symbolic_inverse(g: GroupSpec):
    N = g.N
    X = [Poly.var(j, N) for j in range(N)]
    inv = list(g.inverse_polys)
    return all(p.compose(X + inv).is_zero() and p.compose(inv + X).is_zero() for p in g.product_polys)


def verify_group_axioms(g: GroupSpec, samples=1000, seed=0, symbolic=True):
    """Axiom residuals; the dilation residual is relative to 1 + |value|."""
    rng = np.random.default_rng(seed)
    N = g.N
    x, y, z = (rng.uniform(-1, 1, (samples, N)) for _ in range(3))
    r = np.exp(rng.uniform(np.log(0.25), np.log(4.0), samples))
    scale = lambda a: 1.0 + np.abs(a)
    assoc = multiply(g, multiply(g, x, y), z) - multiply(g, x, multiply(g, y, z))
    ident = np.maximum(np.abs(multiply(g, x, np.zeros(N)) - x), np.abs(multiply(g, np.zeros(N), x) - x))
    inv = multiply(g, x, inverse(g, x))
    lhs = dilate(g, r, multiply(g, x, y))
    rhs = multiply(g, dilate(g, r, x), dilate(g, r, y))
    out = {
        "associativity_residual": float(np.max(np.abs(assoc) / scale(multiply(g, multiply(g, x, y), z)))),
        "identity_residual": float(np.max(ident)),
        "inverse_residual": float(np.max(np.abs(inv))),
        "dilation_residual": float(np.max(np.abs(lhs - rhs) / scale(lhs))),
        "samples": samples,
    }
    if symbolic:
        out["symbolic_associativity"] = symbolic_associativity(g)
        out["symbolic_inverse"] = symbolic_inverse(g)
    return out
