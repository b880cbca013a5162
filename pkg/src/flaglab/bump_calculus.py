"""Test functions on R^N: analytic generators, dyadic dilates, grids,
cancellation tests, primitives and dyadic decompositions of bumps."""
from __future__ import annotations

import itertools
import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import fft as sfft

from . import profiles
from .combinatorics import Partition, embed
from .graded_group import smooth_norm
from .polynomial import Poly


# ---------------------------------------------------------------- generators

class BumpSpec:
    """A function on R^N that can be evaluated anywhere and differentiated.

    Subclasses provide ``__call__`` on arrays of shape (..., N) and
    ``deriv(alpha)``. Dilation, sums and scalar multiples are generic.
    """

    N: int

    def __call__(self, x):
        raise NotImplementedError

    def deriv(self, alpha):
        raise NotImplementedError

    def d(self, axis, times=1):
        alpha = [0] * self.N
        alpha[axis] = times
        return self.deriv(tuple(alpha))

    def __add__(self, other):
        return SumBump([(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return SumBump([(1.0, self), (-1.0, other)])

    def __mul__(self, c):
        return SumBump([(float(c), self)])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


class TensorBump(BumpSpec):
    """Sum of terms c * P(x) * prod_j profile_j^{(k_j)}(s_j x_j).

    Closed under differentiation and polynomial multiplication, so all
    derivatives are exact.
    """

    def __init__(self, terms, N=None):
        self.terms = []
        for c, poly, prof, orders, scales in terms:
            self.terms.append((float(c), poly, tuple(prof), tuple(int(k) for k in orders),
                               tuple(float(s) for s in scales)))
        self.N = N if N is not None else len(self.terms[0][2])

    @classmethod
    def product(cls, profile, scales, c=1.0, poly=None, orders=None):
        """c * poly(x) * prod_j profile(scales_j x_j)."""
        N = len(scales)
        if isinstance(profile, str):
            profile = (profile,) * N
        poly = poly if poly is not None else Poly.const(1, N)
        orders = orders if orders is not None else (0,) * N
        return cls([(c, poly, profile, orders, scales)], N)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for c, poly, prof, orders, scales in self.terms:
            v = np.full(x.shape[:-1], c)
            if not (len(poly.terms) == 1 and poly.terms.get((0,) * self.N) == 1):
                v = v * poly(x)
            for j in range(self.N):
                v = v * profiles.profile(prof[j], orders[j], scales[j] * x[..., j])
            out = out + v
        return out

    def deriv(self, alpha):
        terms = list(self.terms)
        for axis, times in enumerate(alpha):
            for _ in range(times):
                new = []
                for c, poly, prof, orders, scales in terms:
                    dp = poly.diff(axis)
                    if not dp.is_zero():
                        new.append((c, dp, prof, orders, scales))
                    o = list(orders)
                    o[axis] += 1
                    new.append((c * scales[axis], poly, prof, tuple(o), scales))
                terms = new
        return TensorBump(terms, self.N)

    def times_poly(self, p: Poly):
        return TensorBump([(c, p * poly, prof, o, s) for c, poly, prof, o, s in self.terms], self.N)

    def support_box(self):
        """Per-coordinate half widths of the support (inf for gaussian factors)."""
        box = np.zeros(self.N)
        for _, _, prof, _, scales in self.terms:
            for j, (name, s) in enumerate(zip(prof, scales)):
                w = math.inf if name == "gauss" or s == 0 else 1.0 / s
                box[j] = max(box[j], w)
        return tuple(box)

    def support_radius(self):
        """Sup-norm radius of the support, or inf for gaussian factors."""
        r = 0.0
        for _, _, prof, _, scales in self.terms:
            for name, s in zip(prof, scales):
                r = max(r, math.inf if name == "gauss" else 1.0 / s)
        return r


class ClosureBump(BumpSpec):
    """Generator given by a Python callable; derivatives by high-order central differences."""

    def __init__(self, fn, N, step=2e-3, derivs=None, label="closure"):
        self.fn, self.N, self.step = fn, N, step
        self.derivs = derivs or {}
        self.label = label

    def __call__(self, x):
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)

    def deriv(self, alpha):
        alpha = tuple(alpha)
        if not any(alpha):
            return self
        if alpha in self.derivs:
            return self.derivs[alpha]
        axis = next(i for i, a in enumerate(alpha) if a)
        rest = list(alpha)
        rest[axis] -= 1
        inner = self.deriv(tuple(rest))
        h = self.step
        # sixth-order central difference
        w = ((1, 3 / 4), (2, -3 / 20), (3, 1 / 60))

        def fn(x, inner=inner, axis=axis):
            e = np.zeros(self.N)
            e[axis] = 1.0
            out = 0.0
            for k, c in w:
                out = out + c * (inner(x + k * h * e) - inner(x - k * h * e))
            return out / h

        return ClosureBump(fn, self.N, h, label=f"d{axis + 1}({self.label})")


class SumBump(BumpSpec):
    def __init__(self, parts):
        flat = []
        for c, b in parts:
            if isinstance(b, SumBump):
                flat.extend((c * cc, bb) for cc, bb in b.parts)
            else:
                flat.append((float(c), b))
        self.parts = flat
        self.N = flat[0][1].N

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for c, b in self.parts:
            if c != 0.0:
                out = out + c * b(x)
        return out

    def deriv(self, alpha):
        return SumBump([(c, b.deriv(alpha)) for c, b in self.parts])


class DilatedBump(BumpSpec):
    """x -> factor * base(scales * x), coordinatewise."""

    def __init__(self, base, scales, factor):
        if isinstance(base, DilatedBump):
            scales = np.asarray(scales, float) * base.scales
            factor = factor * base.factor
            base = base.base
        self.base = base
        self.scales = np.asarray(scales, dtype=float)
        self.factor = float(factor)
        self.N = base.N

    def __call__(self, x):
        return self.factor * self.base(np.asarray(x, dtype=float) * self.scales)

    def deriv(self, alpha):
        gain = float(np.prod(self.scales ** np.asarray(alpha)))
        return DilatedBump(self.base.deriv(alpha), self.scales, self.factor * gain)


def dilation_exponents(I, p: Partition):
    """Per-coordinate exponent vector from a block multi-index (or an N-tuple)."""
    I = tuple(I)
    return embed(p, I) if len(I) == p.n and p.n != p.N else I


def dilate_index(f: BumpSpec, I, p: Partition, d, check=True):
    """[f]_I(x) = 2^{-sum Q_l i_l} f(2^{-I} . x): larger indices mean wider bumps.

    ``check=False`` allows non-monotone offsets such as I - (I v J).
    """
    e = np.asarray(dilation_exponents(I, p), dtype=float)
    dv = np.asarray([float(x) for x in d])
    if len(e) != f.N:
        raise ValueError("index does not match the dimension")
    if check and np.any(np.diff(np.asarray(I)) < 0):
        raise ValueError("multi-index must be monotone")
    return DilatedBump(f, 2.0 ** (-dv * e), 2.0 ** (-float(dv @ e)))


# ---------------------------------------------------------------- grids

@dataclass(frozen=True)
class Grid:
    extents: tuple   # R_j, axis j covers [-R_j, R_j]
    counts: tuple    # odd node counts

    def __post_init__(self):
        if len(self.extents) != len(self.counts):
            raise ValueError("extents and counts differ in length")
        for R, n in zip(self.extents, self.counts):
            if R <= 0 or n < 3 or n % 2 == 0:
                raise ValueError("grid axes need R > 0 and an odd count >= 3")

    @classmethod
    def cube(cls, N, R, count=None):
        if count is None:
            count = {1: 257, 2: 65, 3: 65, 4: 33}.get(N, 17)
        return cls((float(R),) * N, (int(count),) * N)

    @property
    def N(self):
        return len(self.counts)

    @property
    def h(self):
        return tuple(2 * R / (n - 1) for R, n in zip(self.extents, self.counts))

    def axis(self, j):
        return np.linspace(-self.extents[j], self.extents[j], self.counts[j])

    def points(self):
        axes = [self.axis(j) for j in range(self.N)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def scaled(self, factors):
        return Grid(tuple(R * f for R, f in zip(self.extents, factors)), self.counts)

    def cell(self):
        return float(np.prod(self.h))


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray
    source: BumpSpec | None = None
    index: tuple | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(self.grid.counts):
            raise ValueError("values do not match the grid shape")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @property
    def N(self):
        return self.grid.N


def sample(f: BumpSpec, grid: Grid, index=None):
    return GridFunction(grid, f(grid.points()), f, index)


def integrate_axes(values, grid: Grid, axes):
    """Trapezoid rule over the given axes; spectrally accurate for decayed data."""
    out = values
    for ax in sorted(axes, reverse=True):
        out = np.trapezoid(out, dx=grid.h[ax], axis=ax)
    return out


def l1_norm(f: BumpSpec, grid: Grid):
    return float(integrate_axes(np.abs(f(grid.points())), grid, range(grid.N)))


# ---------------------------------------------------------------- grid dumps

def dump_grid(gf: GridFunction):
    """JSON header line, then little-endian float64 values with x1 varying fastest."""
    head = {"N": gf.N, "axes": [{"h": h, "count": n} for h, n in zip(gf.grid.h, gf.grid.counts)],
            "order": "row-major x1-fastest"}
    body = np.asarray(gf.values, dtype="<f8").transpose().ravel()
    return (json.dumps(head, sort_keys=True) + "\n").encode() + body.tobytes()


def load_grid(data: bytes):
    nl = data.index(b"\n")
    head = json.loads(data[:nl])
    counts = tuple(a["count"] for a in head["axes"])
    body = data[nl + 1:]
    expected = 8 * int(np.prod(counts))
    if len(body) != expected:
        raise ValueError(f"grid body has {len(body)} bytes, header implies {expected}")
    vals = np.frombuffer(body, dtype="<f8").reshape(counts[::-1]).transpose()
    grid = Grid(tuple(a["h"] * (a["count"] - 1) / 2 for a in head["axes"]), counts)
    return GridFunction(grid, vals.copy())


# ---------------------------------------------------------------- seminorms

_FD4 = ((1, 8 / 12), (2, -1 / 12))


def fd_derivative(values, h, axis):
    """Fourth-order central difference; the result loses two nodes at each end."""
    v = np.moveaxis(values, axis, 0)
    n = v.shape[0]
    out = (8 * (v[3:n - 1] - v[1:n - 3]) - (v[4:] - v[:n - 4])) / (12 * h)
    return np.moveaxis(out, 0, axis)


def _trim(values, axis, k):
    v = np.moveaxis(values, axis, 0)
    return np.moveaxis(v[k:v.shape[0] - k], 0, axis)


def multi_orders(N, m):
    for total in range(m + 1):
        for alpha in itertools.product(range(total + 1), repeat=N):
            if sum(alpha) == total:
                yield alpha


def seminorm(f: GridFunction, m=0, kind="compact", M=0):
    """max over |alpha| <= m of sup |d^alpha f| (times (1 + |x|)^M for kind='schwartz')."""
    if kind not in ("compact", "schwartz"):
        raise ValueError("kind must be 'compact' or 'schwartz'")
    if any(n < 4 * m + 1 or n < m + 5 for n in f.grid.counts):
        raise ValueError(f"grid too coarse for derivatives of order {m}")
    pts = f.grid.points()
    best = 0.0
    for alpha in multi_orders(f.N, m):
        v, p = f.values, pts
        for ax, k in enumerate(alpha):
            for _ in range(k):
                v = fd_derivative(v, f.grid.h[ax], ax)
                p = _trim(p, ax, 2)
        w = np.abs(v)
        if kind == "schwartz":
            w = w * (1 + np.linalg.norm(p, axis=-1)) ** M
        best = max(best, float(w.max()))
    return best


def exact_seminorm(f: BumpSpec, grid: Grid, m=0):
    pts = grid.points()
    return max(float(np.abs(f.deriv(a)(pts)).max()) for a in multi_orders(f.N, m))


# ---------------------------------------------------------------- cancellation

def block_axes(p: Partition, blocks):
    starts = [0] + list(itertools.accumulate(p.sizes))
    return [ax for l in blocks for ax in range(starts[l], starts[l + 1])]


def block_marginal(f: GridFunction, p: Partition, blocks):
    """Integrate over the coordinates of the given blocks (0-based)."""
    if any(l < 0 or l >= p.n for l in blocks):
        raise ValueError("block index out of range")
    axes = block_axes(p, blocks)
    return integrate_axes(f.values, f.grid, axes)


@dataclass
class CancellationReport:
    marginal_sup: dict
    reference: float
    tol: float
    strong: bool | None = None
    epsilon: float | None = None
    deficits: dict = field(default_factory=dict)
    note: str = ""


def strong_cancellation(f: GridFunction, p: Partition, tol=1e-8):
    ref = float(np.abs(f.values).max())
    sups = {l: float(np.abs(block_marginal(f, p, [l])).max()) for l in range(p.n)}
    return CancellationReport(sups, ref, tol, strong=all(s < tol * ref for s in sups.values()))


def weak_cancellation_fit(f: GridFunction, p: Partition, I, tol=1e-8):
    """Largest epsilon with |int f dx_B| <= |f| prod_{k in B} 2^{-eps (i_{k+1} - i_k)}.

    Runs over all subsets B not containing the last block. Marginals below
    tol * sup|f| count as zero.
    """
    I = tuple(I)
    n = p.n
    ref = float(np.abs(f.values).max())
    gaps = [I[k + 1] - I[k] for k in range(n - 1)]
    if all(g == 0 for g in gaps):
        return CancellationReport({}, ref, tol, epsilon=math.inf, note="no gap")
    eps = math.inf
    deficits = {}
    for r in range(1, n):
        for B in itertools.combinations(range(n - 1), r):
            ratio = float(np.abs(block_marginal(f, p, list(B))).max()) / ref
            G = sum(gaps[k] for k in B)
            deficits[B] = ratio
            if ratio < tol:
                continue
            if G == 0:
                continue
            eps = min(eps, -math.log2(ratio) / G)
    if eps == math.inf:
        note = "all marginals below tolerance"
    else:
        note = ""
    return CancellationReport({}, ref, tol, epsilon=eps, deficits=deficits, note=note)


# ---------------------------------------------------------------- primitives

class CancellationError(ValueError):
    def __init__(self, msg, norms):
        super().__init__(f"{msg}: {norms}")
        self.norms = norms


def _normalized_bump_1d(x, a):
    """chi_a(t) = a^{-1} chi(t / a) with chi the unit-mass cosine bump."""
    return profiles.profile("cosbump", 0, x / a) / (a * profiles.profile_mass("cosbump"))


def spectral_antiderivative(values, h, axis):
    """Periodic antiderivative along an axis, pinned to 0 at the first node."""
    v = np.moveaxis(values, axis, -1)
    n = v.shape[-1]
    k = 2 * np.pi * sfft.fftfreq(n, d=h)
    F = sfft.fft(v, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        G = np.where(k != 0, F / (1j * k), 0.0)
    out = sfft.ifft(G, axis=-1).real
    out = out - out[..., :1]
    return np.moveaxis(out, -1, axis)


def spectral_derivative(values, h, axis):
    v = np.moveaxis(values, axis, -1)
    n = v.shape[-1]
    k = 2 * np.pi * sfft.fftfreq(n, d=h)
    out = sfft.ifft(1j * k * sfft.fft(v, axis=-1), axis=-1).real
    return np.moveaxis(out, -1, axis)


def _support_halfwidth(values, grid, axis, rel=1e-13):
    v = np.moveaxis(np.abs(values), axis, 0).reshape(values.shape[axis], -1).max(axis=1)
    x = grid.axis(axis)
    live = x[v > rel * max(v.max(), 1e-300)]
    return float(np.abs(live).max()) if live.size else grid.h[axis]


def primitives(f: GridFunction, J1, J2=(), tol=1e-8):
    """Functions psi_k (k in J1) with f = sum_k d_k psi_k that keep J2-cancellation.

    Follows the chi-telescoping construction: phi_1 = f - chi(x_1) int f dx_1,
    phi_j subtracts one more averaged variable, and psi_j is the cumulative
    integral of phi_j in x_j. Coordinates are 0-based.
    """
    J1, J2 = tuple(J1), tuple(J2)
    if set(J1) & set(J2):
        raise ValueError("J1 and J2 must be disjoint")
    g = f.grid
    ref = float(np.abs(f.values).max())
    norms = {}
    for name, J in (("J1", J1), ("J2", J2)):
        if J:
            norms[name] = float(np.abs(integrate_axes(f.values, g, J)).max())
    if any(v > tol * ref for v in norms.values()):
        raise CancellationError("input lacks the required cancellation", norms)
    # widths a_j so that chi_j lives inside the support box
    a = {j: max(_support_halfwidth(f.values, g, j), 6 * g.h[j]) for j in J1}
    chis = {}
    for j in J1:
        x = g.axis(j)
        c = _normalized_bump_1d(x, a[j])
        c = c / (c.sum() * g.h[j])  # unit mass for the discrete rule
        shape = [1] * g.N
        shape[j] = -1
        chis[j] = c.reshape(shape)
    out = []
    prev = f.values  # prod_{l<j} chi_l * int f ds_{<j}
    marg = f.values  # int f over the J1 coordinates processed so far
    weight = 1.0
    for pos, j in enumerate(J1):
        marg = np.sum(marg, axis=j, keepdims=True) * g.h[j]
        weight = weight * chis[j]
        cur = weight * marg
        phi = prev - cur
        psi = spectral_antiderivative(phi, g.h[j], j)
        out.append(GridFunction(g, psi))
        prev = cur
    return out


def reconstruct_from_primitives(prims, J1):
    g = prims[0].grid
    total = np.zeros(g.counts)
    for psi, j in zip(prims, J1):
        total = total + spectral_derivative(psi.values, g.h[j], j)
    return total


def iterated_primitives(f: GridFunction, J1, J2, tol=1e-8):
    """Two-set representation f = sum_{k in J1, l in J2} d_k d_l psi_{k,l}."""
    first = primitives(f, J1, J2, tol)
    out = {}
    for k, psi in zip(J1, first):
        for l, pk in zip(J2, primitives(psi, J2, (), tol=1e-6)):
            out[(k, l)] = pk
    return out


def relative_l2(a, b):
    return float(np.linalg.norm(np.ravel(a - b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


# ---------------------------------------------------------------- mollifier split

def block_mollifier(grid: Grid, p: Partition, l, radius=1.0):
    """Unit-mass tensor bump on block l with support where |x_l| <= radius."""
    axes = block_axes(p, [l])
    out = np.ones([1] * grid.N)
    for ax in axes:
        x = grid.axis(ax)
        c = _normalized_bump_1d(x, radius)
        c = c / (c.sum() * grid.h[ax])
        shape = [1] * grid.N
        shape[ax] = -1
        out = out * c.reshape(shape)
    return out


def mollifier_split(f: GridFunction, p: Partition, l, radius=1.0):
    """(L_l f, M_l f) with M_l f = chi_l(x_l) int f dx_l and L_l = I - M_l."""
    axes = block_axes(p, [l])
    marg = f.values
    for ax in axes:
        marg = np.sum(marg, axis=ax, keepdims=True) * f.grid.h[ax]
    M = block_mollifier(f.grid, p, l, radius) * marg
    return GridFunction(f.grid, f.values - M), GridFunction(f.grid, M)


# ---------------------------------------------------------------- annular decomposition

class AnnularTerm(BumpSpec):
    """psi^k of the annular decomposition, as an exact closure."""

    def __init__(self, psi, k, d):
        self.psi, self.k, self.N = psi, int(k), psi.N
        self.d = np.asarray([float(x) for x in d])
        self.Q = float(self.d.sum())

    def __call__(self, x):
        x = np.asarray(x, float)
        rho = smooth_norm(x, self.d)
        if self.k == 0:
            return self.psi(x) * profiles.annulus_core(rho)
        s = 2.0 ** (self.k * self.d)
        return 2.0 ** (self.k * self.Q) * self.psi(x * s) * profiles.annulus_cutoff(rho)

    def deriv(self, alpha):
        return ClosureBump(self, self.N).deriv(alpha)


class _DerivedTerm(BumpSpec):
    """sum_c w_c d^{beta_c} g_c^k, the cancellation-preserving annular term."""

    def __init__(self, parts, N):
        self.parts, self.N = parts, N

    def __call__(self, x):
        return sum(w * b(x) for w, b in self.parts)

    def deriv(self, alpha):
        return _DerivedTerm([(w, b.deriv(alpha)) for w, b in self.parts], self.N)


def annular_decompose(psi: BumpSpec, d, terms=12, primitive_rep=None, fd_step=1e-3):
    """Terms psi^k, k = 0..terms-1, supported in the unit ball, with
    psi(x) = sum_k 2^{-kQ} psi^k(2^{-k} . x).

    If ``primitive_rep`` = [(beta, g), ...] with psi = sum d^beta g is given,
    each term is built from the decomposed primitives so that it keeps the
    cancellation of psi.
    """
    d = [float(x) for x in d]
    if primitive_rep is None:
        return [AnnularTerm(psi, k, d) for k in range(terms)]
    out = []
    dv = np.asarray(d)
    for k in range(terms):
        parts = []
        for beta, g in primitive_rep:
            gk = ClosureBump(AnnularTerm(g, k, d), len(d), step=fd_step)
            parts.append((2.0 ** (-k * float(dv @ np.asarray(beta))), gk.deriv(tuple(beta))))
        out.append(_DerivedTerm(parts, len(d)))
    return out


def resum_annular(parts, d):
    dv = np.asarray([float(x) for x in d])
    Q = float(dv.sum())

    def fn(x):
        x = np.asarray(x, float)
        return sum(2.0 ** (-k * Q) * t(x * 2.0 ** (-k * dv)) for k, t in enumerate(parts))

    return ClosureBump(fn, len(dv), label="annular-resum")


# ---------------------------------------------------------------- first-block decomposition

class _Block1Quadrature:
    """Gauss-Legendre rule for integrals of chi_j(x_1) against functions on block 1."""

    def __init__(self, a1, d1, nodes=48):
        self.a1, self.d1 = a1, np.asarray(d1, float)
        g, w = np.polynomial.legendre.leggauss(nodes)
        if a1 == 1:
            # chi_0 lives on rho in [1/2, 2]; integrate the two shells separately
            lo, hi = 0.5 ** self.d1[0], 2.0 ** self.d1[0]
            t = 0.5 * (hi - lo) * g + 0.5 * (hi + lo)
            ww = 0.5 * (hi - lo) * w
            self.x = np.concatenate([-t[::-1], t])[:, None]
            self.w = np.concatenate([ww[::-1], ww])
        else:
            R = 2.0 ** self.d1
            axes = [R[i] * g for i in range(a1)]
            ws = [R[i] * w for i in range(a1)]
            X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, a1)
            W = np.prod(np.stack(np.meshgrid(*ws, indexing="ij"), axis=-1).reshape(-1, a1), axis=1)
            keep = np.abs(profiles.shell_cutoff(smooth_norm(X, self.d1))) > 0
            self.x, self.w = X[keep], W[keep]

    def chi0(self, y):
        return profiles.shell_cutoff(smooth_norm(y, self.d1))


class FirstBlockDecomposition:
    """phi = sum_{j <= 0} 2^{-j Q_1} phi^j(2^{-j} . x_1, x_2, ...) for phi with
    cancellation in the first block."""

    def __init__(self, phi: BumpSpec, p: Partition, d, terms=10, nodes=48):
        self.phi, self.p = phi, p
        self.d = np.asarray([float(x) for x in d])
        self.a1 = p.sizes[0]
        self.d1 = self.d[:self.a1]
        self.Q1 = float(self.d1.sum())
        self.terms = terms
        self.quad = _Block1Quadrature(self.a1, self.d1, nodes)
        self.chi0_mass = float(self.quad.w @ self.quad.chi0(self.quad.x))
        self._memo = {}

    def chi(self, j, y1):
        return self.quad.chi0(y1 * 2.0 ** (-j * self.d1))

    def chi_tilde(self, j, y1):
        return self.chi(j, y1) / (2.0 ** (j * self.Q1) * self.chi0_mass)

    def a(self, j, rest):
        """a_j(x') = int phi(y_1, x') chi_j(y_1) dy_1, vectorized over rest (..., N - a1)."""
        key = (j, rest.shape, rest.tobytes())
        if key in self._memo:
            return self._memo[key]
        if len(self._memo) > 256:
            self._memo.clear()
        s = 2.0 ** (j * self.d1)
        y = self.quad.x * s  # nodes for chi_j
        w = self.quad.w * float(np.prod(s)) * self.quad.chi0(self.quad.x)
        shape = rest.shape[:-1]
        pts = np.concatenate([
            np.broadcast_to(y, shape + y.shape),
            np.broadcast_to(rest[..., None, :], shape + (len(y), rest.shape[-1])),
        ], axis=-1)
        self._memo[key] = out = self.phi(pts) @ w
        return out

    def A(self, j, rest):
        return sum(self.a(s, rest) for s in range(j, 1))

    def tilde(self, j, x):
        """phi~_j at x (undilated coordinates)."""
        x = np.asarray(x, float)
        y1, rest = x[..., :self.a1], x[..., self.a1:]
        aj = self.a(j, rest)
        Aj = self.A(j, rest)
        return (self.phi(x) * self.chi(j, y1) - self.chi_tilde(j, y1) * aj
                + (self.chi_tilde(j, y1) - self.chi_tilde(j - 1, y1)) * Aj)

    def term(self, j):
        """phi^j as a closure: 2^{j Q_1} phi~_j(2^j . x_1, x')."""
        if j > 0:
            raise ValueError("first-block terms are indexed by j <= 0")
        s = np.concatenate([2.0 ** (j * self.d1), np.ones(len(self.d) - self.a1)])

        def fn(x, j=j, s=s):
            return 2.0 ** (j * self.Q1) * self.tilde(j, np.asarray(x, float) * s)

        return ClosureBump(fn, len(self.d), label=f"phi^{j}")

    def parts(self):
        return [self.term(-k) for k in range(self.terms)]

    def resum(self, x):
        """sum_j 2^{-j Q_1} phi^j(2^{-j} . x_1, x') evaluated from the terms."""
        x = np.asarray(x, float)
        out = np.zeros(x.shape[:-1])
        for k in range(self.terms):
            j = -k
            s = np.concatenate([2.0 ** (-j * self.d1), np.ones(len(self.d) - self.a1)])
            out = out + 2.0 ** (-j * self.Q1) * self.term(j)(x * s)
        return out

    def exact_region(self, x):
        """Mask where the truncated sum is exact: rho(x_1) > 2^{-(terms-1)}."""
        return smooth_norm(np.asarray(x)[..., :self.a1], self.d1) > 2.0 ** (-(self.terms - 1))


def first_block_decompose(phi: BumpSpec, p: Partition, d, terms=10, check_grid=None, tol=1e-8):
    dec = FirstBlockDecomposition(phi, p, d, terms)
    if check_grid is not None:
        gf = sample(phi, check_grid)
        m = float(np.abs(block_marginal(gf, p, [0])).max())
        if m > tol * float(np.abs(gf.values).max()):
            raise CancellationError("no cancellation in the first block", {"block1": m})
    return dec


# ---------------------------------------------------------------- tensor expansion

@dataclass
class TensorExpansion:
    period: tuple
    coeffs: np.ndarray          # complex Fourier coefficients, fftshifted, modes -K..K
    K: int
    rank1: list                 # (weight, factors) for N = 2, else empty
    residual: float
    decay_slope: float

    def __call__(self, x):
        x = np.asarray(x, float)
        N = x.shape[-1]
        modes = np.arange(-self.K, self.K + 1)
        out = np.zeros(x.shape[:-1], complex)
        waves = [np.exp(2j * np.pi * np.multiply.outer(x[..., j], modes) / self.period[j]) for j in range(N)]
        c = self.coeffs
        # contract one axis at a time
        if N == 1:
            return (waves[0] @ c).real
        if N == 2:
            return np.einsum("...a,ab,...b->...", waves[0], c, waves[1]).real
        if N == 3:
            return np.einsum("...a,abc,...b,...c->...", waves[0], c, waves[1], waves[2]).real
        raise ValueError("tensor expansion evaluation supports N <= 3")

    def energy_fractions(self):
        if not self.rank1:
            e = np.sort(np.abs(self.coeffs.ravel()) ** 2)[::-1]
        else:
            e = np.array([w ** 2 for w, _ in self.rank1])
        return e / e.sum()


def tensor_expand(phi: BumpSpec, N, R=1.0, tol=1e-4, max_modes=64, samples=2000, seed=0):
    """Separated Fourier expansion of a function supported in [-R, R]^N.

    Modes are added until the residual at random check points is below tol.
    For N = 2 the coefficient matrix is also split by SVD into rank-1 terms.
    """
    L = 2.0 * R * 1.25  # period with a margin so the support does not wrap
    n = 4 * max_modes + 1
    x1 = (np.arange(n) - n // 2) * (L / n)
    grid = np.stack(np.meshgrid(*([x1] * N), indexing="ij"), axis=-1)
    vals = phi(grid)
    C = sfft.fftshift(sfft.fftn(sfft.ifftshift(vals))) / n ** N
    # ifftshift puts x = 0 at index 0, so C holds the coefficients of exp(2 pi i k x / L)
    centre = n // 2
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-R, R, (samples, N))
    ref = phi(pts)
    scale = max(float(np.abs(ref).max()), 1e-300)
    for K in range(2, max_modes + 1, 2):
        sl = tuple(slice(centre - K, centre + K + 1) for _ in range(N))
        Ck = C[sl].copy()
        exp = TensorExpansion((L,) * N, Ck, K, [], 0.0, 0.0)
        res = float(np.abs(exp(pts) - ref).max()) / scale
        if res < tol:
            break
    else:
        raise ValueError(f"tolerance {tol} not reached with {max_modes} modes per axis")
    exp.residual = res
    exp.decay_slope = coefficient_decay_slope(C, centre, max_modes)
    if N == 2:
        U, S, Vt = np.linalg.svd(exp.coeffs)
        exp.rank1 = [(float(s), (U[:, i], Vt[i])) for i, s in enumerate(S) if s > 1e-14 * S[0]]
    return exp


def coefficient_decay_slope(C, centre, K):
    """Slope of log max|c_alpha| over shells |alpha|_inf = k against log(1 + k)."""
    N = C.ndim
    idx = np.indices(C.shape) - centre
    shell = np.max(np.abs(idx), axis=0)
    mags, ks = [], []
    floor = 1e-15 * np.abs(C).max()
    for k in range(1, K + 1):
        m = np.abs(C[shell == k]).max()
        if m <= floor:
            break
        mags.append(np.log(m))
        ks.append(np.log(1 + k))
    if len(ks) < 3:
        return -math.inf
    return float(np.polyfit(ks, mags, 1)[0])


# ---------------------------------------------------------------- scaled field identity

def scaled_field_identity(g, psi: TensorBump, I, k, grid: Grid):
    """Compare (2^{d_k i_k} Z_k)[psi]_I with its expansion through Euclidean
    derivatives of [P^l_{k,I} psi]_I, on the grid scaled to the index.

    I is a per-coordinate monotone N-tuple; k is 0-based.
    """
    from .graded_group import invariant_fields

    I = tuple(int(i) for i in I)
    N = g.N
    if len(I) != N or any(a > b for a, b in zip(I, I[1:])):
        raise ValueError("need a monotone N-tuple")
    d = [Fraction(x) for x in g.d]
    df = np.array([float(x) for x in d])
    p = Partition((1,) * N)
    F = invariant_fields(g, "left")
    dil = lambda f: dilate_index(f, I, p, d)
    pts = grid.scaled(2.0 ** (df * np.array(I))).points()
    c = 2.0 ** (df[k] * I[k])
    psiI = dil(psi)
    lhs = c * psiI.d(k)(pts)
    for l in range(N):
        P = F.P(k, l)
        if not P.is_zero():
            lhs = lhs + c * P(pts) * psiI.d(l)(pts)
    main = c * psiI.d(k)(pts)
    rhs = main.copy()
    errors = {}
    for l in range(N):
        P = F.P(k, l)
        if P.is_zero():
            continue
        # P_I(y) = 2^{-(d_l - d_k) i_l} P(2^I y): coefficients scaled by 2^{-sum a_m d_m (i_l - i_m)}
        PI = P.scale_vars([Fraction(2) ** (x * i) for x, i in zip(d, I)]) * (
            Fraction(2) ** (-(d[l] - d[k]) * I[l]))
        gain = 2.0 ** (-df[k] * (I[l] - I[k]))
        term = gain * 2.0 ** (df[l] * I[l]) * dil(psi.times_poly(PI)).d(l)(pts)
        errors[l] = float(np.abs(term).max())
        rhs = rhs + term
    scale = max(float(np.abs(lhs).max()), 1e-300)
    return {
        "residual": float(np.abs(lhs - rhs).max()) / scale,
        "error_terms": errors,
        "main_sup": float(np.abs(main).max()),
        "I": I,
        "k": k,
    }
