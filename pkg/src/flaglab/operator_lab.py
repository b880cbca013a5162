"""Maximal functions over acceptable rectangles, the comparison function
Gamma_t, square functions and L^2 norm estimates.

Continuous inputs are nonnegative gaussian mixtures, whose rectangle averages
reduce to nested Gauss-Legendre sums with an exact error-function integral in
the last coordinate. Abelian grid inputs use summed-area tables and FFT
multipliers.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import signal
from scipy.special import erf

from .bump_calculus import Grid, GridFunction
from .combinatorics import Partition
from .convolution import GaussSum, convolve_gauss_arrays, gauss_sum_ft
from .graded_group import GroupSpec, inverse, multiply
from .kernel_lab import KernelApprox, flag_norms, monotone_window, multiplier_sup

DIVISION_FLOOR = 1e-300
POINTS_PER_DECADE = 8
T_CLIP = 4
POWER_TOL = 1e-6
POWER_MAXITER = 500
GL_NODES = 24
GL_REACH = 7.0
PANEL_NODES = 5


# ---------------------------------------------------------------- scale tuples

@dataclass(frozen=True)
class RectangleSpec:
    scales: tuple

    def __post_init__(self):
        s = tuple(float(x) for x in self.scales)
        if any(x <= 0 for x in s):
            raise ValueError("rectangle scales must be positive")
        object.__setattr__(self, "scales", s)

    @property
    def acceptable(self):
        return all(a <= b for a, b in zip(self.scales, self.scales[1:]))

    def extents(self, p: Partition, d):
        """Half side lengths: |x_j| <= s_k^{d_j} for j in block k."""
        return np.array([self.scales[k] ** float(dj) for k, dj in zip(p.block_of(), d)])


@dataclass(frozen=True)
class ScaleTuple:
    t: tuple

    def __post_init__(self):
        t = tuple(float(x) for x in self.t)
        if any(x <= 0 for x in t):
            raise ValueError("scale parameters must be positive")
        object.__setattr__(self, "t", t)


def acceptable_grid(n, lo, hi, step=1.0):
    """Dyadic (or finer, for step < 1) monotone scale tuples in 2^{[lo, hi]}."""
    a, b = round(lo / step), round(hi / step)
    return [RectangleSpec(tuple(2.0 ** (step * e) for e in I)) for I in monotone_window(n, a, b)]


def tuple_grid(n, lo, hi, step=1.0):
    """Every tuple in 2^{[lo, hi]}^n, monotone or not."""
    a, b = round(lo / step), round(hi / step)
    es = [step * e for e in range(a, b + 1)]
    return [tuple(2.0 ** e for e in I) for I in itertools.product(es, repeat=n)]


def log_t_grid(lo=-T_CLIP, hi=T_CLIP, per_decade=POINTS_PER_DECADE):
    """Midpoints of a log-uniform partition of [2^lo, 2^hi] and their dt/t weights."""
    if per_decade < POINTS_PER_DECADE:
        raise ValueError(f"t-grid too sparse: need {POINTS_PER_DECADE} points per decade")
    width = (hi - lo) * math.log10(2.0)
    m = max(1, math.ceil(width * per_decade))
    edges = np.linspace(lo * math.log(2), hi * math.log(2), m + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    return np.exp(mids), np.diff(edges)


@dataclass
class OperatorReport:
    name: str
    passed: bool = False
    constants: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    samples: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return {"name": self.name, "passed": bool(self.passed), "constants": dict(self.constants),
                "trace": list(self.trace), "samples": int(self.samples), "extra": dict(self.extra)}


# ---------------------------------------------------------------- gaussian mixtures

@dataclass
class GaussMixture:
    """f(z) = sum_m w_m exp(-sum_j ((z_j - c_mj) / s_mj)^2)."""

    weights: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float).ravel()
        m = len(self.weights)
        self.centers = np.asarray(self.centers, float).reshape(m, -1)
        self.widths = np.asarray(self.widths, float).reshape(m, -1)
        if np.any(self.widths <= 0):
            raise ValueError("mixture widths must be positive")

    @property
    def N(self):
        return self.centers.shape[1]

    @property
    def nonnegative(self):
        return bool(np.all(self.weights >= 0))

    @property
    def center(self):
        w = np.abs(self.weights)
        return (w[:, None] * self.centers).sum(0) / max(w.sum(), DIVISION_FLOOR)

    @property
    def mass(self):
        return float(np.sum(self.weights * np.prod(self.widths, axis=1)) * math.pi ** (self.N / 2))

    def scaled(self, c):
        return GaussMixture(self.weights * c, self.centers, self.widths)

    def __add__(self, other):
        return GaussMixture(np.concatenate([self.weights, other.weights]),
                            np.concatenate([self.centers, other.centers]),
                            np.concatenate([self.widths, other.widths]))

    def __call__(self, z):
        z = np.asarray(z, float)
        out = np.zeros(z.shape[:-1])
        for w, c, s in zip(self.weights, self.centers, self.widths):
            out += w * np.exp(-np.sum(((z - c) / s) ** 2, axis=-1))
        return out

    @classmethod
    def random(cls, N, rng, terms=3, box=1.5, widths=(0.4, 1.0), signed=False):
        w = rng.uniform(0.5, 1.5, terms)
        if signed:
            w *= rng.choice([-1.0, 1.0], terms)
        return cls(w, rng.uniform(-box, box, (terms, N)), rng.uniform(*widths, (terms, N)))

    def box_average(self, g: GroupSpec, x, ext, q=GL_NODES, chunk=64):
        """(1/|B|) int_B f(x y^{-1}) dy over boxes |y_j| <= ext_j, y_j = 0 where ext_j = 0.

        x: (P, N); ext: (S, N). The integrated coordinates must be a suffix,
        as for rectangles and for the lifted balls. Returns (P, S).
        """
        x = np.atleast_2d(np.asarray(x, float))
        ext = np.atleast_2d(np.asarray(ext, float))
        active = ext[0] > 0
        if np.any((ext > 0) != active):
            raise ValueError("every box must integrate the same coordinates")
        first = int(np.argmax(active)) if active.any() else g.N
        if not np.all(active[first:]):
            raise ValueError("integrated coordinates must be a suffix")
        out = np.empty((len(x), len(ext)))
        for s in range(0, len(x), chunk):
            out[s:s + chunk] = self._box_integral(g, x[s:s + chunk], ext, first, q)
        vol = np.prod(np.where(active, 2 * ext, 1.0), axis=1)
        return out / vol[None, :]

    def _box_integral(self, g, x, ext, first, q):
        N = g.N
        u, w = np.polynomial.legendre.leggauss(q)
        P, S = len(x), len(ext)
        total = np.zeros((P, S))
        xb = x[:, None, None, :]
        for wt, c, sg in zip(self.weights, self.centers, self.widths):
            pref = np.exp(-np.sum(((x[:, :first] - c[:first]) / sg[:first]) ** 2, axis=1))
            if first == N:
                total += wt * pref[:, None]
                continue
            Y = np.zeros((P, S, 1, N))
            W = np.ones((P, S, 1))
            for j in range(first, N):
                b = multiply(g, xb, inverse(g, Y))[..., j] - c[j]
                e = ext[None, :, None, j]
                if j == N - 1:
                    W = W * (sg[j] * math.sqrt(math.pi) / 2 * (erf((b + e) / sg[j]) - erf((b - e) / sg[j])))
                    break
                lo = np.maximum(-e, b - GL_REACH * sg[j])
                hi = np.minimum(e, b + GL_REACH * sg[j])
                half = np.maximum(hi - lo, 0.0) / 2
                nodes = (hi + lo)[..., None] / 2 + half[..., None] * u
                fac = np.exp(-((b[..., None] - nodes) / sg[j]) ** 2) * half[..., None] * w
                W = (W[..., None] * fac).reshape(P, S, -1)
                Y = np.repeat(Y, q, axis=2)
                Y[..., j] = nodes.reshape(P, S, -1)
            total += wt * pref[:, None] * W.sum(axis=-1)
        return total


# ---------------------------------------------------------------- grid box averages

def box_sums(values, half):
    """Sums over the windows [i - r, i + r] per axis, zero outside the array."""
    v = np.asarray(values, float)
    half = [int(r) for r in half]
    a = np.pad(v, [(r + 1, r) for r in half])
    for ax in range(v.ndim):
        a = np.cumsum(a, axis=ax)
    out = np.zeros(v.shape)
    for corner in itertools.product((0, 1), repeat=v.ndim):
        sl = tuple(slice(2 * r + 1, 2 * r + 1 + n) if c else slice(0, n)
                   for c, r, n in zip(corner, half, v.shape))
        out += (-1) ** (v.ndim - sum(corner)) * a[sl]
    return out


def _cells(gf: GridFunction, ext):
    h = np.asarray(gf.grid.h, float)
    r = np.asarray(ext, float) / h
    ri = np.rint(r)
    if np.any(np.abs(r - ri) > 1e-9):
        raise ValueError("rectangle sides must be whole multiples of the grid step")
    return ri.astype(int)


def grid_maximal(gf: GridFunction, sgrid, p: Partition, d, pad=True):
    """Discrete M|f| at every grid node: max over rectangles of cell averages.

    With pad=False the values live only on the data box and a rectangle that
    leaves it is an error.
    """
    v = np.abs(gf.values)
    best = np.zeros(v.shape)
    for rs in sgrid:
        if not rs.acceptable:
            raise ValueError(f"scale tuple {rs.scales} is not acceptable")
        r = _cells(gf, rs.extents(p, d))
        if not pad and np.any(2 * r + 1 > np.asarray(v.shape)):
            raise ValueError("rectangle exits the data box")
        best = np.maximum(best, box_sums(v, r) / np.prod(2 * r + 1))
    return GridFunction(gf.grid, best, source="maximal")


def hl_oracle_1d(values, radii, idx):
    """Brute-force max over centred windows of |f| (cells), window radius in cells."""
    v = np.abs(np.asarray(values, float))
    out = []
    for i in idx:
        best = 0.0
        for r in radii:
            lo, hi = i - r, i + r
            if lo < 0 or hi >= len(v):
                raise ValueError("window exits the data box")
            acc = 0.0
            for k in range(lo, hi + 1):
                acc += v[k]
            best = max(best, acc / (2 * r + 1))
        out.append(best)
    return np.array(out)


# ---------------------------------------------------------------- maximal functions

def maximal(g: GroupSpec, f, points, sgrid, p: Partition | None = None, allow_unacceptable=False):
    """sup over the s-grid of rectangle averages of |f(x y^{-1})|.

    f is a GaussMixture (any group) or a GridFunction (abelian, points on
    grid nodes, rectangles must stay inside the data box).
    """
    p = p or Partition(tuple(g.blocks))
    if not allow_unacceptable and any(not rs.acceptable for rs in sgrid):
        raise ValueError("s-grid must contain acceptable (monotone) tuples only")
    ext = np.array([rs.extents(p, g.d) for rs in sgrid])
    if isinstance(f, GridFunction):
        if not g.is_abelian:
            raise ValueError("grid maximal functions need an abelian group")
        idx = _grid_index(f.grid, points)
        v = np.abs(f.values)
        shape = np.asarray(v.shape)
        best = np.zeros(len(idx))
        for e in ext:
            r = _cells(f, e)
            if np.any(idx - r < 0) or np.any(idx + r >= shape):
                raise ValueError("rectangle exits the data box")
            avg = box_sums(v, r) / np.prod(2 * r + 1)
            best = np.maximum(best, avg[tuple(idx.T)])
        return best
    if not isinstance(f, GaussMixture) or not f.nonnegative:
        raise TypeError("continuous maximal functions need a nonnegative GaussMixture")
    return f.box_average(g, points, ext).max(axis=1)


def _grid_index(grid: Grid, points):
    pts = np.atleast_2d(np.asarray(points, float))
    lo = -np.asarray(grid.extents, float)
    h = np.asarray(grid.h, float)
    r = (pts - lo) / h
    idx = np.rint(r).astype(int)
    if np.any(np.abs(r - idx) > 1e-9):
        raise ValueError("sample points must be grid nodes")
    if np.any(idx < 0) or np.any(idx >= np.asarray(grid.counts)):
        raise ValueError("sample point outside the data box")
    return idx


def _ball_extents(g, p, k, rhos):
    """Lifted balls B^{(k)}(rho): frozen below block k, rho^{d_j} from block k on."""
    blk = np.array(p.block_of())
    d = np.array([float(x) for x in g.d])
    return np.array([np.where(blk >= k - 1, r ** d, 0.0) for r in rhos])


def lifted_maximal(g: GroupSpec, f, k, rhos, points, p: Partition | None = None):
    """One-parameter maximal function over the balls of G_k = blocks k..n (k is 1-based)."""
    p = p or Partition(tuple(g.blocks))
    if not 1 <= k <= p.n:
        raise ValueError(f"block index {k} outside 1..{p.n}")
    ext = _ball_extents(g, p, k, rhos)
    pts = np.atleast_2d(np.asarray(points, float))
    if isinstance(f, GaussMixture):
        return f.box_average(g, pts, ext).max(axis=1)
    return _generic_ball_max(g, f, pts, ext)


def _panel_nodes(lo, hi, breaks):
    """Composite Gauss-Legendre nodes on [lo, hi] split at sorted breakpoints."""
    u, w = np.polynomial.legendre.leggauss(PANEL_NODES)
    pts = np.unique(np.clip(np.concatenate([[lo, hi], breaks]), lo, hi))
    a, b = pts[:-1], pts[1:]
    half = (b - a) / 2
    nodes = ((a + b) / 2)[:, None] + half[:, None] * u
    return nodes.ravel(), (half[:, None] * w).ravel()


def _generic_ball_max(g, F, pts, ext):
    """Ball averages of an arbitrary nonnegative callable, by composite quadrature.

    Panels are refined geometrically around the point where x y^{-1} meets the
    centre of F, and all ball radii are breakpoints so one set of nodes serves
    every ball.
    """
    active = np.flatnonzero(ext[0] > 0)
    hint = getattr(F, "center", np.zeros(g.N))
    scale = getattr(F, "feature", 0.25)
    out = np.zeros((len(pts), len(ext)))
    emax = ext.max(axis=0)
    for i, x in enumerate(pts):
        per = []
        for j in active:
            c = x[j] - hint[j]
            steps = scale * 2.0 ** np.arange(-2, 40)
            steps = steps[steps < 2 * emax[j] + abs(c)]
            br = np.concatenate([ext[:, j], -ext[:, j], [c], c + steps, c - steps])
            per.append(_panel_nodes(-emax[j], emax[j], br))
        grids = np.meshgrid(*[n for n, _ in per], indexing="ij")
        wts = np.meshgrid(*[w for _, w in per], indexing="ij")
        Y = np.zeros(grids[0].shape + (g.N,))
        W = np.ones(grids[0].shape)
        for a, j in enumerate(active):
            Y[..., j] = grids[a]
            W = W * wts[a]
        vals = np.abs(F(multiply(g, x, inverse(g, Y.reshape(-1, g.N)))))
        W = W.ravel()
        for s, e in enumerate(ext):
            mask = np.all(np.abs(Y.reshape(-1, g.N)[:, active]) <= e[active] * (1 + 1e-12), axis=1)
            out[i, s] = np.sum(W[mask] * vals[mask]) / np.prod(2 * e[active])
    return out.max(axis=1)


class LiftedChain:
    """x -> (M~_k o ... o M~_1 f)(x) as a callable."""

    def __init__(self, g, f, rhos, p=None, upto=None):
        self.g, self.f, self.rhos = g, f, list(rhos)
        self.p = p or Partition(tuple(g.blocks))
        self.k = upto or self.p.n
        self.center = f.center
        self.feature = float(np.min(f.widths)) if isinstance(f, GaussMixture) else 0.25

    def __call__(self, x):
        x = np.asarray(x, float)
        inner = self.f if self.k == 1 else LiftedChain(self.g, self.f, self.rhos, self.p, self.k - 1)
        flat = x.reshape(-1, self.g.N)
        return lifted_maximal(self.g, inner, self.k, self.rhos, flat, self.p).reshape(x.shape[:-1])


def verify_composition_bound(g: GroupSpec, f: GaussMixture, samples, lo=-3, hi=3, steps=(1.0, 0.5),
                             p: Partition | None = None, tol=0.10):
    """max_x M f / (M~_n o ... o M~_1 f), stable under refinement of the s-grid."""
    p = p or Partition(tuple(g.blocks))
    trace = []
    for step in steps:
        sgrid = acceptable_grid(p.n, lo, hi, step)
        rhos = [2.0 ** (step * e) for e in range(round(lo / step), round(hi / step) + 1)]
        M = maximal(g, f, samples, sgrid, p)
        C = LiftedChain(g, f, rhos, p)(samples)
        trace.append(float(np.max(M / np.maximum(C, DIVISION_FLOOR))))
    change = abs(trace[-1] - trace[0]) / trace[0]
    rep = OperatorReport("composition_bound", samples=len(samples), trace=trace)
    rep.constants = {"C": max(trace), "refinement_change": change}
    rep.passed = bool(np.isfinite(trace).all() and change < tol)
    return rep


# ---------------------------------------------------------------- comparison function

def gamma(t, x, p: Partition, d):
    """Gamma_t(x) = t_1...t_n prod_k (t_1+...+t_k + N_1+...+N_k)^{-Q_k-1}."""
    t = np.asarray(t, float)
    if np.any(t <= 0):
        raise ValueError("scale parameters must be positive")
    norms = flag_norms(np.asarray(x, float), p, d)
    Q = np.array([float(q) for q in p.homogeneous_dims(d)])
    acc = np.cumsum(t, axis=-1)[..., None, :] if t.ndim > 1 else np.cumsum(t)
    base = acc + np.cumsum(norms, axis=-1)
    return np.prod(t, axis=-1) * np.prod(base ** (-Q - 1), axis=-1)


def _sinh_nodes(a, R, n):
    V = math.asinh(R / a)
    v = np.linspace(-V, V, n)
    dv = v[1] - v[0]
    w = np.full(n, dv)
    w[[0, -1]] /= 2
    return a * np.sinh(v), a * np.cosh(v) * w


def gamma_convolution(g: GroupSpec, f: GaussMixture, x, ts, p: Partition | None = None, nodes=64):
    """(|f| * Gamma_t)(x) = int |f(x y^{-1})| Gamma_t(y) dy for each t in ts.

    Product sinh-mapped trapezoid grids resolve both the peak of Gamma_t at
    y = 0 (down to the smallest t) and the bumps of f. Returns (P, T).
    """
    p = p or Partition(tuple(g.blocks))
    ts = np.atleast_2d(np.asarray(ts, float))
    d = np.array([float(e) for e in g.d])
    tmin = float(ts.min())
    x = np.atleast_2d(np.asarray(x, float))
    out = np.zeros((len(x), len(ts)))
    reach = np.max(np.abs(f.centers)) + 6 * np.max(f.widths)
    feat = float(np.min(f.widths))
    for i, xi in enumerate(x):
        r = max(1.0, np.max(np.abs(xi) ** (1 / d)) + reach)
        axes = [_sinh_nodes(min(tmin ** dj, feat) / 4, 4 * r ** dj + 4 * r * r, nodes) for dj in d]
        Y = np.stack(np.meshgrid(*[a for a, _ in axes], indexing="ij"), axis=-1).reshape(-1, g.N)
        W = np.prod(np.stack(np.meshgrid(*[w for _, w in axes], indexing="ij"), axis=-1), axis=-1).ravel()
        fv = np.abs(f(multiply(g, xi, inverse(g, Y)))) * W
        keep = fv > 0
        Yk, fk = Y[keep], fv[keep]
        for s, t in enumerate(ts):
            out[i, s] = fk @ gamma(t, Yk, p, d)
    return out


def verify_gamma_comparison(g: GroupSpec, f: GaussMixture, tgrid, samples, p: Partition | None = None,
                            s_range=(-6, 6), bound=8.0, nodes=64):
    """max over samples and t of (|f| * Gamma_t)(x) / M f(x), PASS iff <= bound.

    The running max over t-grids of growing spread max|log2 t| is traced;
    its growth is logged only, since the sup over t sits at the small-t edge.
    """
    p = p or Partition(tuple(g.blocks))
    tgrid = np.atleast_2d(np.asarray(tgrid, float))
    conv = gamma_convolution(g, f, samples, tgrid, p, nodes)
    M = maximal(g, f, samples, acceptable_grid(p.n, *s_range), p)
    ratio = conv / np.maximum(M, DIVISION_FLOOR)[:, None]
    spread = np.max(np.abs(np.log2(tgrid)), axis=1)
    levels = np.unique(spread)
    trace = [float(ratio[:, spread <= L].max()) for L in levels]
    rep = OperatorReport("gamma_comparison", samples=int(ratio.size), trace=trace)
    growth = (trace[-1] - trace[-2]) / trace[-2] if len(trace) > 1 else 0.0
    rep.constants = {"C": trace[-1], "growth": growth}
    rep.extra = {"tuples": len(tgrid), "points": len(samples),
                 "nonmonotone": int(sum(np.any(np.diff(t) < 0) for t in tgrid))}
    rep.constants["bound"] = bound
    rep.passed = bool(np.isfinite(trace[-1]) and trace[-1] <= bound)
    return rep


# ---------------------------------------------------------------- lifted test functions

def lifted_phi(p: Partition, d, t, mean_zero=True, order=1, cancel_blocks=None):
    """Phi_t = phi^(1)_{t_1} * ... * phi^(n)_{t_n} on an abelian group, as a GaussSum.

    phi^(k) is a gaussian on the coordinates of blocks k..n, dilated by t_k,
    with ``order`` derivatives in the first coordinate of block k (mean zero
    in block k). ``cancel_blocks`` picks which factors cancel.
    """
    t = np.asarray(t, float)
    df = np.array([float(x) for x in d])
    blk = np.array(p.block_of())
    starts = list(np.cumsum((0,) + tuple(p.sizes))[:-1])
    cancel = set(range(p.n)) if cancel_blocks is None else set(cancel_blocks)
    if not mean_zero:
        cancel = set()
    amp, orders, scales = 1.0, [], []
    for j in range(p.N):
        o_acc, c_acc, m_acc = None, None, None
        for k in range(blk[j] + 1):
            c = t[k] ** (-df[j])
            o = order if (k in cancel and j == starts[k]) else 0
            m = c
            if o_acc is None:
                o_acc, c_acc, m_acc = np.array([o]), np.array([c]), np.array([m])
            else:
                o_acc, c_acc, m_acc = convolve_gauss_arrays(o_acc, c_acc, m_acc, np.array([o]), np.array([c]),
                                                            np.array([m]))
        orders.append(int(o_acc[0]))
        scales.append(float(c_acc[0]))
        amp *= float(m_acc[0])
    return GaussSum([amp], [orders], [scales])


def kernel_gauss_sum(K: KernelApprox):
    return GaussSum.concat([GaussSum.from_bump(b) for b in K.terms()], K.family.N)


def convolve_gauss_sums(A: GaussSum, B: GaussSum):
    """A * B on an abelian group, termwise closed form."""
    ia, ib = np.meshgrid(np.arange(len(A.amp)), np.arange(len(B.amp)), indexing="ij")
    ia, ib = ia.ravel(), ib.ravel()
    amp = A.amp[ia] * B.amp[ib]
    orders, scales = [], []
    for j in range(A.N):
        o, c, m = convolve_gauss_arrays(A.orders[ia, j], A.scales[ia, j], np.ones(len(ia)),
                                        B.orders[ib, j], B.scales[ib, j], np.ones(len(ia)))
        orders.append(o)
        scales.append(c)
        amp = amp * m
    return GaussSum(amp, np.stack(orders, 1), np.stack(scales, 1))


def reflect_gauss_sum(A: GaussSum):
    return GaussSum(A.amp * (-1.0) ** A.orders.sum(axis=1), A.orders, A.scales)


def verify_kernel_gamma(K: KernelApprox, ts, xs, mean_zero=True, derivs=False, tol=0.10):
    """max |K * Phi_t(x)| / Gamma_t(x) over the sweep (abelian).

    The running max is traced as the t-grid extends toward small t; bounded
    means the last extension grows it by less than ``tol``. With ``derivs``
    the scaled block derivatives (t_1+...+t_k)^{d_j} d_j (K * Phi_t) are
    checked the same way.
    """
    fam = K.family
    p, d = fam.partition, fam.d
    ts = np.atleast_2d(np.asarray(ts, float))
    xs = np.asarray(xs, float)
    KG = kernel_gauss_sum(K)
    starts = list(np.cumsum((0,) + tuple(p.sizes))[:-1])
    ratios = {"value": np.zeros((len(ts), len(xs)))}
    if derivs:
        for k in range(p.n):
            ratios[f"d{k + 1}"] = np.zeros((len(ts), len(xs)))
    for i, t in enumerate(ts):
        conv = convolve_gauss_sums(KG, lifted_phi(p, d, t, mean_zero))
        G = np.maximum(gamma(t, xs, p, d), DIVISION_FLOOR)
        ratios["value"][i] = np.abs(conv(xs)) / G
        if derivs:
            for k in range(p.n):
                j = starts[k]
                alpha = np.zeros(p.N, int)
                alpha[j] = 1
                w = np.sum(t[:k + 1]) ** float(d[j])
                ratios[f"d{k + 1}"][i] = np.abs(conv.deriv(alpha)(xs)) * w / G
    tmins = np.min(ts, axis=1)
    levels = sorted(set(tmins), reverse=True)
    rep = OperatorReport("kernel_gamma", samples=len(ts) * len(xs))
    ok = True
    for name, r in ratios.items():
        trace = [float(r[tmins >= L].max()) for L in levels]
        growth = (trace[-1] - trace[-2]) / trace[-2] if len(trace) > 1 else 0.0
        rep.constants[name] = trace[-1]
        rep.constants[name + "_growth"] = growth
        if name == "value":
            rep.trace = trace
        ok &= bool(np.isfinite(trace[-1]) and growth < tol)
    rep.passed = ok
    return rep


# ---------------------------------------------------------------- abelian grids

@dataclass
class PeriodicGrid:
    """Uniform periodic grid on [-L, L)^N for FFT multipliers."""

    L: float
    n: int
    N: int = 1

    @property
    def h(self):
        return 2 * self.L / self.n

    def axis(self):
        return -self.L + self.h * np.arange(self.n)

    def points(self):
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.N), indexing="ij"), axis=-1)

    def frequencies(self):
        k = 2 * math.pi * sfft.fftfreq(self.n, d=self.h)
        return np.stack(np.meshgrid(*([k] * self.N), indexing="ij"), axis=-1)

    def apply(self, values, mult):
        """Circular convolution with the kernel whose transform is ``mult``.

        The grid origin sits at index n/2, so the multiplier is applied in the
        frame centred there.
        """
        shift = tuple(range(self.N))
        v = sfft.ifftshift(values, axes=shift)
        out = sfft.ifftn(sfft.fftn(v) * mult)
        return sfft.fftshift(out, axes=shift).real

    def maximal(self, values, sgrid, p: Partition, d):
        v = np.abs(values)
        best = np.zeros(v.shape)
        for rs in sgrid:
            r = np.rint(rs.extents(p, d) / self.h).astype(int)
            best = np.maximum(best, box_sums(v, r) / np.prod(2 * r + 1))
        return best


def _ft_on_grid(gs: GaussSum, grid: PeriodicGrid):
    xi = grid.frequencies()
    return gauss_sum_ft(gs, xi.reshape(-1, grid.N)).reshape(xi.shape[:-1])


def random_grid_functions(grid: PeriodicGrid, count, seed, terms=4, box=None):
    rng = np.random.default_rng(seed)
    box = box or grid.L / 4
    pts = grid.points()
    out = []
    for _ in range(count):
        f = GaussMixture.random(grid.N, rng, terms=terms, box=box, widths=(0.3, 1.5), signed=True)
        out.append(f(pts))
    return out


def _central(grid: PeriodicGrid, frac=0.25, stride=1):
    ax = np.abs(grid.axis()) <= frac * grid.L
    sl = np.flatnonzero(ax)[::stride]
    return np.ix_(*([sl] * grid.N))


def verify_almost_orthogonality(K: KernelApprox, pairs, grid: PeriodicGrid, sgrid, functions=3, seed=0,
                                floor=None):
    """gamma(s, t) = max_x |P_t T P*_s f(x)| / MM f(x); fit delta in
    gamma ~ c prod_k min(s_k/t_k, t_k/s_k)^delta.

    ``pairs`` is a list of (s, t) tuples. PASS iff delta >= 1/(2 n^2).
    """
    fam = K.family
    p, d = fam.partition, fam.d
    KG = _ft_on_grid(kernel_gauss_sum(K), grid)
    fs = random_grid_functions(grid, functions, seed)
    MM = [grid.maximal(grid.maximal(f, sgrid, p, d), sgrid, p, d) for f in fs]
    cen = _central(grid)
    gam, tmpl = [], []
    cache = {}

    def phi_hat(t):
        key = tuple(t)
        if key not in cache:
            cache[key] = _ft_on_grid(lifted_phi(p, d, t), grid)
        return cache[key]

    for s, t in pairs:
        mult = phi_hat(t) * KG * np.conj(phi_hat(s))
        best = 0.0
        for f, mf in zip(fs, MM):
            v = grid.apply(f, mult)
            best = max(best, float(np.max(np.abs(v[cen]) / np.maximum(mf[cen], DIVISION_FLOOR))))
        gam.append(best)
        tmpl.append(float(np.sum(np.abs(np.log2(np.asarray(s) / np.asarray(t))))))
    tmpl = np.array(tmpl)
    if len(np.unique(tmpl)) < 3:
        raise ValueError("regression degenerate: need at least three distinct scale separations")
    A = np.stack([np.ones_like(tmpl), -tmpl], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log2(gam), rcond=None)
    delta = float(coef[1])
    rep = OperatorReport("almost_orthogonality", samples=len(pairs) * functions, trace=[float(v) for v in gam])
    rep.constants = {"delta": delta, "c": float(2 ** coef[0]), "floor": floor or 1 / (2 * p.n ** 2)}
    rep.extra = {"separation": tmpl.tolist()}
    rep.passed = delta >= rep.constants["floor"]
    return rep


def product_structure(K: KernelApprox, offsets, grid: PeriodicGrid, sgrid, t=None, functions=3, seed=0):
    """Relative gap between gamma at a joint offset and the product of the
    single-slot gains, for n = 2. Returns (max relative gap, table)."""
    fam = K.family
    if fam.partition.n != 2:
        raise ValueError("product structure check is for two blocks")
    t = np.asarray(t if t is not None else (1.0, 1.0), float)
    table = {}
    for a in offsets:
        for b in offsets:
            s = t * 2.0 ** np.array([a, b], float)
            table[(a, b)] = _gamma_single(K, s, t, grid, sgrid, functions, seed)
    base = table[(offsets[0], offsets[0])]
    worst = 0.0
    for a in offsets:
        for b in offsets:
            pred = table[(a, offsets[0])] * table[(offsets[0], b)] / base
            worst = max(worst, abs(table[(a, b)] - pred) / pred)
    return worst, table


def _gamma_single(K, s, t, grid, sgrid, functions, seed):
    fam = K.family
    p, d = fam.partition, fam.d
    key = (id(K), grid.L, grid.n, functions, seed)
    memo = _GAMMA_MEMO.setdefault(key, {})
    if "fs" not in memo:
        memo["fs"] = random_grid_functions(grid, functions, seed)
        memo["MM"] = [grid.maximal(grid.maximal(f, sgrid, p, d), sgrid, p, d) for f in memo["fs"]]
        memo["K"] = _ft_on_grid(kernel_gauss_sum(K), grid)
    mult = _ft_on_grid(lifted_phi(p, d, t), grid) * memo["K"] * np.conj(_ft_on_grid(lifted_phi(p, d, s), grid))
    cen = _central(grid)
    best = 0.0
    for f, mf in zip(memo["fs"], memo["MM"]):
        v = grid.apply(f, mult)
        best = max(best, float(np.max(np.abs(v[cen]) / np.maximum(mf[cen], DIVISION_FLOOR))))
    return best


_GAMMA_MEMO = {}


# ---------------------------------------------------------------- square functions

class CalderonPair:
    """Scalar pair per block: phi_hat(xi) = c |xi|^2 e^{-|xi|^2/4}, psi = phi.

    c = 1/sqrt(2) makes int_0^inf |phi_hat(t xi)|^2 dt/t = 1.
    """

    C = 1 / math.sqrt(2)

    def __init__(self, p: Partition):
        self.p = p

    def block_hat(self, xi_block):
        r2 = np.sum(np.asarray(xi_block) ** 2, axis=-1)
        return self.C * r2 * np.exp(-r2 / 4)

    def hat(self, t, xi):
        """prod_k phi_hat(t_k xi_k) with xi_k the block-k frequencies."""
        out = np.ones(xi.shape[:-1])
        start = 0
        for k, a in enumerate(self.p.sizes):
            out = out * self.block_hat(t[k] * xi[..., start:start + a])
            start += a
        return out

    def reproducing_residual(self, band=(2.0 ** -1, 2.0 ** 1), lo=-T_CLIP, hi=T_CLIP, per_decade=POINTS_PER_DECADE):
        """sup over |xi| in the band of |sum_t phi_hat psi_hat (t xi) dt/t - 1|, per block."""
        ts, w = log_t_grid(lo, hi, per_decade)
        r = np.geomspace(band[0], band[1], 257)
        vals = (self.block_hat(np.outer(ts, r)[..., None]) ** 2 * w[:, None]).sum(axis=0)
        return float(np.max(np.abs(vals - 1)))


def square_function(values, grid: PeriodicGrid, p: Partition, which="S", sgrid=None, d=None,
                    lo=-T_CLIP, hi=T_CLIP, per_decade=POINTS_PER_DECADE):
    """S f = (int |P_t f|^2 dt/[t])^{1/2}; with which="frak" the integrand is
    (MM P_t f)^2. Midpoint rule in log t on every slot."""
    if which not in ("S", "frak"):
        raise ValueError("which is 'S' or 'frak'")
    if which == "frak" and (sgrid is None or d is None):
        raise ValueError("the maximal square function needs an s-grid and exponents")
    ts, w = log_t_grid(lo, hi, per_decade)
    pair = CalderonPair(p)
    xi = grid.frequencies()
    acc = np.zeros(np.shape(values))
    for idx in itertools.product(range(len(ts)), repeat=p.n):
        t = ts[list(idx)]
        wt = float(np.prod(w[list(idx)]))
        v = grid.apply(values, pair.hat(t, xi))
        if which == "frak":
            v = grid.maximal(grid.maximal(v, sgrid, p, d), sgrid, p, d)
        acc += wt * v * v
    return np.sqrt(acc)


def verify_square_plancherel(grid: PeriodicGrid, p: Partition, functions=50, seed=0, C=2.0):
    """||S f||_2 / ||f||_2 in [1/C, C] for random functions."""
    fs = random_grid_functions(grid, functions, seed)
    r = [float(np.linalg.norm(square_function(f, grid, p)) / np.linalg.norm(f)) for f in fs]
    rep = OperatorReport("square_plancherel", samples=functions, trace=r)
    rep.constants = {"min": min(r), "max": max(r), "C": C}
    rep.passed = min(r) >= 1 / C and max(r) <= C
    return rep


def verify_square_domination(Ks, grid: PeriodicGrid, sgrid, functions=3, seed=0, points=50, tol=0.10):
    """max over samples of S(Tf)(x) / frakS(f)(x) for nested windows of T.

    Bounded means the constant changes by less than ``tol`` at the last
    window enlargement.
    """
    fam = Ks[0].family
    p, d = fam.partition, fam.d
    fs = random_grid_functions(grid, functions, seed)
    rng = np.random.default_rng(seed)
    cen = _central(grid, frac=0.25)
    frak = [square_function(f, grid, p, "frak", sgrid, d) for f in fs]
    flat = np.stack(np.meshgrid(*cen, indexing="ij"), -1).reshape(-1, grid.N) if grid.N > 1 else None
    if grid.N == 1:
        cand = cen[0].ravel()
        pick = rng.choice(cand, size=min(points, len(cand)), replace=False)
        sel = (pick,)
    else:
        pick = flat[rng.choice(len(flat), size=min(points, len(flat)), replace=False)]
        sel = tuple(pick.T)
    trace = []
    for K in Ks:
        mult = _ft_on_grid(kernel_gauss_sum(K), grid)
        best = 0.0
        for f, fr in zip(fs, frak):
            s = square_function(grid.apply(f, mult), grid, p)
            best = max(best, float(np.max(s[sel] / np.maximum(fr[sel], DIVISION_FLOOR))))
        trace.append(best)
    growth = abs(trace[-1] - trace[-2]) / trace[-2] if len(trace) > 1 else 0.0
    rep = OperatorReport("square_domination", samples=functions * len(sel[0]), trace=trace)
    rep.constants = {"c": max(trace), "growth": growth}
    rep.passed = bool(np.isfinite(trace).all() and growth < tol)
    return rep


# ---------------------------------------------------------------- L2 norms

@dataclass
class OperatorNormEstimate:
    method: str
    value: float
    trace: list = field(default_factory=list)
    residual: float = 0.0
    converged: bool = True

    def to_json(self):
        return {"method": self.method, "value": self.value, "iterations": len(self.trace),
                "residual": self.residual, "converged": self.converged}


def power_iteration(apply, adjoint, shape, seed=0, tol=POWER_TOL, maxiter=POWER_MAXITER):
    """sqrt of the top eigenvalue of T*T; the Rayleigh trace is nondecreasing."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    trace, lam, res = [], 0.0, math.inf
    for _ in range(maxiter):
        w = adjoint(apply(v))
        new = float(np.linalg.norm(w))
        res = abs(new - lam) / max(new, DIVISION_FLOOR)
        trace.append(math.sqrt(new))
        lam = new
        v = w / max(new, DIVISION_FLOOR)
        if res < tol:
            break
    return OperatorNormEstimate("power-iteration", trace[-1], trace, res, res < tol)


def l2_norm(K, method="multiplier-sup", L=16.0, n=1024, seed=0, g: GroupSpec | None = None, points=None):
    """L^2 operator norm of f -> f * K.

    multiplier-sup: sup of |m| over the frequency sweep (abelian).
    power-iteration: on the convolution operator discretized on [-L, L]^N
    (abelian, FFT) or, with ``g`` and ``points``, on a dense quadrature
    matrix over a lattice box of a general group.
    """
    if method == "multiplier-sup":
        if K.family.N > 2:
            return OperatorNormEstimate(method, multiplier_sup(K))
        m = gauss_sum_ft(kernel_gauss_sum(K), dense_frequencies(K.family.N))
        return OperatorNormEstimate(method, float(np.max(np.abs(m))))
    if method != "power-iteration":
        raise ValueError(f"unknown method {method!r}")
    if g is not None and not g.is_abelian:
        return _dense_power(g, K, points, seed)
    N = K.family.N
    h = 2 * L / n
    # kernel on all differences of box points: "valid" mode is then exactly
    # (T v)_i = sum_j K(x_i - x_j) v_j h^N on the box
    off = h * np.arange(-(n - 1), n)
    grids = np.stack(np.meshgrid(*([off] * N), indexing="ij"), -1)
    ker = kernel_gauss_sum(K)(grids) * h ** N
    rev = ker[tuple(slice(None, None, -1) for _ in range(N))]
    op = lambda v: signal.fftconvolve(v, ker, mode="valid")
    adj = lambda v: signal.fftconvolve(v, rev, mode="valid")
    return power_iteration(op, adj, (n,) * N, seed)


def dense_frequencies(N, lo=-10, hi=10, per_octave=48):
    """Both signs of a log-uniform frequency axis, as a product grid for N <= 2."""
    r = 2.0 ** np.linspace(lo, hi, (hi - lo) * per_octave + 1)
    ax = np.concatenate([-r[::-1], [0.0], r])
    if N == 1:
        return ax[:, None]
    if N == 2:
        ax = ax[::4]
        return np.stack(np.meshgrid(ax, ax, indexing="ij"), -1).reshape(-1, 2)
    raise ValueError("dense frequency grids are for N <= 2")


def _dense_power(g, K, points, seed):
    pts = np.asarray(points, float)
    vol = getattr(points, "cell", None)
    if vol is None:
        raise ValueError("dense power iteration needs lattice points with a cell volume")
    A = K(multiply(g, inverse(g, pts)[None, :, :], pts[:, None, :])) * vol
    return power_iteration(lambda v: A @ v, lambda v: A.T @ v, (len(pts),), seed)


class LatticePoints(np.ndarray):
    """Points of a lattice box carrying their cell volume."""

    def __new__(cls, pts, cell):
        obj = np.asarray(pts, float).view(cls)
        obj.cell = float(cell)
        return obj

    def __array_finalize__(self, obj):
        self.cell = getattr(obj, "cell", None)


def heisenberg_lattice(h, half):
    """Box of the lattice hZ x hZ x h^2 Z, closed under the Heisenberg law."""
    a = h * np.arange(-half[0], half[0] + 1)
    b = h * np.arange(-half[1], half[1] + 1)
    c = h * h * np.arange(-half[2], half[2] + 1)
    pts = np.stack(np.meshgrid(a, b, c, indexing="ij"), -1).reshape(-1, 3)
    return LatticePoints(pts, h ** 4)


def verify_l2_stability(fam, ks=(3, 4, 5), tol=0.05):
    """Multiplier sup over nested windows [-k, k]: last change < tol."""
    trace = [multiplier_sup(KernelApprox(fam, monotone_window(fam.n, -k, k))) for k in ks]
    change = abs(trace[-1] - trace[-2]) / trace[-2]
    rep = OperatorReport("l2_stability", trace=trace, samples=len(ks))
    rep.constants = {"norm": trace[-1], "change": change}
    rep.passed = change < tol
    return rep


def verify_l2_methods(K: KernelApprox, L=16.0, n=1024, tol=0.05, seed=0):
    a = l2_norm(K, "multiplier-sup")
    b = l2_norm(K, "power-iteration", L=L, n=n, seed=seed)
    gap = abs(a.value - b.value) / a.value
    rep = OperatorReport("l2_methods", trace=b.trace[-5:], samples=len(b.trace))
    rep.constants = {"multiplier_sup": a.value, "power_iteration": b.value, "gap": gap}
    rep.extra = {"converged": b.converged, "residual": b.residual}
    rep.passed = gap < tol and b.converged
    return rep
