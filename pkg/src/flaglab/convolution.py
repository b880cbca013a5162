"""Group convolution by quadrature, with a Fourier fast path on abelian
groups, and the convolution lemmas: support, decay, truncated widths,
cross norms and the composition of two flag kernels."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, signal

from .bump_calculus import (
    BumpSpec,
    Grid,
    GridFunction,
    SumBump,
    TensorBump,
    dilate_index,
    fd_derivative,
    sample,
    seminorm,
)
from .combinatorics import Partition, block_pattern, classify, embed, join, shuffles
from .graded_group import GroupSpec, inverse, make_group, multiply
from .kernel_lab import (
    SHELLS,
    BumpFamily,
    FlagEstimateReport,
    KernelApprox,
    Multiplier,
    flag_norms,
    gauss_derivative_transform,
    monotone_window,
    separable_terms,
    shell_samples,
    size_constants,
    synthesize,
    verify_truncated,
    SmoothedKernel,
)

LEAK_TOL = 1e-6
MAX_CROSS = 200


# ---------------------------------------------------------------- quadrature

@dataclass
class QuadratureSpec:
    nodes: np.ndarray      # (M, N)
    weights: np.ndarray    # (M,)
    box: tuple             # per-axis half widths
    leakage: float = 0.0

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")


def _trapezoid_weights(counts, h):
    ws = []
    for n, hj in zip(counts, h):
        w = np.full(n, hj)
        w[0] = w[-1] = hj / 2
        ws.append(w)
    W = ws[0]
    for w in ws[1:]:
        W = np.multiply.outer(W, w)
    return W.ravel()


def quadrature_for(h, d=None, box=None, count=17, grow=True):
    """Product trapezoid on a box around the support of ``h``.

    For a GridFunction the nodes are its grid. Otherwise the box starts at
    ``box`` (or the support radius) and doubles until the mass in the outer
    shell is below 1e-6 of the total.
    """
    if isinstance(h, GridFunction):
        g = h.grid
        return QuadratureSpec(g.points().reshape(-1, g.N), _trapezoid_weights(g.counts, g.h),
                              g.extents)
    N = h.N
    d = np.ones(N) if d is None else np.asarray([float(x) for x in d])
    if box is None:
        sb = _support_box(h)
        finite = all(math.isfinite(b) for b in sb)
        box = sb if finite else tuple(2.0 ** d)
        grow = grow and not finite
    box = tuple(float(b) for b in box)
    for _ in range(12):
        grid = Grid(box, (count,) * N)
        pts = grid.points()
        vals = np.abs(h(pts))
        total = float(vals.sum())
        inner = vals[tuple(slice(1, -1) for _ in range(N))].sum()
        leak = (total - inner) / total if total > 0 else 0.0
        if leak < LEAK_TOL or not grow:
            break
        box = tuple(2 * b for b in box)
    if leak >= LEAK_TOL:
        warnings.warn(f"quadrature box leaks {leak:.2e} of the L1 mass", RuntimeWarning)
    return QuadratureSpec(pts.reshape(-1, N), _trapezoid_weights(grid.counts, grid.h), box, leak)


def _support_box(b):
    """Support half widths of a (dilated) TensorBump, inf when unknown."""
    from .bump_calculus import DilatedBump

    if isinstance(b, DilatedBump):
        return tuple(w / s for w, s in zip(_support_box(b.base), b.scales))
    if isinstance(b, TensorBump):
        return b.support_box()
    return (math.inf,) * b.N


def _as_callable(f):
    if isinstance(f, GridFunction):
        raise TypeError("the first factor must be evaluable off the grid")
    return f


def convolve(g: GroupSpec, f, h, q: QuadratureSpec | None = None, at=None, method="direct",
             chunk=2048):
    """(f * h)(x) = int f(x y^{-1}) h(y) dy.

    ``at`` is a Grid (result is a GridFunction) or an array of points.
    ``method='fft'`` is the abelian fast path; it needs ``at`` to be a Grid
    with the spacing of the quadrature grid of ``h``.
    """
    if q is None:
        q = quadrature_for(h, g.d)
    grid = at if isinstance(at, Grid) else None
    pts = at.points().reshape(-1, g.N) if grid is not None else np.atleast_2d(np.asarray(at, float))
    if method == "fft":
        if not g.is_abelian or grid is None:
            raise ValueError("the Fourier path needs an abelian group and an output grid")
        return _convolve_fft(f, h, q, grid)
    if method != "direct":
        raise ValueError(f"unknown method {method!r}")
    f = _as_callable(f)
    hv = h.values.ravel() if isinstance(h, GridFunction) else h(q.nodes)
    keep = hv != 0
    nodes, wh = q.nodes[keep], (hv * q.weights)[keep]
    yinv = inverse(g, nodes)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        x = pts[s:s + chunk]
        prod = multiply(g, x[:, None, :], yinv[None, :, :])
        out[s:s + chunk] = f(prod) @ wh
    if grid is not None:
        return GridFunction(grid, out.reshape(grid.counts))
    return out


def _convolve_fft(f, h, q, grid):
    nh = [int(round(2 * b / hh)) + 1 for b, hh in zip(q.box, grid.h)]
    spacing = [2 * b / (n - 1) for b, n in zip(q.box, nh)]
    if not np.allclose(spacing, grid.h, rtol=1e-9):
        raise ValueError("output grid spacing must match the quadrature grid")
    hgrid = Grid(q.box, tuple(nh))
    hv = h.values if isinstance(h, GridFunction) else h(hgrid.points())
    hv = hv * q.weights.reshape(hv.shape)
    ext = Grid(tuple(R + b for R, b in zip(grid.extents, q.box)),
               tuple(n + m - 1 for n, m in zip(grid.counts, nh)))
    fv = f(ext.points())
    out = signal.fftconvolve(fv, hv, mode="valid")
    return GridFunction(grid, out)


# ---------------------------------------------------------------- closed-form separable algebra

def convolve_factors(f1, f2):
    """Convolution on R of two gaussian-derivative factors (power 0).

    (amp1 g^{(o1)}(a1 t)) * (amp2 g^{(o2)}(a2 t)) = amp g^{(o1+o2)}(c t).
    """
    p1, r1, o1, a1, m1 = f1
    p2, r2, o2, a2, m2 = f2
    if r1 != "gauss" or r2 != "gauss" or p1 or p2:
        raise TypeError("closed-form convolution needs plain gaussian factors")
    if a1 == 0.0 or a2 == 0.0:
        raise ValueError("factor is not integrable")
    s = math.hypot(a1, a2)
    c = a1 * a2 / s
    o = o1 + o2
    amp = m1 * m2 * a1 ** (-o1) * a2 ** (-o2) * math.sqrt(math.pi) / s * c ** o
    return (0, "gauss", o, c, amp)


def reflect_factor(f):
    """t -> f(-t)."""
    pw, pr, o, a, amp = f
    return (pw, pr, o, a, amp * (-1) ** (o + pw))


def convolve_separable(b1: BumpSpec, b2: BumpSpec):
    """b1 * b2 on an abelian group, as a TensorBump; both must be separable gaussian sums."""
    t1, t2 = separable_terms(b1), separable_terms(b2)
    N = b1.N
    terms = []
    for c1, fa in t1:
        for c2, fb in t2:
            fac = [convolve_factors(x, y) for x, y in zip(fa, fb)]
            amp = c1 * c2 * math.prod(f[4] for f in fac)
            if amp != 0.0:
                terms.append((amp, _one(N), tuple(f[1] for f in fac), tuple(f[2] for f in fac),
                              tuple(f[3] for f in fac)))
    if not terms:
        terms.append((0.0, _one(N), ("gauss",) * N, (0,) * N, (1.0,) * N))
    return TensorBump(terms, N)


def _one(N):
    from .polynomial import Poly

    return Poly.const(1, N)


def reflect(b: BumpSpec):
    """x -> b(-x) for separable gaussian sums (the abelian tilde)."""
    N = b.N
    terms = []
    for c, fac in separable_terms(b):
        fac = [reflect_factor(f) for f in fac]
        terms.append((c * math.prod(f[4] for f in fac), _one(N), tuple(f[1] for f in fac),
                      tuple(f[2] for f in fac), tuple(f[3] for f in fac)))
    return TensorBump(terms, N)


_L1_CACHE = {}


def gauss_derivative_l1(order):
    if order not in _L1_CACHE:
        from .profiles import profile

        _L1_CACHE[order] = integrate.quad(lambda t: abs(float(profile("gauss", order, t))),
                                          -12, 12, limit=400, points=np.linspace(-4, 4, 17))[0]
    return _L1_CACHE[order]


def separable_l1(b: BumpSpec, grid_count=2049):
    """L1 norm: exact for a single separable term, numeric otherwise."""
    terms = separable_terms(b)
    if len(terms) == 1:
        c, fac = terms[0]
        return abs(c) * math.prod(abs(f[4]) * gauss_derivative_l1(f[2]) / f[3] for f in fac)
    if b.N != 1:
        raise NotImplementedError("numeric L1 of multi-term sums is limited to N = 1")
    w = max(1.0 / f[3] for _, fac in terms for f in fac)
    t = np.linspace(-14 * w, 14 * w, grid_count)
    return float(np.trapezoid(np.abs(b(t[:, None])), t))


def separable_sup(b: BumpSpec, samples=None):
    """sup |b| for a single separable term (exact), else max over samples."""
    terms = separable_terms(b)
    if len(terms) == 1:
        c, fac = terms[0]
        return abs(c) * math.prod(abs(f[4]) * _gauss_derivative_sup(f[2]) for f in fac)
    return float(np.max(np.abs(b(samples))))


_SUP_CACHE = {}


def _gauss_derivative_sup(order):
    if order not in _SUP_CACHE:
        from .profiles import profile

        t = np.linspace(0, 6, 60001)
        _SUP_CACHE[order] = float(np.max(np.abs(profile("gauss", order, t))))
    return _SUP_CACHE[order]


# ---------------------------------------------------------------- support lemma

def homogeneous_radius(box, d):
    return max(w ** (1.0 / float(dj)) for w, dj in zip(box, d))


def support_radius(gf: GridFunction, d, rel=1e-14):
    """Largest homogeneous sup-norm among nodes where |f| > rel * max|f|."""
    pts = gf.grid.points()
    df = np.asarray([float(x) for x in d])
    live = np.abs(gf.values) > rel * np.abs(gf.values).max()
    if not live.any():
        return 0.0
    nrm = np.max(np.abs(pts[live]) ** (1.0 / df), axis=-1)
    return float(nrm.max())


@dataclass
class SupportReport:
    constants: list
    seminorm_ratios: list = field(default_factory=list)
    passed: bool | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return {"constants": self.constants, "seminorm_ratios": self.seminorm_ratios,
                "passed": self.passed, **self.extra}


def undilated_convolution(g, phi, psi, p: Partition, I, J, grid: Grid, count=13):
    """theta = [phi_I * psi_J]_{-(I v J)} sampled on ``grid``."""
    d = g.d
    df = np.asarray([float(x) for x in d])
    eI, eJ = embed(p, I), embed(p, J)
    K = join(eI, eJ)
    a = dilate_index(phi, eI, Partition((1,) * g.N), d)
    b = dilate_index(psi, eJ, Partition((1,) * g.N), d)
    box = _support_box(b)
    if not all(math.isfinite(w) for w in box):
        box = tuple(4.0 ** df * 2.0 ** (df * np.asarray(eJ)))
    q = quadrature_for(b, d, box=box, count=count, grow=False)
    pts = grid.points().reshape(-1, g.N) * 2.0 ** (df * np.asarray(K))
    vals = convolve(g, a, b, q, at=pts) * 2.0 ** float(df @ np.asarray(K))
    return GridFunction(grid, vals.reshape(grid.counts))


def random_bump(N, rng, d):
    """cosbump product with random scales in [1, 2] per coordinate and a
    random linear tilt; supported in the unit sup-norm ball."""
    from .polynomial import Poly

    scales = tuple(rng.uniform(1, 2, N))
    poly = Poly.const(1, N)
    for j in range(N):
        poly = poly + Poly.var(j, N) * float(rng.uniform(-0.5, 0.5))
    return TensorBump.product("cosbump", scales, poly=poly)


def verify_support_lemma(g, phi=None, psi=None, rho=1.0, I=None, J=None, pairs=1, seed=0,
                         count=25, qcount=15, m=1, Cmax=4.0):
    """Support constant C = radius(theta) / rho over bump pairs, and the
    seminorm ratios ||theta||_(m) / (||phi||_(m) ||psi||_(m)).

    rho is the larger homogeneous support radius of the two bumps (at most
    the ``rho`` argument, which sets the sampling box).
    """
    N = g.N
    p = Partition(tuple(g.blocks)) if I is not None else Partition((N,))
    I = I if I is not None else (0,) * p.n
    J = J if J is not None else (0,) * p.n
    df = np.asarray([float(x) for x in g.d])
    ext = tuple((2.5 * rho) ** df)
    grid = Grid(ext, (count,) * N)
    rng = np.random.default_rng(seed)
    consts, ratios = [], []
    for k in range(pairs):
        a = phi if phi is not None and k == 0 else random_bump(N, rng, g.d)
        b = psi if psi is not None and k == 0 else random_bump(N, rng, g.d)
        theta = undilated_convolution(g, a, b, p, I, J, grid, qcount)
        r = max(homogeneous_radius(_support_box(a), g.d), homogeneous_radius(_support_box(b), g.d))
        consts.append(support_radius(theta, g.d) / r)
        fine = Grid(tuple((1.2 * rho) ** df), (33,) * N)
        den = seminorm(sample(a, fine), m) * seminorm(sample(b, fine), m)
        ratios.append(seminorm(theta, m) / den)
    rep = SupportReport(consts, ratios)
    rep.extra["spread"] = (max(consts) - min(consts)) / max(consts)
    rep.extra["grid_step"] = max(grid.h)
    rep.passed = max(consts) <= Cmax
    return rep


# ---------------------------------------------------------------- decay

@dataclass
class DecayReport:
    eps: float
    r2: float
    points: list
    passed: bool | None = None

    def to_json(self):
        return {"eps": self.eps, "r2": self.r2, "passed": self.passed, "count": len(self.points)}


def _theta_separable(phi, psi, p: Partition, d, I, J):
    """theta = [phi]_{I-K} * [psi]_{J-K} in closed form (abelian)."""
    eI, eJ = embed(p, I), embed(p, J)
    K = join(eI, eJ)
    unit = Partition((1,) * p.N)
    a = dilate_index(phi, tuple(x - k for x, k in zip(eI, K)), unit, d, False)
    b = dilate_index(psi, tuple(x - k for x, k in zip(eJ, K)), unit, d, False)
    return convolve_separable(a, b)


def fit_decay(points):
    """Least squares log2 sup = c - eps * gap; returns (eps, R^2)."""
    G = np.array([p[0] for p in points], float)
    y = np.array([p[1] for p in points], float)
    A = np.stack([np.ones_like(G), -G], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float(((y - pred) ** 2).sum()) / ss if ss > 0 else 0.0
    return float(coef[1]), r2


def verify_decay(phi, psi, p: Partition, d, span=6, base=0, numeric_check=0, seed=0):
    """Sweep pairs (I, J) with |i_l - j_l| <= span and regress log2 sup|theta|
    against sum_l |i_l - j_l|. Abelian, separable gaussian generators."""
    pts = []
    n = p.n
    offs = range(-span, span + 1)
    Is = [tuple(base + k for k in range(n))] if n > 1 else [(base,)]
    for I in Is:
        for delta in itertools.product(offs, repeat=n):
            J = tuple(i + e for i, e in zip(I, delta))
            if any(a > b for a, b in zip(J, J[1:])):
                continue
            th = _theta_separable(phi, psi, p, d, I, J)
            s = separable_sup(th, samples=None) if len(separable_terms(th)) == 1 else None
            if s is None:
                raise NotImplementedError("decay sweep needs single-term generators")
            pts.append((sum(abs(e) for e in delta), math.log2(s)))
    eps, r2 = fit_decay(pts)
    rep = DecayReport(eps, r2, pts)
    rep.passed = eps > 0 and r2 > 0.9
    return rep


def numeric_theta_check(phi, psi, i, j, d=(1,), R=8.0, h=2.0 ** -9):
    """n = 1 cross-check: closed-form theta against the FFT convolution."""
    g = make_group("abelian", N=1, d=list(d), blocks=[1])
    p = Partition((1,))
    th = _theta_separable(phi, psi, p, d, (i,), (j,))
    K = max(i, j)
    a = dilate_index(phi, (i - K,), p, d, False)
    b = dilate_index(psi, (j - K,), p, d, False)
    n = int(round(2 * R / h)) + 1
    grid = Grid((R,), (n,))
    q = quadrature_for(b, d, box=(R,), count=n, grow=False)
    num = convolve(g, a, b, q, at=grid, method="fft")
    exact = th(grid.points())
    return float(np.max(np.abs(num.values - exact)) / np.max(np.abs(exact)))


# ---------------------------------------------------------------- truncated widths

def truncated_width_arithmetic(fam: BumpFamily, a, b, mean_zero=False, ks=(2, 3, 4, 5, 6), seed=0,
                               shells=SHELLS):
    """K_a * psi_b is truncated of width a + b (gaussian semigroup in closed form).

    With mean_zero, psi_b = b * d_1 G_b and the report carries the width-(a+b)
    constant, which should scale like b for small b.
    """
    if a <= 0 or b <= 0:
        raise ValueError("widths must be positive")
    w = math.hypot(a, b)
    beta = None
    if mean_zero:
        beta = (1,) + (0,) * (fam.N - 1)

    def build(K):
        S = SmoothedKernel(K, w, beta)
        if beta is not None:
            # psi_b = b^{[[beta]]} d^beta G_b; SmoothedKernel normalizes with w instead
            S.gain = b ** float(fam.d[0])
        return S

    from .kernel_lab import verify_flag_size

    plain = verify_flag_size(fam, ks, 0, seed=seed, shells=shells, width=a + b, pairing=False,
                             build=build)
    out = {"width": a + b, "constant": plain.constants[(0,) * fam.N], "passed": plain.passed,
           "growth": plain.growth[(0,) * fam.N]}
    if mean_zero:
        imp = verify_flag_size(fam, ks, 0, seed=seed, shells=shells, width=a + b, improved=True,
                               pairing=False, build=build)
        out["improved_constant"] = imp.constants[(0,) * fam.N]
        out["improved_passed"] = imp.passed
    return out


def improvement_linearity(fam, a=1.0, bs=(0.5, 0.25, 0.125), ks=(2, 3, 4, 5), shells=SHELLS):
    """Width-(a+b) constants of K_a * psi_b for mean-zero psi_b, divided by b."""
    rows = []
    for b in bs:
        r = truncated_width_arithmetic(fam, a, b, True, ks, shells=shells)
        rows.append({"b": b, "constant": r["constant"], "per_b": r["constant"] / b,
                     "passed": r["passed"], "improved_passed": r["improved_passed"]})
    per = [r["per_b"] for r in rows]
    spread = (max(per) - min(per)) / min(per)
    return {"rows": rows, "spread": spread, "passed": spread < 0.2 and all(r["passed"] for r in rows)}


# ---------------------------------------------------------------- cross norms

@dataclass
class CrossNormTable:
    window: list
    left: dict            # (I, J) -> || [phi~]_J * [phi]_I ||_1
    right: dict           # (I, J) -> || [phi]_I * [phi~]_J ||_1
    eps: float = 0.0
    r2: float = 0.0

    def row_sums(self, which="left"):
        tab = self.left if which == "left" else self.right
        return {I: sum(math.sqrt(tab[(I, J)]) for J in self.window) for I in self.window}

    def max_row_sum(self):
        return max(max(self.row_sums("left").values()), max(self.row_sums("right").values()))


def cross_norm_table(fam: BumpFamily, window):
    """All pairwise L1 cross norms on an abelian family (closed form)."""
    window = [tuple(I) for I in window]
    if len(window) > MAX_CROSS:
        raise ValueError(f"window of {len(window)} indices exceeds the cross-norm budget {MAX_CROSS}")
    p, d = fam.partition, fam.d
    dil = {I: dilate_index(fam(I), I, p, d) for I in window}
    tl = {I: reflect(b) for I, b in dil.items()}
    left, right = {}, {}
    for I in window:
        for J in window:
            left[(I, J)] = separable_l1(convolve_separable(tl[J], dil[I]))
            right[(I, J)] = separable_l1(convolve_separable(dil[I], tl[J]))
    tab = CrossNormTable(window, left, right)
    pts = [(sum(abs(a - b) for a, b in zip(I, J)), math.log2(v))
           for (I, J), v in left.items() if v > 0]
    tab.eps, tab.r2 = fit_decay(pts)
    return tab


def cotlar_stein_sweep(fam: BumpFamily, ks=(1, 2, 3, 4, 5)):
    """Max row sums of square-rooted cross norms over nested windows [-k, k]^n."""
    sums = []
    for k in ks:
        tab = cross_norm_table(fam, monotone_window(fam.n, -k, k))
        sums.append(tab.max_row_sum())
    return sums, tab


# ---------------------------------------------------------------- vectorized gaussian sums

class GaussSum(BumpSpec):
    """sum_t amp_t prod_j g^{(o_tj)}(c_tj x_j) with g = e^{-t^2}, stored as arrays.

    Uses g^{(o)}(u) = (-1)^o H_o(u) e^{-u^2} with physicists' Hermite H_o.
    """

    def __init__(self, amp, orders, scales):
        self.amp = np.asarray(amp, float)
        self.orders = np.asarray(orders, int).reshape(len(self.amp), -1)
        self.scales = np.asarray(scales, float).reshape(len(self.amp), -1)
        self.N = self.orders.shape[1]

    @classmethod
    def from_bump(cls, b: BumpSpec):
        amps, ords, scs = [], [], []
        for c, fac in separable_terms(b):
            if any(f[1] != "gauss" or f[0] for f in fac):
                raise TypeError("GaussSum needs plain gaussian-derivative factors")
            amps.append(c * math.prod(f[4] for f in fac))
            ords.append([f[2] for f in fac])
            scs.append([f[3] for f in fac])
        return cls(amps, ords, scs)

    @classmethod
    def concat(cls, parts, N):
        parts = [p for p in parts if len(p.amp)]
        if not parts:
            return cls(np.zeros(0), np.zeros((0, N), int), np.zeros((0, N)))
        return cls(np.concatenate([p.amp for p in parts]),
                   np.concatenate([p.orders for p in parts]),
                   np.concatenate([p.scales for p in parts]))

    def dilate(self, e, d):
        """[.]_e for a per-coordinate index e."""
        s = 2.0 ** (-np.asarray([float(x) for x in d]) * np.asarray(e, float))
        return GaussSum(self.amp * float(np.prod(s)), self.orders, self.scales * s)

    def __call__(self, x, chunk=1 << 22):
        x = np.asarray(x, float)
        flat = x.reshape(-1, self.N)
        out = np.zeros(len(flat))
        if not len(self.amp):
            return out.reshape(x.shape[:-1])
        step = max(1, chunk // max(len(self.amp), 1))
        omax = int(self.orders.max())
        sign = (-1.0) ** self.orders
        for s in range(0, len(flat), step):
            xs = flat[s:s + step]
            val = np.broadcast_to(self.amp, (len(xs), len(self.amp))).copy()
            for j in range(self.N):
                u = xs[:, j, None] * self.scales[None, :, j]
                f = np.exp(-u * u)
                if omax:
                    f = f * sign[None, :, j] * _hermite(self.orders[:, j], u)
                val *= f
            out[s:s + step] = val.sum(axis=1)
        return out.reshape(x.shape[:-1])

    def deriv(self, alpha):
        alpha = np.asarray(alpha, int)
        gain = np.prod(self.scales ** alpha[None, :], axis=1)
        return GaussSum(self.amp * gain, self.orders + alpha[None, :], self.scales)

    def marginal_factor(self, axes):
        """prod_{j in axes} int g^{(o)}(c t) dt per term (0 unless o = 0)."""
        out = np.ones(len(self.amp))
        for j in axes:
            out = out * np.where(self.orders[:, j] == 0, math.sqrt(math.pi) / self.scales[:, j], 0.0)
        return out


def _hermite(order, u):
    """Physicists' Hermite H_order(u), order given per column."""
    from scipy.special import eval_hermite

    out = np.ones_like(u)
    for o in np.unique(order):
        if o:
            cols = order == o
            out[:, cols] = eval_hermite(int(o), u[:, cols])
    return out


def convolve_gauss_arrays(o1, a1, m1, o2, a2, m2):
    """Vectorized convolve_factors over arrays of factors (one coordinate)."""
    s = np.hypot(a1, a2)
    c = a1 * a2 / s
    o = o1 + o2
    amp = m1 * m2 * a1 ** (-o1.astype(float)) * a2 ** (-o2.astype(float)) * math.sqrt(math.pi) / s * c ** o
    return o, c, amp


def single_term(b: BumpSpec):
    """(amp, orders, scales) of a one-term gaussian product generator."""
    gs = GaussSum.from_bump(b)
    if len(gs.amp) != 1:
        raise TypeError("composition needs single-term generators")
    return float(gs.amp[0]), gs.orders[0], gs.scales[0]


def convolve_offsets(genA, genB, offA, offB, d):
    """sum over rows of [phiA]_{offA} * [psiB]_{offB}: offsets are (T, N) arrays."""
    df = np.asarray([float(x) for x in d])
    mA, oA, cA = genA
    mB, oB, cB = genB
    sA = 2.0 ** (-offA * df)
    sB = 2.0 ** (-offB * df)
    ampA = mA * np.prod(sA, axis=1)
    ampB = mB * np.prod(sB, axis=1)
    T, N = offA.shape
    orders = np.empty((T, N), int)
    scales = np.empty((T, N))
    amp = ampA * ampB
    for j in range(N):
        o, c, m = convolve_gauss_arrays(np.full(T, oA[j]), cA[j] * sA[:, j], 1.0,
                                        np.full(T, oB[j]), cB[j] * sB[:, j], 1.0)
        orders[:, j], scales[:, j] = o, c
        amp = amp * m
    return GaussSum(amp, orders, scales)


# ---------------------------------------------------------------- composition

# ---------------------------------------------------------------- composition

@dataclass
class ClassKernel:
    """Sum over the pairs (I, J) of one shuffle class of [phi]_I * [psi]_J."""

    mu: object
    pattern: object
    family: BumpFamily             # metadata carrier: pattern partition and d
    sum: GaussSum
    pairs: int = 0

    def terms(self):
        return [self.sum]

    def __call__(self, x):
        return self.sum(x)

    def deriv(self, alpha):
        return self.sum.deriv(alpha)


def pattern_index(pattern, K):
    """Collapse a per-coordinate index onto the blocks of the pattern partition."""
    starts = [0] + list(itertools.accumulate(pattern.partition.sizes))[:-1]
    return tuple(K[s] for s in starts)


def _class_meta(bp, d):
    return BumpFamily(lambda I: None, bp.partition, d, "weak")


def _offset_sum(genA, genB, rows, d):
    """GaussSum of sum over rows (eI, eJ, K) of [phi]_eI * [psi]_eJ, dilations applied."""
    if not rows:
        return None
    eI = np.array([r[0] for r in rows], float)
    eJ = np.array([r[1] for r in rows], float)
    K = np.array([r[2] for r in rows], float)
    th = convolve_offsets(genA, genB, eI - K, eJ - K, d)
    df = np.asarray([float(x) for x in d])
    s = 2.0 ** (-K * df)
    return GaussSum(th.amp * np.prod(s, axis=1), th.orders, th.scales * s)


def compose_classes(famA: BumpFamily, famB: BumpFamily, winA, winB):
    """Group [phi]_I * [psi]_J over two windows by shuffle class (abelian, closed form)."""
    pA, pB, d = famA.partition, famB.partition, famA.d
    rows = {}
    for I in winA:
        for J in winB:
            mu = classify(pA, pB, I, J)
            eI, eJ = embed(pA, I), embed(pB, J)
            rows.setdefault(mu, []).append((eI, eJ, join(eI, eJ)))
    genA, genB = single_term(famA(winA[0])), single_term(famB(winB[0]))
    out = {}
    for mu, rr in rows.items():
        bp = block_pattern(mu, pA, pB)
        out[mu] = ClassKernel(mu, bp, _class_meta(bp, d), _offset_sum(genA, genB, rr, d), len(rr))
    return out


def free_index_rows(pA, pB, mu, K, T):
    """Pairs (I, J) in class mu whose join collapses to the pattern index K,
    with free indices down to min(K) - T."""
    bp = block_pattern(mu, pA, pB)
    vals = {}
    starts = [0] + list(itertools.accumulate(bp.partition.sizes))[:-1]
    for s, k in zip(starts, K):
        vals[bp.tags[s]] = k
    free = list(bp.free)
    target = embed(bp.partition, K)
    lo, hi = min(K) - T, max(K)
    rows = []
    for choice in itertools.product(range(lo, hi + 1), repeat=len(free)):
        v = dict(vals)
        v.update(zip(free, choice))
        I = tuple(v[("i", k)] for k in range(1, pA.n + 1))
        J = tuple(v[("j", k)] for k in range(1, pB.n + 1))
        if any(a > b for a, b in zip(I, I[1:])) or any(a > b for a, b in zip(J, J[1:])):
            continue
        if classify(pA, pB, I, J) != mu:
            continue
        eI, eJ = embed(pA, I), embed(pB, J)
        if join(eI, eJ) != target:
            continue
        rows.append((eI, eJ, target))
    return rows


class ThetaCache:
    """Theta^K for constant generator families, keyed by the gaps of K.

    Theta^K depends on K only through its gaps because shifting every index
    by the same integer permutes the pairs of a class.
    """

    def __init__(self, famA, famB, T):
        self.famA, self.famB, self.T = famA, famB, T
        self.genA = single_term(famA((0,) * famA.n))
        self.genB = single_term(famB((0,) * famB.n))
        self.d = famA.d
        self._store = {}

    def get(self, mu, K):
        K = tuple(K)
        key = (mu, tuple(b - a for a, b in zip(K, K[1:])))
        if key not in self._store:
            base = tuple(k - K[0] for k in K)
            rows = free_index_rows(self.famA.partition, self.famB.partition, mu, base, self.T)
            if rows:
                eI = np.array([r[0] for r in rows], float)
                eJ = np.array([r[1] for r in rows], float)
                tg = np.array([r[2] for r in rows], float)
                self._store[key] = (convolve_offsets(self.genA, self.genB, eI - tg, eJ - tg, self.d),
                                    len(rows))
            else:
                self._store[key] = (None, 0)
        return self._store[key]


def cauchy_check(famA, famB, mu, K, T=16, pts=None):
    """Relative change of Theta^K when the free-index truncation doubles."""
    a, na = ThetaCache(famA, famB, T).get(mu, K)
    b, nb = ThetaCache(famA, famB, 2 * T).get(mu, K)
    if a is None:
        return {"change": 0.0, "terms": [0, 0]}
    if pts is None:
        pts = np.random.default_rng(0).uniform(-2, 2, (400, famA.N))
    va, vb = a(pts), b(pts)
    scale = max(float(np.abs(vb).max()), 1e-300)
    return {"change": float(np.abs(va - vb).max()) / scale, "terms": [na, nb]}


def class_marginals(theta: GaussSum, pattern, samples=None):
    """sup |int Theta dx_B| for block sets B avoiding the last block.

    Values are absolute: Theta^K is a uniformly normalized family, so the
    weak-cancellation gain shows in the marginals themselves.
    """
    from .bump_calculus import block_axes

    p = pattern.partition
    N = p.N
    if samples is None:
        samples = np.random.default_rng(1).uniform(-2, 2, (512, N))
    ratios = {}
    for r in range(1, p.n):
        for B in itertools.combinations(range(p.n - 1), r):
            ax = block_axes(p, list(B))
            keep = [j for j in range(N) if j not in ax]
            w = theta.amp * theta.marginal_factor(ax)
            live = w != 0
            if live.any():
                sub = GaussSum(w[live], theta.orders[live][:, keep], theta.scales[live][:, keep])
                ratios[B] = float(np.max(np.abs(sub(samples[:, keep]))))
            else:
                ratios[B] = 0.0
    return ratios


def class_weak_cancellation(cache, mu, pattern, gaps=(1, 2, 3, 4, 5), tol=1e-10):
    """Fit |int Theta^K dx_B| ~ C 2^{-eps G_B} over K = (0, g, 2g, ...).

    Returns (eps, per-B slopes); eps is inf when every marginal vanishes and
    None when the class reaches no K with positive gaps.
    """
    n = pattern.partition.n
    series = {}
    for g in gaps:
        K = tuple(g * k for k in range(n))
        th, _ = cache.get(mu, K)
        if th is None:
            continue
        for B, ratio in class_marginals(th, pattern).items():
            series.setdefault(B, []).append((g * len(B), ratio))
    if not series:
        return None, {}
    slopes = {}
    for B, pts in series.items():
        live = [(G, r) for G, r in pts if r > tol]
        if len(live) < 2:
            slopes["".join(map(str, B))] = math.inf
            continue
        G = np.array([p[0] for p in live], float)
        y = np.log2([p[1] for p in live])
        slopes["".join(map(str, B))] = float(-np.polyfit(G, y, 1)[0])
    return min(slopes.values()), slopes


def class_kernel_from_thetas(cache: ThetaCache, mu, pattern, k):
    """sum over pattern indices K in [-k, k] of [Theta^K]_K."""
    parts = []
    count = 0
    for K in monotone_window(pattern.partition.n, -k, k):
        th, n = cache.get(mu, K)
        if th is None:
            continue
        parts.append(th.dilate(embed(pattern.partition, K), cache.d))
        count += n
    gs = GaussSum.concat(parts, cache.famA.N)
    return ClassKernel(mu, pattern, _class_meta(pattern, cache.d), gs, count)


def _realizable_K(pA, pB, mu, pattern, span=3):
    """Pattern indices K with all gaps >= 1 that the class actually reaches."""
    out = []
    n = pattern.partition.n
    for gaps in itertools.product(range(1, span + 1), repeat=n - 1):
        K = tuple(itertools.accumulate((0,) + gaps))
        if free_index_rows(pA, pB, mu, K, 2):
            out.append(K)
    return out


def compose_kernels(famA: BumpFamily, famB: BumpFamily, ks=(4, 5, 6), T=16, m=0, seed=0,
                    shells=(0.25, 1.0, 4.0), directions=4, weak_K=3):
    """Composition of two strongly cancelling abelian families, per shuffle class.

    For each class: Cauchy change of the free-index sums, weak-cancellation
    exponent of Theta^K on the pattern partition, and the flag-size trace of
    sum_K [Theta^K]_K over nested pattern windows [-k, k].
    """
    pA, pB, d = famA.partition, famB.partition, famA.d
    cache = ThetaCache(famA, famB, T)
    reports, kernels = {}, {}
    for mu in shuffles(pA.n, pB.n):
        bp = block_pattern(mu, pA, pB)
        rep = {"mu": list(mu.mu), "pattern": list(bp.partition.sizes),
               "partition": bp.partition.real_sum(), "free": bp.free_str()}
        pts = shell_samples(bp.partition, d, shells, directions, seed=seed)
        trace = []
        for k in ks:
            ck = class_kernel_from_thetas(cache, mu, bp, k)
            consts, _ = size_constants(ck, m, pts)
            trace.append(max(consts.values()))
        run = list(itertools.accumulate(trace, max))
        rep["flag_trace"] = run
        rep["flag_growth"] = (run[-1] - run[-2]) / run[-2] if len(run) > 1 else 0.0
        eps, slopes = class_weak_cancellation(cache, mu, bp)
        rep["weak_eps"] = eps
        rep["weak_slopes"] = slopes
        Ks = _realizable_K(pA, pB, mu, bp)[:weak_K]
        rep["K"] = [list(K) for K in Ks]
        rep["cauchy"] = max((cauchy_check(famA, famB, mu, K, T)["change"] for K in Ks), default=0.0)
        reports[mu] = rep
        kernels[mu] = ck
    return kernels, reports


def fourier_oracle(famA, famB, winA, winB, kernels, xi):
    """max |m_composed - m_A m_B| / max |m_A m_B| at the frequencies xi."""
    mA = Multiplier(synthesize(famA, winA))(xi)
    mB = Multiplier(synthesize(famB, winB))(xi)
    total = np.zeros(len(xi), complex)
    for ck in kernels.values():
        total += gauss_sum_ft(ck.sum, xi)
    ref = max(float(np.max(np.abs(mA * mB))), 1e-300)
    return float(np.max(np.abs(total - mA * mB))) / ref


def gauss_sum_ft(gs: GaussSum, xi, chunk=1 << 21):
    """Fourier transform of a GaussSum at frequencies xi (M, N)."""
    out = np.zeros(len(xi), complex)
    step = max(1, chunk // max(len(gs.amp), 1))
    for s in range(0, len(xi), step):
        x = xi[s:s + step]
        v = np.broadcast_to(gs.amp.astype(complex), (len(x), len(gs.amp))).copy()
        for j in range(gs.N):
            u = x[:, j, None] / gs.scales[None, :, j]
            v *= (1j * u) ** gs.orders[None, :, j] * math.sqrt(math.pi) * np.exp(-u * u / 4) \
                / gs.scales[None, :, j]
        out[s:s + step] = v.sum(axis=1)
    return out
