"""Finite dyadic sums of bumps and numerical checks of the flag-kernel
inequalities: size, cancellation, truncated variants, changes of variables,
multipliers and the weak-to-strong rewriting."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate

from . import profiles
from .bump_calculus import (
    BumpSpec,
    ClosureBump,
    DilatedBump,
    SumBump,
    TensorBump,
    block_axes,
    dilate_index,
    multi_orders,
)
from .combinatorics import Partition, embed
from .polynomial import HomoPolynomial, Poly

SHELLS = tuple(2.0 ** k for k in range(-4, 5))
DIRECTIONS = 8
AXIS_GUARD = 2.0 ** -6
GROWTH_TOL = 0.05


# ---------------------------------------------------------------- families

def monotone_window(n, lo, hi):
    """All nondecreasing n-tuples with entries in [lo, hi]."""
    return [tuple(t) for t in itertools.combinations_with_replacement(range(lo, hi + 1), n)]


def is_monotone(I):
    return all(a <= b for a, b in zip(I, I[1:]))


@dataclass
class BumpFamily:
    """Generators I -> BumpSpec for a flag on R^N with dilation exponents d."""

    generator: object
    partition: Partition
    d: tuple
    mode: str = "strong"        # strong | weak | none
    eps: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.mode not in ("strong", "weak", "none"):
            raise ValueError(f"unknown cancellation mode {self.mode!r}")
        if len(self.d) != self.partition.N:
            raise ValueError("dilation exponents do not match the partition")
        self.d = tuple(Fraction(x) for x in self.d)

    def __call__(self, I):
        return self.generator(tuple(I))

    @property
    def n(self):
        return self.partition.n

    @property
    def N(self):
        return self.partition.N

    def block_dims(self):
        return [float(q) for q in self.partition.homogeneous_dims(self.d)]


def constant_family(phi: BumpSpec, p: Partition, d, mode="strong", label=""):
    return BumpFamily(lambda I: phi, p, d, mode, label=label)


def gauss_family(p: Partition, d, cancel=True, order=1, where="first"):
    """Product of gaussians with ``order`` derivatives in the first (or last)
    coordinate of each block when ``cancel``; strongly cancelling, or
    nonnegative otherwise."""
    N = p.N
    orders = [0] * N
    if cancel:
        ends = list(itertools.accumulate(p.sizes))
        starts = [0] + ends[:-1] if where == "first" else [e - 1 for e in ends]
        for s in starts:
            orders[s] = order
    phi = TensorBump.product("gauss", (1.0,) * N, orders=tuple(orders))
    return constant_family(phi, p, d, "strong" if cancel else "none",
                           label="gauss-strong" if cancel else "gauss-positive")


@dataclass
class KernelApprox:
    family: BumpFamily
    window: list

    def __post_init__(self):
        n = self.family.n
        for I in self.window:
            if len(I) != n or not is_monotone(I):
                raise ValueError(f"window entry {I} is not a monotone {n}-index")
        self.window = [tuple(I) for I in self.window]

    def terms(self):
        fam = self.family
        return [dilate_index(fam(I), I, fam.partition, fam.d) for I in self.window]

    def __call__(self, x):
        return self.deriv((0,) * self.family.N)(x)

    def deriv(self, alpha):
        parts = [t.deriv(alpha) for t in self.terms()]
        if not parts:
            return ClosureBump(lambda x: np.zeros(np.shape(x)[:-1]), self.family.N)
        return SumBump([(1.0, t) for t in parts])

    def __add__(self, other):
        if other.family is not self.family:
            raise ValueError("windows of different families")
        return KernelApprox(self.family, sorted(set(self.window) | set(other.window)))


def synthesize(fam: BumpFamily, F):
    return KernelApprox(fam, list(F))


# ---------------------------------------------------------------- sample points

def flag_norms(x, p: Partition, d):
    """Sup-type block norms N_1(x), ..., N_n(x)."""
    x = np.asarray(x, float)
    df = np.array([float(t) for t in d])
    out = []
    for l in range(p.n):
        ax = block_axes(p, [l])
        out.append(np.max(np.abs(x[..., ax]) ** (1.0 / df[ax]), axis=-1))
    return np.stack(out, axis=-1)


def shell_samples(p: Partition, d, shells=SHELLS, directions=DIRECTIONS, seed=0, guard=AXIS_GUARD):
    """Points with prescribed block norms: every combination of shell radii,
    ``directions`` random directions per block each."""
    rng = np.random.default_rng(seed)
    df = np.array([float(t) for t in d])
    pts = []
    for radii in itertools.product(shells, repeat=p.n):
        for _ in range(directions):
            x = np.empty(p.N)
            for l, r in enumerate(radii):
                ax = block_axes(p, [l])
                u = rng.uniform(-1, 1, len(ax))
                j = rng.integers(len(ax))
                u[j] = np.sign(u[j]) or 1.0  # unit sup-type norm
                x[ax] = np.sign(u) * np.abs(u) ** df[ax] * r ** df[ax]
            pts.append(x)
    pts = np.array(pts)
    if np.any(flag_norms(pts, p, d)[:, 0] < guard):
        raise ValueError("sample too close to the singular set x_1 = 0")
    return pts


def size_majorant(norms, Qs, alpha_orders, width=0.0):
    """prod_k (a + N_1 + ... + N_k)^{-Q_k - [[alpha_k]]}."""
    cum = width + np.cumsum(norms, axis=-1)
    expo = np.asarray(Qs) + np.asarray(alpha_orders)
    return np.prod(cum ** (-expo), axis=-1)


def block_orders(alpha, p: Partition, d):
    df = [float(t) for t in d]
    return [sum(alpha[j] * df[j] for j in block_axes(p, [l])) for l in range(p.n)]


# ---------------------------------------------------------------- reports

@dataclass
class FlagEstimateReport:
    constants: dict                 # alpha -> measured C over the last window
    traces: dict = field(default_factory=dict)   # alpha -> running max per window
    raw: dict = field(default_factory=dict)      # alpha -> per-window value
    windows: list = field(default_factory=list)
    growth: dict = field(default_factory=dict)   # alpha -> max relative growth after warmup
    passed: bool | None = None
    samples: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self):
        key = lambda a: "".join(map(str, a)) if isinstance(a, tuple) else str(a)
        return {
            "constants": {key(a): v for a, v in self.constants.items()},
            "traces": {key(a): v for a, v in self.traces.items()},
            "growth": {key(a): v for a, v in self.growth.items()},
            "windows": [str(w) for w in self.windows],
            "passed": self.passed,
            "samples": self.samples,
            **self.extra,
        }


def _trace_growth(values, warmup):
    """Running max and the largest relative step after ``warmup`` entries."""
    run = list(itertools.accumulate(values, max))
    steps = [(b - a) / a if a > 0 else (0.0 if b == 0 else math.inf)
             for a, b in zip(run[warmup:], run[warmup + 1:])]
    return run, max(steps, default=0.0)


def size_constants(K, m=0, pts=None, width=0.0, improved=False, seed=0, shells=SHELLS):
    """C_alpha = max over samples of |d^alpha K| / majorant, for |alpha| <= m."""
    fam = K.family
    p, d = fam.partition, fam.d
    if pts is None:
        pts = shell_samples(p, d, shells, seed=seed)
    norms = flag_norms(pts, p, d)
    if np.any(norms[:, 0] < AXIS_GUARD):
        raise ValueError("sample too close to the singular set x_1 = 0")
    Qs = fam.block_dims()
    out = {}
    for alpha in multi_orders(fam.N, m):
        maj = size_majorant(norms, Qs, block_orders(alpha, p, d), width)
        if improved:
            maj = maj * width / (width + norms[:, 0])
        out[alpha] = float(np.max(np.abs(K.deriv(alpha)(pts)) / maj))
    return out, pts


def verify_flag_size(fam: BumpFamily, ks=(2, 3, 4, 5, 6), m=0, warmup=2, seed=0,
                     shells=SHELLS, width=0.0, improved=False, pairing=True, build=None):
    """Size constants over nested windows [-k, k]^n.

    PASS iff every running-max trace grows by less than 5% per window step
    after ``warmup`` steps. With ``pairing`` the report also carries the
    cancellation constant sup_R |<K, psi_R>| over the same windows.
    """
    pts = shell_samples(fam.partition, fam.d, shells, seed=seed)
    raw = {}
    windows = []
    pair_raw = []
    for k in ks:
        K = synthesize(fam, monotone_window(fam.n, -k, k))
        if build is not None:
            K = build(K)
        windows.append((-k, k))
        consts, _ = size_constants(K, m, pts, width, improved)
        for a, v in consts.items():
            raw.setdefault(a, []).append(v)
        if pairing:
            pair_raw.append(pairing_constant(K))
    rep = FlagEstimateReport({a: v[-1] for a, v in raw.items()}, raw=raw, windows=windows,
                             samples=len(pts))
    ok = True
    for a, v in raw.items():
        rep.traces[a], rep.growth[a] = _trace_growth(v, warmup)
        ok = ok and rep.growth[a] < GROWTH_TOL
    if pairing:
        tr, gr = _trace_growth(pair_raw, warmup)
        rep.extra["pairing_trace"] = tr
        rep.extra["pairing_growth"] = gr
        ok = ok and gr < GROWTH_TOL
    rep.passed = ok
    return rep


# ---------------------------------------------------------------- separable pairings

def separable_terms(b: BumpSpec):
    """Split a (dilated) TensorBump into terms c * prod_j f_j(x_j).

    Each factor is (power, profile, order, scale, amp), meaning
    amp * t^power * profile^{(order)}(scale * t).
    """
    if isinstance(b, DilatedBump):
        s, F = b.scales, b.factor
        return [(F * c, [(pw, pr, o, sc * sj, amp * sj ** pw)
                         for (pw, pr, o, sc, amp), sj in zip(fac, s)])
                for c, fac in separable_terms(b.base)]
    if isinstance(b, SumBump):
        return [(c * cc, fac) for c, part in b.parts for cc, fac in separable_terms(part)]
    if not isinstance(b, TensorBump):
        raise TypeError("pairings need tensor-product generators")
    out = []
    for c, poly, prof, orders, scales in b.terms:
        for a, pc in poly.terms.items():
            out.append((c * float(pc), [(a[j], prof[j], orders[j], scales[j], 1.0) for j in range(b.N)]))
    return out


def factor_eval(f, t):
    pw, pr, o, sc, amp = f
    return amp * t ** pw * profiles.profile(pr, o, sc * t)


def pair_1d(f, g, shift=0.0):
    """int f(t) g(t) dt for two separable factors, g given as a callable."""
    if f[3] == 0.0:
        raise ValueError("factor is constant in this variable")
    w = 1.0 / f[3]
    lim = 12 * w if f[1] == "gauss" else w
    with warnings.catch_warnings():
        # zero integrands (odd factor against an even test bump) trip the roundoff detector
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(lambda t: float(factor_eval(f, np.array(t)) * g(t)), -lim, lim,
                                limit=400, epsabs=1e-15, epsrel=1e-11)
    return val


def _test_bump(t, R, centre=0.25):
    return math.exp(-((t / R - centre) ** 2))


def pairing_constant(K: KernelApprox, radii=tuple(2.0 ** k for k in range(0, 7)), centre=0.25):
    """sup over one-parameter R of |<K, psi(R^{-1} . x)>| for an off-centre gaussian psi."""
    fam = K.family
    df = [float(t) for t in fam.d]
    best = 0.0
    for R in radii:
        total = 0.0
        for term in K.terms():
            for c, fac in separable_terms(term):
                v = c
                for j, f in enumerate(fac):
                    Rj = R ** df[j]
                    v *= pair_1d(f, lambda t, Rj=Rj: _test_bump(t, Rj, centre))
                    if v == 0.0:
                        break
                total += v
        best = max(best, abs(total))
    return best


# ---------------------------------------------------------------- cancellation

def verify_cancellation(fam: BumpFamily, window, blocks, R_tuples, restricted=True,
                        seed=0, shells=SHELLS, centre=0.25):
    """Size constants of K#(x') = int K(x) psi(R . x_L) dx_L over an R sweep.

    ``blocks`` lists the integrated blocks L (0-based); psi is an off-centre
    gaussian in those variables. The remaining blocks form the new flag.
    Restricted sweeps only keep nonincreasing R.
    """
    p, d = fam.partition, fam.d
    df = [float(t) for t in d]
    L = sorted(blocks)
    keep = [l for l in range(p.n) if l not in L]
    Lax = block_axes(p, L)
    kax = block_axes(p, keep)
    sweep = [tuple(R) for R in R_tuples if not restricted or
             all(a >= b for a, b in zip(R, R[1:]))]
    K = synthesize(fam, window)
    terms = [separable_terms(t) for t in K.terms()]
    if not keep:
        vals = []
        for R in sweep:
            total = 0.0
            for st in terms:
                for c, fac in st:
                    v = c
                    for l, Rl in zip(L, R):
                        for j in block_axes(p, [l]):
                            v *= pair_1d(fac[j], lambda t, s=Rl ** df[j]: _test_bump(t, s, centre))
                    total += v
            vals.append(abs(total))
        rep = FlagEstimateReport({(): max(vals, default=0.0)}, raw={(): vals}, windows=sweep)
        rep.passed = True
        return rep
    sub = Partition(tuple(p.sizes[l] for l in keep))
    subd = tuple(d[j] for j in kax)
    pts = shell_samples(sub, subd, shells, seed=seed)
    norms = flag_norms(pts, sub, subd)
    maj = size_majorant(norms, [float(q) for q in sub.homogeneous_dims(subd)], [0] * sub.n)
    consts = []
    for R in sweep:
        vals = np.zeros(len(pts))
        scale = {}
        for l, Rl in zip(L, R):
            for j in block_axes(p, [l]):
                scale[j] = 1.0 / Rl ** df[j]
        for st in terms:
            for c, fac in st:
                v = c
                for j in Lax:
                    v *= pair_1d(fac[j], lambda t, s=scale[j]: math.exp(-((s * t - centre) ** 2)))
                if v == 0.0:
                    continue
                rest = np.full(len(pts), v)
                for col, j in enumerate(kax):
                    rest = rest * factor_eval(fac[j], pts[:, col])
                vals += rest
        consts.append(float(np.max(np.abs(vals) / maj)))
    rep = FlagEstimateReport({(): max(consts, default=0.0)}, raw={(): consts}, windows=sweep,
                             samples=len(pts))
    lo, hi = min(consts, default=0.0), max(consts, default=0.0)
    rep.extra["spread"] = (hi - lo) / hi if hi > 0 else 0.0
    rep.extra["restricted"] = restricted
    rep.passed = True
    return rep


# ---------------------------------------------------------------- truncated kernels

def smooth_separable(fac, width, extra_order=0):
    """Factor convolved with the unit-mass gaussian e^{-t^2/w^2} / (w sqrt(pi)).

    Only plain gaussian derivatives are closed under this; the result is
    amp' * g^{(o)}(c t) with c = a / sqrt(1 + a^2 w^2).
    """
    pw, pr, o, a, amp = fac
    if pr != "gauss" or pw != 0:
        raise TypeError("closed-form smoothing needs plain gaussian factors")
    if a == 0.0:
        return (0, "gauss", o + extra_order, 0.0, amp if o + extra_order == 0 else 0.0)
    # a^{-o} d^o[g(a t)] * G_w = a^{-o} (1 + a^2 w^2)^{-1/2} d^o[g(c t)]
    c = a / math.sqrt(1 + (a * width) ** 2)
    o2 = o + extra_order
    return (0, "gauss", o2, c, amp * a ** (-o) * c ** o2 / math.sqrt(1 + (a * width) ** 2))


class SmoothedKernel:
    """psi_w * K for psi = d^beta of a unit-mass gaussian, w^{[[beta]]}-normalized.

    The smoothing width is w^{d_j} in coordinate j. Closed form for gaussian
    families on abelian groups.
    """

    def __init__(self, K: KernelApprox, width, beta=None):
        self.K, self.family, self.window = K, K.family, K.window
        self.width = float(width)
        N = K.family.N
        self.beta = tuple(beta) if beta is not None else (0,) * N
        df = [float(t) for t in K.family.d]
        self.widths = [self.width ** dj for dj in df]
        self.gain = math.prod(w ** b for w, b in zip(self.widths, self.beta))
        self._terms = None

    def terms(self):
        if self._terms is None:
            N = self.family.N
            out = []
            for t in self.K.terms():
                tb = []
                for c, fac in separable_terms(t):
                    new = [smooth_separable(f, w, b) for f, w, b in zip(fac, self.widths, self.beta)]
                    amp = c * self.gain * math.prod(f[4] for f in new)
                    if amp != 0.0:
                        tb.append((amp, Poly.const(1, N), tuple(f[1] for f in new),
                                   tuple(f[2] for f in new), tuple(f[3] for f in new)))
                if tb:
                    out.append(TensorBump(tb, N))
            self._terms = out
        return self._terms

    def __call__(self, x):
        return self.deriv((0,) * self.family.N)(x)

    def deriv(self, alpha):
        return SumBump([(1.0, t.deriv(alpha)) for t in self.terms()])


def verify_truncated(fam: BumpFamily, width, improved=False, ks=(2, 3, 4, 5, 6), m=0, seed=0,
                     shells=SHELLS, smoothing=None, beta=None):
    """Truncated-kernel constants of psi_s * K over nested windows.

    ``smoothing`` is the width s of the gaussian psi (default: ``width``);
    ``beta`` adds derivatives to psi, making it mean-zero.
    """
    if width <= 0:
        raise ValueError("width must be positive")
    s = width if smoothing is None else smoothing
    build = (lambda K: SmoothedKernel(K, s, beta)) if s > 0 else None
    return verify_flag_size(fam, ks, m, seed=seed, shells=shells, width=width,
                            improved=improved, pairing=False, build=build)


# ---------------------------------------------------------------- change of variables

def check_allowable(polys, d):
    """Each P_k must be homogeneous of degree d_k in strictly earlier variables."""
    N = len(d)
    d = [Fraction(x) for x in d]
    for k, P in enumerate(polys):
        if P is None or P.is_zero():
            continue
        for a in P.terms:
            if any(a[j] for j in range(k, N)):
                raise ValueError(f"P_{k + 1} monomial {Poly(N, {a: 1})} uses a variable of index >= {k + 1}")
        HomoPolynomial.of(P, d, d[k])  # raises with the offending monomial
    return True


@dataclass
class ChangeOfVariables:
    polys: list
    d: tuple

    def __call__(self, x):
        x = np.asarray(x, float)
        out = x.copy()
        for k, P in enumerate(self.polys):
            if P is not None and not P.is_zero():
                out[..., k] = x[..., k] + P(x)
        return out


class ChangedKernel:
    """K(F(x)) for an allowable F, with derivatives by finite differences."""

    def __init__(self, K: KernelApprox, F: ChangeOfVariables, step=None):
        self.K, self.F, self.family, self.window = K, F, K.family, K.window
        self.step = step

    def __call__(self, x):
        return self.K(self.F(x))

    def deriv(self, alpha):
        if not any(alpha):
            return ClosureBump(self, self.family.N)
        return _RelativeFD(self, alpha)


class _RelativeFD(BumpSpec):
    """Central differences with a step proportional to the local block scale."""

    def __init__(self, f, alpha):
        self.f, self.alpha, self.N = f, tuple(alpha), f.family.N

    def __call__(self, x):
        x = np.asarray(x, float)
        fam = self.f.family
        scale = np.min(flag_norms(x, fam.partition, fam.d), axis=-1)
        df = np.array([float(t) for t in fam.d])
        out = np.zeros(x.shape[:-1])
        offsets = [range(-a, a + 1, 2) if a else [0] for a in self.alpha]
        # product of (a)-th order two-point central stencils, step h_j = 1e-3 * scale^{d_j}
        for shifts in itertools.product(*offsets):
            w = 1.0
            y = x.copy()
            for j, (a, s) in enumerate(zip(self.alpha, shifts)):
                if a:
                    w *= math.comb(a, (a + s) // 2) * (-1) ** ((a - s) // 2)
                    y[..., j] = y[..., j] + s * 1e-3 * scale ** df[j]
            out = out + w * self.f(y)
        h = np.prod([(2e-3 * scale ** df[j]) ** a for j, a in enumerate(self.alpha)], axis=0)
        return out / h


def change_of_variables(fam_or_K, polys, window=None, m=1, seed=0, shells=SHELLS):
    """Transformed kernel K(F(x)) and its size constants next to the original ones."""
    K = fam_or_K if isinstance(fam_or_K, KernelApprox) else synthesize(fam_or_K, window)
    d = K.family.d
    polys = list(polys) + [None] * (K.family.N - len(polys))
    check_allowable(polys, d)
    F = ChangeOfVariables(polys, d)
    KF = ChangedKernel(K, F)
    before, pts = size_constants(K, m, seed=seed, shells=shells)
    after, _ = size_constants(KF, m, pts)
    ratios = {a: after[a] / before[a] for a in before if before[a] > 0}
    rep = FlagEstimateReport(after, samples=len(pts))
    rep.extra["original"] = {"".join(map(str, a)): v for a, v in before.items()}
    rep.extra["ratios"] = {"".join(map(str, a)): v for a, v in ratios.items()}
    # the chain rule moves mass between orders, so compare the order-m constant
    agg = max(after.values()) / max(before.values())
    rep.extra["aggregate_ratio"] = agg
    rep.passed = 0.25 <= agg <= 4.0
    return KF, rep


# ---------------------------------------------------------------- abelian multipliers

def factor_transform(f, xi, nodes=None):
    """Fourier transform int f(t) e^{-i t xi} dt of a separable factor, by the
    trapezoid rule on its sampled profile (spectrally accurate)."""
    lim = 14.0 / f[3] if f[1] == "gauss" else 1.0 / f[3]
    n = nodes or 1025
    t = np.linspace(-lim, lim, n)
    h = t[1] - t[0]
    vals = factor_eval(f, t)
    nyq = math.pi / h
    xi = np.asarray(xi, float)
    if np.any(np.abs(xi) > nyq):
        raise ValueError("aliasing: frequency beyond the sampling limit of the generator")
    tail = np.abs(vals[[0, -1]]).max()
    if tail > 1e-14 * max(np.abs(vals).max(), 1e-300):
        raise ValueError("aliasing: generator not resolved inside the sampling box")
    return (np.exp(-1j * np.multiply.outer(xi, t)) @ vals) * h


def gauss_derivative_transform(order, xi):
    """Transform of the order-th derivative of e^{-t^2}."""
    xi = np.asarray(xi, float)
    return (1j * xi) ** order * math.sqrt(math.pi) * np.exp(-xi ** 2 / 4)


class Multiplier:
    """m(xi) = sum_I prod_j phi_hat_j(2^{d_j e_j} xi_j) for an abelian KernelApprox."""

    def __init__(self, K: KernelApprox):
        self.K = K
        self.terms = [separable_terms(t) for t in K.terms()]
        self._cache = {}

    def __call__(self, xi):
        xi = np.atleast_2d(np.asarray(xi, float))
        out = np.zeros(xi.shape[0], complex)
        for st in self.terms:
            for c, fac in st:
                v = np.full(xi.shape[0], c, complex)
                for j, f in enumerate(fac):
                    v = v * self._transform(f, xi[:, j])
                out += v
        return out

    def _transform(self, f, xi):
        # f(t) = amp * t^p prof(sc t): transform = amp/sc^{p+1} * g_hat(xi / sc), g(u) = u^p prof(u)
        pw, pr, o, sc, amp = f
        base = (pw, pr, o, 1.0, 1.0)
        u = xi / sc
        if pr == "gauss" and pw == 0:
            g = gauss_derivative_transform(o, u)
        else:
            g = factor_transform(base, u)
        return amp / sc ** (pw + 1) * g


def multiplier_check_abelian(K: KernelApprox, group=None, m=1, shells=SHELLS, seed=0):
    """Flag-multiplier constants |d^alpha m| prod_j (|xi_j| + ... + |xi_n|)^{[[alpha_j]]}."""
    if group is not None and not group.is_abelian:
        raise ValueError("multiplier checks need an abelian group")
    fam = K.family
    p, d = fam.partition, fam.d
    mult = Multiplier(K)
    pts = shell_samples(p, d, shells, seed=seed, guard=0.0)
    # dual norms: the same homogeneous sup-norm on frequency blocks
    norms = flag_norms(pts, p, d)
    rev = np.cumsum(norms[:, ::-1], axis=-1)[:, ::-1]
    df = np.array([float(t) for t in d])
    consts = {}
    for alpha in multi_orders(fam.N, m):
        h = 1e-3 * np.min(norms, axis=-1)
        vals = np.zeros(len(pts), complex)
        for shifts in itertools.product(*[range(-a, a + 1, 2) if a else [0] for a in alpha]):
            w = 1.0
            y = pts.copy()
            for j, (a, s) in enumerate(zip(alpha, shifts)):
                if a:
                    w *= math.comb(a, (a + s) // 2) * (-1) ** ((a - s) // 2)
                    y[:, j] += s * h ** df[j]
            vals += w * mult(y)
        step = np.prod([(2 * h ** df[j]) ** a for j, a in enumerate(alpha)], axis=0)
        vals = vals / step
        orders = block_orders(alpha, p, d)
        weight = np.prod(rev ** np.asarray(orders), axis=-1)
        consts[alpha] = float(np.max(np.abs(vals) * weight))
    rep = FlagEstimateReport(consts, samples=len(pts))
    grid = _frequency_sweep(p, d)
    rep.extra["sup_m"] = float(np.max(np.abs(mult(grid))))
    rep.passed = True
    return rep


def _frequency_sweep(p, d, lo=-8, hi=8):
    """Frequencies whose block norms run over 2^{lo..hi}, two directions each."""
    step = 1 if p.n <= 2 else 2
    return shell_samples(p, d, tuple(2.0 ** k for k in range(lo, hi + 1, step)),
                         directions=2 if p.n <= 2 else 1, seed=7, guard=0.0)


def multiplier_sup(K: KernelApprox):
    return float(np.max(np.abs(Multiplier(K)(_frequency_sweep(K.family.partition, K.family.d)))))


# ---------------------------------------------------------------- Fourier decomposition

THETA_BAND = (10.0, 20.0)


def theta(t):
    return profiles.ramp(t, *THETA_BAND)


@dataclass
class FourierDecomposition:
    partition: Partition
    d: tuple
    window: list

    def block_freq_norms(self, xi):
        return flag_norms(xi, self.partition, self.d)

    def cutoff0(self, xi):
        """prod_j theta(|xi_j| / |xi_{j+1}|): support where |xi_j| >= 10 |xi_{j+1}|."""
        nr = self.block_freq_norms(xi)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.ones(nr.shape[0])
            for j in range(nr.shape[1] - 1):
                out = out * theta(np.where(nr[:, j + 1] > 0, nr[:, j] / nr[:, j + 1], np.inf))
        return out

    def coarser_cutoffs(self, xi):
        """(1 - theta_k) prod_{j<k} theta_j for k = 0..n-2, telescoping to 1 - cutoff0."""
        nr = self.block_freq_norms(xi)
        ths = []
        with np.errstate(divide="ignore", invalid="ignore"):
            for j in range(nr.shape[1] - 1):
                ths.append(theta(np.where(nr[:, j + 1] > 0, nr[:, j] / nr[:, j + 1], np.inf)))
        out, prefix = [], np.ones(nr.shape[0])
        for th in ths:
            out.append(prefix * (1 - th))
            prefix = prefix * th
        return out

    def eta(self, I, xi):
        nr = self.block_freq_norms(xi)
        df = [float(t) for t in self.d]
        out = np.ones(nr.shape[0])
        for l, i in enumerate(I):
            # block-l frequency norm scales like 2^{-i} under the index dilation
            out = out * profiles.dyadic_bump(2.0 ** i * nr[:, l])
        return out

    def unity(self, xi):
        return sum(self.eta(I, xi) for I in self.window)


def fourier_decompose_abelian(m_fn, p: Partition, d, window, xi):
    """Split samples of m into the pieces m_0 eta_I and the coarser parts m_k.

    Returns (pieces, coarser, residual) at the frequency points ``xi``.
    """
    if p.n not in (2, 3):
        raise ValueError("decomposition implemented for two or three blocks")
    dec = FourierDecomposition(p, d, list(window))
    lo, hi = THETA_BAND
    norms = dec.block_freq_norms(xi)
    span = np.log2(norms.max() / max(norms.min(), 1e-300))
    if span < math.log2(hi):
        raise ValueError("frequency window too small to host the transition bands")
    mv = m_fn(xi)
    c0 = dec.cutoff0(xi)
    m0 = mv * c0
    pieces = {I: m0 * dec.eta(I, xi) for I in dec.window}
    coarser = [mv * c for c in dec.coarser_cutoffs(xi)]
    total = sum(pieces.values()) + sum(coarser)
    scale = max(float(np.max(np.abs(mv))), 1e-300)
    return pieces, coarser, float(np.max(np.abs(total - mv))) / scale, dec


def piece_block_means(piece_fn, p: Partition, n_grid=64, extent=40.0):
    """Block means of the inverse transform of a frequency piece, through the
    value of the piece on the frequency subspace xi_k = 0."""
    xi = np.linspace(-extent, extent, n_grid)
    out = []
    for l in range(p.n):
        ax = block_axes(p, [l])
        pts = np.stack(np.meshgrid(*([xi] * p.N), indexing="ij"), axis=-1).reshape(-1, p.N) \
            if p.N <= 3 else None
        pts = pts[np.all(pts[:, ax] == 0, axis=1)] if pts is not None else None
        if pts is None or len(pts) == 0:
            pts = np.zeros((1, p.N))
        out.append(float(np.max(np.abs(piece_fn(pts)))))
    return out


# ---------------------------------------------------------------- weak to strong

def _block1_mollifier(p: Partition, N):
    """Unit-mass gaussian in the first-block variables, constant 1 elsewhere."""
    a1 = p.sizes[0]
    prof = ("gauss",) * a1 + ("gauss",) * (N - a1)
    scales = (1.0,) * a1 + (0.0,) * (N - a1)
    return TensorBump([(math.pi ** (-a1 / 2), Poly.const(1, N), prof, (0,) * N, scales)], N)


def _integrate_block1(b: BumpSpec, p: Partition):
    """int b dx_1 as a TensorBump constant in x_1."""
    a1 = p.sizes[0]
    N = b.N
    terms = []
    for c, fac in separable_terms(b):
        v = c
        for j in range(a1):
            v *= pair_1d(fac[j], lambda t: 1.0)
        if abs(v) < 1e-300:
            continue
        mono = [0] * N
        orders = [0] * N
        prof = ["gauss"] * N
        scales = [0.0] * N
        amps = 1.0
        for j in range(a1, N):
            pw, pr, o, sc, amp = fac[j]
            amps *= amp
            mono[j], prof[j], orders[j], scales[j] = pw, pr, o, sc
        terms.append((v * amps, Poly(N, {tuple(mono): 1}), tuple(prof), tuple(orders), tuple(scales)))
    if not terms:
        return None
    return TensorBump(terms, N)


@dataclass
class RewriteResult:
    families: dict            # partition sizes -> {index: BumpSpec}
    telescoped: dict          # original index -> number of telescoped terms


def rewrite_weak_to_strong(fam: BumpFamily, window):
    """Rewrite a two-block weakly cancelling family into strong families on
    (a_1, a_2) and on the merged partition (a_1 + a_2).

    phi^I = (phi^I - chi g^I) + chi g^I with g^I = int phi^I dx_1; the second
    piece is telescoped down the first-block scales from i_1 to i_2.
    """
    p = fam.partition
    if fam.mode == "strong":
        return RewriteResult({p.sizes: {tuple(I): fam(I) for I in window}}, {})
    if fam.eps is None or fam.eps <= 0:
        raise ValueError("weak cancellation needs eps > 0")
    if p.n != 2:
        raise ValueError("weak-to-strong rewriting is implemented for two blocks")
    N = fam.N
    d = [float(t) for t in fam.d]
    a1 = p.sizes[0]
    chi = _block1_mollifier(p, N)
    # chi - [chi]_1 in the first block: unit-scale minus once-dilated
    s1 = np.array([2.0 ** (-d[j]) if j < a1 else 1.0 for j in range(N)])
    wide = DilatedBump(chi, s1, 2.0 ** (-sum(d[:a1])))
    fine = {}
    merged = {}
    tele = {}
    for I in window:
        I = tuple(I)
        phi = fam(I)
        g = _integrate_block1(phi, p)
        if g is None:
            fine.setdefault(I, []).append((1.0, phi))
            tele[I] = 0
            continue
        chig = _product_bump(chi, g)
        fine.setdefault(I, []).append((1.0, phi))
        fine[I].append((-1.0, chig))
        diff = _product_bump(SumBump([(1.0, chi), (-1.0, wide)]), g)
        gap = I[1] - I[0]
        for l in range(I[0], I[1]):
            # [chi g]_(l, i2) - [chi g]_(l+1, i2) = [(chi - [chi]_1) g]_(l, i2)
            fine.setdefault((l, I[1]), []).append((1.0, diff))
        merged.setdefault((I[1],), []).append((1.0, chig))
        tele[I] = gap
    out = {
        p.sizes: {I: SumBump(v) for I, v in fine.items()},
        (N,): {I: SumBump(v) for I, v in merged.items()},
    }
    return RewriteResult(out, tele)


class _ProductBump(BumpSpec):
    def __init__(self, a, b):
        self.a, self.b, self.N = a, b, a.N

    def __call__(self, x):
        return self.a(x) * self.b(x)

    def deriv(self, alpha):
        # Leibniz rule
        parts = []
        for beta in itertools.product(*[range(k + 1) for k in alpha]):
            c = math.prod(math.comb(k, b) for k, b in zip(alpha, beta))
            rest = tuple(k - b for k, b in zip(alpha, beta))
            parts.append((float(c), _ProductBump(self.a.deriv(beta), self.b.deriv(rest))))
        return SumBump(parts)


def _product_bump(a, b):
    return _ProductBump(a, b)


def evaluate_rewrite(res: RewriteResult, fam: BumpFamily, x):
    total = np.zeros(np.shape(x)[:-1])
    N = fam.N
    for sizes, members in res.families.items():
        p = Partition(sizes)
        for I, b in members.items():
            idx = I if len(I) == p.n else I
            total = total + dilate_index(b, idx, p, fam.d)(x)
    return total
