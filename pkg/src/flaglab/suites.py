"""Named checks grouped into suites, shared by the CLI and the acceptance tests.

Each check returns a verdict (PASS, FAIL or SKIP(reason)), a dict of logged
values and optional artifacts (relative path -> bytes). Seeds are derived per
check from the run seed, so a check gives the same bytes whether it runs alone,
inside ``all`` or in a worker process.
"""

from __future__ import annotations

import math
import os
import time
import traceback
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import operator_lab as ol
from .bump_calculus import (GridFunction, Grid, TensorBump, annular_decompose, block_marginal,
                            dump_grid, first_block_decompose, integrate_axes, iterated_primitives,
                            primitives, reconstruct_from_primitives, relative_l2, resum_annular,
                            sample, spectral_derivative)
from .combinatorics import (GeomSumSpec, Partition, block_pattern, emit_tables, geometric_rhs,
                            geometric_sum_converged, random_geom_specs, shuffles, table_csv,
                            verify_geom_bound)
from .convolution import (compose_classes, compose_kernels, cotlar_stein_sweep, fourier_oracle,
                          improvement_linearity, truncated_width_arithmetic, verify_decay,
                          verify_support_lemma)
from .graded_group import make_group, smooth_norm, verify_group_axioms
from .kernel_lab import KernelApprox, gauss_family, monotone_window, shell_samples, verify_flag_size
from .polynomial import Poly

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "golden", "v1")
GOLDEN_TABLES = {
    "table1": ((2, 3), (1, 2, 2)),
    "table2": ((2, 3), (2, 3)),
    "table3": ((5,), (1, 1, 1, 1, 1)),
}
TABLE_ROWS = {"table1": 10, "table2": 6, "table3": 6}
DEFAULT_WINDOW = (2, 6)
CALIBRATION = 1.4427
HEISENBERG_D = (1, 1, 2)


@dataclass
class Check:
    name: str
    criterion: int
    verdict: str
    values: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def failed(self):
        return self.verdict == "FAIL"

    def to_json(self):
        return {"name": self.name, "criterion": self.criterion, "verdict": self.verdict,
                "values": plain(self.values)}


@dataclass(frozen=True)
class Context:
    seed: int = 0
    bless: bool = False
    window: tuple = DEFAULT_WINDOW
    golden_dir: str = GOLDEN_DIR

    def seed_for(self, name):
        return (int(self.seed) + zlib.crc32(name.encode())) % 2 ** 32

    def rng(self, name):
        return np.random.default_rng(self.seed_for(name))


@dataclass(frozen=True)
class CheckSpec:
    name: str
    suite: str
    criterion: int
    fn: object


CHECKS: dict[str, CheckSpec] = {}
SUITES = ("tables", "group-axioms", "geom-sum", "cancellation", "bump-calculus", "kernel-size",
          "convolution", "composition", "operators")


def check(name, suite, criterion):
    def wrap(fn):
        CHECKS[name] = CheckSpec(name, suite, criterion, fn)
        return fn
    return wrap


def verdict(ok):
    return "PASS" if ok else "FAIL"


def plain(obj):
    """JSON-ready copy: tuples to lists, numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k) if not isinstance(k, tuple) else "".join(map(str, k)): plain(v)
                for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return obj


def suite_checks(suite):
    if suite == "all":
        return [c for s in SUITES for c in CHECKS.values() if c.suite == s]
    if suite not in SUITES:
        raise KeyError(f"unknown suite {suite!r}; choose from {', '.join(SUITES + ('all',))}")
    return [c for c in CHECKS.values() if c.suite == suite]


def run_check(name, ctx: Context) -> Check:
    spec = CHECKS[name]
    t0 = time.perf_counter()
    try:
        out = spec.fn(ctx)
    except Exception as exc:  # a crashing check is a failed check, not a crashed run
        out = Check(name, spec.criterion, "FAIL",
                    {"error": f"{type(exc).__name__}: {exc}",
                     "where": traceback.format_exc(limit=3).splitlines()[-3:]})
    out.name, out.criterion = name, spec.criterion
    out.seconds = time.perf_counter() - t0
    return out


# ---------------------------------------------------------------- tables (criteria 1, 2)

def golden_path(ctx, name):
    return os.path.join(ctx.golden_dir, name + ".csv")


@check("tables.golden", "tables", 1)
def _tables_golden(ctx):
    values, arts, ok = {}, {}, True
    for name, (a, b) in GOLDEN_TABLES.items():
        rows = emit_tables(Partition(a), Partition(b))
        data = table_csv(rows).encode("utf-8")
        arts[f"tables/{name}.csv"] = data
        path = golden_path(ctx, name)
        if ctx.bless:
            with open(path, "wb") as fh:
                fh.write(data)
        golden = open(path, "rb").read() if os.path.exists(path) else None
        same = golden == data
        values[name] = {"rows": len(rows), "expected_rows": TABLE_ROWS[name],
                        "golden_present": golden is not None, "byte_identical": same}
        ok = ok and same and len(rows) == TABLE_ROWS[name]
    t2 = {r["new_decomposition"] for r in emit_tables(Partition((2, 3)), Partition((2, 3)))}
    values["table2"]["new_decompositions"] = sorted(t2)
    ok = ok and t2 == {Partition((2, 3)).real_sum()}
    values["blessed"] = ctx.bless
    return Check("", 1, verdict(ok), values, arts)


@check("tables.shuffle_counts", "tables", 2)
def _shuffle_counts(ctx):
    bad = []
    for n in range(7):
        for m in range(7):
            got = len(shuffles(n, m))
            if got != math.comb(n + m, n):
                bad.append([n, m, got])
    return Check("", 2, verdict(not bad), {"pairs": 49, "mismatches": bad})


# ---------------------------------------------------------------- group axioms (criterion 4)

BUILTIN_GROUPS = (("abelian", {"d": [1, 1, 2]}), ("heisenberg", {}), ("engel_step3", {}))


@check("group.axioms", "group-axioms", 4)
def _group_axioms(ctx):
    values, ok = {}, True
    for kind, kw in BUILTIN_GROUPS:
        g = make_group(kind, **kw)
        r = verify_group_axioms(g, samples=1000, seed=ctx.seed_for(kind))
        good = bool(r["symbolic_associativity"]) and r["dilation_residual"] <= 1e-12
        values[kind] = {**r, "passed": good}
        ok = ok and good
    return Check("", 4, verdict(ok), values)


# ---------------------------------------------------------------- geometric sums (criterion 3)

@check("geom.bound", "geom-sum", 3)
def _geom_bound(ctx):
    specs = random_geom_specs(100, seed=ctx.seed_for("geom.bound"), n_max=3, margin=(0.5, 2.0))
    r = verify_geom_bound(specs, T=60)
    v = r.pop("verdict")
    r["min_margin"] = min(s.M - sum(s.alpha) for s in specs)
    return Check("", 3, v, r)


@check("geom.calibration", "geom-sum", 3)
def _geom_calibration(ctx):
    spec = GeomSumSpec((1.0,), (1.0,), (0.0,), 2.0, 60)
    value, T, change = geometric_sum_converged(spec)
    ratio = value / geometric_rhs(spec)
    err = abs(ratio - CALIBRATION)
    return Check("", 3, verdict(err < 1e-3),
                 {"value": ratio, "target": CALIBRATION, "error": err, "T": T, "last_change": change})


# ---------------------------------------------------------------- primitives (criterion 5)

def _g(scales, orders=None, poly=None):
    return TensorBump.product("gauss", scales, orders=orders, poly=poly)


def primitive_cases():
    g1, g2, g3 = Grid.cube(1, 8.0, 1025), Grid.cube(2, 8.0, 257), Grid.cube(3, 7.0, 65)
    x0, x1 = Poly.var(0, 2), Poly.var(1, 2)
    return [
        ("d0_gauss_1d", _g((1.0,), (1,)), g1, (0,), (), False),
        ("d0_cosbump_1d", TensorBump.product("cosbump", (0.5,), orders=(1,)), g1, (0,), (), False),
        ("d00_gauss_1d", _g((1.0,), (2,)), g1, (0,), (), False),
        ("d0_gauss_2d", _g((1.0, 0.7), (1, 0)), g2, (0,), (), False),
        ("d01_gauss_2d", _g((1.0, 1.3), (1, 1)), g2, (0,), (1,), False),
        ("odd_odd_2d", _g((1.0, 1.0), poly=x0 * x1), g2, (0,), (1,), False),
        ("sum_of_partials_2d", _g((1.0, 1.0), (1, 0)) + _g((0.8, 1.2), (0, 1)), g2, (0, 1), (), False),
        ("d02_gauss_3d", _g((1.0, 0.8, 1.2), (1, 0, 1)), g3, (0,), (2,), False),
        ("d012_gauss_3d", _g((1.0, 1.0, 0.9), (1, 1, 1)), g3, (0, 1), (2,), False),
        ("iterated_two_set_2d", _g((1.0, 1.3), (1, 1)), g2, (0,), (1,), True),
    ]


def _j2_leak(psi: GridFunction, J2):
    """sup |int psi dx_J2| relative to sup int |psi| dx_J2."""
    if not J2:
        return 0.0
    g = psi.grid
    num = np.abs(integrate_axes(psi.values, g, J2)).max()
    den = np.abs(integrate_axes(np.abs(psi.values), g, J2)).max()
    return float(num / max(den, 1e-300))


@check("cancellation.primitives", "cancellation", 5)
def _primitives(ctx):
    values, arts, ok = {}, {}, True
    for label, f, grid, J1, J2, iterated in primitive_cases():
        F = sample(f, grid)
        first = primitives(F, J1, J2)
        leak = max(_j2_leak(psi, J2) for psi in first)
        if iterated:
            parts = iterated_primitives(F, J1, J2)
            h = grid.h
            rec = sum(spectral_derivative(spectral_derivative(psi.values, h[l], l), h[k], k)
                      for (k, l), psi in parts.items())
            arts[f"grids/primitive_{label}.bin"] = dump_grid(parts[(J1[0], J2[0])])
        else:
            rec = reconstruct_from_primitives(first, J1)
        res = relative_l2(rec, F.values)
        good = res < 1e-6 and leak < 1e-8
        values[label] = {"relative_l2": res, "j2_leak": leak, "J1": J1, "J2": J2, "passed": good}
        ok = ok and good
    values["cases"] = len(primitive_cases())
    return Check("", 5, verdict(ok), values, arts)


# ---------------------------------------------------------------- decompositions (criterion 6)

def _marginal_ratio(gf: GridFunction, p: Partition):
    """max over blocks of sup |block marginal| / sup (block marginal of |f|)."""
    out = 0.0
    absf = GridFunction(gf.grid, np.abs(gf.values))
    for b in range(p.n):
        num = np.abs(block_marginal(gf, p, [b])).max()
        den = np.abs(block_marginal(absf, p, [b])).max()
        out = max(out, float(num / max(den, 1e-300)))
    return out


@check("bump.annular", "bump-calculus", 6)
def _annular(ctx):
    d, p = HEISENBERG_D, Partition((2, 1))
    rng = ctx.rng("bump.annular")
    psi = _g((1.0, 1.0, 1.0))
    parts = annular_decompose(psi, d, terms=12)
    x = rng.uniform(-8, 8, (2000, 3))
    x = x[smooth_norm(x, d) <= 8]
    res = float(np.abs(resum_annular(parts, d)(x) - psi(x)).max())
    # strong cancellation in both blocks is inherited term by term
    gen = _g((1.0, 1.0, 1.0))
    strong = gen.d(0).d(2)
    sparts = annular_decompose(strong, d, terms=6, primitive_rep=[((1, 0, 1), gen)])
    grid = Grid((1.1, 1.1, 1.1), (41, 41, 41))
    leaks = []
    for k, t in enumerate(sparts):
        gf = sample(t, grid)
        leaks.append(_marginal_ratio(gf, p))
    sres = float(np.abs(resum_annular(sparts, d)(x[:200]) - strong(x[:200])).max())
    arts = {"grids/annular_strong_k1.bin": dump_grid(sample(sparts[1], grid))}
    ok = res < 1e-6 and sres < 1e-6 and max(leaks) < 1e-8
    return Check("", 6, verdict(ok), {
        "resum_residual": res, "strong_resum_residual": sres, "points": len(x),
        "per_term_marginal": leaks, "max_marginal": max(leaks)}, arts)


@check("bump.first_block", "bump-calculus", 6)
def _first_block(ctx):
    rng = ctx.rng("bump.first_block")
    values, arts, ok = {}, {}, True
    cases = [
        ("abelian_1_1", Partition((1, 1)), (1, 1), TensorBump.product("cosbump", (1.0, 1.0)).d(0)),
        ("heisenberg_2_1", Partition((2, 1)), HEISENBERG_D,
         TensorBump.product("cosbump", (1.0, 1.0, 1.0)).d(0)),
    ]
    for label, p, d, phi in cases:
        N = len(d)
        dec = first_block_decompose(phi, p, d, terms=10)
        x = rng.uniform(-1, 1, (400, N))
        m = dec.exact_region(x)
        res = float(np.abs(dec.resum(x[m]) - phi(x[m])).max())
        # inner annulus: |x_1| <= 1/8 in the block-1 norm
        y = rng.uniform(-1, 1, (4000, N))
        a1 = p.sizes[0]
        y[:, :a1] /= 8
        y = y[smooth_norm(y[:, :a1], d[:a1]) <= 1 / 8][:400]
        inner = max(float(np.abs(dec.term(-k)(y)).max()) for k in range(dec.terms))
        good = res < 1e-6 and inner < 1e-10
        values[label] = {"resum_residual": res, "exact_points": int(m.sum()),
                         "inner_annulus_max": inner, "passed": good}
        ok = ok and good
    # strongly cancelling phi: every term keeps both block marginals at zero
    p, d = Partition((2, 1)), HEISENBERG_D
    phi = TensorBump.product("cosbump", (1.0, 1.0, 1.0)).d(0).d(2)
    dec = first_block_decompose(phi, p, d, terms=6)
    grid = Grid((1.05, 1.05, 1.05), (31, 31, 31))
    leaks = [_marginal_ratio(sample(dec.term(-k), grid), p) for k in range(4)]
    arts["grids/first_block_strong_j-1.bin"] = dump_grid(sample(dec.term(-1), grid))
    values["strong_per_term_marginal"] = leaks
    ok = ok and max(leaks) < 1e-8
    return Check("", 6, verdict(ok), values, arts)


# ---------------------------------------------------------------- flag size (criterion 7)

FLAG_CASES = (("abelian_1_1", (1, 1), (1, 1)), ("heisenberg_2_1", (2, 1), HEISENBERG_D))


@check("kernel.flag_size", "kernel-size", 7)
def _flag_size(ctx):
    lo, hi = ctx.window
    ks = tuple(range(lo, hi + 1))
    seed = ctx.seed_for("kernel.flag_size")
    values, ok = {"windows": list(ks)}, True
    for label, sizes, d in FLAG_CASES:
        p = Partition(sizes)
        strong = verify_flag_size(gauss_family(p, d, True), ks=ks, m=2, seed=seed)
        control = verify_flag_size(gauss_family(p, d, False), ks=ks, m=0, seed=seed)
        diverges = control.extra["pairing_growth"] >= 0.05
        values[label] = {
            "strong": strong.to_json(), "control": control.to_json(),
            "strong_passed": strong.passed, "control_diverges": diverges,
        }
        ok = ok and strong.passed and diverges
    return Check("", 7, verdict(ok), values)


# ---------------------------------------------------------------- convolution (criteria 8, 9, 10)

@check("convolution.support", "convolution", 8)
def _support(ctx):
    H = make_group("heisenberg")
    r = verify_support_lemma(H, pairs=20, seed=ctx.seed_for("convolution.support"))
    return Check("", 8, verdict(r.passed), {**r.to_json(), "C_max": max(r.constants),
                                            "pairs": len(r.constants)})


@check("convolution.decay", "convolution", 8)
def _decay(ctx):
    p1, p2 = Partition((1,)), Partition((1, 1))
    d1 = _g((1.0,), (1,))
    d2 = _g((1.0, 1.0), (1, 1))
    r1 = verify_decay(d1, d1, p1, (1,), span=6)
    r2 = verify_decay(d2, d2, p2, (1, 1), span=6)
    one = r1.passed and 0.8 <= r1.eps <= 1.2
    ok = one and r2.passed
    return Check("", 8, verdict(ok), {"n1": {**r1.to_json(), "oracle_eps": 1.0, "in_band": one},
                                      "n2": r2.to_json()})


@check("convolution.truncated", "convolution", 9)
def _truncated(ctx):
    fam = gauss_family(Partition((1, 1)), (1, 1), order=1)
    seed = ctx.seed_for("convolution.truncated")
    widths = [truncated_width_arithmetic(fam, a, b, seed=seed) for a, b in ((1.0, 1.0), (0.5, 2.0))]
    lin = improvement_linearity(fam, a=1.0, bs=(0.5, 0.25, 0.125))
    ok = all(w["passed"] for w in widths) and lin["passed"]
    return Check("", 9, verdict(ok), {"width_checks": widths, "linearity": lin})


@check("convolution.cotlar_stein", "convolution", 10)
def _cotlar_stein(ctx):
    p1 = Partition((1,))
    sums, tab = cotlar_stein_sweep(gauss_family(p1, (1,), order=2), ks=(1, 2, 3, 4, 5))
    ctrl, _ = cotlar_stein_sweep(gauss_family(p1, (1,), False), ks=(1, 2, 3, 4, 5))
    growth = (sums[-1] - sums[-2]) / sums[-2]
    cgrowth = (ctrl[-1] - ctrl[-2]) / ctrl[-2]
    ok = growth < 0.05 and cgrowth >= 0.05
    return Check("", 10, verdict(ok), {"row_sums": sums, "growth": growth, "decay_eps": tab.eps,
                                       "control_row_sums": ctrl, "control_growth": cgrowth})


@check("convolution.l2_norm", "convolution", 10)
def _l2(ctx):
    stab = ol.verify_l2_stability(gauss_family(Partition((1, 1)), (1, 1), order=2), ks=(3, 4, 5))
    K = KernelApprox(gauss_family(Partition((1,)), (1,), order=2), monotone_window(1, -3, 3))
    meth = ol.verify_l2_methods(K, seed=ctx.seed_for("convolution.l2_norm"))
    return Check("", 10, verdict(stab.passed and meth.passed),
                 {"stability": stab.to_json(), "methods": meth.to_json()})


# ---------------------------------------------------------------- composition (criterion 11)

EXPECTED_CLASSES = {(1, 2, 2), (1, 1, 1, 2), (1, 1, 3), (2, 1, 2), (2, 3)}


@check("composition.classes", "composition", 11)
def _composition(ctx):
    pA, pB, d = Partition((2, 3)), Partition((1, 2, 2)), (1,) * 5
    fA = gauss_family(pA, d, order=2, where="last")
    fB = gauss_family(pB, d, order=2, where="first")
    _, reps = compose_kernels(fA, fB, T=16, seed=ctx.seed_for("composition.classes"))
    classes, ok = {}, True
    for mu, r in reps.items():
        eps = r["weak_eps"]
        good = eps is not None and eps > 0 and r["flag_growth"] < 0.05
        key = f"{r['partition']} [{','.join(map(str, r['mu']))}]"
        classes[key] = {**r, "passed": good}
        ok = ok and good
    found = {tuple(r["pattern"]) for r in reps.values()}
    ok = ok and found == EXPECTED_CLASSES
    W1, W2 = monotone_window(2, -2, 2), monotone_window(3, -2, 2)
    xi = shell_samples(pA, d, (0.25, 1.0, 4.0), directions=2, guard=0)
    oracle = fourier_oracle(fA, fB, W1, W2, compose_classes(fA, fB, W1, W2), xi)
    ok = ok and oracle < 1e-6
    # (2,3) x (2,3): every class has the same pattern partition
    fC = gauss_family(pA, d, order=2, where="first")
    W = monotone_window(2, -1, 1)
    same = {ck.pattern.partition.sizes for ck in compose_classes(fA, fC, W, W).values()}
    ok = ok and len(same) == 1
    return Check("", 11, verdict(ok), {
        "classes": classes, "partitions": sorted(Partition(s).real_sum() for s in found),
        "fourier_oracle": oracle, "frequencies": len(xi),
        "same_partition_classes": sorted(Partition(s).real_sum() for s in same)})


# ---------------------------------------------------------------- operators (criterion 12)

def _sample_mixture(rng, N, terms):
    return ol.GaussMixture.random(N, rng, terms=terms)


@check("operators.composition_bound", "operators", 12)
def _op_composition(ctx):
    rng = ctx.rng("operators.composition_bound")
    H, p = make_group("heisenberg"), Partition((2, 1))
    f = _sample_mixture(rng, 3, 3)
    x = rng.uniform(-2, 2, (50, 3))
    r = ol.verify_composition_bound(H, f, x, p=p)
    return Check("", 12, verdict(r.passed), r.to_json())


@check("operators.gamma_comparison", "operators", 12)
def _op_gamma(ctx):
    rng = ctx.rng("operators.gamma_comparison")
    g1, p1 = make_group("abelian", d=[1]), Partition((1,))
    f1 = _sample_mixture(rng, 1, 3)
    x1 = rng.uniform(-3, 3, (50, 1))
    t1 = [[2.0 ** e] for e in range(-4, 5)]
    r1 = ol.verify_gamma_comparison(g1, f1, t1, x1, p1)
    H, p = make_group("heisenberg"), Partition((2, 1))
    f = _sample_mixture(rng, 3, 3)
    x = rng.uniform(-2, 2, (50, 3))
    ts = ol.tuple_grid(2, -4, 4, 2.0)
    r2 = ol.verify_gamma_comparison(H, f, ts, x, p)
    return Check("", 12, verdict(r1.passed and r2.passed),
                 {"abelian_n1": r1.to_json(), "heisenberg": r2.to_json()})


@check("operators.kernel_gamma", "operators", 12)
def _op_kernel_gamma(ctx):
    rng = ctx.rng("operators.kernel_gamma")
    p1 = Partition((1,))
    K = KernelApprox(gauss_family(p1, (1,), order=1), monotone_window(1, -3, 3))
    ts = [[2.0 ** e] for e in range(4, -5, -1)]
    xs = (rng.choice([-1, 1], 30) * 2.0 ** rng.uniform(-3, 3, 30))[:, None]
    good = ol.verify_kernel_gamma(K, ts, xs, mean_zero=True, derivs=True)
    control = ol.verify_kernel_gamma(K, ts, xs, mean_zero=False)
    ok = good.passed and not control.passed
    return Check("", 12, verdict(ok), {"mean_zero": good.to_json(), "control": control.to_json()})


@check("operators.almost_orthogonality", "operators", 12)
def _op_almost_orth(ctx):
    seed = ctx.seed_for("operators.almost_orthogonality")
    p1 = Partition((1,))
    K1 = KernelApprox(gauss_family(p1, (1,), order=1), monotone_window(1, -3, 3))
    pairs1 = [((t * 2.0 ** k,), (t,)) for k in range(6) for t in (0.5, 1.0, 2.0)]
    pairs1 += [((t,), (t * 2.0 ** k,)) for k in range(6) for t in (0.5, 1.0, 2.0)]
    r1 = ol.verify_almost_orthogonality(K1, pairs1, ol.PeriodicGrid(64.0, 2048, 1),
                                        ol.acceptable_grid(1, -4, 5), seed=seed)
    p2 = Partition((1, 1))
    K2 = KernelApprox(gauss_family(p2, (1, 1), order=1), monotone_window(2, -2, 2))
    pairs2 = [((2.0 ** a, 2.0 ** b), (1.0, 1.0)) for a in range(4) for b in range(4)]
    r2 = ol.verify_almost_orthogonality(K2, pairs2, ol.PeriodicGrid(16.0, 256, 2),
                                        ol.acceptable_grid(2, -3, 3), seed=seed)
    return Check("", 12, verdict(r1.passed and r2.passed), {"n1": r1.to_json(), "n2": r2.to_json()})


@check("operators.square_function", "operators", 12)
def _op_square(ctx):
    seed = ctx.seed_for("operators.square_function")
    p1 = Partition((1,))
    grid = ol.PeriodicGrid(64.0, 2048, 1)
    Ks = [KernelApprox(gauss_family(p1, (1,), order=1), monotone_window(1, -k, k)) for k in (2, 3, 4)]
    dom = ol.verify_square_domination(Ks, grid, ol.acceptable_grid(1, -5, 5), seed=seed)
    plan = ol.verify_square_plancherel(grid, p1, functions=50, seed=seed)
    res = ol.CalderonPair(p1).reproducing_residual()
    ok = dom.passed and plan.passed and res < 0.05
    return Check("", 12, verdict(ok), {"domination": dom.to_json(), "plancherel": plan.to_json(),
                                       "calderon_residual": res})
