"""Multi-indices, partitions, shuffle classes and geometric sums."""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


SUPERSCRIPT = str.maketrans("0123456789", "⁰¹²³⁴⁵⁶⁷⁸⁹")


@dataclass(frozen=True)
class Partition:
    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(a) for a in self.sizes)
        if not sizes or any(a < 1 for a in sizes):
            raise ValueError(f"block sizes must be positive: {self.sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def of(cls, *sizes):
        if len(sizes) == 1 and not isinstance(sizes[0], int):
            sizes = tuple(sizes[0])
        return cls(tuple(sizes))

    @property
    def N(self):
        return sum(self.sizes)

    @property
    def n(self):
        return len(self.sizes)

    @property
    def cuts(self):
        """Interior cut points: positions after which a new block starts."""
        return frozenset(itertools.accumulate(self.sizes[:-1]))

    @classmethod
    def from_cuts(cls, N, cuts):
        pts = [0] + sorted(c for c in cuts if 0 < c < N) + [N]
        return cls(tuple(b - a for a, b in zip(pts, pts[1:])))

    def block_of(self):
        """sigma: coordinate index -> block index (0-based)."""
        return tuple(l for l, a in enumerate(self.sizes) for _ in range(a))

    def homogeneous_dims(self, d):
        out, start = [], 0
        for a in self.sizes:
            out.append(sum((Fraction(x) for x in d[start:start + a]), Fraction(0)))
            start += a
        return out

    def real_sum(self):
        """Direct-sum notation, e.g. ℝ⊕ℝ²⊕ℝ²."""
        return "⊕".join("ℝ" if a == 1 else "ℝ" + str(a).translate(SUPERSCRIPT) for a in self.sizes)

    def __str__(self):
        return "(" + ",".join(map(str, self.sizes)) + ")"


def _monotone(idx):
    return all(a <= b for a, b in zip(idx, idx[1:]))


def embed(p: Partition, I):
    """Repeat i_l over the a_l coordinates of block l."""
    I = tuple(int(i) for i in I)
    if len(I) != p.n:
        raise ValueError(f"index of length {len(I)} for a partition with {p.n} blocks")
    return tuple(i for i, a in zip(I, p.sizes) for _ in range(a))


def join(a, b):
    if len(a) != len(b):
        raise ValueError("join of indices with different lengths")
    return tuple(max(x, y) for x, y in zip(a, b))


def common_refinement(pA: Partition, pB: Partition):
    if pA.N != pB.N:
        raise ValueError("partitions of different N")
    return Partition.from_cuts(pA.N, pA.cuts | pB.cuts)


def is_finer(pA: Partition, pB: Partition):
    """True when every cut of pB is a cut of pA."""
    if pA.N != pB.N:
        raise ValueError("partitions of different N")
    return pB.cuts <= pA.cuts


def all_partitions(N):
    for r in range(N):
        for cuts in itertools.combinations(range(1, N), r):
            yield Partition.from_cuts(N, cuts)


# ---------------------------------------------------------------- shuffles

MAX_SHUFFLE = 8


@dataclass(frozen=True)
class ShuffleClass:
    """Order-preserving interleaving of i_1..i_n with j_1..j_m.

    ``order`` lists the labels left to right, e.g. (('j',1), ('i',1), ...).
    """

    n: int
    m: int
    i_positions: tuple

    @property
    def order(self):
        out, ci, cj = [], 0, 0
        for pos in range(1, self.n + self.m + 1):
            if pos in self.i_positions:
                ci += 1
                out.append(("i", ci))
            else:
                cj += 1
                out.append(("j", cj))
        return tuple(out)

    @property
    def j_positions(self):
        return tuple(p for p in range(1, self.n + self.m + 1) if p not in self.i_positions)

    @property
    def mu(self):
        """Permutation as the subscript sequence, j_k encoded as n + k."""
        return tuple(k if s == "i" else self.n + k for s, k in self.order)

    def rank(self):
        return {lab: r for r, lab in enumerate(self.order)}

    def decomposition_str(self):
        fmt = lambda s: "{" + ",".join(map(str, s)) + "}"
        return fmt(self.i_positions) + "∪" + fmt(self.j_positions)

    def ordering_str(self):
        labels = self.order
        parts = [_lab(labels[0])]
        for a, b in zip(labels, labels[1:]):
            parts.append("<" if (a[0], b[0]) == ("j", "i") else "≤")
            parts.append(_lab(b))
        return "".join(parts)


def _lab(lab):
    return f"{lab[0]}{lab[1]}"


def shuffles(n, m):
    if n > MAX_SHUFFLE or m > MAX_SHUFFLE:
        raise ValueError(f"shuffle enumeration is limited to n, m <= {MAX_SHUFFLE}")
    return [ShuffleClass(n, m, c) for c in itertools.combinations(range(1, n + m + 1), n)]


def classify(pA: Partition, pB: Partition, I, J):
    """Shuffle class of (I, J); on ties the i entry goes to the left, matching i_k <= j_l."""
    I, J = tuple(I), tuple(J)
    if len(I) != pA.n or len(J) != pB.n:
        raise ValueError("index lengths do not match the partitions")
    if not (_monotone(I) and _monotone(J)):
        raise ValueError("indices must be monotone")
    pos, a, b = [], 0, 0
    n, m = len(I), len(J)
    for slot in range(1, n + m + 1):
        if b < m and (a == n or J[b] < I[a]):
            b += 1
        else:
            a += 1
            pos.append(slot)
    return ShuffleClass(n, m, tuple(pos))


@dataclass(frozen=True)
class BlockPattern:
    partition: Partition
    tags: tuple           # per coordinate: ('i', l) or ('j', l), 1-based
    free: tuple           # labels absent from K, i's first

    def k_str(self):
        return "{" + ",".join(_lab(t) for t in self.tags) + "}"

    def free_str(self):
        return ",".join(_lab(t) for t in self.free)


def block_pattern(mu: ShuffleClass, pA: Partition, pB: Partition):
    if (mu.n, mu.m) != (pA.n, pB.n) or pA.N != pB.N:
        raise ValueError("shuffle class does not match the partitions")
    rank = mu.rank()
    sig, tau = pA.block_of(), pB.block_of()
    tags = []
    for l in range(pA.N):
        il, jl = ("i", sig[l] + 1), ("j", tau[l] + 1)
        # K_l = i exactly when j_tau precedes i_sigma
        tags.append(il if rank[jl] < rank[il] else jl)
    # grouping rules: merge neighbours with the same source label
    cuts = {l for l in range(1, pA.N) if tags[l] != tags[l - 1]}
    used = set(tags)
    free = tuple([("i", k) for k in range(1, mu.n + 1) if ("i", k) not in used]
                 + [("j", k) for k in range(1, mu.m + 1) if ("j", k) not in used])
    return BlockPattern(Partition.from_cuts(pA.N, cuts), tuple(tags), free)


def pattern_from_values(pA, pB, I, J):
    """Pattern read off directly from K = embed(I) v embed(J) with the max convention."""
    eI, eJ = embed(pA, I), embed(pB, J)
    sig, tau = pA.block_of(), pB.block_of()
    tags = tuple(("j", tau[l] + 1) if eI[l] <= eJ[l] else ("i", sig[l] + 1) for l in range(pA.N))
    return tags, join(eI, eJ)


# ---------------------------------------------------------------- tables

TABLE_COLUMNS = ("decomposition", "ordering", "K_pattern", "new_decomposition", "free_vars")


def emit_tables(pA: Partition, pB: Partition):
    rows = []
    for mu in shuffles(pA.n, pB.n):
        bp = block_pattern(mu, pA, pB)
        rows.append({
            "decomposition": mu.decomposition_str(),
            "ordering": mu.ordering_str(),
            "K_pattern": bp.k_str(),
            "new_decomposition": bp.partition.real_sum(),
            "free_vars": bp.free_str(),
        })
    return rows


def table_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def table_text(rows):
    widths = {c: max(len(c), *(len(r[c]) for r in rows)) for c in TABLE_COLUMNS}
    line = lambda r: " | ".join(r[c].ljust(widths[c]) for c in TABLE_COLUMNS).rstrip()
    head = {c: c for c in TABLE_COLUMNS}
    sep = "-+-".join("-" * widths[c] for c in TABLE_COLUMNS)
    return "\n".join([line(head), sep] + [line(r) for r in rows]) + "\n"


# ---------------------------------------------------------------- geometric sums

@dataclass(frozen=True)
class GeomSumSpec:
    alpha: tuple
    A: tuple
    B: tuple
    M: float
    T: int = 60

    def __post_init__(self):
        n = len(self.alpha)
        if not (len(self.A) == len(self.B) == n):
            raise ValueError("alpha, A, B need equal lengths")
        if any(a <= 0 for a in self.alpha) or any(a <= 0 for a in self.A):
            raise ValueError("alpha and A must be positive")
        if any(b < 0 for b in self.B) or any(x > y for x, y in zip(self.B, self.B[1:])):
            raise ValueError("B must be nonnegative and nondecreasing")
        if not self.M > sum(self.alpha):
            raise ValueError("need M > sum(alpha)")
        if self.T < 1:
            raise ValueError("truncation radius must be at least 1")

    @property
    def n(self):
        return len(self.alpha)

    def with_T(self, T):
        return GeomSumSpec(self.alpha, self.A, self.B, self.M, T)


_LATTICE_CACHE = {}


def _lattice(n, lo, hi):
    """All monotone integer n-tuples with lo <= i_1 <= ... <= i_n <= hi, as an array."""
    key = (n, lo, hi)
    if key not in _LATTICE_CACHE:
        L = hi - lo + 1
        if n == 1:
            pts = np.arange(L)[:, None]
        else:
            rest = _lattice(n - 1, 0, L - 1)
            # prepend a first entry not exceeding the current head
            first_parts = []
            for head in range(L):
                sub = rest[rest[:, 0] >= head]
                first_parts.append(np.concatenate([np.full((len(sub), 1), head), sub], axis=1))
            pts = np.concatenate(first_parts, axis=0)
        _LATTICE_CACHE[key] = pts + lo
        if len(_LATTICE_CACHE) > 16:
            _LATTICE_CACHE.pop(next(iter(_LATTICE_CACHE)))
    return _LATTICE_CACHE[key]


def geometric_sum(spec: GeomSumSpec):
    """Sum over monotone I in [-T,T]^n with B_j <= 2^{i_j} of
    prod 2^{-i_k alpha_k} / (1 + sum 2^{-i_k} A_k)^M, in log space."""
    n, T = spec.n, int(spec.T)
    alpha = np.asarray(spec.alpha, float)
    A = np.asarray(spec.A, float)
    # floors: 2^{i_j} >= B_j, i.e. i_j >= log2 B_j
    lows = [(-T if b <= 0 else max(-T, math.ceil(math.log2(b) - 1e-12))) for b in spec.B]
    pts = _lattice(n, -T, T)
    ok = np.all(pts >= np.asarray(lows)[None, :], axis=1)
    pts = pts[ok].astype(float)
    if len(pts) == 0:
        return 0.0
    ln2 = math.log(2.0)
    logs = pts * -ln2  # log 2^{-i}
    num = logs @ alpha
    # log(1 + sum A_k 2^{-i_k}) with a stable log-sum-exp
    terms = np.concatenate([np.zeros((len(pts), 1)), logs + np.log(A)[None, :]], axis=1)
    top = terms.max(axis=1)
    lse = top + np.log(np.exp(terms - top[:, None]).sum(axis=1))
    return float(np.exp(num - spec.M * lse).sum())


def geometric_sum_converged(spec: GeomSumSpec, tol=1e-9, T_max=2048):
    """Double T until |S(2T) - S(T)| < tol. Returns (value, T, last change)."""
    T = spec.T
    s = geometric_sum(spec)
    while True:
        s2 = geometric_sum(spec.with_T(2 * T))
        change = abs(s2 - s)
        if change < tol or 2 * T >= T_max:
            return s2, 2 * T, change
        T, s = 2 * T, s2


def geometric_rhs(spec: GeomSumSpec):
    """prod_j (A_1 + ... + A_j + B_j)^{-alpha_j}, without the constant."""
    cum = np.cumsum(spec.A)
    return float(np.prod((cum + np.asarray(spec.B, float)) ** -np.asarray(spec.alpha, float)))


def random_geom_specs(count, seed=0, n_max=3, margin=(0.5, 2.0)):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(1, n_max + 1))
        alpha = tuple(float(a) for a in rng.uniform(0.2, 1.5, n))
        A = tuple(float(a) for a in 2.0 ** rng.uniform(-3, 3, n))
        B = np.sort(np.where(rng.random(n) < 0.3, 0.0, 2.0 ** rng.uniform(-3, 3, n)))
        M = sum(alpha) + float(rng.uniform(*margin))
        out.append(GeomSumSpec(alpha, A, tuple(float(b) for b in B), M, 60))
    return out


def verify_geom_bound(specs, T=60):
    """Max LHS/RHS ratio at T and 2T; PASS when the max is finite and moves < 5%."""
    r1, r2 = [], []
    for s in specs:
        rhs = geometric_rhs(s)
        r1.append(geometric_sum(s.with_T(T)) / rhs)
        r2.append(geometric_sum(s.with_T(2 * T)) / rhs)
    m1, m2 = max(r1), max(r2)
    change = abs(m2 - m1) / m1
    return {
        "max_ratio_T": m1,
        "max_ratio_2T": m2,
        "relative_change": change,
        "per_spec_max_change": float(np.max(np.abs(np.array(r2) - np.array(r1)) / np.array(r1))),
        "T": T,
        "count": len(specs),
        "verdict": "PASS" if np.isfinite(m2) and change < 0.05 else "FAIL",
    }
