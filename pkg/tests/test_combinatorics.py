import math

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from flaglab.combinatorics import (GeomSumSpec, Partition, all_partitions, block_pattern, classify,
                                   common_refinement, embed, emit_tables, geometric_rhs,
                                   geometric_sum, geometric_sum_converged, is_finer, join,
                                   pattern_from_values, random_geom_specs, shuffles, table_csv,
                                   table_text, verify_geom_bound)

# sum over i in Z of 2^{-i} / (1 + 2^{-i})^2; Poisson summation puts it within 1e-10 of 1/ln 2
CALIBRATION_VALUE = 1.4426950409594408


def partitions_of(N):
    return st.sampled_from(list(all_partitions(N)))


def monotone(n, lo=-4, hi=4):
    return st.lists(st.integers(lo, hi), min_size=n, max_size=n).map(lambda v: tuple(sorted(v)))


def test_partition_basics():
    p = Partition.of(2, 3)
    assert (p.N, p.n) == (5, 2)
    assert p.cuts == frozenset({2})
    assert p.block_of() == (0, 0, 1, 1, 1)
    assert p.real_sum() == "ℝ²⊕ℝ³"
    assert Partition.from_cuts(5, {1, 3}) == Partition((1, 2, 2))
    assert str(p) == "(2,3)"


def test_partition_rejects_empty_blocks():
    with pytest.raises(ValueError):
        Partition((2, 0))


def test_refinement():
    a, b = Partition((2, 3)), Partition((1, 2, 2))
    c = common_refinement(a, b)
    assert c == Partition((1, 1, 1, 2))
    assert is_finer(c, a) and is_finer(c, b)
    assert not is_finer(a, b)


def test_all_partitions_count():
    assert len(list(all_partitions(5))) == 16


@pytest.mark.parametrize("n", range(7))
@pytest.mark.parametrize("m", range(7))
def test_shuffle_count_is_binomial(n, m):
    assert len(shuffles(n, m)) == math.comb(n + m, n)


def test_shuffle_guard():
    with pytest.raises(ValueError, match="limited"):
        shuffles(9, 1)


def test_shuffle_strings():
    mu = shuffles(2, 3)[3]
    assert mu.decomposition_str() == "{1,5}∪{2,3,4}"
    assert mu.ordering_str() == "i1≤j1≤j2≤j3<i2"
    assert mu.mu == (1, 3, 4, 5, 2)


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_classify_agrees_with_pattern_from_values(data):
    N = data.draw(st.integers(2, 5))
    pA, pB = data.draw(partitions_of(N)), data.draw(partitions_of(N))
    I, J = data.draw(monotone(pA.n)), data.draw(monotone(pB.n))
    mu = classify(pA, pB, I, J)
    bp = block_pattern(mu, pA, pB)
    tags, K = pattern_from_values(pA, pB, I, J)
    assert bp.tags == tags
    assert K == join(embed(pA, I), embed(pB, J))
    # K is monotone and constant on the blocks of the pattern partition
    assert all(a <= b for a, b in zip(K, K[1:]))
    start = 0
    for a in bp.partition.sizes:
        assert len(set(K[start:start + a])) == 1 or len(set(tags[start:start + a])) == 1
        start += a


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_pattern_partition_is_coarser_than_refinement(data):
    N = data.draw(st.integers(2, 5))
    pA, pB = data.draw(partitions_of(N)), data.draw(partitions_of(N))
    for mu in shuffles(pA.n, pB.n):
        bp = block_pattern(mu, pA, pB)
        assert is_finer(common_refinement(pA, pB), bp.partition)


def test_classify_rejects_bad_indices():
    p = Partition((1, 1))
    with pytest.raises(ValueError, match="monotone"):
        classify(p, p, (2, 1), (0, 0))
    with pytest.raises(ValueError, match="lengths"):
        classify(p, p, (1,), (0, 0))


def test_table_one_first_rows():
    rows = emit_tables(Partition((2, 3)), Partition((1, 2, 2)))
    assert len(rows) == 10
    assert rows[0] == {"decomposition": "{1,2}∪{3,4,5}", "ordering": "i1≤i2≤j1≤j2≤j3",
                       "K_pattern": "{j1,j2,j2,j3,j3}", "new_decomposition": "ℝ⊕ℝ²⊕ℝ²",
                       "free_vars": "i1,i2"}
    assert {r["new_decomposition"] for r in rows} == {
        "ℝ⊕ℝ²⊕ℝ²", "ℝ⊕ℝ⊕ℝ⊕ℝ²", "ℝ⊕ℝ⊕ℝ³", "ℝ²⊕ℝ⊕ℝ²", "ℝ²⊕ℝ³"}


def test_table_two_is_one_partition():
    rows = emit_tables(Partition((2, 3)), Partition((2, 3)))
    assert len(rows) == 6
    assert {r["new_decomposition"] for r in rows} == {"ℝ²⊕ℝ³"}


def test_table_three_last_row():
    rows = emit_tables(Partition((5,)), Partition((1, 1, 1, 1, 1)))
    assert rows[-1]["new_decomposition"] == "ℝ⁵"
    assert rows[-1]["free_vars"] == "j1,j2,j3,j4,j5"


def test_table_rendering():
    rows = emit_tables(Partition((2, 3)), Partition((2, 3)))
    csv_text = table_csv(rows)
    assert csv_text.splitlines()[0] == "decomposition,ordering,K_pattern,new_decomposition,free_vars"
    text = table_text(rows).splitlines()
    assert len(text) == 8
    assert len({line.index("|") for line in text if "|" in line}) == 1


def test_mismatched_dimensions():
    with pytest.raises(ValueError, match="does not match"):
        emit_tables(Partition((2,)), Partition((1, 2)))


def test_geometric_calibration_oracle():
    spec = GeomSumSpec((1.0,), (1.0,), (0.0,), 2.0)
    value, T, change = geometric_sum_converged(spec)
    assert value / geometric_rhs(spec) == pytest.approx(CALIBRATION_VALUE, abs=1e-12)
    assert value == pytest.approx(1 / math.log(2), abs=1e-9)


def test_geometric_sum_lower_floor():
    # B = 4 keeps only i >= 2: sum_{i >= 2} 2^{-i} / (1 + 2^{-i})^2
    spec = GeomSumSpec((1.0,), (1.0,), (4.0,), 2.0, 200)
    brute = sum(2.0 ** -i / (1 + 2.0 ** -i) ** 2 for i in range(2, 201))
    assert geometric_sum(spec) == pytest.approx(brute, rel=1e-13)


def test_geometric_two_dimensional_brute_force():
    spec = GeomSumSpec((0.5, 0.7), (1.0, 2.0), (0.0, 0.5), 2.5, 20)
    brute = 0.0
    for i in range(-20, 21):
        for j in range(i, 21):
            if 2.0 ** j < 0.5:
                continue
            brute += 2.0 ** (-0.5 * i - 0.7 * j) / (1 + 2.0 ** -i + 2.0 * 2.0 ** -j) ** 2.5
    assert geometric_sum(spec) == pytest.approx(brute, rel=1e-12)


@pytest.mark.parametrize("kw", [
    dict(alpha=(1.0,), A=(1.0,), B=(0.0,), M=0.5),
    dict(alpha=(1.0, 1.0), A=(1.0,), B=(0.0,), M=3.0),
    dict(alpha=(1.0, 1.0), A=(1.0, 1.0), B=(1.0, 0.5), M=3.0),
    dict(alpha=(-1.0,), A=(1.0,), B=(0.0,), M=3.0),
])
def test_geom_spec_validation(kw):
    with pytest.raises(ValueError):
        GeomSumSpec(**kw)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_random_specs_respect_margin(seed):
    for s in random_geom_specs(10, seed=seed, n_max=3, margin=(0.5, 2.0)):
        assert s.M - sum(s.alpha) >= 0.5
        assert 1 <= s.n <= 3


def test_geom_bound_is_stable():
    r = verify_geom_bound(random_geom_specs(20, seed=5), T=60)
    assert r["verdict"] == "PASS"
    assert r["relative_change"] < 0.05


@settings(max_examples=30, deadline=None)
@given(st.floats(0.2, 1.5), st.floats(0.125, 8), st.floats(0.5, 2))
def test_one_dimensional_sum_is_bounded_by_rhs(alpha, A, margin):
    spec = GeomSumSpec((alpha,), (A,), (0.0,), alpha + margin, 60)
    ratio = geometric_sum(spec) / geometric_rhs(spec)
    assume(math.isfinite(ratio))
    # the constant depends only on alpha and M
    assert 0 < ratio < 4 / (alpha * margin * math.log(2))
