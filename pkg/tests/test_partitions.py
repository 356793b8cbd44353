import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compound_dp.dp_sampling import DirichletPrior, Gaussian, polya_urn_batch
from compound_dp.errors import DomainError
from compound_dp.partitions import (PARTITION_CAP, PartitionMultiplicity, enumerate_partitions,
                                    ewens_log_prob, ewens_log_probs, ewens_weight_table,
                                    first_block_size_probs, log_normalizer)


def partition_count(n):
    """p(n) by the coin-change recursion over part sizes."""
    table = [1] + [0] * n
    for part in range(1, n + 1):
        for total in range(part, n + 1):
            table[total] += table[total - part]
    return table[n]


def brute_force_patterns(n):
    """Every composition of n collapsed to its multiplicity vector."""
    out = set()
    for cuts in itertools.product([0, 1], repeat=n - 1):
        parts, run = [], 1
        for c in cuts:
            if c:
                parts.append(run)
                run = 1
            else:
                run += 1
        parts.append(run)
        out.add(PartitionMultiplicity.from_parts(parts).v)
    return out


def urn_pattern_law(n, alpha):
    """Exact law of the multiplicity pattern by enumerating urn label sequences."""
    alpha = Fraction(alpha)
    law = Counter()

    def walk(labels, prob):
        k = len(labels)
        if k == n:
            law[PartitionMultiplicity.from_labels(labels).v] += prob
            return
        counts = Counter(labels)
        for lab, c in counts.items():
            walk(labels + [lab], prob * Fraction(c) / (alpha + k))
        walk(labels + [len(counts)], prob * alpha / (alpha + k))

    walk([], Fraction(1))
    return law


@pytest.mark.parametrize("n,expected", [(1, 1), (4, 5), (10, 42)])
def test_enumeration_matches_brute_force(n, expected):
    parts = enumerate_partitions(n)
    assert len(parts) == expected
    assert {p.v for p in parts} == brute_force_patterns(n)


def test_enumeration_n1_is_single_block():
    (p,) = enumerate_partitions(1)
    assert p.v == (1,)


@pytest.mark.parametrize("n", range(1, 31))
def test_counts_match_dp_oracle(n):
    assert len(enumerate_partitions(n)) == partition_count(n)


def test_order_is_descending_lexicographic():
    parts = [p.parts for p in enumerate_partitions(7)]
    assert parts == sorted(parts, reverse=True)
    assert parts[0] == (7,) and parts[-1] == (1,) * 7
    assert [p.parts for p in enumerate_partitions(7)] == parts


@pytest.mark.parametrize("n", [0, PARTITION_CAP + 1])
def test_enumeration_rejects_out_of_range(n):
    with pytest.raises(DomainError, match=str(PARTITION_CAP)):
        enumerate_partitions(n)


def test_cap_is_overridable():
    assert len(enumerate_partitions(45, cap=45)) == partition_count(45)


def test_multiplicity_validation():
    with pytest.raises(DomainError):
        PartitionMultiplicity(3, (1, 0, 1))
    with pytest.raises(DomainError):
        PartitionMultiplicity(2, (-2, 2))
    v = PartitionMultiplicity.from_labels([5, 5, 1, 7, 5])
    assert v.v == (2, 0, 1, 0, 0)
    assert v.blocks == 3 and v.parts == (3, 1, 1) and v.sum_sq_sizes == 11


@pytest.mark.parametrize("alpha", [1e-3, 0.5, 1.0, 7.0, 1e4])
def test_n2_weights(alpha):
    distinct = PartitionMultiplicity(2, (2, 0))
    tied = PartitionMultiplicity(2, (0, 1))
    assert ewens_log_prob(distinct, alpha).log_prob == pytest.approx(math.log(alpha / (alpha + 1)), abs=1e-13)
    assert ewens_log_prob(tied, alpha).log_prob == pytest.approx(math.log(1 / (alpha + 1)), abs=1e-13)


@pytest.mark.parametrize("alpha", [0, -1.0, float("inf"), float("nan")])
def test_invalid_alpha(alpha):
    with pytest.raises(DomainError):
        ewens_log_prob(PartitionMultiplicity(1, (1,)), alpha)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
@pytest.mark.parametrize("alpha", ["1/3", "2", "5/2"])
def test_weights_match_exact_urn_enumeration(n, alpha):
    law = urn_pattern_law(n, alpha)
    for v in enumerate_partitions(n):
        w = ewens_log_prob(v, float(Fraction(alpha))).prob
        assert w == pytest.approx(float(law[v.v]), rel=1e-12)


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
def test_normalization(alpha):
    for n in range(1, 21):
        total = math.fsum(np.exp(ewens_log_probs(n, alpha)))
        assert abs(total - 1.0) < 1e-12
        assert abs(log_normalizer(n, alpha)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 14), log_alpha=st.floats(-6, 6))
def test_normalization_property(n, log_alpha):
    w = np.exp(ewens_log_probs(n, 10.0 ** log_alpha))
    assert np.all(w > 0) and np.all(w <= 1)
    assert abs(math.fsum(w) - 1.0) < 1e-11


@pytest.mark.parametrize("alpha", [1e-6, 1e6])
def test_no_overflow_at_cap(alpha):
    v = PartitionMultiplicity.from_parts([1] * 40)
    lp = ewens_log_prob(v, alpha).log_prob
    assert math.isfinite(lp) and lp <= 0
    w = ewens_log_prob(PartitionMultiplicity.from_parts([40]), alpha).log_prob
    assert math.isfinite(w) and w <= 0


def test_monotone_limits():
    n = 6
    singletons = PartitionMultiplicity.from_parts([1] * n)
    one_block = PartitionMultiplicity.from_parts([n])
    assert ewens_log_prob(singletons, 1e9).prob > 0.999999
    assert ewens_log_prob(one_block, 1e-9).prob > 0.999999
    probs = [ewens_log_prob(singletons, a).prob for a in (0.1, 1, 10, 100)]
    assert probs == sorted(probs)


def test_weight_table_examples():
    t = ewens_weight_table(3, 1.0)
    assert len(t.entries) == 3
    assert math.fsum(w for _, w in t.entries) == pytest.approx(1.0, abs=1e-14)
    (only,) = ewens_weight_table(1, 3.3).entries
    assert only[1] == pytest.approx(1.0)

    full = ewens_weight_table(8, 0.5)
    pruned = ewens_weight_table(8, 0.5, epsilon=1e-6)
    assert pruned.discarded_mass < 1e-4
    assert abs(pruned.total - 1.0) < 1e-10
    kept = {p.v for p, _ in pruned.entries}
    assert pruned.discarded_mass == pytest.approx(sum(w for p, w in full.entries if p.v not in kept), abs=1e-15)


def test_weight_table_top_k():
    t = ewens_weight_table(10, 2.0, top_k=5)
    assert len(t.entries) == 5
    assert abs(t.total - 1.0) < 1e-10
    full = sorted((w for _, w in ewens_weight_table(10, 2.0).entries), reverse=True)
    assert sorted(w for _, w in t.entries) == pytest.approx(sorted(full[:5]))
    with pytest.raises(DomainError):
        ewens_weight_table(4, 1.0, epsilon=1.0)


@pytest.mark.parametrize("m", [1, 2, 5, 12])
@pytest.mark.parametrize("alpha", [0.3, 1.0, 4.0])
def test_first_block_law_matches_enumeration(m, alpha):
    # size of the block holding item 1: a block of size j holds item 1 with probability j/m
    expected = np.zeros(m)
    for v, lp in zip(enumerate_partitions(m), ewens_log_probs(m, alpha)):
        for j, c in enumerate(v.v, start=1):
            expected[j - 1] += math.exp(lp) * c * j / m
    got = first_block_size_probs(m, alpha)
    assert np.allclose(got, expected, rtol=1e-11, atol=1e-15)


@pytest.mark.parametrize("n", [4, 6])
def test_urn_pattern_frequencies(n):
    alpha = 1.3
    size = 10 ** 6
    _, labels = polya_urn_batch(DirichletPrior(alpha, Gaussian(0.0, 1.0)), n, size, np.random.default_rng(n))
    sizes = (labels[:, :, None] == np.arange(n)).sum(axis=1)
    v = np.stack([(sizes == j).sum(axis=1) for j in range(1, n + 1)], axis=1)
    keys = v @ (n + 1) ** np.arange(n)
    freq = Counter(keys.tolist())
    for part in enumerate_partitions(n):
        p = ewens_log_prob(part, alpha).prob
        key = int(np.dot(part.v, (n + 1) ** np.arange(n)))
        se = math.sqrt(p * (1 - p) / size)
        assert abs(freq.get(key, 0) / size - p) < 4 * se
