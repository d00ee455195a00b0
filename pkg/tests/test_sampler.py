import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sgdo.errors import ParameterError
from sgdo.sampler import (Permutation, RandomStream, all_permutations, exchange, lambda_op,
                          lambda_op_batch, lambda_pushforward_matches, mismatch_count,
                          prefix_mismatches, uniform_permutation, uniform_permutations,
                          with_replacement_index)


def test_trivial_sizes():
    s = RandomStream(0)
    assert uniform_permutation(1, s).as_tuple() == (1,)
    assert with_replacement_index(1, s) == 1
    with pytest.raises(ParameterError):
        uniform_permutation(0, s)
    with pytest.raises(ParameterError):
        with_replacement_index(0, s)


def test_determinism_and_stream_independence():
    a = [uniform_permutation(7, RandomStream(42, k)).as_tuple() for k in range(5)]
    b = [uniform_permutation(7, RandomStream(42, k)).as_tuple() for k in range(5)]
    assert a == b
    assert len(set(a)) > 1
    s1, s2 = RandomStream(3), RandomStream(3)
    assert [with_replacement_index(9, s1) for _ in range(50)] == [with_replacement_index(9, s2) for _ in range(50)]


def test_copy_forks_state():
    s = RandomStream(5, 2)
    s.below(10)
    t = s.copy()
    assert [s.below(100) for _ in range(20)] == [t.below(100) for _ in range(20)]


def test_raw_stream_is_pinned():
    # frozen outputs guard against silent changes in the generator construction
    assert uniform_permutation(8, RandomStream(2024, 3)).as_tuple() == (7, 1, 6, 2, 8, 5, 3, 4)
    assert RandomStream(0, 0).raw(2).tolist() == [213000021201967259, 4455796210202625458]
    s = RandomStream(7, 1)
    assert [with_replacement_index(10, s) for _ in range(8)] == [4, 5, 2, 3, 9, 5, 7, 1]


def test_uniform_permutation_chi_square():
    s = RandomStream(7)
    m = 60_000
    counts = Counter(uniform_permutation(3, s).as_tuple() for _ in range(m))
    assert len(counts) == 6
    obs = np.array([counts[p] for p in itertools.permutations((1, 2, 3))])
    sigma = np.sqrt(m * (1 / 6) * (5 / 6))
    assert np.all(np.abs(obs - m / 6) <= 3 * sigma + 1)
    assert stats.chisquare(obs).pvalue > 1e-4


def test_batched_permutations_uniform():
    perms = uniform_permutations(4, 48_000, RandomStream(9))
    assert np.all(np.sort(perms, axis=1) == np.arange(1, 5))
    keys = Counter(map(tuple, perms.tolist()))
    assert len(keys) == 24
    assert stats.chisquare(list(keys.values())).pvalue > 1e-4


def test_with_replacement_frequencies():
    s = RandomStream(1)
    m = 100_000
    draws = s.below_many(4, m) + 1
    freq = np.bincount(draws, minlength=5)[1:]
    sigma = np.sqrt(m * 0.25 * 0.75)
    assert np.all(np.abs(freq - m / 4) <= 3 * sigma)
    s = RandomStream(2)
    scalar = np.bincount([with_replacement_index(4, s) for _ in range(20_000)], minlength=5)[1:]
    assert stats.chisquare(scalar).pvalue > 1e-4


def test_below_many_matches_scalar_law():
    # non-power-of-two bound exercises rejection
    vals = RandomStream(3).below_many(7, 70_000)
    assert vals.min() == 0 and vals.max() == 6
    assert stats.chisquare(np.bincount(vals)).pvalue > 1e-4


def test_permutation_validation():
    with pytest.raises(ParameterError):
        Permutation([1, 1, 3])
    with pytest.raises(ParameterError):
        Permutation([0, 1, 2])
    p = Permutation([2, 3, 1])
    assert p(1) == 2 and p.position_of(1) == 3
    with pytest.raises(ParameterError):
        p(0)
    assert p == Permutation((2, 3, 1)) and hash(p) == hash(Permutation((2, 3, 1)))


def test_exchange_examples():
    t = Permutation([1, 2, 3])
    assert exchange(t, 1, 1) == t
    assert exchange(t, 1, 3).as_tuple() == (3, 2, 1)
    assert exchange(exchange(t, 1, 3), 1, 3) == t
    with pytest.raises(ParameterError):
        exchange(t, 0, 2)
    with pytest.raises(ParameterError):
        exchange(t, 1, 4)


def test_lambda_examples():
    t = Permutation([2, 3, 1])
    assert lambda_op(t, 2, 0) == t
    assert lambda_op(t, 3, 0).as_tuple() == (3, 2, 1)
    with pytest.raises(ParameterError):
        lambda_op(t, 4, 0)
    with pytest.raises(ParameterError):
        lambda_op(t, 1, 3)


def test_mismatch_examples():
    a, b = Permutation([1, 2, 3]), Permutation([2, 1, 3])
    assert mismatch_count(a, b, 3) == 2
    assert all(mismatch_count(a, a, i) == 0 for i in range(4))
    with pytest.raises(ParameterError):
        mismatch_count(a, Permutation([1, 2]), 1)


@pytest.mark.parametrize("n", range(1, 7))
def test_exhaustive_algebra(n):
    perms = all_permutations(n)
    target = np.arange(1, n + 1)
    for a, b in [(1, n), (1, 1), (max(1, n // 2), n)]:
        for p in perms:
            e = exchange(Permutation(p, check=False), a, b)
            assert np.array_equal(np.sort(e.image), target)
    for r in range(1, n + 1):
        for i in range(n):
            lam = lambda_op_batch(perms, r, i)
            assert np.all(np.sort(lam, axis=1) == target)
            assert np.all(lam[:, i] == r)
            mism = prefix_mismatches(perms, lam)
            assert np.all(mism[:, i] <= 1)
            assert np.all(mism[:, n] <= 2)


@pytest.mark.parametrize("n", range(1, 6))
def test_batch_lambda_matches_scalar(n):
    perms = all_permutations(n)
    for r in range(1, n + 1):
        for i in range(n):
            lam = lambda_op_batch(perms, r, i)
            for p, q in zip(perms, lam):
                assert lambda_op(Permutation(p, check=False), r, i).as_tuple() == tuple(q)


def _independent_pushforward(n, r, i):
    # direct construction of the conditional law, not via lambda_pushforward_matches
    mass = Counter()
    for p in itertools.permutations(range(1, n + 1)):
        q = list(p)
        if q[i] != r:
            j = q.index(r)
            q[i], q[j] = q[j], q[i]
        mass[tuple(q)] += 1
    conditional = {p: 1 for p in itertools.permutations(range(1, n + 1)) if p[i] == r}
    total = sum(mass.values())
    return {p: c / total for p, c in mass.items()}, {p: 1 / len(conditional) for p in conditional}


@pytest.mark.parametrize("n", range(1, 6))
def test_lambda_pushforward_exhaustive(n):
    for r in range(1, n + 1):
        for i in range(n):
            assert lambda_pushforward_matches(n, r, i)
            pushed, cond = _independent_pushforward(n, r, i)
            assert pushed.keys() == cond.keys()
            assert all(abs(pushed[k] - cond[k]) < 1e-15 for k in cond)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**63), st.data())
def test_lambda_properties(n, seed, data):
    t = uniform_permutation(n, RandomStream(seed))
    r = data.draw(st.integers(1, n))
    i = data.draw(st.integers(0, n - 1))
    out = lambda_op(t, r, i)
    assert out(i + 1) == r
    assert np.count_nonzero(out.image != t.image) in (0, 2)
    assert mismatch_count(t, out, i) <= 1
