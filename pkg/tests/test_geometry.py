import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgdo.errors import ParameterError
from sgdo.geometry import Ball, Box, FullSpace, diameter, project, set_from_dict

SETS = {
    "full_space": FullSpace(3),
    "unit_ball": Ball.centered(3, 1.0),
    "offset_ball": Ball(np.array([1.0, -2.0, 0.5]), 2.5),
    "box": Box(np.array([0.0, -1.0, -3.0]), np.array([1.0, 2.0, -2.5])),
}


def test_projection_examples():
    assert np.array_equal(project(FullSpace(2), [3.0, -7.0]), [3.0, -7.0])
    np.testing.assert_allclose(project(Ball.centered(2, 1.0), [3.0, 4.0]), [0.6, 0.8], rtol=0, atol=1e-15)
    assert np.array_equal(project(Box(np.zeros(2), np.ones(2)), [-1.0, 0.5]), [0.0, 0.5])


def test_diameter_examples():
    assert diameter(FullSpace(2)) == math.inf
    assert diameter(Ball.centered(2, 2.0)) == 4.0
    assert diameter(Box(np.array([0.0, 0.0]), np.array([3.0, 4.0]))) == 5.0


def test_dimension_mismatch():
    for s in SETS.values():
        with pytest.raises(ParameterError):
            s.project(np.zeros(2))


def test_members_map_to_themselves():
    rng = np.random.default_rng(0)
    for name in ("unit_ball", "offset_ball", "box"):
        s = SETS[name]
        X = s.sample(rng, 500)
        for x in X:
            assert np.array_equal(s.project(x), x)


@pytest.mark.parametrize("name", sorted(SETS))
def test_nonexpansive_and_idempotent(name):
    s = SETS[name]
    rng = np.random.default_rng(11)
    A = rng.normal(scale=4.0, size=(10_000, 3))
    B = rng.normal(scale=4.0, size=(10_000, 3))
    PA, PB = s.project_batch(A), s.project_batch(B)
    lhs = np.linalg.norm(PA - PB, axis=1)
    rhs = np.linalg.norm(A - B, axis=1)
    assert np.all(lhs <= rhs + 1e-12)
    assert np.array_equal(s.project_batch(PA), PA)


@pytest.mark.parametrize("name", sorted(SETS))
def test_batch_matches_pointwise(name):
    s = SETS[name]
    X = np.random.default_rng(3).normal(scale=5.0, size=(200, 3))
    P = s.project_batch(X)
    for x, p in zip(X, P):
        assert np.array_equal(s.project(x), p)


def test_projection_is_nearest_point():
    # variational inequality <x - P(x), y - P(x)> <= 0 for every y in the set
    rng = np.random.default_rng(5)
    for name in ("unit_ball", "offset_ball", "box"):
        s = SETS[name]
        X = rng.normal(scale=6.0, size=(300, 3))
        Y = s.sample(rng, 300)
        P = s.project_batch(X)
        inner = np.einsum("ij,ij->i", X - P, Y - P)
        assert np.all(inner <= 1e-10)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-1e6, 1e6)), st.floats(1e-3, 1e3))
def test_ball_projection_properties(x, r):
    b = Ball.centered(4, r)
    p = b.project(x)
    assert b.contains(p, tol=1e-12)
    assert np.array_equal(b.project(p), p) or np.linalg.norm(b.project(p) - p) <= 1e-15 * r
    if np.linalg.norm(x) > r:
        assert math.isclose(np.linalg.norm(p), r, rel_tol=1e-12)


def test_set_from_dict_round_trip():
    for s in (Ball.centered(3, 2.0), SETS["offset_ball"], SETS["box"]):
        t = set_from_dict(s.to_dict(), 3)
        X = np.random.default_rng(0).normal(scale=3, size=(50, 3))
        assert np.array_equal(s.project_batch(X), t.project_batch(X))
    assert isinstance(set_from_dict({"kind": "full_space"}, 3), FullSpace)
    box = set_from_dict({"kind": "box", "lower": -1, "upper": 1}, 2)
    assert box.diameter() == pytest.approx(math.sqrt(8))
    with pytest.raises(ParameterError):
        set_from_dict({"kind": "simplex"}, 2)


def test_invalid_sets():
    with pytest.raises(ParameterError):
        Ball.centered(2, 0.0)
    with pytest.raises(ParameterError):
        Ball.centered(2, math.inf)
    with pytest.raises(ParameterError):
        Box(np.array([1.0]), np.array([0.0]))
