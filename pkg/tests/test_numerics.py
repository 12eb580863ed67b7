import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stackelberg_ppo.errors import DimensionError, NumericsError
from stackelberg_ppo.numerics import AdamState, adam_step, as_vector, cosine, dot, make_rng, norm2

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def vectors(n):
    return arrays(np.float64, n, elements=finite)


def test_dot_examples():
    assert dot([1, 2, 3], [1, 2, 3]) == 14.0
    assert dot([0, 0], [5, -5]) == 0.0


def test_dot_matches_loop_oracle():
    a = make_rng(0, "test").normal(size=64)
    expected = 0.0
    for x in a:
        expected += x * x
    assert abs(dot(a, a) - expected) <= 1e-12 * expected


def test_dot_dimension_mismatch():
    with pytest.raises(DimensionError):
        dot([1.0, 2.0], [1.0])


@pytest.mark.parametrize("vec, expected", [([3, 4], 5.0), (np.zeros(7), 0.0), ([1, 1, 1, 1], 2.0)])
def test_norm2_examples(vec, expected):
    assert norm2(vec) == expected


def test_as_vector_rejects_non_finite():
    with pytest.raises(NumericsError):
        as_vector([1.0, np.nan])
    with pytest.raises(DimensionError):
        as_vector([1.0, 2.0], dim=3)


@given(st.integers(1, 8).flatmap(lambda n: st.tuples(vectors(n), vectors(n), vectors(n))), finite, finite)
def test_dot_symmetric_and_bilinear(abc, s, t):
    a, b, c = abc
    assert dot(a, b) == dot(b, a)
    lhs = dot(s * a + t * b, c)
    rhs = s * dot(a, c) + t * dot(b, c)
    scale = (abs(s) * norm2(a) + abs(t) * norm2(b)) * norm2(c) + 1.0
    assert abs(lhs - rhs) <= 1e-9 * scale


@given(st.integers(1, 8).flatmap(lambda n: st.tuples(vectors(n), vectors(n))))
def test_norm2_triangle_inequality(ab):
    a, b = ab
    assert norm2(a + b) <= norm2(a) + norm2(b) + 1e-10
    assert norm2(a) >= 0.0
    assert (norm2(a) == 0.0) == (not np.any(a))


def test_cosine_edge_cases():
    assert cosine([1.0, 0.0], [2.0, 0.0]) == 1.0
    assert cosine(np.zeros(2), np.zeros(2)) == 1.0
    assert cosine([1.0, 0.0], np.zeros(2)) == 0.0


def test_adam_zero_gradient_first_step_is_fixed_point():
    p = np.array([0.3, -1.2])
    state, out = adam_step(AdamState.zeros(2, 0.1), p, np.zeros(2))
    np.testing.assert_array_equal(out, p)
    assert state.step_count == 1


def test_adam_minimizes_square_against_scalar_recursion():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 201):
        g = 2.0 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    state, p = AdamState.zeros(1, lr), np.array([1.0])
    for _ in range(200):
        state, p = adam_step(state, p, 2.0 * p)
    assert abs(x) < 1e-2
    assert p[0] == pytest.approx(x, abs=1e-12)
    assert state.step_count == 200


@given(vectors(3), vectors(3))
@settings(max_examples=25)
def test_adam_deterministic(p, g):
    s = AdamState.zeros(3, 0.01)
    s1, p1 = adam_step(s, p, g)
    s2, p2 = adam_step(s, p, g)
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_array_equal(s1.second_moment, s2.second_moment)


def test_adam_errors():
    with pytest.raises(NumericsError):
        adam_step(AdamState.zeros(2, 0.1), np.zeros(2), np.array([np.inf, 0.0]))
    with pytest.raises(DimensionError):
        adam_step(AdamState.zeros(2, 0.1), np.zeros(3), np.zeros(3))


def test_make_rng_streams():
    a = make_rng(3, "rollout", 4).random(5)
    np.testing.assert_array_equal(a, make_rng(3, "rollout", 4).random(5))
    assert not np.array_equal(a, make_rng(3, "rollout", 5).random(5))
    assert not np.array_equal(a, make_rng(3, "init", 4).random(5))
    assert not np.array_equal(a, make_rng(4, "rollout", 4).random(5))
