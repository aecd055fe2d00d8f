import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swimcycle.errors import DegenerateShape
from swimcycle.se2 import (
    SE2Element, act_point, act_vector, align, compose, inverse, power, procrustes_objective, wrap_angle,
)

angles = st.floats(-10.0, 10.0, allow_nan=False)
coords = st.floats(-50.0, 50.0, allow_nan=False)
elements = st.builds(SE2Element, angles, coords, coords)


def close(a: SE2Element, b: SE2Element, tol=1e-12):
    dth = wrap_angle(a.theta - b.theta)
    return abs(dth) <= tol and abs(a.tx - b.tx) <= tol and abs(a.ty - b.ty) <= tol


def test_compose_examples():
    z = SE2Element(0.4, 1.0, -3.0)
    assert close(compose(SE2Element.identity(), z), z)
    assert close(compose(SE2Element.rotation(math.pi / 2), SE2Element.rotation(math.pi / 2)),
                 SE2Element.rotation(math.pi))
    a, b = SE2Element.translation(1, 0), SE2Element.rotation(math.pi / 2)
    np.testing.assert_allclose(act_point(compose(a, b), [0, 0]), [1, 0], atol=1e-15)
    np.testing.assert_allclose(act_point(compose(b, a), [0, 0]), [0, 1], atol=1e-15)


def test_act_examples():
    np.testing.assert_array_equal(act_point(SE2Element.identity(), [3, 4]), [3, 4])
    np.testing.assert_allclose(act_point(SE2Element.rotation(math.pi), [1, 0]), [-1, 0], atol=1e-15)
    np.testing.assert_array_equal(act_vector(SE2Element.translation(5, 5), [1, 2]), [1, 2])


def test_wrap_is_half_open():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert SE2Element(3 * math.pi).theta == pytest.approx(math.pi)


@given(elements, elements, elements)
def test_group_axioms(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9)
    assert close(compose(a, inverse(a)), SE2Element.identity(), 1e-12 * (1 + abs(a.tx) + abs(a.ty)))
    assert close(compose(inverse(a), a), SE2Element.identity(), 1e-12 * (1 + abs(a.tx) + abs(a.ty)))


@given(elements, st.lists(st.tuples(coords, coords), min_size=2, max_size=2))
def test_action_is_isometry(z, pts):
    p = np.array(pts)
    q = act_point(z, p)
    assert abs(np.linalg.norm(q[0] - q[1]) - np.linalg.norm(p[0] - p[1])) <= 1e-12 * (1 + np.abs(p).max())


@given(elements, elements, st.tuples(coords, coords))
def test_action_is_homomorphism(a, b, p):
    lhs = act_point(compose(a, b), p)
    rhs = act_point(a, act_point(b, p))
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_power_matches_repeated_compose():
    z = SE2Element(0.3, 0.1, -0.2)
    acc = SE2Element.identity()
    for k in range(6):
        assert close(power(z, k), acc, 1e-13)
        acc = compose(z, acc)
    assert close(power(z, -3), inverse(compose(z, compose(z, z))), 1e-13)


def _cloud(rng, n=10):
    return rng.normal(size=(n, 2)), rng.uniform(0.5, 2.0, n)


def test_self_alignment():
    rng = np.random.default_rng(1)
    T, m = _cloud(rng)
    T -= (m[:, None] * T).sum(0) / m.sum()
    al = align(T, m, T)
    assert close(al.group, SE2Element.identity(), 1e-14)
    np.testing.assert_allclose(al.shape, T, atol=1e-14)


def test_exact_recovery():
    rng = np.random.default_rng(2)
    T, m = _cloud(rng)
    z = SE2Element(0.3, 1.0, -2.0)
    al = align(act_point(z, T), m, T)
    assert close(al.group, z, 1e-10)
    np.testing.assert_allclose(al.shape, T, atol=1e-10)


def test_brute_force_rotation_scan():
    # oracle: for each theta the optimal translation is c_P - R c_T; scan 1e6 angles
    rng = np.random.default_rng(3)
    T, m = _cloud(rng)
    P = act_point(SE2Element(2.1, 0.4, 0.7), T) + 0.3 * rng.normal(size=T.shape)
    w = m / m.sum()
    cT, cP = w @ T, w @ P
    Tc, Pc = T - cT, P - cP
    th = np.linspace(-np.pi, np.pi, 1_000_000, endpoint=False)
    c, s = np.cos(th)[:, None], np.sin(th)[:, None]
    # residual of R^T Pc - Tc, per angle
    rx = c * Pc[:, 0] + s * Pc[:, 1] - Tc[:, 0]
    ry = -s * Pc[:, 0] + c * Pc[:, 1] - Tc[:, 1]
    obj = (m * (rx * rx + ry * ry)).sum(axis=1)
    best = th[np.argmin(obj)]
    al = align(P, m, T)
    assert abs(wrap_angle(al.group.theta - best)) <= 2 * np.pi / 1e6
    R = np.array([[math.cos(best), -math.sin(best)], [math.sin(best), math.cos(best)]])
    np.testing.assert_allclose(al.group.translation_vector, cP - R @ cT, atol=1e-5)
    assert procrustes_objective(al.group, P, m, T) <= obj.min() + 1e-12


def test_alignment_beats_random_elements():
    rng = np.random.default_rng(4)
    T, m = _cloud(rng)
    P = T + 0.5 * rng.normal(size=T.shape)
    al = align(P, m, T)
    best = procrustes_objective(al.group, P, m, T)
    for _ in range(1000):
        z = SE2Element(rng.uniform(-np.pi, np.pi), *rng.normal(size=2))
        assert procrustes_objective(z, P, m, T) >= best - 1e-12


@settings(max_examples=50)
@given(elements, st.integers(0, 2**32 - 1))
def test_alignment_equivariance(z, seed):
    rng = np.random.default_rng(seed)
    T, m = _cloud(rng, 8)
    P = T + 0.2 * rng.normal(size=T.shape)
    V = rng.normal(size=T.shape)
    a0 = align(P, m, T, V)
    a1 = align(act_point(z, P), m, T, act_vector(z, V))
    assert close(a1.group, compose(z, a0.group), 1e-9 * (1 + abs(z.tx) + abs(z.ty)))
    np.testing.assert_allclose(a1.shape, a0.shape, atol=1e-9)
    np.testing.assert_allclose(a1.velocities, a0.velocities, atol=1e-9)
    np.testing.assert_allclose(act_point(a1.group, a1.shape), act_point(z, P), atol=1e-9)


def test_aligned_shape_normalization():
    rng = np.random.default_rng(5)
    T, m = _cloud(rng)
    T -= (m[:, None] * T).sum(0) / m.sum()
    al = align(T + rng.normal(size=T.shape), m, T)
    S = al.shape
    np.testing.assert_allclose((m[:, None] * S).sum(0), 0, atol=1e-12)
    cross = np.sum(m * (T[:, 0] * S[:, 1] - T[:, 1] * S[:, 0]))
    assert abs(cross) < 1e-12


def test_degenerate_cross_covariance():
    T = np.array([[1.0, 0], [-1, 0], [0, 1], [0, -1]])
    P = np.array([[1.0, 0], [-1, 0], [0, -1], [0, 1]])
    m = np.ones(4)
    with pytest.raises(DegenerateShape):
        align(P, m, T, strict=True)
    assert align(P, m, T).group.theta == 0.0
    with pytest.raises(DegenerateShape):
        align(P, m, np.zeros((4, 2)))


def test_serialization_round_trip():
    z = SE2Element(-1.2, 3.5, 1e-17)
    assert SE2Element.from_dict(z.to_dict()) == z
