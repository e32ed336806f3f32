import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfsim_wave.coords import (Frame, SpacetimePoint, as_rapidity, from_similarity, kelvin, kelvin_inv,
                                 lorentz_boost, to_similarity)
from selfsim_wave.errors import DegenerateInterval, OutOfDomain, UnsupportedRapidity

H, C, S = Frame.HYPERBOLOIDAL, Frame.CARTESIAN, Frame.SIMILARITY


def P(frame, c0, c=(0.0, 0.0, 0.0)):
    return SpacetimePoint(frame, c0, c)


def close(p, q, tol=1e-12):
    assert p.frame == q.frame
    np.testing.assert_allclose(np.r_[p.c0, p.c], np.r_[q.c0, q.c], rtol=tol, atol=tol)


def test_kelvin_origin_slice():
    close(kelvin(P(H, -1.0)), P(C, 1.0))


def test_kelvin_hand_value():
    close(kelvin(P(H, -2.0, (1, 0, 0))), P(C, 2 / 3, (1 / 3, 0, 0)))


def test_kelvin_inv_values():
    close(kelvin_inv(P(C, 1.0)), P(H, -1.0))
    close(kelvin_inv(P(C, 2.0, (1, 0, 0))), P(H, -2 / 3, (1 / 3, 0, 0)))


def test_kelvin_roundtrip_example():
    p = P(C, 2.0, (1, 0, 0))
    close(kelvin(kelvin_inv(p)), p)


def test_null_point_is_degenerate():
    with pytest.raises(DegenerateInterval):
        kelvin_inv(P(C, 1.0, (1, 0, 0)))
    with pytest.raises(DegenerateInterval):
        kelvin(P(H, -1.0, (0, 1, 0)))


def test_frame_tag_checked():
    with pytest.raises(OutOfDomain):
        kelvin(P(C, 1.0))
    with pytest.raises(OutOfDomain):
        to_similarity(P(C, 1.0))


def test_to_similarity_values():
    close(to_similarity(P(H, -1.0)), P(S, 0.0))
    e = np.exp(-1.0)
    close(to_similarity(P(H, -e, (0.5 * e, 0, 0))), P(S, 1.0, (0.5, 0, 0)))


@pytest.mark.parametrize("T, X", [(0.0, (0, 0, 0)), (0.5, (0, 0, 0)), (-1.5, (0, 0, 0)), (-0.5, (0.5, 0, 0))])
def test_to_similarity_out_of_domain(T, X):
    with pytest.raises(OutOfDomain):
        to_similarity(P(H, T, X))


def test_from_similarity_values():
    close(from_similarity(P(S, 0.0)), P(H, -1.0))
    close(from_similarity(P(S, np.log(2.0))), P(H, -0.5))
    with pytest.raises(OutOfDomain):
        from_similarity(P(S, 0.0, (1.0, 0, 0)))


def test_single_axis_boost():
    s, T = 0.3, -0.7
    q = lorentz_boost([s, 0, 0], P(H, T))
    np.testing.assert_allclose([q.c0, q.c[0]], [T * np.cosh(s), T * np.sinh(s)], rtol=1e-14)


def test_boost_identity_at_zero(rng):
    for _ in range(50):
        p = P(H, -rng.uniform(0.1, 2), rng.uniform(-0.05, 0.05, 3))
        close(lorentz_boost(np.zeros(3), p), p, 0)


def test_json_roundtrip():
    p = P(S, 0.25, (0.1, -0.2, 0.3))
    d = json.loads(json.dumps(p.to_json()))
    assert d == {"frame": "Similarity", "c0": 0.25, "c": [0.1, -0.2, 0.3]}
    close(SpacetimePoint.from_json(d), p, 0)


def test_rapidity_bound():
    with pytest.raises(UnsupportedRapidity):
        as_rapidity([0.8, 0.8, 0.0])
    np.testing.assert_array_equal(as_rapidity(0.2), [0, 0, 0.2])


def _cone_points(rng, n):
    T = -rng.uniform(0.01, 3.0, n)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return T, d * (rng.uniform(0, 0.99, n) * -T)[:, None]


def test_involution_and_reciprocity_many_points(rng):
    T, X = _cone_points(rng, 10_000)
    err = rec = 0.0
    for Ti, Xi in zip(T, X):
        p = P(H, Ti, Xi)
        c = kelvin(p)
        back = kelvin_inv(c)
        err = max(err, np.linalg.norm(np.r_[back.c0 - Ti, np.subtract(back.c, Xi)]) / np.linalg.norm(np.r_[Ti, Xi]))
        rec = max(rec, abs(c.interval() * p.interval() - 1))
    assert err < 1e-12
    assert rec < 1e-12


finite = dict(allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-0.5, 0.5, **finite), b=st.floats(-0.5, 0.5, **finite),
       T=st.floats(-2.0, -0.05, **finite), f=st.floats(0.0, 0.9, **finite))
def test_boost_group_law(a, b, T, f):
    p = P(H, T, (0.0, 0.3 * f * T, f * T * 0.9))
    lhs = lorentz_boost([0, 0, a], lorentz_boost([0, 0, b], p))
    rhs = lorentz_boost([0, 0, a + b], p)
    np.testing.assert_allclose(np.r_[lhs.c0, lhs.c], np.r_[rhs.c0, rhs.c], atol=1e-12 * 10)


@settings(max_examples=200, deadline=None)
@given(a=st.tuples(*[st.floats(-0.55, 0.55, **finite)] * 3),
       T=st.floats(-2.0, -0.05, **finite), x=st.tuples(*[st.floats(-0.55, 0.55, **finite)] * 3))
def test_boost_preserves_interval_and_cone(a, T, x):
    X = np.array(x) * -T
    p = P(H, T, X)
    q = lorentz_boost(a, p)
    assert abs(q.interval() - p.interval()) <= 1e-12 * max(1.0, abs(p.c0) ** 2 + np.dot(X, X))
    assert q.c0 < 0 and np.linalg.norm(q.c) < -q.c0


@settings(max_examples=200, deadline=None)
@given(tau=st.floats(0.0, 20.0, **finite), x=st.tuples(*[st.floats(-0.57, 0.57, **finite)] * 3))
def test_similarity_roundtrip(tau, x):
    p = P(S, tau, x)
    back = to_similarity(from_similarity(p))
    np.testing.assert_allclose(np.r_[back.c0, back.c], np.r_[p.c0, p.c], rtol=1e-12, atol=1e-12)
