import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlfkit.affine import (AffineError, AffineMap, PerturbRamp, compose, default_pairs, identity, invert,
                           make_givens, make_scaling, make_translation, ramp_at, ramp_param)

finite = st.floats(-5, 5, allow_nan=False)


def random_map(seed, d=8):
    rng = np.random.default_rng(seed)
    pairs = default_pairs(d)
    rot = make_givens(pairs, rng.uniform(-np.pi, np.pi, len(pairs)), d)
    return compose(rot, compose(make_scaling(rng.uniform(0.1, 3), d), make_translation(rng.normal(0, 2, d))))


def test_row_convention():
    m = AffineMap(np.array([[0.0, -1.0], [1.0, 0.0]]), 2.0, np.array([1.0, 0.0]))
    # R @ (S * (x - T)) for x = (2, 0): S*(x-T) = (2, 0); rotate by +90 deg -> (0, 2)
    np.testing.assert_allclose(m.apply(np.array([[2.0, 0.0]])), [[0.0, 2.0]], atol=1e-15)


def test_givens_matches_planar_rotation():
    r = make_givens([(0, 1)], [np.pi / 2], 2).rotation
    np.testing.assert_allclose(r, [[0, -1], [1, 0]], atol=1e-15)


@given(seed=st.integers(0, 10_000), d=st.sampled_from([2, 4, 6, 8, 16]))
def test_givens_orthogonal(seed, d):
    rng = np.random.default_rng(seed)
    pairs = default_pairs(d)
    r = make_givens(pairs, rng.uniform(-20, 20, len(pairs)), d).rotation
    assert np.abs(r @ r.T - np.eye(d)).max() < 1e-12


@given(seed=st.integers(0, 10_000))
def test_invert_roundtrip(seed):
    a = random_map(seed)
    x = np.random.default_rng(seed + 1).normal(0, 3, (10, 8))
    assert np.abs(invert(a).apply(a.apply(x)) - x).max() < 1e-10
    assert np.abs(a.apply(invert(a).apply(x)) - x).max() < 1e-10


@given(seed=st.integers(0, 10_000))
def test_compose_is_function_composition_and_associative(seed):
    a, b, c = random_map(seed), random_map(seed + 1), random_map(seed + 2)
    x = np.random.default_rng(seed).normal(0, 2, (6, 8))
    scale = max(1.0, np.abs(a.apply(b.apply(x))).max())
    assert np.abs(compose(a, b).apply(x) - a.apply(b.apply(x))).max() / scale < 1e-12
    lhs = compose(compose(a, b), c).apply(x)
    rhs = compose(a, compose(b, c)).apply(x)
    assert np.abs(lhs - rhs).max() / max(1.0, np.abs(lhs).max()) < 1e-10


@given(seed=st.integers(0, 10_000))
def test_apply_grad_is_transpose_jacobian(seed):
    a = random_map(seed, 4)
    rng = np.random.default_rng(seed)
    x, g = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    # <g, J dx> == <J^T g, dx> for the linear part
    dx = rng.normal(size=(3, 4))
    lhs = np.sum(g * (a.apply(x + dx) - a.apply(x)))
    rhs = np.sum(a.apply_grad(g) * dx)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_identity_is_noop():
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(identity(3).apply(x), x)


@pytest.mark.parametrize("build", [
    lambda: make_scaling(0.0, 3),
    lambda: make_scaling(-1.0, 3),
    lambda: make_translation([np.inf, 0]),
    lambda: make_givens([(0, 1), (1, 2)], [0.1, 0.2], 4),
    lambda: make_givens([(0, 4)], [0.1], 4),
    lambda: make_givens([(0, 1)], [0.1, 0.2], 4),
    lambda: AffineMap(np.eye(2), 1.0, np.zeros(3)),
    lambda: compose(identity(2), identity(3)),
    lambda: identity(3).apply(np.zeros((1, 2))),
])
def test_invalid_maps_rejected(build):
    with pytest.raises(AffineError):
        build()


@given(lo=finite, span=st.floats(0, 5), T=st.integers(1, 2000))
def test_ramp_linear_and_exact_endpoint(lo, span, T):
    ramp = PerturbRamp("translation", lo, lo + span)
    assert ramp_param(ramp, T, T) == ramp.param_max
    if T > 2:
        p = [ramp_param(ramp, t, T) for t in (1, 2, 3)]
        assert p[2] - p[1] == pytest.approx(p[1] - p[0], abs=1e-12)


def test_ramp_kinds_build_expected_maps():
    d = 8
    tr = ramp_at(PerturbRamp("translation", 0.0, 5.0), 1000, 1000, d)
    np.testing.assert_array_equal(tr.offset, np.full(d, 5.0))
    sc = ramp_at(PerturbRamp("scaling", 1.0, 2.0), 500, 1000, d)
    assert sc.scale == pytest.approx(1.5)
    rot = ramp_at(PerturbRamp("rotation", 0.0, 3.1415, default_pairs(d)), 1000, 1000, d)
    assert rot.rotation[0, 0] == pytest.approx(np.cos(3.1415))


@pytest.mark.parametrize("args", [("scaling", 2.0, 1.0), ("scaling", 0.0, 1.0), ("shear", 0, 1),
                                  ("translation", 0, 1, ((0, 1),)), ("rotation", 0, 1, ((0, 1), (1, 2)))])
def test_invalid_ramps(args):
    with pytest.raises(AffineError):
        PerturbRamp(*args)


def test_ramp_timestep_range():
    with pytest.raises(AffineError):
        ramp_param(PerturbRamp("scaling", 1, 2), 0, 10)


def test_ramp_json_roundtrip():
    r = PerturbRamp("rotation", -3.1415, 0.0, default_pairs(8))
    assert PerturbRamp.from_json(json.loads(json.dumps(r.to_json()))) == r
