import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dlfkit import _kernels_py, kernels

compiled = pytest.importorskip("dlfkit._kernels")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@given(seed=st.integers(0, 10_000), n=st.integers(2, 80), k=st.integers(1, 8), self_=st.booleans())
def test_knn_backends_agree(seed, n, k, self_):
    pts = np.random.default_rng(seed).uniform(-1, 1, (n, 2))
    k = min(k, n - (0 if self_ else 1))
    np.testing.assert_array_equal(compiled.knn_indices(pts, k, self_), _kernels_py.knn_indices(pts, k, self_))


def test_knn_ties_go_to_lower_index():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    for impl in (compiled, _kernels_py):
        np.testing.assert_array_equal(impl.knn_indices(pts, 3, False)[0], [1, 2, 3])


def test_knn_against_sorted_distances():
    pts = np.random.default_rng(3).uniform(size=(40, 2))
    nn = kernels.knn_indices(pts, 5, include_self=True)
    d = ((pts[:, None] - pts[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(nn, np.argsort(d, axis=1, kind="stable")[:, :5])


@given(seed=st.integers(0, 10_000), n=st.integers(0, 60), m=st.integers(1, 12), d=st.sampled_from([2, 3]))
def test_assign_backends_agree(seed, n, m, d):
    rng = np.random.default_rng(seed)
    pts, centers = rng.uniform(-1, 1, (n, d)), rng.uniform(-1, 1, (m, d))
    np.testing.assert_array_equal(compiled.assign_nearest(pts, centers), _kernels_py.assign_nearest(pts, centers))


@given(seed=st.integers(0, 10_000), n=st.integers(0, 60), m=st.integers(1, 6))
def test_inside_backends_agree(seed, n, m):
    rng = np.random.default_rng(seed)
    pts, centers = rng.uniform(-1, 1, (n, 2)), rng.uniform(-1, 1, (m, 2))
    sizes, yaws = rng.uniform(0.1, 1.0, (m, 2)), rng.uniform(-np.pi, np.pi, m)
    assign = rng.integers(0, m, n)
    np.testing.assert_array_equal(compiled.inside_oriented(pts, centers, sizes, yaws, assign),
                                  _kernels_py.inside_oriented(pts, centers, sizes, yaws, assign))


@pytest.mark.parametrize("impl", [compiled, _kernels_py])
def test_kernel_errors(impl):
    with pytest.raises(ValueError):
        impl.knn_indices(np.zeros((3, 2)), 3, False)
    with pytest.raises(ValueError):
        impl.assign_nearest(np.zeros((3, 2)), np.zeros((0, 2)))
