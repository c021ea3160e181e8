"""Pure numpy implementations of the geometric kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference route in the backend-agreement tests and the benchmark.
"""
import numpy as np


def pairwise_sqdist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    out = diff[..., 0] * diff[..., 0]
    for j in range(1, a.shape[1]):
        out = out + diff[..., j] * diff[..., j]
    return out


def knn_indices(points, k, include_self=True):
    points = np.ascontiguousarray(points, dtype=np.float64)
    n = points.shape[0]
    if k > n - (0 if include_self else 1):
        raise ValueError(f"k={k} too large for {n} points")
    d2 = pairwise_sqdist(points, points)
    if not include_self:
        np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, :k], dtype=np.int64)


def assign_nearest(points, centers):
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    if centers.shape[0] == 0:
        raise ValueError("no centers to assign to")
    return np.argmin(pairwise_sqdist(points, centers), axis=1).astype(np.int64)


def inside_oriented(points, centers, sizes, yaws, assignment):
    points = np.asarray(points, dtype=np.float64)
    assignment = np.asarray(assignment, dtype=np.int64)
    rel = points - centers[assignment]
    c = np.cos(yaws[assignment])
    s = np.sin(yaws[assignment])
    local = rel.copy()
    # rotate by -yaw in the first two axes
    local[:, 0] = c * rel[:, 0] + s * rel[:, 1]
    local[:, 1] = -s * rel[:, 0] + c * rel[:, 1]
    half = 0.5 * sizes[assignment]
    return np.all(np.abs(local) <= half, axis=1).astype(np.int8)
