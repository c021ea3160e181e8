# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometric kernels: k-nearest neighbours, nearest-center box
assignment and point-in-oriented-box tests.

Same contracts and tie-breaking as ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, fabs, INFINITY

cnp.import_array()


cdef inline double _sqdist(const double[:, ::1] a, Py_ssize_t i,
                           const double[:, ::1] b, Py_ssize_t j,
                           Py_ssize_t d) noexcept nogil:
    cdef double acc = 0.0, diff
    cdef Py_ssize_t q
    for q in range(d):
        diff = a[i, q] - b[j, q]
        acc = acc + diff * diff
    return acc


def knn_indices(points, Py_ssize_t k, bint include_self=True):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1]
    if k > n - (0 if include_self else 1):
        raise ValueError(f"k={k} too large for {n} points")
    out_arr = np.empty((n, k), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef double[::1] best = np.empty(max(k, 1), dtype=np.float64)
    cdef Py_ssize_t i, j, m, filled
    cdef double dist
    with nogil:
        for i in range(n):
            filled = 0
            for j in range(n):
                if j == i and not include_self:
                    continue
                dist = _sqdist(p, i, p, j, d)
                if filled < k:
                    m = filled
                    filled += 1
                elif dist < best[k - 1]:
                    m = k - 1
                else:
                    continue
                # strict comparison keeps lower indices first on ties
                while m > 0 and dist < best[m - 1]:
                    best[m] = best[m - 1]
                    out[i, m] = out[i, m - 1]
                    m -= 1
                best[m] = dist
                out[i, m] = j
    return out_arr


def assign_nearest(points, centers):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], m = c.shape[0], d = p.shape[1]
    if m == 0:
        raise ValueError("no centers to assign to")
    out_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t i, j, best_j
    cdef double dist, best
    with nogil:
        for i in range(n):
            best = INFINITY
            best_j = 0
            for j in range(m):
                dist = _sqdist(p, i, c, j, d)
                if dist < best:
                    best = dist
                    best_j = j
            out[i] = best_j
    return out_arr


def inside_oriented(points, centers, sizes, yaws, assignment):
    cdef const double[:, ::1] p = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, ::1] c = np.ascontiguousarray(centers, dtype=np.float64)
    cdef const double[:, ::1] sz = np.ascontiguousarray(sizes, dtype=np.float64)
    cdef const double[::1] yw = np.ascontiguousarray(yaws, dtype=np.float64)
    cdef const cnp.int64_t[::1] a = np.ascontiguousarray(assignment, dtype=np.int64)
    cdef Py_ssize_t n = p.shape[0], d = p.shape[1]
    out_arr = np.empty(n, dtype=np.int8)
    cdef cnp.int8_t[::1] out = out_arr
    cdef Py_ssize_t i, q, b
    cdef double rx, ry, cs, sn, lx, ly
    cdef bint inside
    with nogil:
        for i in range(n):
            b = a[i]
            rx = p[i, 0] - c[b, 0]
            ry = p[i, 1] - c[b, 1]
            cs = cos(yw[b])
            sn = sin(yw[b])
            lx = cs * rx + sn * ry
            ly = -sn * rx + cs * ry
            inside = fabs(lx) <= 0.5 * sz[b, 0] and fabs(ly) <= 0.5 * sz[b, 1]
            q = 2
            while inside and q < d:
                inside = fabs(p[i, q] - c[b, q]) <= 0.5 * sz[b, q]
                q += 1
            out[i] = 1 if inside else 0
    return out_arr
