# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the stencil and back-projection loops."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, floor

ctypedef fused scalar:
    double
    double complex


def div_form_2d(scalar[:, ::1] v, double[:, ::1] kx, double[:, ::1] ky,
                double[:, ::1] inv_sqrt_g, double dx, double dy):
    cdef Py_ssize_t nx = v.shape[0], ny = v.shape[1], i, j
    cdef double idx2 = 1.0 / (dx * dx), idy2 = 1.0 / (dy * dy)
    if scalar is double:
        out_arr = np.empty((nx - 2, ny - 2), dtype=np.float64)
    else:
        out_arr = np.empty((nx - 2, ny - 2), dtype=np.complex128)
    cdef scalar[:, ::1] out = out_arr
    cdef scalar c
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            c = v[i, j]
            out[i - 1, j - 1] = inv_sqrt_g[i, j] * (
                (kx[i, j] * (v[i + 1, j] - c) - kx[i - 1, j] * (c - v[i - 1, j])) * idx2
                + (ky[i, j] * (v[i, j + 1] - c) - ky[i, j - 1] * (c - v[i, j - 1])) * idy2)
    return out_arr


def backproject(double[:, ::1] filtered, double[::1] thetas, double s0, double ds,
                double[::1] xs, double[::1] ys):
    cdef Py_ssize_t na = filtered.shape[0], nb = filtered.shape[1]
    cdef Py_ssize_t nx = xs.shape[0], ny = ys.shape[0], k, i, j, i0
    cdef double ct, st, pos, w
    out_arr = np.zeros((nx, ny), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for k in range(na):
        ct = cos(thetas[k])
        st = sin(thetas[k])
        for i in range(nx):
            for j in range(ny):
                pos = (xs[i] * ct + ys[j] * st - s0) / ds
                i0 = <Py_ssize_t>floor(pos)
                if i0 < 0 or i0 >= nb - 1:
                    continue
                w = pos - i0
                out[i, j] += (1.0 - w) * filtered[k, i0] + w * filtered[k, i0 + 1]
    return out_arr
