# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled per-frame hot kernels.

Mirrors ``_kernels_np``: masked reduction passes for the likelihood
matcher and the masked bilinear zoom used by the scale search.  All
accumulation is float64 with a fixed left-to-right reduction order, so
results are reproducible run to run and worker to worker.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

BACKEND_NAME = "compiled"


def pair_sums(const double[:, ::1] p, const double[:, ::1] t,
              const cnp.uint8_t[:, ::1] mask_p, const cnp.uint8_t[:, ::1] mask_t):
    cdef Py_ssize_t i, j, rows = p.shape[0], cols = p.shape[1]
    cdef double s_p = 0.0, s_t = 0.0
    with nogil:
        for i in range(rows):
            for j in range(cols):
                if mask_p[i, j] and mask_t[i, j]:
                    s_p += p[i, j]
                    s_t += t[i, j]
    return s_p, s_t


def loglik_sums(const double[:, ::1] p, const double[:, ::1] t, const double[:, ::1] logt,
                const cnp.uint8_t[:, ::1] mask_p, const cnp.uint8_t[:, ::1] mask_t):
    cdef Py_ssize_t i, j, rows = p.shape[0], cols = p.shape[1]
    cdef double s_plogt = 0.0, s_p = 0.0, s_t = 0.0
    with nogil:
        for i in range(rows):
            for j in range(cols):
                if mask_p[i, j] and mask_t[i, j]:
                    s_plogt += p[i, j] * logt[i, j]
                    s_p += p[i, j]
                    s_t += t[i, j]
    return s_plogt, s_p, s_t


def residual_sums(const double[:, ::1] g, const double[:, ::1] u,
                  const cnp.uint8_t[:, ::1] mask_g, const cnp.uint8_t[:, ::1] mask_u):
    cdef Py_ssize_t i, j, rows = g.shape[0], cols = g.shape[1]
    cdef double s_g = 0.0, s_u = 0.0, s_uu = 0.0, s_ug = 0.0, s_gg = 0.0
    cdef double gv, uv
    with nogil:
        for i in range(rows):
            for j in range(cols):
                if mask_g[i, j] and mask_u[i, j]:
                    gv = g[i, j]
                    uv = u[i, j]
                    s_g += gv
                    s_u += uv
                    s_uu += uv * uv
                    s_ug += uv * gv
                    s_gg += gv * gv
    return s_g, s_u, s_uu, s_ug, s_gg


def zoom_bilinear(const double[:, ::1] src, const cnp.uint8_t[:, ::1] mask, double s):
    cdef Py_ssize_t rows = src.shape[0], cols = src.shape[1]
    cdef double cy = (rows - 1) / 2.0, cx = (cols - 1) / 2.0
    out_arr = np.zeros((rows, cols), dtype=np.float64)
    ok_arr = np.zeros((rows, cols), dtype=np.uint8)
    cdef double[:, ::1] out = out_arr
    cdef cnp.uint8_t[:, ::1] ok = ok_arr
    cdef Py_ssize_t i, j, y0, y1, x0, x1
    cdef double py, px, fy, fx, v
    cdef bint good
    with nogil:
        for i in range(rows):
            py = cy + (i - cy) / s
            y0 = <Py_ssize_t>floor(py)
            fy = py - y0
            y1 = y0 + 1
            for j in range(cols):
                px = cx + (j - cx) / s
                x0 = <Py_ssize_t>floor(px)
                fx = px - x0
                x1 = x0 + 1
                good = True
                # Corners with non-zero bilinear weight must be in range
                # and unmasked; zero-weight corners are ignored.
                if not _corner_ok(mask, y0, x0, (1.0 - fy) * (1.0 - fx), rows, cols):
                    good = False
                elif not _corner_ok(mask, y0, x1, (1.0 - fy) * fx, rows, cols):
                    good = False
                elif not _corner_ok(mask, y1, x0, fy * (1.0 - fx), rows, cols):
                    good = False
                elif not _corner_ok(mask, y1, x1, fy * fx, rows, cols):
                    good = False
                if good:
                    v = 0.0
                    if (1.0 - fy) * (1.0 - fx) != 0.0:
                        v += (1.0 - fy) * (1.0 - fx) * src[y0, x0]
                    if (1.0 - fy) * fx != 0.0:
                        v += (1.0 - fy) * fx * src[y0, x1]
                    if fy * (1.0 - fx) != 0.0:
                        v += fy * (1.0 - fx) * src[y1, x0]
                    if fy * fx != 0.0:
                        v += fy * fx * src[y1, x1]
                    out[i, j] = v
                    ok[i, j] = 1
    return out_arr, ok_arr.astype(bool)


cdef inline bint _corner_ok(const cnp.uint8_t[:, ::1] mask, Py_ssize_t y, Py_ssize_t x,
                            double w, Py_ssize_t rows, Py_ssize_t cols) nogil:
    if w == 0.0:
        return True
    if y < 0 or y >= rows or x < 0 or x >= cols:
        return False
    return mask[y, x] != 0
