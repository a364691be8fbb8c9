"""NumPy implementations of the per-frame hot kernels.

These are the fallback used when the compiled extension is unavailable
(or disabled via ``FXI_SORT_BACKEND=numpy``).  Each function mirrors the
signature and semantics of its compiled counterpart in ``_core``.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def pair_sums(p, t, mask_p, mask_t):
    """Sums of ``p`` and ``t`` over the intersection of both masks."""
    m = np.logical_and(mask_p, mask_t)
    return (
        float(p.sum(dtype=np.float64, where=m)),
        float(t.sum(dtype=np.float64, where=m)),
    )


def loglik_sums(p, t, logt, mask_p, mask_t):
    """Poisson log-likelihood ingredients over the shared mask.

    Returns ``(sum of p*log t, sum of p, sum of t)`` with all accumulation
    in float64.
    """
    m = np.logical_and(mask_p, mask_t)
    s_plogt = float((p * logt).sum(dtype=np.float64, where=m))
    s_p = float(p.sum(dtype=np.float64, where=m))
    s_t = float(t.sum(dtype=np.float64, where=m))
    return s_plogt, s_p, s_t


def residual_sums(g, u, mask_g, mask_u):
    """Moment sums for the normalized matching residual.

    Returns ``(sum g, sum u, sum u*u, sum u*g, sum g*g)`` over the mask
    intersection.
    """
    m = np.logical_and(mask_g, mask_u)
    s_g = float(g.sum(dtype=np.float64, where=m))
    s_u = float(u.sum(dtype=np.float64, where=m))
    s_uu = float((u * u).sum(dtype=np.float64, where=m))
    s_ug = float((u * g).sum(dtype=np.float64, where=m))
    s_gg = float((g * g).sum(dtype=np.float64, where=m))
    return s_g, s_u, s_uu, s_ug, s_gg


def zoom_bilinear(src, mask, s):
    """Zoom ``src`` by factor ``s`` about the frame centre, bilinearly.

    ``s > 1`` magnifies.  Output pixels whose source neighbourhood leaves
    the frame, or touches a masked pixel with non-zero weight, come back
    masked and zero.  Returns ``(zoomed, zoomed_mask)``.
    """
    mask = np.asarray(mask, dtype=bool)
    rows, cols = src.shape
    cy = (rows - 1) / 2.0
    cx = (cols - 1) / 2.0

    def axis_coords(n, c):
        pos = c + (np.arange(n) - c) / s
        lo = np.floor(pos)
        frac = pos - lo
        lo = lo.astype(np.int64)
        hi = lo + 1
        # The low neighbour always carries weight 1-frac > 0; the high one
        # only participates when frac > 0.  Out-of-range neighbours with
        # zero weight are parked in range and ignored.
        ok_lo = (lo >= 0) & (lo < n)
        ok_hi = ((hi >= 0) & (hi < n)) | (frac == 0.0)
        return np.clip(lo, 0, n - 1), np.clip(hi, 0, n - 1), frac, ok_lo, ok_hi

    y0, y1, fy, oky0, oky1 = axis_coords(rows, cy)
    x0, x1, fx, okx0, okx1 = axis_coords(cols, cx)

    wy0, wy1 = (1.0 - fy)[:, None], fy[:, None]
    wx0, wx1 = (1.0 - fx)[None, :], fx[None, :]

    v00 = src[np.ix_(y0, x0)]
    v01 = src[np.ix_(y0, x1)]
    v10 = src[np.ix_(y1, x0)]
    v11 = src[np.ix_(y1, x1)]
    out = wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11)

    def corner_ok(my, mx, valid, w):
        # A corner is acceptable if its weight vanishes or it is a valid,
        # unmasked, in-bounds source pixel.
        return (w == 0.0) | (valid & mask[np.ix_(my, mx)])

    ok = (
        corner_ok(y0, x0, (oky0[:, None] & okx0[None, :]), wy0 * wx0)
        & corner_ok(y0, x1, (oky0[:, None] & okx1[None, :]), wy0 * wx1)
        & corner_ok(y1, x0, (oky1[:, None] & okx0[None, :]), wy1 * wx0)
        & corner_ok(y1, x1, (oky1[:, None] & okx1[None, :]), wy1 * wx1)
    )
    out[~ok] = 0.0
    return out, ok
