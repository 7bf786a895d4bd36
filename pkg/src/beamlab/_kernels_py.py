"""Numpy reference implementations of the hot loops in ``_ckernels``."""
import numpy as np


def div_form_2d(v, kx, ky, inv_sqrt_g, dx, dy):
    """Interior values of ``inv_sqrt_g * (d_x(kx d_x v) + d_y(ky d_y v))``.

    ``kx`` lives on x-midpoints (nx-1, ny), ``ky`` on y-midpoints (nx, ny-1).
    """
    fx = kx * (v[1:, :] - v[:-1, :])
    fy = ky * (v[:, 1:] - v[:, :-1])
    out = (fx[1:, 1:-1] - fx[:-1, 1:-1]) / (dx * dx) + (fy[1:-1, 1:] - fy[1:-1, :-1]) / (dy * dy)
    return out * inv_sqrt_g[1:-1, 1:-1]


def backproject(filtered, thetas, s0, ds, xs, ys):
    """Sum over angles of the linearly interpolated filtered projections at x cos + y sin."""
    nb = filtered.shape[1]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    out = np.zeros(X.shape, dtype=filtered.dtype)
    for k, th in enumerate(thetas):
        pos = (X * np.cos(th) + Y * np.sin(th) - s0) / ds
        i0 = np.floor(pos).astype(np.int64)
        w = pos - i0
        ok = (i0 >= 0) & (i0 < nb - 1)
        i0c = np.clip(i0, 0, nb - 2)
        row = filtered[k]
        vals = (1.0 - w) * row[i0c] + w * row[i0c + 1]
        out += np.where(ok, vals, 0.0)
    return out
