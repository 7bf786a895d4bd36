"""Kernel dispatch: the compiled extension when importable, numpy otherwise.

Set ``BEAMLAB_PURE_PYTHON=1`` to force the numpy path.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_c = None
if os.environ.get("BEAMLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _c  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _c = None


def div_form_2d(v, kx, ky, inv_sqrt_g, dx, dy):
    if _c is None:
        return _kernels_py.div_form_2d(v, kx, ky, inv_sqrt_g, dx, dy)
    v = np.ascontiguousarray(v)
    if v.dtype not in (np.float64, np.complex128):
        v = v.astype(np.complex128 if np.iscomplexobj(v) else np.float64)
    return _c.div_form_2d(v, np.ascontiguousarray(kx, dtype=float), np.ascontiguousarray(ky, dtype=float),
                          np.ascontiguousarray(inv_sqrt_g, dtype=float), float(dx), float(dy))


def backproject(filtered, thetas, s0, ds, xs, ys):
    if _c is None or np.iscomplexobj(filtered):
        return _kernels_py.backproject(filtered, thetas, s0, ds, xs, ys)
    return _c.backproject(np.ascontiguousarray(filtered, dtype=float), np.ascontiguousarray(thetas, dtype=float),
                          float(s0), float(ds), np.ascontiguousarray(xs, dtype=float),
                          np.ascontiguousarray(ys, dtype=float))
