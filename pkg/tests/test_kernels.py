import numpy as np
import pytest

from beamlab import _kernels_py, kernels

compiled = pytest.mark.skipif(kernels._c is None, reason="compiled kernels not built")


def _inputs(rng, n, m):
    # face coefficients live on midpoints: (n-1, m) and (n, m-1)
    kx = rng.uniform(0.5, 1.5, (n - 1, m))
    ky = rng.uniform(0.5, 1.5, (n, m - 1))
    isg = rng.uniform(0.8, 1.2, (n, m))
    return kx, ky, isg


@compiled
@pytest.mark.parametrize("dtype", [float, complex])
def test_div_form_backends_agree(rng, dtype):
    n, m = 17, 13
    v = rng.standard_normal((n, m)).astype(dtype)
    if dtype is complex:
        v = v + 1j * rng.standard_normal((n, m))
    kx, ky, isg = _inputs(rng, n, m)
    got = kernels.div_form_2d(v, kx, ky, isg, 0.1, 0.2)
    ref = _kernels_py.div_form_2d(v, kx, ky, isg, 0.1, 0.2)
    assert np.max(np.abs(got - ref)) <= 1e-12 * np.max(np.abs(ref))


@compiled
def test_backprojection_backends_agree(rng):
    thetas = np.arange(16) * np.pi / 16
    filtered = rng.standard_normal((16, 24))
    xs = np.linspace(-0.4, 0.4, 11)
    got = kernels.backproject(filtered, thetas, -0.5, 1 / 24, xs, xs)
    ref = _kernels_py.backproject(filtered, thetas, -0.5, 1 / 24, xs, xs)
    assert np.max(np.abs(got - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


def test_pure_python_switch_forces_fallback():
    import subprocess
    import sys

    code = "from beamlab.kernels import BACKEND; print(BACKEND)"
    env = {"BEAMLAB_PURE_PYTHON": "1", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
