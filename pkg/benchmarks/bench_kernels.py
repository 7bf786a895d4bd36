"""Times the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from beamlab import _kernels_py, kernels


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    n = args.size
    rng = np.random.default_rng(0)
    v = rng.standard_normal((n, n))
    kx = rng.uniform(0.5, 1.5, (n - 1, n))
    ky = rng.uniform(0.5, 1.5, (n, n - 1))
    isg = np.ones((n, n))
    thetas = np.arange(64) * np.pi / 64
    filtered = rng.standard_normal((64, 64))
    xs = np.linspace(-0.5, 0.5, n // 2 + 1)

    cases = {
        "div_form_2d": (lambda: kernels.div_form_2d(v, kx, ky, isg, 0.01, 0.01),
                        lambda: _kernels_py.div_form_2d(v, kx, ky, isg, 0.01, 0.01)),
        "backproject": (lambda: kernels.backproject(filtered, thetas, -0.5, 1 / 64, xs, xs),
                        lambda: _kernels_py.backproject(filtered, thetas, -0.5, 1 / 64, xs, xs)),
    }
    print(f"backend: {kernels.BACKEND}, size {n}")
    print(f"{'kernel':<14}{'dispatch [ms]':>15}{'numpy [ms]':>13}{'speedup':>10}")
    for name, (fast, ref) in cases.items():
        tf, tr = _best(fast, args.repeat), _best(ref, args.repeat)
        print(f"{name:<14}{1e3 * tf:>15.2f}{1e3 * tr:>13.2f}{tr / tf:>10.1f}")


if __name__ == "__main__":
    main()
