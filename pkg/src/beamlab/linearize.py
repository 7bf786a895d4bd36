"""epsilon-differentiation of simulated DtN data and integral identities.

The mixed k-th derivative of the boundary map at zero uses the tensor
central stencil with all epsilons equal,

    d^k Lambda / d eps_1 .. d eps_k  ~  (2 eps)^{-k} sum_{sigma in {+-1}^k} (prod sigma) Lambda(eps sum sigma_i h_i),

which costs 2^k forward solves and has O(eps^2) error. Richardson over the
ladder removes the leading term.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigInvalid, GridMismatch, LadderInconsistent
from .fields import ScalarField
from .forward import (BoundarySignal, Coefficients, DtnTrace, Grid, LaplaceBeltrami, WaveField, _same_grid,
                      boundary_integral, combine_signals, dtn, solve_forward)

DEFAULT_LADDER = (1e-2, 5e-3, 2.5e-3)


@dataclass(frozen=True, eq=False)
class DtnDerivative:
    order: int
    signals: tuple
    ladder: tuple
    trace: DtnTrace
    richardson_error: float
    raw: tuple = ()  # raw central-difference traces per rung
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.trace.grid


def _mixed_difference(coeffs, signals, eps, grid, jobs, storage="trace"):
    k = len(signals)
    patterns = list(itertools.product((1, -1), repeat=k))

    def run(sig):
        h = combine_signals(signals, [eps * s for s in sig])
        return dtn(solve_forward(coeffs, h, grid=grid, storage=storage, budget=_budget(signals, eps, grid)), coeffs)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(run, patterns))
    else:
        traces = [run(p) for p in patterns]
    scale = 1.0 / (2.0 * eps) ** k
    out = {}
    # fixed summation order keeps the reduction deterministic
    for face in grid.faces():
        acc = 0.0
        for sig, tr in zip(patterns, traces):
            acc = acc + float(np.prod(sig)) * tr.faces[face]
        out[face] = scale * acc
    return DtnTrace(grid=grid, faces=out, meta={"eps": eps})


def _budget(signals, eps, grid):
    amp = sum(s.amplitude(grid) for s in signals) * eps
    return max(amp, 1e-300)


def dtn_derivative(coeffs: Coefficients, h_list: Sequence[BoundarySignal], order: Optional[int] = None,
                   eps0: Optional[float] = None, *, grid: Grid, ladder: Optional[Sequence[float]] = None,
                   jobs: int = 1, tolerance_factor: float = 10.0) -> DtnDerivative:
    """k-th mixed derivative of the DtN map at zero in the directions ``h_list``."""
    h_list = list(h_list)
    k = len(h_list) if order is None else int(order)
    if k != len(h_list):
        raise ConfigInvalid(f"order {k} needs {k} input signals, got {len(h_list)}", "linearize/h_list")
    if not 1 <= k <= 4:
        raise ConfigInvalid("orders 1..4 are supported", "linearize/order")
    if ladder is None:
        ladder = DEFAULT_LADDER if eps0 is None else (eps0, eps0 / 2, eps0 / 4)
    ladder = tuple(float(e) for e in ladder)
    if len(ladder) < 2 or any(ladder[i + 1] >= ladder[i] for i in range(len(ladder) - 1)):
        raise ConfigInvalid("epsilon ladder must be strictly decreasing with at least two rungs", "linearize/ladder")
    raw = [_mixed_difference(coeffs, h_list, e, grid, jobs) for e in ladder]
    ext = []
    for a, b, ea, eb in zip(raw[:-1], raw[1:], ladder[:-1], ladder[1:]):
        r = (ea / eb) ** 2
        ext.append(DtnTrace(grid, {f: (r * b.faces[f] - a.faces[f]) / (r - 1.0) for f in a.faces}))
    best = ext[-1]
    scale = max(best.l2(), raw[-1].l2(), 1e-300)
    if len(ext) > 1:
        err = (ext[-1] - ext[-2]).l2()
        predicted = (raw[-1] - raw[-2]).l2()
        floor = 1e-12 * max(r.l2() for r in raw)
        if err > tolerance_factor * max(predicted, floor):
            raise LadderInconsistent(
                f"Richardson extrapolants disagree by {err:.3g}, more than {tolerance_factor:g}x "
                f"the raw ladder difference {predicted:.3g}")
    else:
        err = (raw[-1] - raw[-2]).l2()
    return DtnDerivative(order=k, signals=tuple(h_list), ladder=ladder, trace=best, richardson_error=float(err),
                         raw=tuple(raw), meta={"grid": grid.spec(), "model": coeffs.to_spec()})


# --------------------------------------------------------------------------
# quadrature helpers
# --------------------------------------------------------------------------


def spacetime_weights(grid: Grid) -> np.ndarray:
    """Trapezoid weights of dV_g dt on the solver lattice, shape (nt+1, *shape)."""
    sg = np.sqrt(np.linalg.det(grid.metric.g(grid.coords())))
    return np.multiply.outer(grid.time_weights(), grid.volume_weights() * sg)


def laplacian_field(field_: WaveField) -> np.ndarray:
    """Discrete Laplace-Beltrami of every time level, edges filled by linear extrapolation."""
    g = field_.grid
    op = LaplaceBeltrami.build(g)
    out = np.empty(field_.u.shape, dtype=field_.u.dtype)
    inner = tuple(slice(1, -1) for _ in range(g.dim))
    for k in range(field_.u.shape[0]):
        lap = np.zeros(g.shape, dtype=field_.u.dtype)
        lap[inner] = op.apply(field_.u[k])
        for ax in range(g.dim):
            lo = [slice(None)] * g.dim
            l1 = [slice(None)] * g.dim
            l2 = [slice(None)] * g.dim
            lo[ax], l1[ax], l2[ax] = 0, 1, 2
            lap[tuple(lo)] = 2 * lap[tuple(l1)] - lap[tuple(l2)]
            lo[ax], l1[ax], l2[ax] = -1, -2, -3
            lap[tuple(lo)] = 2 * lap[tuple(l1)] - lap[tuple(l2)]
        out[k] = lap
    return out


def spatial_gradient(u: np.ndarray, grid: Grid) -> list:
    """Second-order gradient of a (nt+1, *shape) array along each spatial axis."""
    if grid.dim == 1:
        return [np.gradient(u, grid.dx[0], axis=1, edge_order=2)]
    return list(np.gradient(u, *grid.dx, axis=tuple(range(1, grid.dim + 1)), edge_order=2))


def metric_inner(grad_a: list, grad_b: list, grid: Grid) -> np.ndarray:
    ginv = grid.metric.g_inv(grid.coords())
    total = 0.0
    for i in range(grid.dim):
        for j in range(grid.dim):
            gij = ginv[..., i, j]
            if np.any(gij != 0):
                total = total + gij[None] * grad_a[i] * grad_b[j]
    return total


def _check_fields(*fields_) -> Grid:
    g = fields_[0].grid
    for f in fields_[1:]:
        _same_grid(g, f.grid)
    for f in fields_:
        if f.storage != "full":
            raise GridMismatch("integral identities need full-storage fields")
    return g


# --------------------------------------------------------------------------
# integral identities
# --------------------------------------------------------------------------


def integral_identity_L1(coeffs_pair, v1: WaveField, w: WaveField) -> complex:
    """int [(a2 - a1) w L(v1) + (c1_2 - c1_1) w v1] dV dt on the common lattice."""
    c1m, c2m = coeffs_pair
    g = _check_fields(v1, w)
    X = g.coords()
    da = c2m.a(X) - c1m.a(X)
    dc = c2m.ck(1)(X) - c1m.ck(1)(X)
    if not np.any(da) and not np.any(dc):
        return 0j
    integrand = 0.0
    if np.any(da):
        integrand = integrand + da[None] * w.u * laplacian_field(v1)
    if np.any(dc):
        integrand = integrand + dc[None] * w.u * v1.u
    return complex(np.sum(integrand * spacetime_weights(g)))


def integral_identity_Lk(coeffs_pair, k: int, w: WaveField, fields_: Sequence[WaveField]) -> complex:
    """int w (c_k,2 - c_k,1) u1 ... uk dV dt."""
    if k < 3:
        raise ConfigInvalid("integral_identity_Lk needs k >= 3", "linearize/k")
    fields_ = list(fields_)
    if len(fields_) != k:
        raise ConfigInvalid(f"need {k} fields, got {len(fields_)}", "linearize/fields")
    g = _check_fields(w, *fields_)
    X = g.coords()
    dc = coeffs_pair[1].ck(k)(X) - coeffs_pair[0].ck(k)(X)
    if not np.any(dc):
        return 0j
    prod = w.u * dc[None]
    for f in fields_:
        prod = prod * f.u
    return complex(np.sum(prod * spacetime_weights(g)))


def compute_I2_from_boundary(a: ScalarField, g0: BoundarySignal, lambda12) -> complex:
    """Data-side I2 = -int_0^T int_dM a g0 Lambda^(12) dS dt."""
    trace = lambda12.trace if isinstance(lambda12, DtnDerivative) else lambda12
    if isinstance(lambda12, DtnDerivative) and lambda12.order != 2:
        raise ConfigInvalid("compute_I2_from_boundary needs an order-2 derivative", "linearize/lambda12")
    grid = trace.grid
    weights = {}
    for face in grid.faces():
        xf = grid.face_coords(face)
        weights[face] = np.array([a(xf) * np.asarray(g0(t, xf)) for t in grid.times])
    return -boundary_integral(grid, weights, trace)


def volume_I2(coeffs: Coefficients, v1: WaveField, v2: WaveField, w: WaveField) -> complex:
    """Volume side of the second-order identity.

    With F = b2 u^2 and G = c2 u^2 / 2 and w the backward solution,
    ``I2 = int [c2 v1 v2 w - <grad(a w), grad(2 b2 v1 v2)>_g] dV dt``.
    """
    g = _check_fields(v1, v2, w)
    X = g.coords()
    prod = v1.u * v2.u
    total = 0.0
    c2 = coeffs.ck(2)(X)
    if np.any(c2):
        total = total + c2[None] * prod * w.u
    b = coeffs.b_n(X) if coeffs.n == 2 else np.zeros(g.shape)
    if np.any(b):
        wt = coeffs.a(X)[None] * w.u
        S = 2.0 * b[None] * prod
        total = total - metric_inner(spatial_gradient(wt, g), spatial_gradient(S, g), g)
    if np.isscalar(total):
        return 0j
    return complex(np.sum(total * spacetime_weights(g)))
