"""Metrics, geodesics, Fermi charts and null-vector combinatorics.

Conventions
-----------
The wave operator is ``d_t^2 - a * Laplace_g``. Its characteristics are the
null curves of ``-dt^2 + g/a``, so null geodesics are unit-speed geodesics of
the *optical* metric ``g/a`` (``Metric.optical``). In the Fermi chart the
space-time point is recovered from ``(s, z1, y)`` by

    t = t0 + s - z1/2,    r = s + z1/2,    x = X(r, y)

where ``X`` is a second-order Fermi map around the optical geodesic
``gamma``. On the axis the chart metric is ``2 ds dz1 + sum dy_i^2``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.spatial import cKDTree

from .errors import (
    ConfigInvalid,
    InfeasibleSeed,
    NonUnitTangent,
    OutOfRange,
    StepTooLarge,
    TubeTooWide,
)
from .fields import ScalarField

_FD_STEP = 1e-4


# --------------------------------------------------------------------------
# metric
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Metric:
    """Riemannian metric ``g`` plus speed factor ``a`` on a box."""

    dim: int
    lo: np.ndarray
    hi: np.ndarray
    g_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    a_fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    kind: str = "flat"
    constant_g: Optional[np.ndarray] = None
    constant_a: Optional[float] = None
    descriptor: dict = field(default_factory=dict)

    # -- evaluation -------------------------------------------------------
    def g(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant_g is not None:
            return np.broadcast_to(self.constant_g, x.shape[:-1] + (self.dim, self.dim)).copy()
        return self.g_fn(x)

    def g_inv(self, x) -> np.ndarray:
        return np.linalg.inv(self.g(x))

    def a(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant_a is not None:
            return np.full(x.shape[:-1], self.constant_a)
        return np.asarray(self.a_fn(x), dtype=float)

    def sqrt_det_g(self, x) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.g(x)))

    def norm(self, x, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.sqrt(np.einsum("...i,...ij,...j->...", v, self.g(x), v))

    @property
    def is_constant(self) -> bool:
        """True when g is constant (the a factor is irrelevant for g-geodesics)."""
        return self.constant_g is not None

    @property
    def optical_is_constant(self) -> bool:
        return self.constant_g is not None and self.constant_a is not None

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def boundary_violation(self, x) -> np.ndarray:
        """Largest signed distance outside the box (<= 0 inside)."""
        x = np.asarray(x, dtype=float)
        return np.max(np.maximum(self.lo - x, x - self.hi), axis=-1)

    # -- derivatives ------------------------------------------------------
    def dg(self, x, h: float = _FD_STEP) -> np.ndarray:
        """``out[..., k, i, j] = d_k g_ij`` by fourth-order central differences."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1] + (self.dim, self.dim, self.dim)
        if self.constant_g is not None:
            return np.zeros(shape)
        d = self.dim
        steps = np.array([2.0, 1.0, -1.0, -2.0]) * h
        offs = (steps[:, None, None] * np.eye(d)[None]).reshape(4 * d, d)  # (4d, d)
        vals = self.g(x[..., None, :] + offs)  # (..., 4d, d, d)
        vals = vals.reshape(x.shape[:-1] + (4, d, d, d))
        out = (-vals[..., 0, :, :, :] + 8 * vals[..., 1, :, :, :] - 8 * vals[..., 2, :, :, :]
               + vals[..., 3, :, :, :]) / (12 * h)
        return out

    def christoffel(self, x, h: float = _FD_STEP) -> np.ndarray:
        """``out[..., k, i, j] = Gamma^k_ij``."""
        x = np.asarray(x, dtype=float)
        if self.constant_g is not None:
            return np.zeros(x.shape[:-1] + (self.dim,) * 3)
        return np.einsum("...kl,...lij->...kij", self.g_inv(x), _lowered_christoffel(self.dg(x, h)))

    def hamiltonian_rhs(self, x, p):
        """Geodesic flow of H = 1/2 p^T g^{-1} p."""
        ginv = self.g_inv(x)
        xdot = np.einsum("...ij,...j->...i", ginv, p)
        if self.constant_g is not None:
            return xdot, np.zeros_like(p)
        dg = self.dg(x)
        # d_k g^{-1} = -g^{-1} (d_k g) g^{-1}; p^T d_k g^{-1} p = -xdot^T d_k g xdot
        pdot = 0.5 * np.einsum("...i,...kij,...j->...k", xdot, dg, xdot)
        return xdot, pdot

    # -- derived metrics --------------------------------------------------
    def optical(self) -> "Metric":
        """The metric g/a whose unit-speed geodesics carry null bicharacteristics."""
        g_fn, a_fn = self.g, self.a
        cg = None
        if self.constant_g is not None and self.constant_a is not None:
            cg = self.constant_g / self.constant_a
        return Metric(
            dim=self.dim,
            lo=self.lo,
            hi=self.hi,
            g_fn=lambda x: g_fn(x) / a_fn(x)[..., None, None],
            a_fn=lambda x: np.ones(np.shape(x)[:-1]),
            kind="optical",
            constant_g=cg,
            constant_a=1.0,
            descriptor={"optical_of": self.descriptor},
        )

    def with_speed(self, a: ScalarField) -> "Metric":
        a = ScalarField.from_spec(a)
        desc = dict(self.descriptor)
        desc["a"] = a.to_spec()
        return Metric(
            dim=self.dim,
            lo=self.lo,
            hi=self.hi,
            g_fn=self.g_fn,
            a_fn=a,
            kind=self.kind,
            constant_g=self.constant_g,
            constant_a=float(a.spec["value"]) if a.is_constant else None,
            descriptor=desc,
        )


def _lowered_christoffel(dg: np.ndarray) -> np.ndarray:
    """``out[..., l, i, j] = 1/2 (d_i g_lj + d_j g_li - d_l g_ij)`` from ``dg[..., k, i, j]``."""
    t1 = np.einsum("...ilj->...lij", dg)  # d_i g_lj
    t2 = np.einsum("...jli->...lij", dg)  # d_j g_li
    return 0.5 * (t1 + t2 - dg)


def _box(domain, dim: int, path: str):
    if isinstance(domain, dict):
        lo, hi = np.asarray(domain["lo"], float), np.asarray(domain["hi"], float)
    else:
        arr = np.asarray(domain, dtype=float)
        if arr.shape == (2,):
            arr = np.tile(arr, (dim, 1))
        if arr.shape != (dim, 2):
            raise ConfigInvalid(f"domain must be {dim} [lo, hi] pairs", path)
        lo, hi = arr[:, 0], arr[:, 1]
    if lo.shape != (dim,) or np.any(hi <= lo):
        raise ConfigInvalid("domain must have lo < hi in every axis", path)
    return lo, hi


def flat_metric(dim: int = 2, lo=0.0, hi=1.0, a: float | dict = 1.0) -> Metric:
    return metric_from_descriptor(
        {"dim": dim, "domain": [[lo, hi]] * dim if np.isscalar(lo) else [list(p) for p in zip(lo, hi)],
         "kind": "flat", "a": a}
    )


def conformal_metric(a, dim: int = 2, lo=0.0, hi=1.0, g_factor=None) -> Metric:
    desc = {"dim": dim, "domain": [[lo, hi]] * dim, "kind": "conformal", "a": a}
    if g_factor is not None:
        desc["g_factor"] = g_factor
    return metric_from_descriptor(desc)


def metric_from_descriptor(desc: dict, base_dir: Optional[Path] = None, path: str = "metric") -> Metric:
    """Build a Metric from ``{"dim", "domain", "kind", ...}``."""
    if not isinstance(desc, dict):
        raise ConfigInvalid("metric descriptor must be an object", path)
    try:
        dim = int(desc["dim"])
        kind = desc["kind"]
    except KeyError as exc:
        raise ConfigInvalid(f"missing key {exc.args[0]!r}", path) from None
    if dim not in (1, 2, 3):
        raise ConfigInvalid("dim must be 1, 2 or 3", path + "/dim")
    lo, hi = _box(desc.get("domain", [0.0, 1.0]), dim, path + "/domain")
    eye = np.eye(dim)

    if kind in ("flat", "conformal"):
        a = ScalarField.from_spec(desc.get("a", 1.0), path + "/a")
        if kind == "flat" and "g_factor" in desc:
            raise ConfigInvalid("flat metrics take no g_factor", path)
        if kind == "flat" or "g_factor" not in desc:
            g_fn = lambda x: np.broadcast_to(eye, np.shape(x)[:-1] + (dim, dim)).copy()  # noqa: E731
            constant_g = eye.copy()
        else:
            factor = ScalarField.from_spec(desc["g_factor"], path + "/g_factor")
            g_fn = lambda x: factor(x)[..., None, None] * eye  # noqa: E731
            constant_g = None
        return Metric(
            dim=dim,
            lo=lo,
            hi=hi,
            g_fn=g_fn,
            a_fn=a,
            kind=kind,
            constant_g=constant_g,
            constant_a=float(a.spec["value"]) if a.is_constant else None,
            descriptor=dict(desc),
        )
    if kind == "grid":
        file = desc.get("file")
        if file is None:
            raise ConfigInvalid("grid metric needs 'file'", path)
        fpath = Path(file)
        if not fpath.is_absolute() and base_dir is not None:
            fpath = Path(base_dir) / fpath
        return _grid_metric(fpath, dim, lo, hi, desc, path)
    raise ConfigInvalid(f"unknown metric kind {kind!r}", path + "/kind")


def _grid_metric(fpath: Path, dim: int, lo, hi, desc: dict, path: str) -> Metric:
    try:
        with open(fpath, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigInvalid(f"cannot read grid file: {exc}", path + "/file") from None
    header = [h.strip() for h in rows[0]]
    want = [f"x{i + 1}" for i in range(dim)]
    want += [f"g{i + 1}{j + 1}" for i in range(dim) for j in range(dim)] + ["a"]
    if header != want:
        raise ConfigInvalid(f"grid header must be {','.join(want)}", path + "/file")
    data = np.array(rows[1:], dtype=float)
    axes = [np.unique(data[:, i]) for i in range(dim)]
    shape = tuple(len(ax) for ax in axes)
    if int(np.prod(shape)) != len(data):
        raise ConfigInvalid("grid rows must form a full tensor grid", path + "/file")
    order = np.lexsort(tuple(data[:, i] for i in reversed(range(dim))))
    data = data[order]
    method = "cubic" if min(shape) >= 4 else "linear"
    comps = data[:, dim:].reshape(shape + (dim * dim + 1,))
    interp = RegularGridInterpolator(axes, comps, method=method, bounds_error=False, fill_value=None)

    def g_fn(x):
        vals = interp(np.asarray(x).reshape(-1, dim))[:, : dim * dim]
        g = vals.reshape(np.shape(x)[:-1] + (dim, dim))
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def a_fn(x):
        return interp(np.asarray(x).reshape(-1, dim))[:, -1].reshape(np.shape(x)[:-1])

    return Metric(dim=dim, lo=lo, hi=hi, g_fn=g_fn, a_fn=a_fn, kind="grid", descriptor=dict(desc))


# --------------------------------------------------------------------------
# geodesics
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Geodesic:
    """Samples of a unit-speed geodesic; ``t`` may start below zero.

    ``entry_time`` and ``exit_time`` bracket the portion inside the box; samples
    beyond them exist only when the trace was extended on purpose.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    frame: np.ndarray  # (n, d, d-1), parallel transported
    entry_time: float
    exit_time: float
    start: tuple
    metric: Metric = field(repr=False)
    affine: bool = False

    @property
    def samples(self):
        return list(zip(self.t, self.x, self.v))

    def speed_drift(self) -> float:
        return float(np.max(np.abs(self.metric.norm(self.x, self.v) - 1.0)))

    def point(self, t) -> np.ndarray:
        return _AxisSpline.from_geodesic(self).x(t)


def _gram_schmidt_frame(metric: Metric, x, v) -> np.ndarray:
    """Orthonormal (in ``metric``) basis of the complement of ``v``; shape (d, d-1)."""
    d = metric.dim
    gx = metric.g(x)
    vecs = [np.asarray(v, dtype=float)]
    basis = []
    for e in np.eye(d):
        w = e.copy()
        for u in vecs + basis:
            w = w - (u @ gx @ w) / (u @ gx @ u) * u
        n = math.sqrt(max(w @ gx @ w, 0.0))
        if n > 1e-8:
            basis.append(w / n)
        if len(basis) == d - 1:
            break
    return np.array(basis).T.reshape(d, d - 1)


def _flow_rhs(metric: Metric, x, p, frame):
    """Hamiltonian geodesic flow plus parallel transport of the frame."""
    ginv = np.linalg.inv(metric.g(x))
    xdot = ginv @ p
    if metric.constant_g is not None:
        return xdot, np.zeros_like(p), np.zeros_like(frame)
    dg = metric.dg(x)
    pdot = 0.5 * np.einsum("i,kij,j->k", xdot, dg, xdot)
    gam = np.einsum("kl,lij->kij", ginv, _lowered_christoffel(dg))
    return xdot, pdot, -np.einsum("kij,i,jm->km", gam, xdot, frame)


def _rk4_step(metric: Metric, x, p, frame, h):
    f = lambda x_, p_, e_: _flow_rhs(metric, x_, p_, e_)  # noqa: E731
    k1 = f(x, p, frame)
    k2 = f(x + 0.5 * h * k1[0], p + 0.5 * h * k1[1], frame + 0.5 * h * k1[2])
    k3 = f(x + 0.5 * h * k2[0], p + 0.5 * h * k2[1], frame + 0.5 * h * k2[2])
    k4 = f(x + h * k3[0], p + h * k3[1], frame + h * k3[2])
    return tuple(
        s + h / 6.0 * (a + 2 * b + 2 * c + e) for s, a, b, c, e in zip((x, p, frame), k1, k2, k3, k4)
    )


def _trace_one_way(metric, y, v, step, frame, extend, max_length):
    """Returns arrays (t, x, v, frame) and the box exit time."""
    d = metric.dim
    gy = metric.g(y)
    x, p, e = np.array(y, float), gy @ v, np.array(frame, float)
    ts, xs, vs, es = [0.0], [x.copy()], [np.array(v, float)], [e.copy()]
    t, exit_time = 0.0, None
    if metric.boundary_violation(y) >= 0.0 and metric.boundary_violation(y + 1e-9 * v) > 0:
        exit_time = 0.0
    limit = max_length if max_length is not None else 50.0 * metric.diameter * _speed_scale(metric)
    while True:
        if exit_time is not None and t >= exit_time + extend - 1e-15:
            break
        if t >= limit:
            break
        h = step
        if exit_time is not None:
            h = min(h, exit_time + extend - t)
        h = min(h, limit - t)
        xn, pn, en = _rk4_step(metric, x, p, e, h)
        if exit_time is None and metric.boundary_violation(xn) > 0.0:
            lo_h, hi_h = 0.0, h
            while hi_h - lo_h > 1e-12:
                mid = 0.5 * (lo_h + hi_h)
                if metric.boundary_violation(_rk4_step(metric, x, p, e, mid)[0]) > 0.0:
                    hi_h = mid
                else:
                    lo_h = mid
            h = hi_h
            xn, pn, en = _rk4_step(metric, x, p, e, h)
            exit_time = t + h
        x, p, e = xn, pn, en
        t += h
        ts.append(t)
        xs.append(x.copy())
        vs.append(metric.g_inv(x) @ p)
        es.append(e.copy())
        if extend == 0.0 and exit_time is not None:
            break
    if exit_time is None:
        exit_time = t
    return np.array(ts), np.array(xs), np.array(vs), np.array(es).reshape(len(ts), d, d - 1), exit_time


def _speed_scale(metric: Metric) -> float:
    lam = np.linalg.eigvalsh(metric.g(0.5 * (metric.lo + metric.hi)))
    return float(math.sqrt(lam[-1] / lam[0]))


def _check_unit(metric: Metric, y, v):
    n = float(metric.norm(y, v))
    if abs(n - 1.0) > 1e-8:
        raise NonUnitTangent(f"|v|_g = {n:.12g}, expected 1")


def trace_geodesic(
    metric: Metric,
    y,
    v,
    step: Optional[float] = None,
    frame: Optional[np.ndarray] = None,
    extend: float = 0.0,
    max_length: Optional[float] = None,
) -> Geodesic:
    """Maximal unit-speed geodesic of ``metric.g`` from ``y`` in direction ``v``.

    RK4 on the Hamiltonian flow with the frame transported alongside; the box
    exit is located by bisection on the last substep. ``extend`` continues the
    trace past the exit (charts need a margin outside the box).
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if y.shape != (metric.dim,) or v.shape != (metric.dim,):
        raise ConfigInvalid("y and v must have shape (dim,)", "geodesic")
    if not metric.contains(y, tol=1e-12 * metric.diameter):
        raise OutOfRange(f"start point {y} lies outside the domain")
    _check_unit(metric, y, v)
    step = 1e-3 * metric.diameter if step is None else float(step)
    if step <= 0:
        raise ConfigInvalid("step must be positive", "geodesic/step")
    if frame is None:
        frame = _gram_schmidt_frame(metric, y, v)

    if metric.is_constant:
        return _straight_geodesic(metric, y, v, step, frame, extend, max_length, backward=None)

    t, x, vel, e, exit_time = _trace_one_way(metric, y, v, step, frame, extend, max_length)
    geo = Geodesic(t=t, x=x, v=vel, frame=e, entry_time=0.0, exit_time=exit_time, start=(y, v), metric=metric)
    length = max(exit_time, 1e-12)
    if geo.speed_drift() / max(length, 1.0) > 1e-6:
        raise StepTooLarge(f"energy drift {geo.speed_drift():.2e} over length {length:.3g}")
    return geo


def _box_exit(metric: Metric, y, v) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(v > 0, (metric.hi - y) / v, np.inf)
        t_lo = np.where(v < 0, (metric.lo - y) / v, np.inf)
    return float(max(np.min(np.minimum(t_hi, t_lo)), 0.0))


def _straight_geodesic(metric, y, v, step, frame, extend, max_length, backward) -> Geodesic:
    t_exit = _box_exit(metric, y, v)
    # backward=None traces forward only; otherwise trace back through the box and ``backward`` beyond
    t_entry = -_box_exit(metric, y, -v) if backward is not None else 0.0
    t_end = t_exit + extend if max_length is None else min(t_exit + extend, max_length)
    t_start = t_entry - backward if backward is not None else 0.0
    n = max(int(math.ceil((t_end - t_start) / step)), 1)
    t = np.linspace(t_start, t_end, n + 1)
    x = y + t[:, None] * v
    vel = np.broadcast_to(v, x.shape).copy()
    e = np.broadcast_to(frame, (n + 1,) + frame.shape).copy()
    return Geodesic(t=t, x=x, v=vel, frame=e, entry_time=t_entry, exit_time=t_exit,
                    start=(y, v), metric=metric, affine=True)


def geodesic_through(
    metric: Metric,
    x,
    v,
    step: Optional[float] = None,
    extend: float = 0.0,
    frame: Optional[np.ndarray] = None,
) -> Geodesic:
    """Geodesic with ``gamma(0) = x``, traced both ways to the box and ``extend`` beyond."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_unit(metric, x, v)
    if not metric.contains(x, tol=1e-12):
        raise OutOfRange(f"point {x} lies outside the domain")
    step = 1e-3 * metric.diameter if step is None else float(step)
    if frame is None:
        frame = _gram_schmidt_frame(metric, x, v)
    if metric.is_constant:
        return _straight_geodesic(metric, x, v, step, frame, extend, None, backward=extend)
    fwd = trace_geodesic(metric, x, v, step, frame=frame, extend=extend)
    bwd = trace_geodesic(metric, x, -v, step, frame=frame, extend=extend)
    t = np.concatenate([-bwd.t[:0:-1], fwd.t])
    xs = np.concatenate([bwd.x[:0:-1], fwd.x])
    vs = np.concatenate([-bwd.v[:0:-1], fwd.v])
    es = np.concatenate([bwd.frame[:0:-1], fwd.frame])
    return Geodesic(t=t, x=xs, v=vs, frame=es, entry_time=-bwd.exit_time, exit_time=fwd.exit_time,
                    start=(x, v), metric=metric)


@dataclass(frozen=True, eq=False)
class NullGeodesic:
    """``alpha(t) = (t0 + t, gamma(t))`` with ``gamma`` unit speed for the optical metric."""

    base: Geodesic
    t0: float
    metric: Metric = field(repr=False)  # the physical metric (g, a)

    def path(self, t):
        t = np.asarray(t, dtype=float)
        return self.t0 + t, self.base.point(t)

    def null_defect(self) -> float:
        """max |-1 + |gamma'|_g^2 / a| over samples."""
        x, v = self.base.x, self.base.v
        q = np.einsum("ni,nij,nj->n", v, self.metric.g(x), v) / self.metric.a(x)
        return float(np.max(np.abs(q - 1.0)))


def null_geodesic_through(
    metric: Metric, p, direction, step: Optional[float] = None, extend: float = 0.0
) -> NullGeodesic:
    """Null geodesic through the space-time point ``p = (t, x)`` with spatial direction ``direction``."""
    p = np.asarray(p, dtype=float)
    opt = metric.optical()
    x = p[1:]
    direction = np.asarray(direction, dtype=float)
    v = direction / float(opt.norm(x, direction))
    base = geodesic_through(opt, x, v, step=step, extend=extend)
    return NullGeodesic(base=base, t0=float(p[0]), metric=metric)


def null_geodesic_from(
    metric: Metric, t0: float, y, direction, step: Optional[float] = None, extend: float = 0.0
) -> NullGeodesic:
    """Null geodesic leaving ``y`` (typically on the boundary) at time ``t0``."""
    opt = metric.optical()
    y = np.asarray(y, dtype=float)
    direction = np.asarray(direction, dtype=float)
    v = direction / float(opt.norm(y, direction))
    if opt.is_constant:
        frame = _gram_schmidt_frame(opt, y, v)
        base = _straight_geodesic(opt, y, v, step or 1e-3 * opt.diameter, frame, extend, None, backward=extend)
    else:
        fwd = trace_geodesic(opt, y, v, step, extend=extend)
        if extend > 0:
            bwd = trace_geodesic(opt, y, -v, step, frame=fwd.frame[0], extend=extend, max_length=extend)
            base = Geodesic(
                t=np.concatenate([-bwd.t[:0:-1], fwd.t]),
                x=np.concatenate([bwd.x[:0:-1], fwd.x]),
                v=np.concatenate([-bwd.v[:0:-1], fwd.v]),
                frame=np.concatenate([bwd.frame[:0:-1], fwd.frame]),
                entry_time=0.0,
                exit_time=fwd.exit_time,
                start=(y, v),
                metric=opt,
            )
        else:
            base = fwd
    return NullGeodesic(base=base, t0=float(t0), metric=metric)


# --------------------------------------------------------------------------
# Fermi chart
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _AxisSpline:
    """Smooth interpolants of gamma, the frame and the Christoffels along the axis."""

    r_min: float
    r_max: float
    xs: CubicSpline
    es: Optional[CubicSpline]
    gs: Optional[CubicSpline]
    affine: bool
    x0: np.ndarray
    v0: np.ndarray
    e0: np.ndarray

    @classmethod
    def from_geodesic(cls, geo: Geodesic, with_gamma: bool = False) -> "_AxisSpline":
        t = geo.t
        # drop duplicate parameters (a bisected exit can land within 1e-12 of a node)
        keep = np.concatenate([[True], np.diff(t) > 1e-12])
        t = t[keep]
        if geo.affine:
            return cls(float(t[0]), float(t[-1]), None, None, None, True,
                       geo.x[0] - geo.t[0] * geo.v[0], geo.v[0].copy(), geo.frame[0].copy())
        xs = CubicSpline(t, geo.x[keep], axis=0)
        es = CubicSpline(t, geo.frame[keep], axis=0)
        gs = CubicSpline(t, geo.metric.christoffel(geo.x[keep]), axis=0) if with_gamma else None
        return cls(float(t[0]), float(t[-1]), xs, es, gs, False, geo.x[0], geo.v[0], geo.frame[0])

    def x(self, r, nu: int = 0):
        r = np.asarray(r, dtype=float)
        if self.affine:
            if nu == 0:
                return self.x0 + r[..., None] * self.v0
            if nu == 1:
                return np.broadcast_to(self.v0, r.shape + self.v0.shape).copy()
            return np.zeros(r.shape + self.v0.shape)
        return self.xs(r, nu)

    def e(self, r, nu: int = 0):
        r = np.asarray(r, dtype=float)
        if self.affine:
            if nu == 0:
                return np.broadcast_to(self.e0, r.shape + self.e0.shape).copy()
            return np.zeros(r.shape + self.e0.shape)
        return self.es(r, nu)

    def gamma(self, r, nu: int = 0):
        r = np.asarray(r, dtype=float)
        d = self.x0.shape[0]
        if self.affine:
            return np.zeros(r.shape + (d, d, d))
        return self.gs(r, nu)


@dataclass(frozen=True, eq=False)
class FermiChart:
    """Second-order Fermi chart around a null geodesic.

    Chart coordinates are ``w = (s, z1, y_1..y_{d-1})``.
    """

    geodesic: NullGeodesic
    dprime: float
    axis: _AxisSpline = field(repr=False)
    s_nodes: np.ndarray = field(repr=False)
    d2_nodes: np.ndarray = field(repr=False)  # (m, d, d)
    h_chart: float = 0.0
    _d2_spline: Optional[CubicSpline] = field(default=None, repr=False)

    # -- basic data -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.geodesic.metric.dim

    @property
    def metric(self) -> Metric:
        return self.geodesic.metric

    @property
    def optical(self) -> Metric:
        return self.geodesic.base.metric

    @property
    def frame(self) -> np.ndarray:
        return self.geodesic.base.frame

    @property
    def affine(self) -> bool:
        return self.axis.affine

    @property
    def s_range(self) -> tuple:
        return float(self.s_nodes[0]), float(self.s_nodes[-1])

    @property
    def C(self) -> np.ndarray:
        return c_matrix(self.dim)

    def d2_g11(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        lo, hi = self.s_range
        if np.any(s < lo - 1e-12) or np.any(s > hi + 1e-12):
            raise OutOfRange(f"s outside chart range [{lo:.6g}, {hi:.6g}]")
        if self._d2_spline is None:
            return np.broadcast_to(self.d2_nodes[0], s.shape + self.d2_nodes.shape[1:]).copy()
        out = self._d2_spline(s)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    # -- spatial map X(r, y) and its derivatives ----------------------------
    def spatial_map(self, r, y) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        y = np.asarray(y, dtype=float)
        pos = self.axis.x(r)
        if self.dim == 1:
            return pos
        ye = np.einsum("...km,...m->...k", self.axis.e(r), y)
        if self.affine:
            return pos + ye
        gam = self.axis.gamma(r)
        return pos + ye - 0.5 * np.einsum("...kij,...i,...j->...k", gam, ye, ye)

    def spatial_jacobian(self, r, y) -> np.ndarray:
        """``J[..., k, a]``: derivative of X^k in (r, y_1, ...)."""
        r = np.asarray(r, dtype=float)
        y = np.asarray(y, dtype=float)
        d = self.dim
        J = np.empty(r.shape + (d, d))
        J[..., :, 0] = self.axis.x(r, 1)
        if d == 1:
            return J
        E, E1 = self.axis.e(r), self.axis.e(r, 1)
        ye = np.einsum("...km,...m->...k", E, y)
        ye1 = np.einsum("...km,...m->...k", E1, y)
        J[..., :, 0] += ye1
        J[..., :, 1:] = E
        if not self.affine:
            gam, gam1 = self.axis.gamma(r), self.axis.gamma(r, 1)
            J[..., :, 0] -= 0.5 * np.einsum("...kij,...i,...j->...k", gam1, ye, ye)
            J[..., :, 0] -= np.einsum("...kij,...i,...j->...k", gam, ye, ye1)
            J[..., :, 1:] -= np.einsum("...kij,...i,...jm->...km", gam, ye, E)
        return J

    def spatial_hessian(self, r, y) -> np.ndarray:
        """``K[..., k, a, b]``: second derivatives of X^k in (r, y)."""
        r = np.asarray(r, dtype=float)
        y = np.asarray(y, dtype=float)
        d = self.dim
        K = np.zeros(r.shape + (d, d, d))
        K[..., :, 0, 0] = self.axis.x(r, 2)
        if d == 1 or self.affine:
            return K
        E, E1, E2 = self.axis.e(r), self.axis.e(r, 1), self.axis.e(r, 2)
        g0, g1, g2 = self.axis.gamma(r), self.axis.gamma(r, 1), self.axis.gamma(r, 2)
        ye = np.einsum("...km,...m->...k", E, y)
        ye1 = np.einsum("...km,...m->...k", E1, y)
        ye2 = np.einsum("...km,...m->...k", E2, y)
        q = lambda G, a, b: np.einsum("...kij,...i,...j->...k", G, a, b)  # noqa: E731
        K[..., :, 0, 0] += ye2 - 0.5 * q(g2, ye, ye) - 2 * q(g1, ye, ye1) - q(g0, ye1, ye1) - q(g0, ye, ye2)
        ry = (
            E1
            - np.einsum("...kij,...i,...jm->...km", g1, ye, E)
            - np.einsum("...kij,...i,...jm->...km", g0, ye1, E)
            - np.einsum("...kij,...i,...jm->...km", g0, ye, E1)
        )
        K[..., :, 0, 1:] = ry
        K[..., :, 1:, 0] = ry
        K[..., :, 1:, 1:] = -np.einsum("...kij,...ia,...jb->...kab", g0, E, E)
        return K

    # -- space-time chart ---------------------------------------------------
    def chart_map(self, s, zp):
        """``(s, z') -> (t, x)`` with ``z' = (z1, y)``."""
        s = np.asarray(s, dtype=float)
        zp = np.asarray(zp, dtype=float)
        z1 = zp[..., 0]
        t = self.geodesic.t0 + s - 0.5 * z1
        return t, self.spatial_map(s + 0.5 * z1, zp[..., 1:])

    def chart_jacobian(self, s, zp) -> np.ndarray:
        """``d(t, x)/d(s, z1, y)``, shape (..., 1+d, 1+d)."""
        s = np.asarray(s, dtype=float)
        zp = np.asarray(zp, dtype=float)
        d = self.dim
        r = s + 0.5 * zp[..., 0]
        Js = self.spatial_jacobian(r, zp[..., 1:])
        J = np.zeros(s.shape + (1 + d, 1 + d))
        J[..., 0, 0] = 1.0
        J[..., 0, 1] = -0.5
        J[..., 1:, 0] = Js[..., :, 0]
        J[..., 1:, 1] = 0.5 * Js[..., :, 0]
        J[..., 1:, 2:] = Js[..., :, 1:]
        return J

    def chart_metric(self, s, zp) -> np.ndarray:
        """Space-time metric ``-dt^2 + g/a`` in chart coordinates."""
        s = np.asarray(s, dtype=float)
        zp = np.asarray(zp, dtype=float)
        _, x = self.chart_map(s, zp)
        J = self.chart_jacobian(s, zp)
        d = self.dim
        G = np.zeros(s.shape + (1 + d, 1 + d))
        G[..., 0, 0] = -1.0
        G[..., 1:, 1:] = self.optical.g(x)
        return np.einsum("...ai,...ab,...bj->...ij", J, G, J)

    def gtilde_on_axis(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.chart_metric(s, np.zeros(s.shape + (self.dim,)))

    def g11_inverse(self, s, zp) -> np.ndarray:
        return np.linalg.inv(self.chart_metric(s, zp))[..., 1, 1]

    # -- inverse chart --------------------------------------------------------
    def spatial_inverse(self, x, tol: float = 1e-13, max_iter: int = 25):
        """Solve ``X(r, y) = x``. Returns ``(r, y, ok)``; ``ok`` marks points in the tube."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d = self.dim
        geo = self.geodesic.base
        n = x.shape[0]
        r = np.zeros(n)
        y = np.zeros((n, d - 1))
        if self.affine:
            # orthonormal frame for a constant metric: invert the affine map exactly
            A = np.concatenate([self.axis.v0[:, None], self.axis.e0], axis=1)
            sol = np.linalg.solve(A, (x - self.axis.x0).T).T
            r, y = sol[:, 0], sol[:, 1:]
        else:
            tree = _kdtree(geo)
            _, idx = tree.query(x)
            r = geo.t[idx].astype(float)
            for _ in range(max_iter):
                F = self.spatial_map(r, y) - x
                if np.max(np.abs(F), initial=0.0) < tol:
                    break
                J = self.spatial_jacobian(r, y)
                delta = np.linalg.solve(J, F[..., None])[..., 0]
                delta = np.clip(delta, -0.5 * self.dprime, 0.5 * self.dprime)
                r = np.clip(r - delta[:, 0], self.axis.r_min, self.axis.r_max)
                if d > 1:
                    y = y - delta[:, 1:]
        resid = np.linalg.norm(self.spatial_map(r, y) - x, axis=-1)
        ok = (
            (resid < 1e-9 * max(1.0, self.metric.diameter))
            & (r > self.axis.r_min)
            & (r < self.axis.r_max)
            & (np.linalg.norm(y, axis=-1) < self.dprime)
        )
        return r, y, ok

    def inverse(self, t, x):
        """``(t, x) -> (s, z')`` along with the in-tube mask."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        r, y, ok = self.spatial_inverse(x)
        tau = t - self.geodesic.t0
        s = 0.5 * (tau + r)
        z1 = r - tau
        zp = np.concatenate([z1[:, None], y], axis=1)
        ok = ok & (np.linalg.norm(zp, axis=-1) < self.dprime)
        return s, zp, ok


_KD_CACHE: dict = {}


def _kdtree(geo: Geodesic) -> cKDTree:
    key = id(geo)
    hit = _KD_CACHE.get(key)
    if hit is None or hit[0] is not geo:
        hit = (geo, cKDTree(geo.x))
        if len(_KD_CACHE) > 64:
            _KD_CACHE.clear()
        _KD_CACHE[key] = hit
    return hit[1]


def c_matrix(dim: int) -> np.ndarray:
    c = np.zeros((dim, dim))
    c[1:, 1:] = 2.0 * np.eye(dim - 1)
    return c


def _d2_stencil(chart_like, s: np.ndarray, h: float) -> np.ndarray:
    """Centered second differences of g~^{11} in z', shape (m, d, d)."""
    d = chart_like.dim
    m = s.shape[0]
    pts = []
    offsets = [np.zeros(d)]
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        offsets += [e, -e]
    for i in range(d):
        for j in range(i + 1, d):
            for si in (1, -1):
                for sj in (1, -1):
                    e = np.zeros(d)
                    e[i], e[j] = si * h, sj * h
                    offsets.append(e)
    offsets = np.array(offsets)
    S = np.repeat(s, len(offsets))
    Z = np.tile(offsets, (m, 1))
    f = chart_like.g11_inverse(S, Z).reshape(m, len(offsets))
    out = np.empty((m, d, d))
    f0 = f[:, 0]
    for i in range(d):
        out[:, i, i] = (f[:, 1 + 2 * i] - 2 * f0 + f[:, 2 + 2 * i]) / h**2
    k = 1 + 2 * d
    for i in range(d):
        for j in range(i + 1, d):
            pp, pm, mp, mm = f[:, k], f[:, k + 1], f[:, k + 2], f[:, k + 3]
            out[:, i, j] = out[:, j, i] = (pp - pm - mp + mm) / (4 * h * h)
            k += 4
    return out


def build_fermi_chart(
    metric: Metric,
    geo: NullGeodesic,
    dprime: float,
    h_chart: Optional[float] = None,
    node_spacing: Optional[float] = None,
) -> FermiChart:
    """Fermi chart of radius ``dprime`` around ``geo``.

    ``d2_g11`` is sampled on s-nodes by centered second differences with
    stencil ``h_chart`` (default ``dprime/8``) and one Richardson step.
    The usable s-range is the traced parameter range shrunk by the stencil.
    """
    if dprime <= 0:
        raise ConfigInvalid("dprime must be positive", "chart/dprime")
    h = dprime / 8.0 if h_chart is None else float(h_chart)
    base = geo.base
    axis = _AxisSpline.from_geodesic(base, with_gamma=True)
    lo, hi = axis.r_min + h, axis.r_max - h
    if hi <= lo:
        raise TubeTooWide("geodesic is shorter than the chart stencil")
    spacing = node_spacing or max(min(0.02, dprime / 4), (hi - lo) / 4000)
    m = max(int(math.ceil((hi - lo) / spacing)), 4)
    s_nodes = np.linspace(lo, hi, m + 1)
    # s-nodes in the chart with t0: chart s equals geodesic parameter on the axis
    proto = FermiChart(geodesic=geo, dprime=dprime, axis=axis, s_nodes=s_nodes,
                       d2_nodes=np.zeros((m + 1, metric.dim, metric.dim)), h_chart=h)
    if axis.affine and base.metric.optical_is_constant:
        d2 = np.zeros((m + 1, metric.dim, metric.dim))
        d2_first = _d2_stencil(proto, s_nodes[:1], h)
        d2[:] = d2_first[0]
        spline = None
    else:
        coarse = _d2_stencil(proto, s_nodes, h)
        fine = _d2_stencil(proto, s_nodes, h / 2)
        d2 = (4.0 * fine - coarse) / 3.0
        d2 = 0.5 * (d2 + np.swapaxes(d2, -1, -2))
        spline = CubicSpline(s_nodes, d2, axis=0)
    chart = FermiChart(geodesic=geo, dprime=dprime, axis=axis, s_nodes=s_nodes, d2_nodes=d2,
                       h_chart=h, _d2_spline=spline)
    _check_tube(chart)
    return chart


def _check_tube(chart: FermiChart) -> None:
    if chart.dim == 1 or chart.affine:
        return
    d = chart.dim
    s = chart.s_nodes[:: max(len(chart.s_nodes) // 200, 1)]
    dirs = []
    for i in range(d - 1):
        e = np.zeros(d - 1)
        e[i] = chart.dprime
        dirs += [e, -e]
    y = np.array(dirs)
    R = np.repeat(s, len(y))
    Y = np.tile(y, (len(s), 1))
    det_tube = np.linalg.det(chart.spatial_jacobian(R, Y)).reshape(len(s), len(y))
    det_axis = np.linalg.det(chart.spatial_jacobian(s, np.zeros((len(s), d - 1))))
    ratio = det_tube / det_axis[:, None]
    if np.min(ratio) < 0.1:
        raise TubeTooWide(f"chart Jacobian ratio drops to {np.min(ratio):.3g} inside the tube")


def d_matrix(chart: FermiChart, s) -> tuple:
    """``(D(s), C)`` with ``D = d2_g11 / 4`` and ``C = diag(0, 2, ..., 2)``."""
    D = 0.25 * chart.d2_g11(s)
    return D, chart.C


# --------------------------------------------------------------------------
# conjugate points
# --------------------------------------------------------------------------


def _jacobi_transverse(chart: FermiChart, s_grid: np.ndarray, Y0, Z0):
    """RK4 for Y' = 2 Z, Z' = -D~ Y on the transverse block; returns Y(s), Z(s)."""
    Dm = lambda s: 0.25 * chart.d2_g11(s)[1:, 1:]  # noqa: E731
    dtype = np.result_type(np.asarray(Y0), np.asarray(Z0), float)
    Y = np.array(Y0, dtype=dtype)
    Z = np.array(Z0, dtype=dtype)
    Ys, Zs = [Y], [Z]
    for a, b in zip(s_grid[:-1], s_grid[1:]):
        hh = b - a
        D0, Dh, D1 = Dm(a), Dm(a + 0.5 * hh), Dm(b)
        k1 = (2 * Z, -D0 @ Y)
        k2 = (2 * (Z + 0.5 * hh * k1[1]), -Dh @ (Y + 0.5 * hh * k1[0]))
        k3 = (2 * (Z + 0.5 * hh * k2[1]), -Dh @ (Y + 0.5 * hh * k2[0]))
        k4 = (2 * (Z + hh * k3[1]), -D1 @ (Y + hh * k3[0]))
        Y = Y + hh / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Z = Z + hh / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        Ys.append(Y)
        Zs.append(Z)
    return np.array(Ys), np.array(Zs)


def detect_conjugate_points(chart: FermiChart, s0: Optional[float] = None, step: Optional[float] = None,
                            tol: float = 1e-8) -> list:
    """Zeros of det X1(s) for s > s0 where X1(s0) = 0, X1'(s0) = I (transverse block).

    Each sign change is bracketed on the RK4 grid and bisected to ``tol`` by
    re-integrating from the left bracket.
    """
    d = chart.dim
    if d == 1 or (chart.affine and chart.optical.optical_is_constant):
        return []
    lo, hi = chart.s_range
    s0 = lo if s0 is None else float(s0)
    step = step or min(0.005, (hi - s0) / 200)
    n = max(int(math.ceil((hi - s0) / step)), 2)
    grid = np.linspace(s0, hi, n + 1)
    I = np.eye(d - 1)
    Y, Z = _jacobi_transverse(chart, grid, np.zeros_like(I), 0.5 * I)
    det = np.linalg.det(Y)
    roots = []
    # det ~ (s - s0)^(d-1) > 0 just after s0, so start scanning at k = 1
    for k in range(1, n):
        if (det[k] > 0) == (det[k + 1] > 0):
            continue
        a, b, fa = grid[k], grid[k + 1], det[k]
        while b - a > tol:
            mid = 0.5 * (a + b)
            Ym, _ = _jacobi_transverse(chart, np.linspace(grid[k], mid, 5), Y[k], Z[k])
            fm = np.linalg.det(Ym[-1])
            if (fm > 0) == (fa > 0):
                a = mid
            else:
                b = mid
        roots.append(0.5 * (a + b))
    return roots


# --------------------------------------------------------------------------
# null combinations
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NullCombination:
    """Four unit directions and weights with sum(kappa) = 0 and sum(kappa zeta) = 0."""

    kappas: np.ndarray
    zetas: np.ndarray  # (4, d), unit in the optical metric at p
    point: np.ndarray
    causal_type: str = ""
    xi2: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def kappa11(self) -> float:
        return float(self.kappas[0])

    @property
    def kappa12(self) -> float:
        return float(self.kappas[1])

    @property
    def kappa2(self) -> float:
        return float(-(self.kappas[2] + self.kappas[3]))

    def residuals(self) -> tuple:
        return float(abs(np.sum(self.kappas))), float(np.max(np.abs(self.kappas @ self.zetas)))


def _optical_basis(metric: Metric, x) -> np.ndarray:
    """Columns form a basis orthonormal for g/a at x."""
    gh = metric.optical().g(x)
    L = np.linalg.cholesky(gh)
    return np.linalg.inv(L).T


def _causal_type(metric: Metric, x, xi) -> tuple:
    q = -xi[0] ** 2 + float(xi[1:] @ metric.optical().g(x) @ xi[1:])
    if abs(q) < 1e-10:
        return "null", q
    return ("timelike" if q < 0 else "spacelike"), q


def make_null_combination(metric: Metric, p, kappas, zetas) -> NullCombination:
    p = np.asarray(p, dtype=float)
    kappas = np.asarray(kappas, dtype=float)
    zetas = np.asarray(zetas, dtype=float)
    if not (kappas[0] > 0 and kappas[1] > 0 and kappas[2] < 0 and kappas[3] < 0):
        raise InfeasibleSeed("weights must satisfy k0, k1 > 0 > k2, k3")
    if np.allclose(zetas[0], zetas[1], atol=1e-12):
        raise InfeasibleSeed("zeta0 and zeta1 coincide")
    k23 = kappas[2] + kappas[3]
    xi2 = np.concatenate([[1.0], (kappas[2] * zetas[2] + kappas[3] * zetas[3]) / k23])
    ctype, _ = _causal_type(metric, p[1:], xi2)
    combo = NullCombination(kappas=kappas, zetas=zetas, point=p, causal_type=ctype, xi2=xi2)
    ks, kz = combo.residuals()
    if ks > 1e-12 or kz > 1e-10:
        raise InfeasibleSeed(f"constraints violated: |sum k| = {ks:.2e}, |sum k zeta| = {kz:.2e}")
    return combo


def _ang_dist(a: float, b: float) -> float:
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


def find_null_combination(metric: Metric, p, seed_angles: Optional[Sequence[float]] = None,
                          degrees: bool = True) -> NullCombination:
    """Deterministic solution of the four-direction balance at ``p``.

    zeta0, zeta1 come from the first two seeds with unit weights. Their mean
    ``V`` lies strictly inside the unit circle, and the chord through ``V`` whose
    endpoints best match the last two seeds supplies zeta2, zeta3 with weights
    ``-2*lam`` and ``-2*(1-lam)`` from ``V = lam zeta2 + (1-lam) zeta3``.
    """
    p = np.asarray(p, dtype=float)
    d = metric.dim
    if d < 2:
        raise InfeasibleSeed("null combinations need d >= 2")
    x = p[1:] if p.shape[0] == d + 1 else p
    if not metric.contains(x) or metric.boundary_violation(x) >= 0:
        raise OutOfRange("p must be an interior point")
    seeds = [0.0, 90.0, 225.0, 315.0] if seed_angles is None else list(seed_angles)
    if len(seeds) != 4:
        raise InfeasibleSeed("exactly four seed angles are required")
    th = [math.radians(a) for a in seeds] if degrees else [float(a) for a in seeds]
    if _ang_dist(th[0], th[1]) < 1e-9:
        raise InfeasibleSeed("seed directions zeta0 and zeta1 coincide")
    if _ang_dist(th[0], th[1]) > math.pi - 1e-9:
        v = np.zeros(2)
    else:
        v = 0.5 * (np.array([math.cos(th[0]), math.sin(th[0])]) + np.array([math.cos(th[1]), math.sin(th[1])]))

    def endpoints(psi: float):
        u = np.array([math.cos(psi), math.sin(psi)])
        b = float(v @ u)
        disc = math.sqrt(b * b - float(v @ v) + 1.0)
        return v + (-b + disc) * u, v + (-b - disc) * u

    def cost(psi: float):
        e1, e2 = endpoints(psi)
        a1, a2 = math.atan2(e1[1], e1[0]), math.atan2(e2[1], e2[0])
        c12 = _ang_dist(a1, th[2]) ** 2 + _ang_dist(a2, th[3]) ** 2
        c21 = _ang_dist(a2, th[2]) ** 2 + _ang_dist(a1, th[3]) ** 2
        return (c12, (e1, e2)) if c12 <= c21 else (c21, (e2, e1))

    grid = np.linspace(0.0, math.pi, 3601)[:-1]
    costs = [cost(psi)[0] for psi in grid]
    k = int(np.argmin(costs))
    lo_psi, hi_psi = grid[k] - math.pi / 3600, grid[k] + math.pi / 3600
    # golden-section refinement, deterministic iteration count
    gr = (math.sqrt(5) - 1) / 2
    a, b = lo_psi, hi_psi
    for _ in range(60):
        c1, c2 = b - gr * (b - a), a + gr * (b - a)
        if cost(c1)[0] <= cost(c2)[0]:
            b = c2
        else:
            a = c1
    psi = 0.5 * (a + b)
    z2, z3 = cost(psi)[1]
    span = np.linalg.norm(z2 - z3)
    lam = float(np.linalg.norm(v - z3) / span)
    if not (1e-6 < lam < 1 - 1e-6):
        raise InfeasibleSeed("chord degenerates; pick separated seeds")
    k_planar = np.array([1.0, 1.0, -2.0 * lam, 0.0])
    k_planar[3] = -(k_planar[0] + k_planar[1] + k_planar[2])
    z_planar = np.array([[math.cos(th[0]), math.sin(th[0])], [math.cos(th[1]), math.sin(th[1])], z2, z3])
    B = _optical_basis(metric, x)
    zetas = z_planar @ B[:, :2].T
    return make_null_combination(metric, np.concatenate([[p[0] if p.shape[0] == d + 1 else 0.0], x]),
                                 k_planar, zetas)
