"""Finite-difference solver for the quasilinear wave model and its linearizations.

The model is

    d_t^2 u = a Laplace_g (u + b_n u^n) + sum_k c_k u^k / k! + forcing

on a box with Dirichlet data ``h``. Time stepping is leapfrog with a
second-order divergence-form Laplace-Beltrami stencil; nonlinear terms are
explicit. Boundary data, fields and DtN traces are stored per face.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BlowUp, CflViolation, ConfigInvalid, GridMismatch, Inadmissible, Incompatible
from .fields import ScalarField
from .geometry import Metric
from . import kernels


# --------------------------------------------------------------------------
# coefficients
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Coefficients:
    a: ScalarField
    n: int = 2
    b_n: ScalarField = field(default_factory=lambda: ScalarField.constant(0.0))
    c: tuple = ()  # c_1 .. c_K
    c1_support: Optional[tuple] = None  # ((lo...), (hi...)) box or None
    bound: float = 1.0

    @classmethod
    def from_spec(cls, spec: dict, path: str = "coefficients") -> "Coefficients":
        if not isinstance(spec, dict):
            raise ConfigInvalid("coefficients must be an object", path)
        n = spec.get("n", 2)
        c = tuple(ScalarField.from_spec(ck, f"{path}/c/{k}") for k, ck in enumerate(spec.get("c", [])))
        support = spec.get("c1_support")
        if support is not None:
            support = (tuple(support["lo"]), tuple(support["hi"]))
        return cls(
            a=ScalarField.from_spec(spec.get("a", 1.0), path + "/a"),
            n=n,
            b_n=ScalarField.from_spec(spec.get("b_n", 0.0), path + "/b_n"),
            c=c,
            c1_support=support,
            bound=float(spec.get("bound", 1.0)),
        )

    def to_spec(self) -> dict:
        out = {
            "a": self.a.to_spec(),
            "n": self.n,
            "b_n": self.b_n.to_spec(),
            "c": [ck.to_spec() for ck in self.c],
            "bound": self.bound,
        }
        if self.c1_support is not None:
            out["c1_support"] = {"lo": list(self.c1_support[0]), "hi": list(self.c1_support[1])}
        return out

    @property
    def K(self) -> int:
        return len(self.c)

    def ck(self, k: int) -> ScalarField:
        """c_k with the 1-based index of the series; zero beyond the truncation."""
        if 1 <= k <= len(self.c):
            return self.c[k - 1]
        return ScalarField.constant(0.0)

    def linear_part(self) -> "Coefficients":
        return replace(self, b_n=ScalarField.constant(0.0), c=self.c[:1])

    def with_(self, **kw) -> "Coefficients":
        return replace(self, **kw)


def series_tail(bound: float, amplitude: float, K: int) -> float:
    """sum_{k > K} bound * amplitude^k / k!, summed until terms fall below 1e-300."""
    total, k = 0.0, K + 1
    term = bound * amplitude ** k / math.factorial(k)
    while term > 1e-300 * max(total, 1e-300) and k < K + 400:
        total += term
        k += 1
        term *= amplitude / k
    return total


def check_admissible(coeffs: Coefficients, metric: Optional[Metric] = None, amplitude: float = 0.1,
                     samples: int = 33, a_min: float = 0.0) -> dict:
    """Positivity of a, sup bounds, degree and c_1 support. Raises Inadmissible on any failure."""
    clauses = []
    if metric is not None:
        lo, hi, d = metric.lo, metric.hi, metric.dim
    else:
        lo, hi, d = np.zeros(2), np.ones(2), 2
    axes = [np.linspace(lo[i], hi[i], samples) for i in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    a = coeffs.a(pts)
    amin = float(np.min(a))
    if not amin > a_min:
        clauses.append(f"a must be strictly positive (min a = {amin:.4g})")
    if not (isinstance(coeffs.n, (int, np.integer)) and coeffs.n >= 2):
        clauses.append(f"n must be an integer >= 2 (got {coeffs.n!r})")
    bmax = float(np.max(np.abs(coeffs.b_n(pts))))
    if bmax > coeffs.bound:
        clauses.append(f"sup |b_n| = {bmax:.4g} exceeds bound {coeffs.bound:.4g}")
    cmax = []
    for k, ck in enumerate(coeffs.c, start=1):
        m = float(np.max(np.abs(ck(pts))))
        cmax.append(m)
        if m > coeffs.bound:
            clauses.append(f"sup |c_{k}| = {m:.4g} exceeds bound {coeffs.bound:.4g}")
    if coeffs.c1_support is not None and coeffs.c:
        slo, shi = (np.asarray(v, float) for v in coeffs.c1_support)
        outside = ~np.all((pts >= slo) & (pts <= shi), axis=1)
        leak = float(np.max(np.abs(coeffs.c[0](pts[outside])), initial=0.0))
        if leak > 1e-12:
            clauses.append(f"c_1 is nonzero ({leak:.3g}) outside its declared support")
    if clauses:
        raise Inadmissible(clauses)
    return {
        "admissible": True,
        "a_min": amin,
        "b_max": bmax,
        "c_max": cmax,
        "tail_bound": series_tail(coeffs.bound, amplitude, coeffs.K),
        "amplitude": amplitude,
        "K": coeffs.K,
    }


# --------------------------------------------------------------------------
# grid
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid:
    metric: Metric
    cells: tuple  # cells per axis
    T: float
    nt: int

    @property
    def dim(self) -> int:
        return self.metric.dim

    @property
    def shape(self) -> tuple:
        return tuple(c + 1 for c in self.cells)

    @property
    def dx(self) -> np.ndarray:
        return (self.metric.hi - self.metric.lo) / np.asarray(self.cells)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def axes(self) -> list:
        return [np.linspace(self.metric.lo[i], self.metric.hi[i], self.cells[i] + 1) for i in range(self.dim)]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.nt + 1)

    def coords(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def faces(self) -> list:
        return [(i, side) for i in range(self.dim) for side in (0, 1)]

    def face_index(self, face) -> tuple:
        axis, side = face
        idx = [slice(None)] * self.dim
        idx[axis] = 0 if side == 0 else -1
        return tuple(idx)

    def face_coords(self, face) -> np.ndarray:
        return self.coords()[self.face_index(face)]

    def face_normal(self, face) -> np.ndarray:
        n = np.zeros(self.dim)
        n[face[0]] = -1.0 if face[1] == 0 else 1.0
        return n

    def face_weights(self, face) -> np.ndarray:
        """Trapezoid weights of the (Euclidean) face measure; 1 for point faces in d = 1."""
        axis = face[0]
        ws = [_trap_weights(len(ax), ax[1] - ax[0]) for i, ax in enumerate(self.axes) if i != axis]
        if not ws:
            return np.ones(())
        w = ws[0]
        for extra in ws[1:]:
            w = np.multiply.outer(w, extra)
        return w

    def volume_weights(self) -> np.ndarray:
        w = _trap_weights(self.shape[0], self.dx[0])
        for i in range(1, self.dim):
            w = np.multiply.outer(w, _trap_weights(self.shape[i], self.dx[i]))
        return w

    def time_weights(self) -> np.ndarray:
        return _trap_weights(self.nt + 1, self.dt)

    def spec(self) -> dict:
        return {
            "dim": self.dim,
            "lo": self.metric.lo.tolist(),
            "hi": self.metric.hi.tolist(),
            "cells": list(self.cells),
            "T": self.T,
            "nt": self.nt,
            "dt": self.dt,
        }

    def same_as(self, other: "Grid") -> bool:
        return self.spec() == other.spec()

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.metric, tuple(c * factor for c in self.cells), self.T, self.nt * factor)


def _trap_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def max_wave_speed(metric: Metric, a: ScalarField, samples: int = 33) -> float:
    axes = [np.linspace(metric.lo[i], metric.hi[i], samples) for i in range(metric.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, metric.dim)
    lam = np.linalg.eigvalsh(metric.g_inv(pts))[:, -1]
    return float(np.sqrt(np.max(a(pts) * lam)))


def make_grid(metric: Metric, cells, T: float, coeffs: Optional[Coefficients] = None, cfl: float = 0.5,
              nt: Optional[int] = None) -> Grid:
    """Uniform grid with ``dt <= cfl * dx_min / c_max`` chosen to divide T."""
    if np.isscalar(cells):
        cells = (int(cells),) * metric.dim
    cells = tuple(int(c) for c in cells)
    if len(cells) != metric.dim or min(cells) < 2:
        raise ConfigInvalid("cells must have one entry >= 2 per axis", "grid/cells")
    a = coeffs.a if coeffs is not None else ScalarField.from_spec(1.0)
    c_max = max_wave_speed(metric, a)
    dx_min = float(np.min((metric.hi - metric.lo) / np.asarray(cells)))
    if nt is None:
        nt = int(math.ceil(T * c_max / (cfl * dx_min)))
    grid = Grid(metric=metric, cells=cells, T=float(T), nt=int(nt))
    check_cfl(grid, a)
    return grid


def check_cfl(grid: Grid, a: ScalarField) -> float:
    c_max = max_wave_speed(grid.metric, a)
    number = c_max * grid.dt * math.sqrt(float(np.sum(1.0 / grid.dx**2)))
    if number > 1.0:
        raise CflViolation(f"CFL number {number:.3f} exceeds the leapfrog limit 1")
    return number


# --------------------------------------------------------------------------
# boundary signals and stored fields
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundarySignal:
    """Dirichlet data given as a callable ``h(t, x)`` (x of shape (..., d))."""

    fn: Callable
    label: str = "h"
    scale: complex = 1.0

    def __call__(self, t, x):
        return self.scale * np.asarray(self.fn(t, x))

    def scaled(self, factor) -> "BoundarySignal":
        return replace(self, scale=self.scale * factor)

    def on_faces(self, grid: Grid, times=None) -> dict:
        times = grid.times if times is None else np.asarray(times)
        out = {}
        for face in grid.faces():
            xf = grid.face_coords(face)
            out[face] = np.array([self(t, xf) for t in times])
        return out

    def amplitude(self, grid: Grid) -> float:
        vals = self.on_faces(grid)
        return float(max(np.max(np.abs(v)) for v in vals.values()))

    def __add__(self, other: "BoundarySignal") -> "BoundarySignal":
        return BoundarySignal(lambda t, x: self(t, x) + other(t, x), label=f"{self.label}+{other.label}")


def zero_signal() -> BoundarySignal:
    return BoundarySignal(lambda t, x: np.zeros(np.shape(x)[:-1]), label="zero")


def combine_signals(signals: Sequence[BoundarySignal], weights) -> BoundarySignal:
    signals = list(signals)
    weights = list(weights)

    def fn(t, x):
        total = 0.0
        for s, w in zip(signals, weights):
            if w != 0:
                total = total + w * s(t, x)
        return total * np.ones(np.shape(x)[:-1])

    return BoundarySignal(fn, label="combo")


def onset_window(t, t_on: float):
    """C^2 onset: (t/t_on)^3 (10 - 15 t/t_on + 6 (t/t_on)^2) on [0, t_on], 1 after, 0 before."""
    r = np.clip(np.asarray(t, dtype=float) / t_on, 0.0, 1.0)
    return r**3 * (10.0 - 15.0 * r + 6.0 * r * r)


def cubic_window(t, t_on: float):
    """The t^3 onset ramp alone (smooth to second order at t = 0)."""
    return onset_window(t, t_on)


@dataclass(frozen=True, eq=False)
class WaveField:
    grid: Grid
    u: np.ndarray  # (nt+1, *shape); only boundary layers kept when storage == 'trace'
    meta: dict = field(default_factory=dict)
    storage: str = "full"
    layers: Optional[dict] = None  # face -> (nt+1, 3, *face_shape) for 'trace' storage

    def face_layers(self, face) -> np.ndarray:
        """Values at depths 0, 1, 2 from ``face``: shape (nt+1, 3, *face_shape)."""
        if self.storage == "trace":
            return self.layers[face]
        axis, side = face
        idx = [0, 1, 2] if side == 0 else [-1, -2, -3]
        return np.stack([np.take(self.u, i, axis=axis + 1) for i in idx], axis=1)

    def max_abs(self) -> float:
        if self.storage == "trace":
            return float(self.meta.get("max_abs", 0.0))
        return float(np.max(np.abs(self.u)))

    def energy(self, metric: Optional[Metric] = None) -> np.ndarray:
        """E^1-type energy per time level from centered differences."""
        if self.storage != "full":
            raise GridMismatch("energy needs full storage")
        g = self.grid
        ut = np.gradient(self.u, g.dt, axis=0)
        grads = np.gradient(self.u, *g.dx, axis=tuple(range(1, g.dim + 1)))
        if g.dim == 1:
            grads = [grads]
        w = g.volume_weights()
        dens = np.abs(ut) ** 2 + sum(np.abs(gr) ** 2 for gr in grads)
        return np.sum(dens * w, axis=tuple(range(1, g.dim + 1)))


@dataclass(frozen=True, eq=False)
class DtnTrace:
    grid: Grid
    faces: dict  # face -> (nt+1, *face_shape)
    meta: dict = field(default_factory=dict)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(v)) for v in self.faces.values()))

    def __sub__(self, other: "DtnTrace") -> "DtnTrace":
        _same_grid(self.grid, other.grid)
        return DtnTrace(self.grid, {f: self.faces[f] - other.faces[f] for f in self.faces})

    def __add__(self, other: "DtnTrace") -> "DtnTrace":
        _same_grid(self.grid, other.grid)
        return DtnTrace(self.grid, {f: self.faces[f] + other.faces[f] for f in self.faces})

    def scale(self, c) -> "DtnTrace":
        return DtnTrace(self.grid, {f: c * v for f, v in self.faces.items()}, dict(self.meta))

    def l2(self) -> float:
        g = self.grid
        wt = g.time_weights()
        total = 0.0
        for f, v in self.faces.items():
            w = np.multiply.outer(wt, g.face_weights(f))
            total += float(np.sum(np.abs(v) ** 2 * w))
        return math.sqrt(total)

    def rows(self):
        """(t, boundary-node index, value) rows in a stable face order."""
        out = []
        g = self.grid
        offset = 0
        for f in g.faces():
            v = self.faces[f].reshape(g.nt + 1, -1)
            for k, t in enumerate(g.times):
                for j in range(v.shape[1]):
                    out.append((float(t), offset + j, v[k, j]))
            offset += v.shape[1]
        return out


def _same_grid(a: Grid, b: Grid) -> None:
    if not a.same_as(b):
        raise GridMismatch("fields live on different grids")


# --------------------------------------------------------------------------
# spatial operator
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LaplaceBeltrami:
    """Divergence-form stencil ``|g|^{-1/2} d_i(|g|^{1/2} g^{ij} d_j v)`` on interior nodes."""

    grid: Grid
    k_half: tuple  # axis i -> sqrt|g| g^{ii} at midpoints along i
    k_off: dict  # (i, j), i != j -> sqrt|g| g^{ij} at nodes
    inv_sqrt_g: np.ndarray
    flat: bool

    @classmethod
    def build(cls, grid: Grid) -> "LaplaceBeltrami":
        metric = grid.metric
        X = grid.coords()
        d = grid.dim
        flat = metric.constant_g is not None and np.allclose(metric.constant_g, np.eye(d))
        k_half = []
        for i in range(d):
            sl_a = [slice(None)] * d
            sl_b = [slice(None)] * d
            sl_a[i] = slice(None, -1)
            sl_b[i] = slice(1, None)
            Xm = 0.5 * (X[tuple(sl_a)] + X[tuple(sl_b)])
            gi = metric.g_inv(Xm)
            sg = np.sqrt(np.linalg.det(metric.g(Xm)))
            k_half.append(sg * gi[..., i, i])
        gi = metric.g_inv(X)
        sg = np.sqrt(np.linalg.det(metric.g(X)))
        k_off = {}
        for i in range(d):
            for j in range(d):
                if i != j and np.max(np.abs(gi[..., i, j])) > 0.0:
                    k_off[(i, j)] = sg * gi[..., i, j]
        return cls(grid=grid, k_half=tuple(k_half), k_off=k_off, inv_sqrt_g=1.0 / sg, flat=flat)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Returns the operator on interior nodes, shape ``tuple(n - 1 for n in cells+1)``."""
        g = self.grid
        d = g.dim
        dx = g.dx
        if d == 2 and not self.k_off:
            return kernels.div_form_2d(v, self.k_half[0], self.k_half[1], self.inv_sqrt_g, dx[0], dx[1])
        inner = tuple(slice(1, -1) for _ in range(d))
        out = np.zeros(tuple(n - 2 for n in v.shape), dtype=v.dtype)
        for i in range(d):
            flux = self.k_half[i] * np.diff(v, axis=i) / dx[i]
            div = np.diff(flux, axis=i) / dx[i]
            idx = list(inner)
            idx[i] = slice(None)
            out += div[tuple(idx)]
        for (i, j), k in self.k_off.items():
            sl_p = list(inner)
            sl_m = list(inner)
            # central d_j at nodes interior in j, all nodes in i
            sl_p[i] = slice(None)
            sl_m[i] = slice(None)
            sl_p[j] = slice(2, None)
            sl_m[j] = slice(None, -2)
            dj = (v[tuple(sl_p)] - v[tuple(sl_m)]) / (2 * dx[j])
            kk = list(inner)
            kk[i] = slice(None)
            flux = k[tuple(kk)] * dj
            fp = [slice(None)] * d
            fm = [slice(None)] * d
            fp[i] = slice(2, None)
            fm[i] = slice(None, -2)
            out += (flux[tuple(fp)] - flux[tuple(fm)]) / (2 * dx[i])
        return out * self.inv_sqrt_g[inner]


# --------------------------------------------------------------------------
# time stepping
# --------------------------------------------------------------------------


def _interior(d: int):
    return tuple(slice(1, -1) for _ in range(d))


def _set_boundary(u: np.ndarray, grid: Grid, faces_t: dict) -> None:
    for face, vals in faces_t.items():
        u[grid.face_index(face)] = vals


def _time_series(values, grid: Grid):
    """Normalize per-time-level arrays or callables."""
    return values


@dataclass
class _Source:
    """Evaluates time-dependent source arrays on the full grid."""

    fn: Optional[Callable]

    def __call__(self, k: int):
        return None if self.fn is None else self.fn(k)


def _march(
    grid: Grid,
    a_nodes: np.ndarray,
    rhs_extra: Callable,
    boundary: dict,
    u0: np.ndarray,
    u1: np.ndarray,
    inside_lap: Optional[Callable],
    op: LaplaceBeltrami,
    storage: str,
    budget: float,
    dtype,
):
    """Leapfrog for ``u_tt = a L(u + inside_lap(u, k)) + rhs_extra(u, k)``."""
    d = grid.dim
    inner = _interior(d)
    nt = grid.nt
    dt2 = grid.dt**2
    keep_full = storage == "full"
    frames = [u0, u1] if keep_full else None
    layers = {f: [] for f in grid.faces()} if not keep_full else None

    def record(u):
        if keep_full:
            return
        for f in grid.faces():
            axis, side = f
            idx = [0, 1, 2] if side == 0 else [-1, -2, -3]
            layers[f].append(np.stack([np.take(u, i, axis=axis) for i in idx]))

    record(u0)
    record(u1)
    peak = max(float(np.max(np.abs(u0))), float(np.max(np.abs(u1))))
    prev, cur = u0, u1
    limit = 10.0 * budget if budget > 0 else np.inf
    for k in range(1, nt):
        w = cur if inside_lap is None else cur + inside_lap(cur, k)
        acc = a_nodes[inner] * op.apply(w)
        extra = rhs_extra(cur, k)
        if extra is not None:
            acc = acc + extra[inner]
        nxt = np.empty(cur.shape, dtype=dtype)
        nxt[inner] = 2 * cur[inner] - prev[inner] + dt2 * acc
        _set_boundary(nxt, grid, {f: v[k + 1] for f, v in boundary.items()})
        m = float(np.max(np.abs(nxt)))
        if not math.isfinite(m) or m > limit:
            raise BlowUp(f"|u| = {m:.3g} exceeds 10x the amplitude budget {budget:.3g} at step {k + 1}")
        peak = max(peak, m)
        if keep_full:
            frames.append(nxt)
        else:
            record(nxt)
        prev, cur = cur, nxt
    if keep_full:
        return np.array(frames), None, peak
    return None, {f: np.array(v) for f, v in layers.items()}, peak


def _field_nodes(f: ScalarField, X: np.ndarray):
    base = f(X)
    rate = f.time_rate
    return base, rate


def _series_source(coeffs: Coefficients, X: np.ndarray, start: int):
    """Returns rhs(u, t) for sum_{k >= start} c_k u^k / k!."""
    terms = []
    for k in range(start, coeffs.K + 1):
        ck = coeffs.ck(k)
        base, rate = _field_nodes(ck, X)
        if np.any(base != 0):
            terms.append((k, base / math.factorial(k), rate))
    if not terms:
        return None

    def rhs(u, t):
        out = 0.0
        for k, base, rate in terms:
            out = out + base * (1 + rate * t) * u**k
        return out

    return rhs


def solve_forward(
    coeffs: Coefficients,
    h: Optional[BoundarySignal],
    phi: Optional[Callable] = None,
    psi: Optional[Callable] = None,
    forcing: Optional[Callable] = None,
    *,
    grid: Grid,
    storage: str = "full",
    budget: Optional[float] = None,
    check: bool = True,
    dtype=None,
) -> WaveField:
    """Leapfrog solve of the nonlinear model with Dirichlet data ``h``.

    ``phi``, ``psi`` are callables ``x -> values`` for the initial data;
    ``forcing`` is ``(t, x) -> values`` and exists for manufactured checks.
    """
    check_cfl(grid, coeffs.a)
    if check and h is not None and phi is None and psi is None:
        pass
    X = grid.coords()
    d = grid.dim
    times = grid.times
    a_nodes = coeffs.a(X)
    op = LaplaceBeltrami.build(grid)
    hb = (h or zero_signal()).on_faces(grid)
    cplx = any(np.iscomplexobj(v) for v in hb.values())
    u0 = np.zeros(grid.shape) if phi is None else np.asarray(phi(X), dtype=float) * np.ones(grid.shape)
    v0 = np.zeros(grid.shape) if psi is None else np.asarray(psi(X)) * np.ones(grid.shape)
    if forcing is not None:
        fvals0 = np.asarray(forcing(0.0, X))
        cplx = cplx or np.iscomplexobj(fvals0)
    dtype = dtype or (complex if cplx else float)
    u0 = u0.astype(dtype)
    v0 = v0.astype(dtype)

    b_base, b_rate = _field_nodes(coeffs.b_n, X)
    nonlin_inside = None
    if np.any(b_base != 0):
        nn = coeffs.n

        def nonlin_inside(u, k):
            return b_base * (1 + b_rate * times[k]) * u**nn

    series = _series_source(coeffs, X, 1)

    def rhs_extra(u, k):
        out = None
        if series is not None:
            out = series(u, times[k])
        if forcing is not None:
            fk = np.asarray(forcing(times[k], X))
            out = fk if out is None else out + fk
        return out

    # Taylor start: u1 = u0 + dt v0 + dt^2/2 u_tt(0)
    inner = _interior(d)
    w0 = u0 if nonlin_inside is None else u0 + nonlin_inside(u0, 0)
    acc0 = np.zeros(grid.shape, dtype=dtype)
    acc0[inner] = a_nodes[inner] * op.apply(w0)
    extra0 = rhs_extra(u0, 0)
    if extra0 is not None:
        acc0 = acc0 + extra0
    u1 = u0 + grid.dt * v0 + 0.5 * grid.dt**2 * acc0
    _set_boundary(u0, grid, {f: v[0] for f, v in hb.items()})
    _set_boundary(u1, grid, {f: v[1] for f, v in hb.items()})
    if budget is None:
        budget = max(
            max(float(np.max(np.abs(v))) for v in hb.values()),
            float(np.max(np.abs(u0))),
            float(np.max(np.abs(v0))) * grid.T,
            0.0 if extra0 is None else float(np.max(np.abs(extra0))) * grid.T**2,
        )
        if budget == 0.0 and forcing is not None:
            budget = np.inf
    full, layers, peak = _march(grid, a_nodes, rhs_extra, hb, u0, u1, nonlin_inside, op, storage,
                                budget, dtype)
    meta = {"equation": "nonlinear", "max_abs": peak, "budget": budget}
    if storage == "full":
        return WaveField(grid=grid, u=full, meta=meta)
    return WaveField(grid=grid, u=np.zeros(0), meta=meta, storage="trace", layers=layers)


def solve_linear(
    coeffs: Coefficients,
    h: Optional[BoundarySignal],
    *,
    grid: Grid,
    source: Optional[np.ndarray] = None,
    source_inside: Optional[np.ndarray] = None,
    storage: str = "full",
    meta: Optional[dict] = None,
    a_outside: bool = True,
) -> WaveField:
    """``v_tt = a L(v + S_in) + c_1 v + S`` with data h and zero initial data.

    ``source`` and ``source_inside`` are arrays of shape (nt+1, *shape).
    """
    check_cfl(grid, coeffs.a)
    X = grid.coords()
    a_nodes = coeffs.a(X)
    c1 = coeffs.ck(1)
    c1_base, c1_rate = _field_nodes(c1, X)
    times = grid.times
    op = LaplaceBeltrami.build(grid)
    hb = (h or zero_signal()).on_faces(grid)
    cplx = any(np.iscomplexobj(v) for v in hb.values()) or np.iscomplexobj(source) or np.iscomplexobj(source_inside)
    dtype = complex if cplx else float

    def rhs_extra(u, k):
        out = c1_base * (1 + c1_rate * times[k]) * u
        if source is not None:
            out = out + source[k]
        return out

    inside = None
    if source_inside is not None:
        inside = lambda u, k: source_inside[k]  # noqa: E731

    u0 = np.zeros(grid.shape, dtype=dtype)
    inner = _interior(grid.dim)
    acc0 = np.zeros(grid.shape, dtype=dtype)
    if inside is not None:
        acc0[inner] = a_nodes[inner] * op.apply(inside(u0, 0))
    extra0 = rhs_extra(u0, 0)
    acc0 = acc0 + extra0
    u1 = u0 + 0.5 * grid.dt**2 * acc0
    _set_boundary(u0, grid, {f: v[0] for f, v in hb.items()})
    _set_boundary(u1, grid, {f: v[1] for f, v in hb.items()})
    full, layers, peak = _march(grid, a_nodes, rhs_extra, hb, u0, u1, inside, op, storage, 0.0, dtype)
    meta = dict(meta or {"equation": "linear"})
    meta["max_abs"] = peak
    if storage == "full":
        return WaveField(grid=grid, u=full, meta=meta)
    return WaveField(grid=grid, u=np.zeros(0), meta=meta, storage="trace", layers=layers)


def solve_linearized_first(coeffs: Coefficients, h: BoundarySignal, *, grid: Grid, storage: str = "full") -> WaveField:
    return solve_linear(coeffs, h, grid=grid, storage=storage, meta={"equation": "first-linearized"})


def second_order_sources(coeffs: Coefficients, v1: WaveField, v2: WaveField):
    """Sources of the second linearization for F = b_2 u^2: (2 b_2 v1 v2, c_2 v1 v2)."""
    _same_grid(v1.grid, v2.grid)
    if v1.storage != "full" or v2.storage != "full":
        raise GridMismatch("second linearization needs full first-order fields")
    grid = v1.grid
    X = grid.coords()
    prod = v1.u * v2.u
    tfac = lambda f: (1 + f.time_rate * grid.times).reshape((-1,) + (1,) * grid.dim)  # noqa: E731
    b = coeffs.b_n(X)[None] * tfac(coeffs.b_n) if coeffs.n == 2 else np.zeros((1,) + grid.shape)
    c2 = coeffs.ck(2)
    return 2.0 * b * prod, c2(X)[None] * tfac(c2) * prod


def solve_linearized_second(coeffs: Coefficients, v1: WaveField, v2: WaveField, storage: str = "full") -> WaveField:
    """``w_tt = a L(w + 2 b_2 v1 v2) + c_1 w + c_2 v1 v2`` with zero data."""
    inside, src = second_order_sources(coeffs, v1, v2)
    w = solve_linear(coeffs, None, grid=v1.grid, source=src, source_inside=inside, storage=storage,
                     meta={"equation": "second-linearized"})
    return w


def dtn_second(coeffs: Coefficients, w: WaveField, v1: WaveField, v2: WaveField) -> DtnTrace:
    """The second-order trace d_nu (w + 2 b_2 v1 v2)."""
    inside, _ = second_order_sources(coeffs, v1, v2)
    total = WaveField(grid=w.grid, u=w.u + inside, meta={"equation": "second-linearized+F"})
    return dtn(total, None)


def solve_backward(coeffs: Coefficients, g0: BoundarySignal, *, grid: Grid, storage: str = "full",
                   return_tilde: bool = False) -> WaveField:
    """``w_tt = L(a w) + c_1 w`` with w = g0 on the boundary and zero data at t = T.

    Solved as the forward problem for ``w~ = a w`` in reflected time
    ``t' = T - t``, then divided by ``a``.
    """
    X = grid.coords()
    a_nodes = coeffs.a(X)
    T = grid.T
    a_field = coeffs.a

    reflected = BoundarySignal(lambda t, x: a_field(x) * g0(T - t, x), label="reflected")
    c1 = coeffs.ck(1)
    if c1.time_dependent:
        raise ConfigInvalid("backward solves need time-independent c_1", "coefficients/c/0")
    tilde = solve_linear(coeffs, reflected, grid=grid, storage=storage, meta={"equation": "backward-tilde"})
    if storage == "full":
        wt = tilde.u[::-1]
        if return_tilde:
            return WaveField(grid=grid, u=wt, meta={"equation": "backward-tilde(a w)"})
        return WaveField(grid=grid, u=wt / a_nodes[None], meta={"equation": "backward"})
    layers = {}
    for f, v in tilde.layers.items():
        axis, side = f
        idx = [0, 1, 2] if side == 0 else [-1, -2, -3]
        a_l = np.stack([np.take(a_nodes, i, axis=axis) for i in idx])
        layers[f] = v[::-1] / (1.0 if return_tilde else a_l[None])
    return WaveField(grid=grid, u=np.zeros(0), meta={"equation": "backward"}, storage="trace", layers=layers)


# --------------------------------------------------------------------------
# DtN traces
# --------------------------------------------------------------------------


def conormal_derivative(field_: WaveField, values_fn: Optional[Callable] = None) -> DtnTrace:
    """``n_i g^{ij} d_j v / |n|_{g^{-1}}`` on every face by second-order one-sided differences."""
    g = field_.grid
    metric = g.metric
    d = g.dim
    out = {}
    for face in g.faces():
        axis, side = face
        L = field_.face_layers(face)  # (nt+1, 3, *face_shape)
        if values_fn is not None:
            L = values_fn(L, face)
        sgn = -1.0 if side == 0 else 1.0
        hn = g.dx[axis]
        # outward normal derivative: -(dv/dx) at lo, +(dv/dx) at hi; one-sided inward stencil
        dn = -(-3 * L[:, 0] + 4 * L[:, 1] - L[:, 2]) / (2 * hn)  # equals n . grad v
        xf = g.face_coords(face)
        ginv = metric.g_inv(xf)
        nvec = g.face_normal(face)
        norm = np.sqrt(np.einsum("i,...ij,j->...", nvec, ginv, nvec))
        gnn = np.einsum("i,...ij,j->...", nvec, ginv, nvec)
        total = gnn[None] * dn
        # tangential contributions n_i g^{ij} d_j v for j != axis
        face_axes = [j for j in range(d) if j != axis]
        for pos, j in enumerate(face_axes):
            coef = sgn * ginv[..., axis, j]
            if np.max(np.abs(coef)) == 0.0:
                continue
            dj = np.gradient(L[:, 0], g.dx[j], axis=1 + pos, edge_order=2)
            total = total + coef[None] * dj
        out[face] = total / norm[None]
    return DtnTrace(grid=g, faces=out)


def dtn(field_: WaveField, coeffs: Optional[Coefficients]) -> DtnTrace:
    """``d_nu (u + F(x, u))`` on the boundary lattice."""
    g = field_.grid
    if coeffs is None or not np.any(coeffs.b_n(g.coords()) != 0):
        tr = conormal_derivative(field_)
    else:
        X = g.coords()
        rate = coeffs.b_n.time_rate
        tfac = (1 + rate * g.times)

        def with_F(L, face):
            axis, side = face
            idx = [0, 1, 2] if side == 0 else [-1, -2, -3]
            b = np.stack([np.take(coeffs.b_n(X), i, axis=axis) for i in idx])
            shape = (-1,) + (1,) * (L.ndim - 1)
            return L + b[None] * tfac.reshape(shape) * L**coeffs.n

        tr = conormal_derivative(field_, with_F)
    tr.meta.update({"source": field_.meta.get("equation", "")})
    return tr


def boundary_integral(grid: Grid, weight_faces: dict, trace: DtnTrace) -> complex:
    """int_0^T int_dM weight * trace dS_g dt by trapezoid quadrature."""
    _same_grid(grid, trace.grid)
    metric = grid.metric
    wt = grid.time_weights()
    total = 0.0 + 0.0j
    for face in grid.faces():
        xf = grid.face_coords(face)
        nvec = grid.face_normal(face)
        # induced area element: sqrt|g| |n|_{g^{-1}} dS_euclid
        dS = np.sqrt(np.linalg.det(metric.g(xf))) * np.sqrt(
            np.einsum("i,...ij,j->...", nvec, metric.g_inv(xf), nvec))
        w = np.multiply.outer(wt, grid.face_weights(face) * dS)
        total += complex(np.sum(weight_faces[face] * trace.faces[face] * w))
    return total


# --------------------------------------------------------------------------
# compatibility
# --------------------------------------------------------------------------


def _fd_laplacian(fn: Callable, metric: Metric, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    d = metric.dim
    ginv = metric.g_inv(x)
    sg = np.sqrt(np.linalg.det(metric.g(x)))
    out = np.zeros(x.shape[:-1])
    # |g|^{-1/2} d_i(|g|^{1/2} g^{ij} d_j f), nested central differences
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h

        def flux(y):
            gi = metric.g_inv(y)
            s = np.sqrt(np.linalg.det(metric.g(y)))
            tot = 0.0
            for j in range(d):
                ej = np.zeros(d)
                ej[j] = h
                tot = tot + s * gi[..., i, j] * (fn(y + ej) - fn(y - ej)) / (2 * h)
            return tot

        out = out + (flux(x + ei) - flux(x - ei)) / (2 * h)
    return out / sg


def check_compatibility(h: BoundarySignal, phi: Optional[Callable], psi: Optional[Callable],
                        coeffs: Coefficients, order: int = 2, *, grid: Grid, tol: float = 1e-6) -> dict:
    """Corner compatibility of the data at t = 0 up to ``order`` (at most 2 is checked)."""
    metric = grid.metric
    zero = lambda x: np.zeros(np.shape(x)[:-1])  # noqa: E731
    phi = phi or zero
    psi = psi or zero
    dt = 1e-4 * grid.T
    report = {"order_checked": min(order, 2), "unchecked_orders": list(range(3, order + 1))}
    residuals = {}
    worst_node = {}
    for face in grid.faces():
        xf = grid.face_coords(face)
        hs = [h(k * dt / 2, xf) for k in range(7)]
        h0 = hs[0]
        r0 = np.abs(h0 - phi(xf))
        clauses = [("h(0)=phi", r0)]

        def one_sided(step, k):
            # second-order one-sided stencils on nodes 0, k, 2k, 3k (k = 2 at dt, k = 1 at dt/2)
            v = hs[0 : 3 * k + 1 : k]
            d1 = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * step)
            d2 = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / step**2
            return d1, d2

        (d1a, d2a), (d1b, d2b) = one_sided(dt, 2), one_sided(dt / 2, 1)
        # Richardson on the O(dt^2) stencils
        ht = (4 * d1b - d1a) / 3
        if order >= 1:
            clauses.append(("d_t h(0)=psi", np.abs(ht - psi(xf))))
        if order >= 2:
            htt = (4 * d2b - d2a) / 3
            F = lambda x: phi(x) + coeffs.b_n(x) * phi(x) ** coeffs.n  # noqa: E731
            G = sum(coeffs.ck(k)(xf) * phi(xf) ** k / math.factorial(k) for k in range(1, coeffs.K + 1))
            rhs = coeffs.a(xf) * _fd_laplacian(F, metric, xf) + G
            clauses.append(("d_t^2 h(0)=a L(phi+F)+G", np.abs(htt - rhs)))
        for name, r in clauses:
            m = float(np.max(r))
            if m > residuals.get(name, -1.0):
                residuals[name] = m
                flat_idx = int(np.argmax(r))
                worst_node[name] = {"face": list(face), "node": np.unravel_index(flat_idx, np.shape(r)),
                                    "x": np.asarray(xf).reshape(-1, metric.dim)[flat_idx].tolist()}
    scale = max(h.amplitude(grid), 1.0)
    bad = {k: v for k, v in residuals.items() if v > tol * scale}
    report["residuals"] = residuals
    report["worst"] = {k: {"face": v["face"], "node": [int(i) for i in v["node"]], "x": v["x"]}
                       for k, v in worst_node.items()}
    if bad:
        raise Incompatible({k: f"{v:.3g} at x={worst_node[k]['x']}" for k, v in bad.items()})
    report["compatible"] = True
    return report
