"""Ray transforms along geodesics, eta-localization and a parallel-beam inversion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import kernels
from .errors import (ConfigInvalid, ConjugatePointOnPath, DegenerateWeight, InsufficientAngles, LadderDiverged,
                     PathOutsideField)
from .geometry import FermiChart, Geodesic, NullGeodesic, _jacobi_transverse, build_fermi_chart

GL_NODES = 16
DEFAULT_ETAS = (1e-1, 3e-2, 1e-2, 3e-3)


@dataclass(frozen=True)
class RayTransformRecord:
    geodesic_id: int
    weight: str  # "null", "m=<m>", "eta-m=<m>"
    value: complex
    angle: float = float("nan")
    offset: float = float("nan")

    def csv_row(self) -> tuple:
        return (self.angle, self.offset, float(np.real(self.value)), float(np.imag(self.value)))


def _gauss_legendre(a: float, b: float, panels: int, order: int = GL_NODES):
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    t = (mid[:, None] + half[:, None] * xg[None]).ravel()
    w = (half[:, None] * wg[None]).ravel()
    return t, w


def _panels(length: float, per_unit: float = 64.0) -> int:
    return max(4, int(math.ceil(length * per_unit)))


# --------------------------------------------------------------------------
# transforms
# --------------------------------------------------------------------------


def ray_transform_null(f: Callable, ng: NullGeodesic, interval: Optional[tuple] = None,
                       panels: Optional[int] = None) -> complex:
    """int f(alpha(t)) dt over the geodesic's parameter interval by composite Gauss-Legendre."""
    lo, hi = interval or (ng.base.entry_time, ng.base.exit_time)
    if lo < ng.base.t[0] - 1e-12 or hi > ng.base.t[-1] + 1e-12:
        raise PathOutsideField("requested interval leaves the traced geodesic")
    t, w = _gauss_legendre(lo, hi, panels or _panels(hi - lo))
    tt, xx = ng.path(t)
    vals = np.asarray(f(tt, xx))
    if vals.shape != t.shape or not np.all(np.isfinite(vals)):
        raise PathOutsideField("field is undefined on part of the path")
    return complex(np.sum(vals * w))


def _unwrapped_power(det: np.ndarray, m: int, anchor_index: int, anchor_arg: float) -> np.ndarray:
    """det^{-m/2} on the branch whose argument is continuous and equals ``anchor_arg`` at ``anchor_index``."""
    arg = np.unwrap(np.angle(det))
    arg = arg + (anchor_arg - arg[anchor_index])
    return np.abs(det) ** (-0.5 * m) * np.exp(-0.5j * m * arg)


def transverse_weight(Yt: np.ndarray, m: int, anchor_index: int = 0, anchor_arg: float = 0.0) -> np.ndarray:
    """|det Y~|^{-1} (det Y~)^{-m/2} with a continuous branch."""
    det = np.linalg.det(Yt) if Yt.ndim == 3 else np.asarray(Yt)
    mod = np.abs(det)
    if np.min(mod) < 1e-12:
        raise DegenerateWeight(f"det Y~ vanishes on the path (min |det| = {np.min(mod):.3g})")
    return _unwrapped_power(det, m, anchor_index, anchor_arg) / mod


def ray_transform_weighted(f: Callable, geo: Geodesic, riccati, m: int, panels: Optional[int] = None) -> complex:
    """int f(gamma(t)) |det Y~(t)|^{-1} det(Y~(t))^{-m/2} dt along ``geo``.

    ``Y~`` is the transverse block of the Riccati ``Y`` (rows/cols 2..d), and
    the branch is continuous from the Riccati start where ``Y = I``.
    """
    if m < 1:
        raise ConfigInvalid("m must be >= 1", "transforms/m")
    s_lo, s_hi = riccati.s_range
    lo = max(geo.entry_time, s_lo)
    hi = min(geo.exit_time, s_hi)
    t, w = _gauss_legendre(lo, hi, panels or _panels(hi - lo))
    # anchor the branch on the Riccati grid where Y = I, then carry it to the nodes
    grid = riccati.s_grid
    det_grid = np.linalg.det(riccati.transverse_Y()) if riccati.chart.dim > 1 else np.ones(len(grid))
    if np.min(np.abs(det_grid)) < 1e-12:
        raise DegenerateWeight("det Y~ vanishes on the Riccati grid")
    arg_grid = np.unwrap(np.angle(det_grid))
    arg_grid -= arg_grid[0]
    arg_spline = CubicSpline(grid, arg_grid)
    if riccati.chart.dim > 1:
        det = np.linalg.det(riccati.transverse_Y(t))
    else:
        det = np.ones(len(t), dtype=complex)
    mod = np.abs(det)
    if np.min(mod) < 1e-12:
        raise DegenerateWeight(f"det Y~ vanishes on the path (min |det| = {np.min(mod):.3g})")
    # nearest 2 pi k to the spline argument picks the continuous branch at each node
    arg = np.angle(det)
    arg = arg + 2 * np.pi * np.round((arg_spline(t) - arg) / (2 * np.pi))
    weight = mod ** (-1.0 - 0.5 * m) * np.exp(-0.5j * m * arg)
    vals = np.asarray(f(geo.point(t)))
    return complex(np.sum(vals * weight * w))


# --------------------------------------------------------------------------
# eta localization
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EtaSolution:
    """Transverse Jacobi solution with Y~(0) = -i eta I, Y~'(0) = I, on both sides of 0."""

    t: np.ndarray
    Y: np.ndarray
    eta: float
    _spline: CubicSpline = field(repr=False, default=None)

    def det(self, t) -> np.ndarray:
        Yt = self._spline(t)
        return np.linalg.det(Yt) if Yt.ndim == 3 else Yt

    def weight(self, t, m: int, d: int) -> np.ndarray:
        """|det|^{-1} det^{-m/2}; branch continuous through t = 0 where arg det = -(d-1) pi / 2."""
        t = np.asarray(t, dtype=float)
        order = np.argsort(t)
        det = self.det(t[order])
        k0 = int(np.argmin(np.abs(t[order])))
        # the anchor argument at the node nearest 0 comes from the local model (t - i eta)^(d-1)
        arg0 = (d - 1) * math.atan2(-self.eta, t[order][k0])
        w_sorted = transverse_weight(det, m, k0, arg0)
        out = np.empty_like(w_sorted)
        out[order] = w_sorted
        return out


def _chart_for(geo, dprime: float = 0.1) -> FermiChart:
    if isinstance(geo, FermiChart):
        return geo
    ng = geo if isinstance(geo, NullGeodesic) else NullGeodesic(base=geo, t0=0.0, metric=geo.metric)
    return build_fermi_chart(ng.metric, ng, dprime)


def solve_eta_system(chart: FermiChart, eta: float, lo: float, hi: float, step: float = 2e-3) -> EtaSolution:
    d = chart.dim
    I = np.eye(d - 1)
    Y0 = -1j * eta * I
    Z0 = 0.5 * I.astype(complex)
    n_f = max(int(math.ceil(hi / step)), 4)
    n_b = max(int(math.ceil(-lo / step)), 4)
    Yf, _ = _jacobi_transverse(chart, np.linspace(0.0, hi, n_f + 1), Y0, Z0)
    Yb, _ = _jacobi_transverse(chart, np.linspace(0.0, lo, n_b + 1), Y0, Z0)
    t = np.concatenate([np.linspace(0.0, lo, n_b + 1)[:0:-1], np.linspace(0.0, hi, n_f + 1)])
    Y = np.concatenate([Yb[:0:-1], Yf])
    return EtaSolution(t=t, Y=Y, eta=eta, _spline=CubicSpline(t, Y, axis=0))


def _sinh_nodes(eta: float, lo: float, hi: float, n: int = 1600):
    """Nodes/weights for int_lo^hi with t = eta sinh(u): dense near 0 where the weight peaks."""
    u = np.linspace(math.asinh(lo / eta), math.asinh(hi / eta), n)
    t = eta * np.sinh(u)
    w = eta * np.cosh(u) * (u[1] - u[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return t, w


def model_normalization(eta: float, m: int, d: int, lo: float, hi: float) -> complex:
    """N = int_lo^hi |t - i eta|^{-(d-1)} (t - i eta)^{-m(d-1)/2} dt (flat-line weight)."""
    t, w = _sinh_nodes(eta, lo, hi)
    z = t - 1j * eta
    arg = (d - 1) * np.angle(z)
    val = np.abs(z) ** (-(d - 1) * (1 + 0.5 * m)) * np.exp(-0.5j * m * arg)
    return complex(np.sum(val * w))


@dataclass(frozen=True)
class LocalizationResult:
    estimate: complex
    finest: complex
    table: list  # rows: eta, eta_tilde, raw estimate, I1/N, I2/N
    residual: float
    exponent: float

    def as_dict(self) -> dict:
        return {
            "estimate": [self.estimate.real, self.estimate.imag],
            "finest": [self.finest.real, self.finest.imag],
            "residual": self.residual,
            "exponent": self.exponent,
            "table": [[r[0], r[1], r[2].real, r[2].imag, r[3].real, r[3].imag, r[4].real, r[4].imag]
                      for r in self.table],
        }


def error_exponent(m: int, d: int) -> float:
    """Leading power of eta in J/N - f(0) for smooth f (odd first moment of the weight)."""
    p_plus_q = (d - 1) * (1 + 0.5 * m)
    return min(1.0, p_plus_q - 1.0)


def check_conjugate_free(chart: FermiChart, lo: float, hi: float) -> None:
    d = chart.dim
    if d == 1:
        return
    I = np.eye(d - 1)
    for end in (lo, hi):
        n = max(int(abs(end) / 2e-3), 4)
        grid = np.linspace(0.0, end, n + 1)
        Y, _ = _jacobi_transverse(chart, grid, np.zeros_like(I), 0.5 * I)
        det = np.linalg.det(Y[1:])
        if np.any(np.sign(det) != np.sign(det[0])):
            k = int(np.argmax(np.sign(det) != np.sign(det[0])))
            raise ConjugatePointOnPath(f"det X1 changes sign near t = {grid[k + 1]:.4g}")


def localize_recover(f: Callable, geo, m: int, eta_list: Sequence[float] = DEFAULT_ETAS,
                     eta_tilde_list: Optional[Sequence[float]] = None, chart: Optional[FermiChart] = None,
                     interval: Optional[tuple] = None) -> LocalizationResult:
    """Estimate f(gamma(0)) from the eta-perturbed weighted transforms.

    Each rung divides the transform by the flat-line normalization; the
    ladder is then extrapolated to eta = 0 with the known leading exponent.
    The (I1, I2) split at |t| = eta_tilde is reported per rung.
    """
    chart = chart or _chart_for(geo)
    base = chart.geodesic.base
    lo, hi = interval or (base.entry_time, base.exit_time)
    if not lo < 0.0 < hi:
        raise ConfigInvalid("gamma(0) must be interior to the geodesic interval", "transforms/interval")
    d = chart.dim
    etas = [float(e) for e in eta_list]
    tildes = [10 * e for e in etas] if eta_tilde_list is None else [float(e) for e in eta_tilde_list]
    if any(e >= et for e, et in zip(etas, tildes)):
        raise ConfigInvalid("each eta must be below its eta_tilde", "transforms/eta_tilde_list")
    check_conjugate_free(chart, lo, hi)
    table = []
    raw = []
    for eta, eta_t in zip(etas, tildes):
        sol = solve_eta_system(chart, eta, lo, hi)
        t, w = _sinh_nodes(eta, lo, hi)
        vals = np.asarray(f(base.point(t)))
        weight = sol.weight(t, m, d)
        N = model_normalization(eta, m, d, lo, hi)
        near = np.abs(t) < eta_t
        I1 = complex(np.sum((vals * weight * w)[near])) / N
        I2 = complex(np.sum((vals * weight * w)[~near])) / N
        est = I1 + I2
        raw.append(est)
        table.append((eta, eta_t, est, I1, I2))
    beta = error_exponent(m, d)
    e = np.asarray(etas)
    A = np.stack([np.ones_like(e), e**beta] + ([e ** (2 * beta)] if len(e) > 3 else []), axis=1)
    coef, *_ = np.linalg.lstsq(A.astype(complex), np.asarray(raw), rcond=None)
    estimate = complex(coef[0])
    diffs = np.abs(np.diff(raw))
    if len(diffs) >= 2 and diffs[-1] > 1.5 * diffs[0] and diffs[-1] > 1e-3 * max(abs(raw[-1]), 1e-12):
        raise LadderDiverged(f"ladder steps grow: {diffs.tolist()}")
    residual = float(np.max(np.abs(A @ coef - np.asarray(raw)))) if len(raw) > A.shape[1] else float(diffs[-1])
    return LocalizationResult(estimate=estimate, finest=raw[-1], table=table, residual=residual, exponent=beta)


def eta_weight_bounds(chart: FermiChart, eta: float, eta_tilde: float, n: int = 401) -> dict:
    """Fitted constants of |1 - |det Y~^eta| / |t - i eta|^{d-1}| <= C1 eta_tilde and |r^eta| <= C2 |t|."""
    d = chart.dim
    sol = solve_eta_system(chart, eta, -eta_tilde, eta_tilde, step=min(2e-3, eta_tilde / 50))
    t = np.linspace(-eta_tilde, eta_tilde, n)
    det = sol.det(t)
    model = (t - 1j * eta) ** (d - 1)
    r = det / model - 1.0
    ratio = np.abs(1.0 - np.abs(model) / np.abs(det))
    nz = np.abs(t) > 1e-12
    return {
        "C1": float(np.max(ratio) / eta_tilde),
        "C2": float(np.max(np.abs(r[nz]) / np.abs(t[nz]))) if np.any(nz) else 0.0,
    }


# --------------------------------------------------------------------------
# parallel-beam inversion
# --------------------------------------------------------------------------


def line_family(n_angles: int, n_offsets: int, center, radius: float):
    """Angles in [0, pi) and offsets on a cell-centred lattice of [-radius, radius]."""
    thetas = np.arange(n_angles) * np.pi / n_angles
    ds = 2 * radius / n_offsets
    offsets = -radius + ds * (np.arange(n_offsets) + 0.5)
    return thetas, offsets


def line_geometry(theta: float, offset: float, center):
    """Base point (foot of the perpendicular) and unit direction of the line x.n = offset."""
    n = np.array([math.cos(theta), math.sin(theta)])
    e = np.array([-math.sin(theta), math.cos(theta)])
    return np.asarray(center, dtype=float) + offset * n, e


def ramp_filter(n_offsets: int, ds: float, window: str = "cosine") -> np.ndarray:
    """Frequency response of the band-limited ramp kernel, apodized by a cosine window."""
    size = int(2 ** math.ceil(math.log2(2 * n_offsets)))
    k = np.concatenate([np.arange(0, size // 2 + 1), np.arange(-size // 2 + 1, 0)])
    h = np.zeros(size)
    h[0] = 1.0 / (4 * ds * ds)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * ds) ** 2
    H = np.real(np.fft.fft(h)) * ds
    if window == "cosine":
        freq = np.fft.fftfreq(size)
        H = H * np.cos(np.pi * freq)
    return H


def invert_line_transform(records: Sequence[RayTransformRecord], xs, ys, center, min_angles: int = 32):
    """Filtered back-projection of parallel-beam line integrals onto the grid ``xs x ys``."""
    if len(records) == 0:
        raise InsufficientAngles("no transform records")
    thetas = np.array(sorted({r.angle for r in records}))
    offsets = np.array(sorted({r.offset for r in records}))
    if len(thetas) < min_angles:
        raise InsufficientAngles(f"{len(thetas)} directions < {min_angles}")
    ds = offsets[1] - offsets[0]
    if not np.allclose(np.diff(offsets), ds, rtol=1e-9, atol=1e-12):
        raise ConfigInvalid("offsets must be uniformly spaced", "transforms/offsets")
    ti = {t: i for i, t in enumerate(thetas)}
    oi = {o: j for j, o in enumerate(offsets)}
    sino = np.zeros((len(thetas), len(offsets)))
    for r in records:
        sino[ti[r.angle], oi[r.offset]] = float(np.real(r.value))
    H = ramp_filter(len(offsets), ds)
    size = len(H)
    padded = np.zeros((len(thetas), size))
    padded[:, : len(offsets)] = sino
    filtered = np.real(np.fft.ifft(np.fft.fft(padded, axis=1) * H[None], axis=1))[:, : len(offsets)]
    c = np.asarray(center, dtype=float)
    xs = np.asarray(xs, dtype=float) - c[0]
    ys = np.asarray(ys, dtype=float) - c[1]
    image = kernels.backproject(np.ascontiguousarray(filtered), thetas, offsets[0], ds, xs, ys)
    return image * (np.pi / len(thetas))


def records_from_sinogram(sino: np.ndarray, thetas, offsets, weight: str = "line") -> list:
    out = []
    k = 0
    for i, th in enumerate(thetas):
        for j, off in enumerate(offsets):
            out.append(RayTransformRecord(geodesic_id=k, weight=weight, value=complex(sino[i, j]),
                                          angle=float(th), offset=float(off)))
            k += 1
    return out


def line_sinogram(f: Callable, thetas, offsets, center, radius: float, panels: int = 32) -> np.ndarray:
    """Euclidean line integrals of ``f`` over lines x.n = offset, each clipped to the disc of ``radius``."""
    out = np.zeros((len(thetas), len(offsets)))
    for i, th in enumerate(thetas):
        for j, off in enumerate(offsets):
            half = math.sqrt(max(radius * radius - off * off, 0.0))
            if half == 0.0:
                continue
            base, e = line_geometry(th, off, center)
            t, w = _gauss_legendre(-half, half, panels)
            out[i, j] = float(np.dot(w, np.real(f(base + t[:, None] * e))))
    return out
