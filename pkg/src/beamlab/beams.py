"""Gaussian beams along null geodesics.

A beam lives on a Fermi chart ``w = (s, z1, y)`` and reads

    u = exp(i tau kappa phi) * chi(|z'| / dprime) * A0(s),    phi = z1 + z'^T H(s) z'

with ``H = Z Y^{-1}`` from the linear system ``Y' = C Z``, ``Z' = -D Y``.
Ambient jets (value, gradient, Hessian in ``(t, x)``) are obtained by the
chain rule through the closed-form chart derivatives, so no phase is ever
differentiated numerically.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    BranchAmbiguity,
    ChartRangeExceeded,
    NotPositiveImaginary,
    SingularY,
    UnderResolved,
)
from .fields import ScalarField
from .geometry import FermiChart, Metric, c_matrix, d_matrix


# --------------------------------------------------------------------------
# cutoff
# --------------------------------------------------------------------------


def cutoff(r, derivatives: bool = False):
    """Quintic smoothstep cutoff: 1 on [0, 1/4], 0 on [1/2, inf), C^2 at both junctions."""
    r = np.asarray(r, dtype=float)
    u = np.clip((r - 0.25) * 4.0, 0.0, 1.0)
    val = 1.0 - u**3 * (10.0 - 15.0 * u + 6.0 * u * u)
    if not derivatives:
        return val
    ramp = (r > 0.25) & (r < 0.5)
    d1 = np.where(ramp, -4.0 * 30.0 * u * u * (1.0 - u) ** 2, 0.0)
    d2 = np.where(ramp, -16.0 * 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u), 0.0)
    return val, d1, d2


# --------------------------------------------------------------------------
# Riccati via the linear Y/Z system
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    s_grid: np.ndarray
    Y: np.ndarray  # (n, d, d) complex
    Z: np.ndarray
    H0: np.ndarray
    chart: FermiChart = field(repr=False)
    _ys: CubicSpline = field(repr=False, default=None)
    _zs: CubicSpline = field(repr=False, default=None)

    @property
    def H(self) -> np.ndarray:
        return self.Z @ np.linalg.inv(self.Y)

    @property
    def s_range(self) -> tuple:
        return float(self.s_grid[0]), float(self.s_grid[-1])

    def _check(self, s):
        s = np.asarray(s, dtype=float)
        lo, hi = self.s_range
        if np.any(s < lo - 1e-9) or np.any(s > hi + 1e-9):
            raise ChartRangeExceeded(f"s outside [{lo:.6g}, {hi:.6g}]")
        return np.clip(s, lo, hi)

    def Y_at(self, s) -> np.ndarray:
        return self._ys(self._check(s))

    def Z_at(self, s) -> np.ndarray:
        return self._zs(self._check(s))

    def H_at(self, s) -> np.ndarray:
        Y = self.Y_at(s)
        H = self.Z_at(s) @ np.linalg.inv(Y)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def H_jets(self, s):
        """H, dH/ds, d2H/ds2 from the Riccati identities (exact given H and D)."""
        s = self._check(s)
        C = c_matrix(self.chart.dim)
        H = self.H_at(s)
        D = 0.25 * self.chart.d2_g11(s)
        Hd = -H @ C @ H - D
        if self.chart._d2_spline is None:
            Dd = np.zeros_like(D)
        else:
            Dd = 0.25 * self.chart._d2_spline(s, 1)
            Dd = 0.5 * (Dd + np.swapaxes(Dd, -1, -2))
        Hdd = -Hd @ C @ H - H @ C @ Hd - Dd
        return H, Hd, Hdd

    def transverse_Y(self, s=None) -> np.ndarray:
        Y = self.Y if s is None else self.Y_at(s)
        return Y[..., 1:, 1:]

    def min_imag_eig(self) -> float:
        Hs = self.H
        return float(np.min(np.linalg.eigvalsh(np.imag(0.5 * (Hs + np.swapaxes(Hs, -1, -2))))))

    def imag_det_defect(self) -> float:
        """max_s |det(Im H) |det Y|^2 - det(Im H0)| / det(Im H0)."""
        H = self.H
        ImH = np.imag(0.5 * (H + np.swapaxes(H, -1, -2)))
        lhs = np.linalg.det(ImH) * np.abs(np.linalg.det(self.Y)) ** 2
        ref = np.linalg.det(np.imag(self.H0))
        return float(np.max(np.abs(lhs - ref)) / ref)


def _validate_H0(H0, dim: int) -> np.ndarray:
    H0 = np.asarray(H0, dtype=complex)
    if H0.shape != (dim, dim):
        raise NotPositiveImaginary(f"H0 must have shape ({dim}, {dim}), got {H0.shape}")
    if np.max(np.abs(H0 - H0.T)) > 1e-12 * max(1.0, np.max(np.abs(H0))):
        raise NotPositiveImaginary("H0 must be symmetric")
    lam = np.linalg.eigvalsh(np.imag(H0))
    if lam[0] <= 0.0:
        raise NotPositiveImaginary(f"Im H0 has eigenvalue {lam[0]:.3g} <= 0")
    return H0


def solve_riccati(chart: FermiChart, H0=None, s_step: Optional[float] = None,
                  s_start: Optional[float] = None) -> RiccatiSolution:
    """RK4 on the linear system from ``Y = I, Z = H0`` at the chart start; H = Z Y^{-1}."""
    d = chart.dim
    H0 = _validate_H0(1j * np.eye(d) if H0 is None else H0, d)
    lo, hi = chart.s_range
    lo = lo if s_start is None else float(s_start)
    s_step = s_step or min(0.01, chart.dprime / 8)
    n = max(int(math.ceil((hi - lo) / s_step)), 4)
    grid = np.linspace(lo, hi, n + 1)
    C = c_matrix(d)
    D = 0.25 * chart.d2_g11(np.concatenate([grid, 0.5 * (grid[:-1] + grid[1:])]))
    Dn, Dm = D[: n + 1], D[n + 1:]
    Y = np.eye(d, dtype=complex)
    Z = H0.copy()
    Ys, Zs = [Y], [Z]
    for k in range(n):
        h = grid[k + 1] - grid[k]
        k1 = (C @ Z, -Dn[k] @ Y)
        k2 = (C @ (Z + 0.5 * h * k1[1]), -Dm[k] @ (Y + 0.5 * h * k1[0]))
        k3 = (C @ (Z + 0.5 * h * k2[1]), -Dm[k] @ (Y + 0.5 * h * k2[0]))
        k4 = (C @ (Z + h * k3[1]), -Dn[k + 1] @ (Y + h * k3[0]))
        Y = Y + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        Z = Z + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        Ys.append(Y)
        Zs.append(Z)
    Ys, Zs = np.array(Ys), np.array(Zs)
    dets = np.abs(np.linalg.det(Ys))
    if np.min(dets) < 1e-12:
        raise SingularY(f"det Y reaches {np.min(dets):.3g}; Im H0 > 0 should prevent this")
    return RiccatiSolution(s_grid=grid, Y=Ys, Z=Zs, H0=H0, chart=chart,
                           _ys=CubicSpline(grid, Ys, axis=0), _zs=CubicSpline(grid, Zs, axis=0))


# --------------------------------------------------------------------------
# leading amplitude
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LeadingAmplitude:
    """``A0(s) = det(Y)^{-1/2}`` on the branch continuous from ``A0 = 1`` at the start."""

    riccati: RiccatiSolution = field(repr=False)
    log_det: np.ndarray  # unwrapped log det Y on the grid
    transport_residual: float
    _spline: CubicSpline = field(repr=False, default=None)

    def __call__(self, s) -> np.ndarray:
        s = self.riccati._check(s)
        return np.exp(-0.5 * self._spline(s))

    def jets(self, s):
        """A0, A0', A0'' using the transport equation for the derivatives."""
        H, Hd, _ = self.riccati.H_jets(s)
        A = self(s)
        tr = np.trace(H, axis1=-2, axis2=-1) - H[..., 0, 0]  # Tr(CH)/2
        trd = np.trace(Hd, axis1=-2, axis2=-1) - Hd[..., 0, 0]
        A1 = -tr * A
        A2 = (tr * tr - trd) * A
        return A, A1, A2


def amplitude_leading(riccati: RiccatiSolution) -> LeadingAmplitude:
    det = np.linalg.det(riccati.Y)
    ang = np.angle(det)
    jumps = np.abs(np.diff(np.unwrap(ang)))
    if jumps.size and np.max(jumps) > math.pi / 2:
        raise BranchAmbiguity("arg det Y jumps by more than pi/2 between grid points; refine s_step")
    log_det = np.log(np.abs(det)) + 1j * (np.unwrap(ang) - ang[0])
    A = np.exp(-0.5 * log_det)
    # transport residual 2 A0' + Tr(CH) A0 with A0' by 4th-order differences on the grid
    s = riccati.s_grid
    h = s[1] - s[0]
    dA = np.empty_like(A)
    dA[2:-2] = (A[:-4] - 8 * A[1:-3] + 8 * A[3:-1] - A[4:]) / (12 * h)
    H = riccati.H
    trCH = 2.0 * (np.trace(H, axis1=-2, axis2=-1) - H[:, 0, 0])
    resid = 2 * dA[2:-2] + trCH[2:-2] * A[2:-2]
    return LeadingAmplitude(riccati=riccati, log_det=log_det,
                            transport_residual=float(np.max(np.abs(resid))) if resid.size else 0.0,
                            _spline=CubicSpline(s, log_det))


# --------------------------------------------------------------------------
# beams
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BeamJet:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    du: np.ndarray  # (n, 1+d) in (t, x)
    d2u: np.ndarray  # (n, 1+d, 1+d)
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    amp: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True, eq=False)
class GaussianBeam:
    chart: FermiChart
    riccati: RiccatiSolution
    amplitude: LeadingAmplitude
    tau: float
    kappa: float = 1.0
    delta_prime: float = 0.2
    order: int = 2
    conjugated: bool = False
    reflect_time: Optional[float] = None
    _speed_weight: Optional[CubicSpline] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.chart.dim

    def with_tau(self, tau: float) -> "GaussianBeam":
        return replace(self, tau=float(tau))

    def conjugate(self) -> "GaussianBeam":
        """Complex conjugate field: phase conj(phi) with -kappa, amplitude conj(A)."""
        return replace(self, conjugated=not self.conjugated)

    def reflected(self, T: float) -> "GaussianBeam":
        """Backward beam ``u(T - t, x)``."""
        return replace(self, reflect_time=None if self.reflect_time is not None else float(T))

    def descriptor(self) -> dict:
        H0 = self.riccati.H0
        return {
            "H0_re": np.real(H0).tolist(),
            "H0_im": np.imag(H0).tolist(),
            "tau": self.tau,
            "kappa": self.kappa,
            "delta_prime": self.delta_prime,
            "order": self.order,
            "t0": self.chart.geodesic.t0,
            "x0": self.chart.geodesic.base.start[0].tolist(),
            "v0": self.chart.geodesic.base.start[1].tolist(),
        }

    # -- chart-coordinate evaluation ----------------------------------------
    def _axis_amplitude(self, s):
        A, A1, A2 = self.amplitude.jets(s)
        if self._speed_weight is not None:
            L, L1, L2 = self._speed_weight(s), self._speed_weight(s, 1), self._speed_weight(s, 2)
            w = np.exp(L)
            A, A1, A2 = A * w, (A1 + A * L1) * w, (A2 + 2 * A1 * L1 + A * (L2 + L1 * L1)) * w
        return A, A1, A2

    def phase(self, s, zp) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        zp = np.asarray(zp, dtype=float)
        H = self.riccati.H_at(s)
        return zp[..., 0] + np.einsum("...i,...ij,...j->...", zp, H, zp)

    def chart_value(self, s, zp) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        zp = np.asarray(zp, dtype=float)
        rho = np.linalg.norm(zp, axis=-1) / self.delta_prime
        out = np.zeros(s.shape, dtype=complex)
        live = rho < 0.5
        if np.any(live):
            sl, zl = s[live], zp[live]
            A = self._axis_amplitude(sl)[0] * cutoff(rho[live])
            out[live] = np.exp(1j * self.tau * self.kappa * self.phase(sl, zl)) * A
        return np.conj(out) if self.conjugated else out

    def chart_jet(self, s, zp, need_hessian: bool = True) -> BeamJet:
        """Ambient jets of the beam at chart points ``(s, z')`` (flattened)."""
        s = np.atleast_1d(np.asarray(s, dtype=float)).ravel()
        zp = np.asarray(zp, dtype=float).reshape(-1, self.dim)
        ch = self.chart
        d = self.dim
        n = s.size
        m = 1 + d
        t, x = ch.chart_map(s, zp)
        # chart derivatives: w = (s, z1, y) as a function of (t, x)
        r = s + 0.5 * zp[:, 0]
        yv = zp[:, 1:]
        Js = ch.spatial_jacobian(r, yv)
        Jinv = np.linalg.inv(Js)  # rows: (r, y), cols: x
        Dw = np.zeros((n, m, m))
        Dw[:, 0, 0] = 0.5
        Dw[:, 0, 1:] = 0.5 * Jinv[:, 0]
        Dw[:, 1, 0] = -1.0
        Dw[:, 1, 1:] = Jinv[:, 0]
        Dw[:, 2:, 1:] = Jinv[:, 1:]
        D2w = np.zeros((n, m, m, m))
        if need_hessian and not ch.affine:
            K = ch.spatial_hessian(r, yv)
            D2q = -np.einsum("nab,nbcd,nck,ndl->nakl", Jinv, K, Jinv, Jinv)
            D2w[:, 0, 1:, 1:] = 0.5 * D2q[:, 0]
            D2w[:, 1, 1:, 1:] = D2q[:, 0]
            D2w[:, 2:, 1:, 1:] = D2q[:, 1:]
        # phase in chart coordinates
        H, Hd, Hdd = self.riccati.H_jets(s)
        Hz = np.einsum("nij,nj->ni", H, zp)
        Hdz = np.einsum("nij,nj->ni", Hd, zp)
        phi = zp[:, 0] + np.einsum("ni,ni->n", zp, Hz)
        phi_w = np.zeros((n, m), dtype=complex)
        phi_w[:, 0] = np.einsum("ni,ni->n", zp, Hdz)
        phi_w[:, 1:] = 2 * Hz
        phi_w[:, 1] += 1.0
        phi_ww = np.zeros((n, m, m), dtype=complex)
        phi_ww[:, 0, 0] = np.einsum("ni,nij,nj->n", zp, Hdd, zp)
        phi_ww[:, 0, 1:] = 2 * Hdz
        phi_ww[:, 1:, 0] = 2 * Hdz
        phi_ww[:, 1:, 1:] = 2 * H
        # amplitude
        A0, A1, A2 = self._axis_amplitude(s)
        rad = np.linalg.norm(zp, axis=1)
        c0, c1, c2 = cutoff(rad / self.delta_prime, derivatives=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            zhat = np.where(rad[:, None] > 0, zp / rad[:, None], 0.0)
        c1 = c1 / self.delta_prime
        c2 = c2 / self.delta_prime**2
        chi_z = c1[:, None] * zhat
        proj = np.eye(d)[None] - zhat[:, :, None] * zhat[:, None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(rad > 0, c1 / np.where(rad > 0, rad, 1.0), 0.0)
        chi_zz = c2[:, None, None] * zhat[:, :, None] * zhat[:, None, :] + radial[:, None, None] * proj
        amp = c0 * A0
        A_w = np.zeros((n, m), dtype=complex)
        A_w[:, 0] = c0 * A1
        A_w[:, 1:] = chi_z * A0[:, None]
        A_ww = np.zeros((n, m, m), dtype=complex)
        A_ww[:, 0, 0] = c0 * A2
        A_ww[:, 0, 1:] = chi_z * A1[:, None]
        A_ww[:, 1:, 0] = chi_z * A1[:, None]
        A_ww[:, 1:, 1:] = chi_zz * A0[:, None, None]
        # push forward to (t, x)
        dphi = np.einsum("nai,na->ni", Dw, phi_w)
        dA = np.einsum("nai,na->ni", Dw, A_w)
        d2phi = np.einsum("nai,nab,nbj->nij", Dw, phi_ww, Dw) + np.einsum("na,naij->nij", phi_w, D2w)
        d2A = np.einsum("nai,nab,nbj->nij", Dw, A_ww, Dw) + np.einsum("na,naij->nij", A_w, D2w)
        ik = 1j * self.tau * self.kappa
        live = rad < 0.5 * self.delta_prime
        e = np.where(live, np.exp(ik * np.where(live, phi, 0.0)), 0.0)
        u = e * amp
        du = e[:, None] * (ik * dphi * amp[:, None] + dA)
        d2u = e[:, None, None] * (
            ik * ik * dphi[:, :, None] * dphi[:, None, :] * amp[:, None, None]
            + ik * (d2phi * amp[:, None, None] + dphi[:, :, None] * dA[:, None, :] + dA[:, :, None] * dphi[:, None, :])
            + d2A
        )
        jet = BeamJet(t=t, x=x, u=u, du=du, d2u=d2u, phi=phi, dphi=dphi, d2phi=d2phi, amp=amp, mask=live)
        return self._finish(jet)

    def _finish(self, jet: BeamJet) -> BeamJet:
        u, du, d2u, phi, dphi, d2phi, amp = jet.u, jet.du, jet.d2u, jet.phi, jet.dphi, jet.d2phi, jet.amp
        t = jet.t
        if self.conjugated:
            u, du, d2u = np.conj(u), np.conj(du), np.conj(d2u)
            phi, dphi, d2phi, amp = np.conj(phi), np.conj(dphi), np.conj(d2phi), np.conj(amp)
        if self.reflect_time is not None:
            t = self.reflect_time - t
            flip = np.ones(self.dim + 1)
            flip[0] = -1.0
            du = du * flip
            dphi = dphi * flip
            d2u = d2u * flip[:, None] * flip[None, :]
            d2phi = d2phi * flip[:, None] * flip[None, :]
        return BeamJet(t=t, x=jet.x, u=u, du=du, d2u=d2u, phi=phi, dphi=dphi, d2phi=d2phi, amp=amp, mask=jet.mask)

    # -- ambient evaluation ---------------------------------------------------
    def _to_chart(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        tt = np.broadcast_to(t, shape).ravel()
        if self.reflect_time is not None:
            tt = self.reflect_time - tt
        s, zp, ok = self.chart.inverse(tt, x.reshape(-1, self.dim))
        lo, hi = self.riccati.s_range
        ok &= (s >= lo) & (s <= hi)
        return shape, s, zp, ok

    def __call__(self, t, x) -> np.ndarray:
        shape, s, zp, ok = self._to_chart(t, x)
        out = np.zeros(s.shape, dtype=complex)
        if np.any(ok):
            out[ok] = self.chart_value(s[ok], zp[ok])
        return out.reshape(shape)

    def jet(self, t, x, need_hessian: bool = True) -> BeamJet:
        """Jets at ambient points; entries outside the tube are zero."""
        shape, s, zp, ok = self._to_chart(t, x)
        n = s.size
        m = self.dim + 1
        xs = np.asarray(x, dtype=float).reshape(-1, self.dim)
        tt = np.broadcast_to(np.asarray(t, dtype=float), shape).ravel()
        full = BeamJet(
            t=tt, x=xs,
            u=np.zeros(n, complex), du=np.zeros((n, m), complex), d2u=np.zeros((n, m, m), complex),
            phi=np.zeros(n, complex), dphi=np.zeros((n, m), complex), d2phi=np.zeros((n, m, m), complex),
            amp=np.zeros(n, complex), mask=np.zeros(n, bool),
        )
        if np.any(ok):
            sub = self.chart_jet(s[ok], zp[ok], need_hessian=need_hessian)
            for name in ("u", "du", "d2u", "phi", "dphi", "d2phi", "amp"):
                getattr(full, name)[ok] = getattr(sub, name)
            full.mask[ok] = sub.mask
        return full


def build_beam(chart: FermiChart, riccati: RiccatiSolution, tau: float, kappa: float = 1.0,
               delta_prime: Optional[float] = None, order: int = 2,
               amplitude: Optional[LeadingAmplitude] = None) -> GaussianBeam:
    """Assemble the order-``order`` beam. Orders 1 and 2 share the same phase and amplitude."""
    if tau <= 0:
        raise ChartRangeExceeded("tau must be positive")
    if order not in (1, 2):
        raise ChartRangeExceeded("beam order must be 1 or 2")
    if kappa == 0:
        raise ChartRangeExceeded("kappa must be nonzero")
    dp = chart.dprime if delta_prime is None else float(delta_prime)
    if dp > chart.dprime + 1e-12 or dp <= 0:
        raise ChartRangeExceeded(f"delta_prime {dp} exceeds the chart radius {chart.dprime}")
    amplitude = amplitude or amplitude_leading(riccati)
    weight = None
    d = chart.dim
    metric = chart.metric
    if d != 2 and metric.constant_a is None:
        # a Laplace_g differs from the optical wave operator by (d/2 - 1) <da, du>_g;
        # the factor a^{-(d-2)/4} along the axis absorbs it in the transport equation
        s = riccati.s_grid
        la = np.log(metric.a(chart.axis.x(s)))
        weight = CubicSpline(s, -(d - 2) / 4.0 * (la - la[0]))
    return GaussianBeam(chart=chart, riccati=riccati, amplitude=amplitude, tau=float(tau),
                        kappa=float(kappa), delta_prime=dp, order=order, _speed_weight=weight)


def evaluate_beam(beam: GaussianBeam, t, x) -> np.ndarray:
    return beam(t, x)


# --------------------------------------------------------------------------
# residuals
# --------------------------------------------------------------------------


def laplace_first_order(metric: Metric, x) -> tuple:
    """``(g^{ij}, b^j)`` with Laplace_g u = g^{ij} u_ij + b^j u_j."""
    ginv = metric.g_inv(x)
    if metric.constant_g is not None:
        return ginv, np.zeros(x.shape[:-1] + (metric.dim,))
    dg = metric.dg(x)
    dginv = -np.einsum("...ia,...kab,...bj->...kij", ginv, dg, ginv)
    div = np.einsum("...iij->...j", dginv)
    dlog = 0.5 * np.einsum("...ab,...kab->...k", ginv, dg)
    return ginv, div + np.einsum("...ij,...i->...j", ginv, dlog)


def apply_wave_operator(jet: BeamJet, metric: Metric, c1=None) -> np.ndarray:
    """``d_t^2 u - a Laplace_g u - c1 u`` from ambient jets."""
    x = jet.x
    ginv, b = laplace_first_order(metric, x)
    lap = np.einsum("nij,nij->n", ginv, jet.d2u[:, 1:, 1:]) + np.einsum("nj,nj->n", b, jet.du[:, 1:])
    out = jet.d2u[:, 0, 0] - metric.a(x) * lap
    if c1 is not None:
        out = out - ScalarField.from_spec(c1)(x) * jet.u
    return out


@dataclass
class ResidualReport:
    rows: list  # (tau, l2_residual, eikonal_max, transport_max)
    slope: float
    points: list = field(default_factory=list)

    def as_csv_rows(self):
        return [("tau", "l2_residual", "eikonal_max", "transport_max")] + [tuple(r) for r in self.rows]


def _chart_box(beam: GaussianBeam, T: float, metric: Metric):
    """s-interval whose tube can meet M x (0, T)."""
    lo, hi = beam.riccati.s_range
    geo = beam.chart.geodesic
    r_in, r_out = geo.base.entry_time, geo.base.exit_time
    pad = beam.delta_prime
    s_lo = max(lo, min(r_in, -geo.t0) - pad)
    s_hi = min(hi, max(r_out, T - geo.t0) + pad)
    return s_lo, s_hi


def _phase_gradient_bounds(beam: GaussianBeam, s_lo: float, s_hi: float) -> list:
    """Upper bounds of |d Re(phase)| along s and each z' axis over the live tube."""
    half = 0.5 * beam.delta_prime
    lo, hi = beam.riccati.s_range
    ss = np.linspace(max(s_lo, lo), min(s_hi, hi), 201)
    H, Hd, _ = beam.riccati.H_jets(ss)
    bound_s = float(np.max(np.linalg.norm(np.real(Hd), ord=2, axis=(-2, -1)))) * half**2
    rows = np.max(np.linalg.norm(np.real(H), axis=-1), axis=0)
    bound_z = [float((1.0 if i == 0 else 0.0) + 2 * half * rows[i]) for i in range(beam.dim)]
    return [bound_s] + bound_z


def residual_norms(beam: GaussianBeam, metric: Metric, c1=None, tau_list: Sequence[float] = (16, 32, 64, 128),
                   T: Optional[float] = None, ppw: float = 10.0, spacing: Optional[float] = None,
                   max_points: int = 4_000_000) -> ResidualReport:
    """L2 norm of the wave residual over M x (0, T) for each tau, plus axis diagnostics.

    Quadrature runs in chart coordinates on a uniform lattice with at least
    ``ppw`` points per wavelength, weighted by the chart Jacobian determinant.
    """
    if ppw < 10:
        raise UnderResolved("at least 10 points per wavelength are required")
    geo = beam.chart.geodesic
    if T is None:
        T = geo.t0 + geo.base.exit_time
    d = beam.dim
    s_lo, s_hi = _chart_box(beam, T, metric)
    rows = []
    half = 0.5 * beam.delta_prime
    # axis diagnostics are tau independent except for scaling of the eikonal residual
    s_axis = np.linspace(s_lo, s_hi, 101)
    jet0 = beam.chart_jet(s_axis, np.zeros((101, d)))
    a_ax = metric.a(jet0.x)
    ginv_ax = metric.g_inv(jet0.x)
    dphi = jet0.dphi
    eik = np.abs(-dphi[:, 0] ** 2 + a_ax * np.einsum("ni,nij,nj->n", dphi[:, 1:], ginv_ax, dphi[:, 1:]))
    eik_max = float(np.max(eik))
    transport = beam.amplitude.transport_residual
    grad_bounds = _phase_gradient_bounds(beam, s_lo, s_hi)
    for tau in tau_list:
        b = beam.with_tau(tau)
        lam = 2 * math.pi / (tau * abs(beam.kappa))
        if spacing is not None and spacing > lam / 10:
            raise UnderResolved(f"spacing {spacing:.3g} exceeds wavelength/10 = {lam / 10:.3g}")
        # per-axis spacing: ppw points per local wavelength of Re(phase) along that axis
        h_axes = []
        for rate in grad_bounds:
            h = min(lam / (ppw * max(rate, 1e-12)), beam.delta_prime / 40)
            if spacing is not None:
                h = min(h, spacing)
            h_axes.append(h)
        ns = int(math.ceil((s_hi - s_lo) / h_axes[0])) + 1
        ss = np.linspace(s_lo, s_hi, ns)
        z_axes = [np.linspace(-half, half, int(math.ceil(2 * half / h)) + 1) for h in h_axes[1:]]
        hs = ss[1] - ss[0]
        hz_prod = float(np.prod([z[1] - z[0] for z in z_axes]))
        grids = np.meshgrid(*z_axes, indexing="ij")
        Zp = np.stack([g.ravel() for g in grids], axis=-1)
        Zp = Zp[np.linalg.norm(Zp, axis=1) < half]
        total = 0.0
        npts = 0
        chunk = max(1, int(max_points // max(len(Zp), 1)))
        chunk = min(chunk, 64)
        for k0 in range(0, ns, chunk):
            sk = ss[k0:k0 + chunk]
            S = np.repeat(sk, len(Zp))
            Z = np.tile(Zp, (len(sk), 1))
            jet = b.chart_jet(S, Z)
            inside = jet.mask & metric.contains(jet.x) & (jet.t > 0) & (jet.t < T)
            if not np.any(inside):
                continue
            Lu = apply_wave_operator(jet, metric, c1)
            J = np.abs(np.linalg.det(beam.chart.chart_jacobian(S[inside], Z[inside])))
            total += float(np.sum(np.abs(Lu[inside]) ** 2 * J)) * hs * hz_prod
            npts += int(np.sum(inside))
        rows.append((float(tau), math.sqrt(total), eik_max, transport))
    taus = np.log([r[0] for r in rows])
    vals = np.log([max(r[1], 1e-300) for r in rows])
    slope = float(np.polyfit(taus, vals, 1)[0]) if len(rows) > 1 else float("nan")
    return ResidualReport(rows=rows, slope=slope)


def im_phase_ratio(beam: GaussianBeam, n: int = 21) -> float:
    """min of Im(phi)/|z'|^2 over a half-tube lattice (positive for a valid beam)."""
    d = beam.dim
    lo, hi = beam.riccati.s_range
    ss = np.linspace(lo, hi, n)
    zs = np.linspace(-0.5 * beam.delta_prime, 0.5 * beam.delta_prime, n)
    grids = np.meshgrid(*([zs] * d), indexing="ij")
    Zp = np.stack([g.ravel() for g in grids], axis=-1)
    Zp = Zp[(np.linalg.norm(Zp, axis=1) > 1e-9) & (np.linalg.norm(Zp, axis=1) < 0.5 * beam.delta_prime)]
    S = np.repeat(ss, len(Zp))
    Z = np.tile(Zp, (n, 1))
    phi = beam.phase(S, Z)
    return float(np.min(np.imag(phi) / np.sum(Z * Z, axis=1)))
