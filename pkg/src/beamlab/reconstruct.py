"""Inverse pipelines: stationary-phase extraction of b2, c_k and line-transform recovery of a, c1."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from . import transforms
from .beams import GaussianBeam, build_beam, solve_riccati
from .errors import (ConfigInvalid, DegenerateHessian, InductionIncomplete, MultipleIntersections, NoCriticalPoint,
                     SlowConvergence, TubeOverlapElsewhere)
from .fields import ScalarField
from .forward import Coefficients
from .geometry import Metric, NullCombination, build_fermi_chart, flat_metric, null_geodesic_through

DEFAULT_TAUS = (32.0, 64.0, 128.0, 256.0)
PPW = 10


# --------------------------------------------------------------------------
# stationary phase
# --------------------------------------------------------------------------


def hessian_factor(Q) -> tuple:
    """(2 pi)^{n/2} det(-i Q)^{-1/2} and the signature (None for complex Q).

    For real Q this is (2 pi)^{n/2} e^{i pi sgn / 4} |det Q|^{-1/2}. For
    Im Q >= 0 the square root is the product of principal roots of the
    eigenvalues of -iQ, which stay in the closed right half-plane.
    """
    Q = np.asarray(Q)
    Q = 0.5 * (Q + Q.T)
    n = Q.shape[0]
    pref = (2 * np.pi) ** (n / 2)
    if not np.iscomplexobj(Q) or np.max(np.abs(np.imag(Q))) == 0.0:
        lam = np.linalg.eigvalsh(np.real(Q))
        if np.min(np.abs(lam)) < 1e-8 or abs(np.prod(lam)) < 1e-10:
            raise DegenerateHessian(f"|det| = {abs(np.prod(lam)):.3g}, min |eig| = {np.min(np.abs(lam)):.3g}")
        sgn = int(np.sum(lam > 0) - np.sum(lam < 0))
        return pref * np.exp(0.25j * np.pi * sgn) / math.sqrt(abs(np.prod(lam))), sgn
    lam = np.linalg.eigvals(-1j * Q)
    if abs(np.prod(lam)) < 1e-10:
        raise DegenerateHessian(f"|det| = {abs(np.prod(lam)):.3g}")
    if np.min(np.real(lam)) < -1e-12:
        raise DegenerateHessian("Im of the Hessian is not positive semidefinite")
    return pref / np.prod(np.sqrt(lam)), None


def _fd_gradient(fn, p, h):
    n = p.size
    out = np.zeros(n, dtype=complex)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[i] = (fn((p + e)[None])[0] - fn((p - e)[None])[0]) / (2 * h)
    return out


def _fd_hessian(fn, p, h):
    n = p.size
    out = np.zeros((n, n), dtype=complex)
    f0 = fn(p[None])[0]
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        out[i, i] = (fn((p + ei)[None])[0] - 2 * f0 + fn((p - ei)[None])[0]) / h**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            pts = np.stack([p + ei + ej, p + ei - ej, p - ei + ej, p - ei - ej])
            v = fn(pts)
            out[i, j] = out[j, i] = (v[0] - v[1] - v[2] + v[3]) / (4 * h * h)
    if np.max(np.abs(out.imag)) == 0:
        out = out.real
    return out


def stationary_phase_leading(amplitude, phase: Callable, p, *, gradient=None, hessian=None,
                             fd_step: float = 1e-4) -> complex:
    """Leading coefficient of tau^{n/2} int A e^{i tau phase} at the critical point ``p``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    grad = _fd_gradient(phase, p, fd_step) if gradient is None else np.asarray(gradient)
    if np.linalg.norm(grad) > 1e-6:
        raise NoCriticalPoint(f"|grad phase(p)| = {np.linalg.norm(grad):.3g}")
    Q = _fd_hessian(phase, p, fd_step) if hessian is None else np.asarray(hessian)
    factor, _ = hessian_factor(Q)
    A = amplitude(p[None])[0] if callable(amplitude) else amplitude
    return complex(factor * A)


def oscillatory_integral(amplitude: Callable, phase: Callable, tau: float, lo, hi, points) -> complex:
    """Tensor trapezoid of int A e^{i tau phase} over the box [lo, hi]; A must vanish on its faces."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    n = lo.size
    npts = [int(points)] * n if np.isscalar(points) else [int(q) for q in points]
    axes = [np.linspace(lo[i], hi[i], npts[i]) for i in range(n)]
    wts = []
    for ax in axes:
        w = np.full(ax.size, ax[1] - ax[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        wts.append(w)
    total = 0j
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, n - 1) if n > 1 else None
    wrest = np.ones(1)
    for w in wts[1:]:
        wrest = np.multiply.outer(wrest, w).ravel()
    for x0, w0 in zip(axes[0], wts[0]):
        X = np.full((1, 1), x0) if n == 1 else np.column_stack([np.full(rest.shape[0], x0), rest])
        vals = amplitude(X) * np.exp(1j * tau * phase(X))
        total += w0 * np.sum(vals * wrest)
    return complex(total)


def fit_inverse_tau(taus, values) -> tuple:
    """Least-squares fit value = L + c/tau; returns (L, c, relative residual)."""
    taus = np.asarray(taus, dtype=float)
    vals = np.asarray(values, dtype=complex)
    A = np.stack([np.ones_like(taus), 1.0 / taus], axis=1).astype(complex)
    coef, *_ = np.linalg.lstsq(A, vals, rcond=None)
    L = complex(coef[0])
    if len(taus) > 2:
        res = float(np.max(np.abs(A @ coef - vals)))
    else:
        res = float(abs(vals[-1] - vals[-2]))
    rel = res / abs(L) if abs(L) > 0 else (0.0 if res == 0 else math.inf)
    return L, complex(coef[1]), rel


# --------------------------------------------------------------------------
# three-beam phase systems
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhaseSystem:
    point: np.ndarray  # (1 + d,)
    beams: tuple  # forward beams followed by the test beam
    weights: tuple  # kappa_1^(j) for the forward beams, then kappa_2 (> 0) for the test beam
    hessian: np.ndarray
    gradient: np.ndarray
    phase_value: complex
    signature: Optional[int]
    amplitude_product: complex
    causal_type: str
    mode: str  # "beam" or "manufactured"
    order: int = 2
    metric: Metric = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.point.size

    def phase(self, X) -> np.ndarray:
        """Combined phase at space-time points X (N, 1+d)."""
        X = np.asarray(X, dtype=float)
        if self.mode == "manufactured":
            dX = X - self.point
            return 0.5 * np.einsum("ni,ij,nj->n", dX, self.hessian, dX)
        total = np.zeros(X.shape[0], dtype=complex)
        for beam, kap in zip(self.beams[:-1], self.weights[:-1]):
            total += kap * beam.jet(X[:, 0], X[:, 1:], need_hessian=False).phi
        # the test beam is stored conjugated, so its phi is already conj(phi_test)
        total -= self.weights[-1] * self.beams[-1].jet(X[:, 0], X[:, 1:], need_hessian=False).phi
        return total

    def gamma_term(self, jets) -> np.ndarray:
        """kappa_2 <grad conj(phi_test), sum_j kappa_j grad phi_j>_g from precomputed jets."""
        X = jets[0].x
        ginv = self.metric.g_inv(X)
        fwd = sum(k * j.dphi[:, 1:] for k, j in zip(self.weights[:-1], jets[:-1]))
        test = jets[-1].dphi[:, 1:]
        return self.weights[-1] * np.einsum("ni,nij,nj->n", test, ginv, fwd)

    def amplitude_of(self, jets) -> np.ndarray:
        prod = np.ones(jets[0].amp.shape, dtype=complex)
        for j in jets[:-1]:
            prod = prod * j.amp
        return prod * jets[-1].amp

    def jets(self, X):
        X = np.asarray(X, dtype=float)
        return [b.jet(X[:, 0], X[:, 1:], need_hessian=False) for b in self.beams]

    def summary(self) -> dict:
        w, _ = np.linalg.eigh(np.imag(self.hessian))
        return {
            "mode": self.mode,
            "order": self.order,
            "point": self.point.tolist(),
            "weights": list(self.weights),
            "grad_norm": float(np.linalg.norm(self.gradient)),
            "phase_value_abs": float(abs(self.phase_value)),
            "causal_type": self.causal_type,
            "min_imag_hessian_eig": float(w[0]),
            "hessian_cond": float(np.linalg.cond(self.hessian)),
            "amplitude_product": [self.amplitude_product.real, self.amplitude_product.imag],
            **self.diagnostics,
        }


def _spatial_unit(metric: Metric, x, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / float(metric.optical().norm(x, v))


def _beam_through(metric: Metric, p, direction, tau, dprime, kappa, extend, H0=None) -> GaussianBeam:
    ng = null_geodesic_through(metric, p, direction, extend=extend)
    chart = build_fermi_chart(metric, ng, dprime)
    if callable(H0):
        H0 = H0(chart)
    ric = solve_riccati(chart, H0)
    return build_beam(chart, ric, tau, kappa=kappa)


def _axis_curve(beam: GaussianBeam) -> tuple:
    ng = beam.chart.geodesic
    base = ng.base
    keep = (base.t >= base.entry_time) & (base.t <= base.exit_time)
    t = base.t[keep]
    return t, np.column_stack([ng.t0 + t, base.x[keep]])


def check_intersections(beams: Sequence[GaussianBeam], p, dprime: float) -> dict:
    """Pairwise axis distances away from p: a second crossing or a tube contact is rejected."""
    p = np.asarray(p, dtype=float)
    report = {}
    uniq = []
    seen = set()
    for b in beams:
        key = tuple(np.round(b.chart.geodesic.base.start[1], 12))
        if key not in seen:
            seen.add(key)
            uniq.append(b)
    for i in range(len(uniq)):
        for j in range(i + 1, len(uniq)):
            s, ci = _axis_curve(uniq[i])
            _, cj = _axis_curve(uniq[j])
            dist, _ = cKDTree(cj).query(ci)
            # local minima of the distance along axis i, excluding the crossing at p
            interior = np.r_[False, (dist[1:-1] <= dist[:-2]) & (dist[1:-1] <= dist[2:]), False]
            near_p = np.linalg.norm(ci - p, axis=1) < 2 * dprime
            other = interior & ~near_p
            worst = float(np.min(dist[other])) if np.any(other) else math.inf
            report[f"{i}-{j}"] = worst
            if worst < 1e-3 * dprime:
                raise MultipleIntersections(f"axes {i} and {j} meet again at distance {worst:.2e}")
            if worst < dprime:
                raise TubeOverlapElsewhere(f"tubes {i} and {j} come within {worst:.3g} away from p")
    return report


def assemble_phase_system(metric: Metric, coeffs: Optional[Coefficients], p, combo: NullCombination,
                          tau: float = 32.0, delta_prime: float = 0.2, *, mode: str = "manufactured",
                          order: int = 2, extend: Optional[float] = None) -> PhaseSystem:
    """Beams through ``p`` along zeta0, zeta1 (k-1 copies) and the normalized test direction.

    ``mode="beam"`` keeps the combined beam phase; ``mode="manufactured"``
    replaces it by the quadratic form of its assembled Hessian so that the
    critical-point hypotheses hold exactly.
    """
    if mode not in ("beam", "manufactured"):
        raise ConfigInvalid("mode must be 'beam' or 'manufactured'", "reconstruct/mode")
    if order < 2:
        raise ConfigInvalid("order must be >= 2", "reconstruct/order")
    p = np.asarray(p, dtype=float)
    x = p[1:]
    ext = (0.5 * delta_prime + 0.2) if extend is None else float(extend)
    k0, k1 = combo.kappa11, combo.kappa12
    kw = combo.kappa2
    z0 = _spatial_unit(metric, x, combo.zetas[0])
    z1 = _spatial_unit(metric, x, combo.zetas[1])
    zt = _spatial_unit(metric, x, combo.xi2[1:])
    b0 = _beam_through(metric, p, z0, tau, delta_prime, k0, ext)
    split = k1 / (order - 1)
    b1 = _beam_through(metric, p, z1, tau, delta_prime, split, ext)
    bt = _beam_through(metric, p, zt, tau, delta_prime, kw, ext).conjugate()
    beams = (b0,) + (b1,) * (order - 1) + (bt,)
    weights = (k0,) + (split,) * (order - 1) + (kw,)
    inter = check_intersections([b0, b1, bt], p, delta_prime)
    X = p[None]
    jets = [b.jet(X[:, 0], X[:, 1:]) for b in (b0, b1, bt)]
    jets_full = [jets[0]] + [jets[1]] * (order - 1) + [jets[2]]
    hess = sum(k * j.d2phi[0] for k, j in zip(weights[:-1], jets_full[:-1]))
    grad = sum(k * j.dphi[0] for k, j in zip(weights[:-1], jets_full[:-1]))
    val = sum(k * j.phi[0] for k, j in zip(weights[:-1], jets_full[:-1]))
    # the test beam was conjugated, so its jets already carry conj(phi)
    hess = hess - kw * jets[2].d2phi[0]
    grad = grad - kw * jets[2].dphi[0]
    val = val - kw * jets[2].phi[0]
    hess = 0.5 * (hess + hess.T)
    amp = np.prod([j.amp[0] for j in jets_full[:-1]]) * jets[2].amp[0]
    lam = np.linalg.eigvalsh(np.imag(hess))
    if abs(val) > 1e-10:
        raise NoCriticalPoint(f"|Phi(p)| = {abs(val):.3g}")
    if lam[0] <= 0:
        raise DegenerateHessian(f"Im D^2 Phi(p) is not positive definite (min eig {lam[0]:.3g})")
    sig = None
    if mode == "beam":
        rl = np.linalg.eigvalsh(np.real(hess))
        sig = int(np.sum(rl > 1e-8) - np.sum(rl < -1e-8))
    diag = {"intersection_margins": inter, "grad": [[complex(g).real, complex(g).imag] for g in grad]}
    if mode == "manufactured":
        grad_used = np.zeros_like(grad)
        val = 0j
    else:
        grad_used = grad
    diag["beam_grad_norm"] = float(np.linalg.norm(grad))
    return PhaseSystem(point=p, beams=beams, weights=weights, hessian=hess, gradient=grad_used, phase_value=val,
                       signature=sig, amplitude_product=complex(amp), causal_type=combo.causal_type, mode=mode,
                       order=order, metric=metric, diagnostics=diag)


# --------------------------------------------------------------------------
# space-time quadrature of beam products
# --------------------------------------------------------------------------


DECAY = 25.0  # quadrature boxes stop where the Gaussian envelope falls below e^{-DECAY}


@dataclass(frozen=True, eq=False)
class WhitenedBox:
    """Coordinates X = p + T Y with T^T Im(Q) T = I, and a Y-box holding the integrand."""

    T: np.ndarray
    half: np.ndarray  # per-axis half widths in Y
    nodes: int
    jac: float

    def points(self, p, Y) -> np.ndarray:
        return p + Y @ self.T.T


def whitened_box(system: PhaseSystem, tau: float) -> WhitenedBox:
    mu, V = np.linalg.eigh(np.imag(system.hessian))
    T = V / np.sqrt(mu)[None, :]
    n = system.dim
    dp = system.beams[0].delta_prime
    # the envelope bound, or the tube intersection (a ball of radius 1.5 delta') in Y
    half = np.minimum(math.sqrt(2 * DECAY / tau), 1.5 * dp * np.sqrt(mu))
    Rp = T.T @ np.real(system.hessian) @ T
    g = T.T @ np.real(system.gradient)
    kmax = tau * (np.linalg.norm(Rp, 2) * np.linalg.norm(half) + np.linalg.norm(g))
    kmax = max(kmax, 2 * np.pi / np.min(half))
    h = 2 * np.pi / (PPW * kmax)
    nodes = int(math.ceil(2 * np.max(half) / h)) + 1
    return WhitenedBox(T=T, half=half, nodes=nodes, jac=float(abs(np.linalg.det(T))))


@dataclass(frozen=True, eq=False)
class SmoothFactors:
    """Beam amplitude product, gradient coupling (and beam-mode phase) on a coarse tensor Y-grid.

    Fine-grid values come from 1-D cubic-spline interpolation matrices
    applied axis by axis, which is cheap because both grids are tensor grids.
    """

    axes: tuple
    amp: np.ndarray
    gamma: np.ndarray
    phase: Optional[np.ndarray] = None
    leak: float = 0.0

    def matrices(self, fine_axes) -> list:
        return [CubicSpline(c, np.eye(c.size))(f) for c, f in zip(self.axes, fine_axes)]

    @staticmethod
    def slab(arr, mats, k) -> np.ndarray:
        """Values on the fine grid at fine index ``k`` of axis 0, flattened over the other axes."""
        out = np.tensordot(mats[0][k], arr, axes=(0, 0))
        for m in mats[1:]:
            out = np.tensordot(out, m, axes=(0, 1))
        return out.ravel()


def smooth_factors(system: PhaseSystem, box: WhitenedBox, tau: float, coarse: int = 49) -> SmoothFactors:
    n = system.dim
    axes = [np.linspace(-box.half[i], box.half[i], coarse) for i in range(n)]
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    X = box.points(system.point, Y)
    jets = system.jets(X)
    shape = (coarse,) * n
    amp = system.amplitude_of(jets)
    gam = system.gamma_term(jets)
    phase = None
    if system.mode == "beam":
        phase = sum(k * j.phi for k, j in zip(system.weights[:-1], jets[:-1])) - system.weights[-1] * jets[-1].phi
    env = np.abs(amp) * np.exp(-0.5 * tau * np.sum(Y * Y, axis=1))
    on_face = np.any(np.isclose(np.abs(Y), box.half[None, :]), axis=1)
    leak = float(np.max(env[on_face]) / max(np.max(env), 1e-300))
    return SmoothFactors(axes=tuple(axes), amp=amp.reshape(shape), gamma=gam.reshape(shape),
                         phase=None if phase is None else phase.reshape(shape), leak=leak)


def beam_integrals(system: PhaseSystem, tau: float, terms: dict) -> dict:
    """Space-time integrals of ``weight(x) * [A | Gamma A] e^{i tau Phi}`` over whitened coordinates.

    ``terms`` maps a name to (kind, spatial weight field) with kind "amp" or
    "gamma". All terms share one quadrature grid, so differences of terms
    cancel to rounding.
    """
    box = whitened_box(system, tau)
    factors = smooth_factors(system, box, tau)
    n = system.dim
    p = system.point
    axes = [np.linspace(-box.half[i], box.half[i], box.nodes) for i in range(n)]
    wts = []
    for ax in axes:
        w = np.full(ax.size, ax[1] - ax[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        wts.append(w)
    rest = np.stack(np.meshgrid(*axes[1:], indexing="ij"), axis=-1).reshape(-1, n - 1)
    wrest = np.ones(1)
    for w in wts[1:]:
        wrest = np.multiply.outer(wrest, w).ravel()
    mats = factors.matrices(axes)
    const_g = system.metric.constant_g is not None
    sg0 = float(np.sqrt(np.linalg.det(system.metric.g(p[None, 1:])[0]))) if const_g else None
    out = {k: 0j for k in terms}
    for k, (y0, w0) in enumerate(zip(axes[0], wts[0])):
        Y = np.column_stack([np.full(rest.shape[0], y0), rest])
        X = box.points(p, Y)
        amp = factors.slab(factors.amp, mats, k)
        gam = factors.slab(factors.gamma, mats, k)
        phase = system.phase(X) if factors.phase is None else factors.slab(factors.phase, mats, k)
        e = np.exp(1j * tau * phase)
        sg = sg0 if const_g else np.sqrt(np.linalg.det(system.metric.g(X[:, 1:])))
        vol = sg * wrest * (w0 * box.jac)
        for name, (kind, fld) in terms.items():
            base = amp if kind == "amp" else gam * amp
            out[name] += complex(np.sum(fld(X[:, 1:]) * base * e * vol))
    out["_meta"] = {"nodes": box.nodes, "leak": factors.leak}
    return out


# --------------------------------------------------------------------------
# reports and induction
# --------------------------------------------------------------------------


@dataclass
class ReconstructionReport:
    target: str
    points: list = field(default_factory=list)
    values: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    table: list = field(default_factory=list)  # (point_id, tau, integral, extracted)
    reference: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def add(self, point, value, residual, rows, reference=None, diagnostics=None):
        pid = len(self.points)
        self.points.append([float(v) for v in np.ravel(point)])
        self.values.append(complex(value))
        self.residuals.append(float(residual))
        for tau, integral, extracted in rows:
            self.table.append((pid, float(tau), complex(integral), complex(extracted)))
        self.reference.append(None if reference is None else float(reference))
        self.diagnostics.append(diagnostics or {})

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "points": self.points,
            "values": [[v.real, v.imag] for v in self.values],
            "residuals": self.residuals,
            "reference": self.reference,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def csv_rows(self) -> list:
        return [(pid, tau, I.real, I.imag, E.real, E.imag) for pid, tau, I, E in self.table]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class InductionState:
    """Which coefficients count as determined; later orders read their fields from here."""

    known: dict = field(default_factory=dict)

    def mark(self, name: str, value) -> None:
        self.known[name] = value if isinstance(value, ScalarField) else ScalarField.from_spec(value)

    def require(self, k: int) -> None:
        need = ["b2", "c1"] + [f"c{j}" for j in range(2, k)]
        missing = [n for n in need if n not in self.known]
        if missing:
            raise InductionIncomplete(f"c{k} needs {', '.join(missing)} first")


# --------------------------------------------------------------------------
# b2, c2, c_k at a point
# --------------------------------------------------------------------------


def manufactured_I2(system: PhaseSystem, coeffs: Coefficients, tau: float,
                   b2_known: Optional[ScalarField] = None) -> dict:
    """Leading-order second-order identity integrand on the system's phase.

    ``total = -2 tau^2 int b2 Gamma A e^{i tau Phi} + int c2/a A e^{i tau Phi}``.
    With ``b2_known`` the gradient term of that field is evaluated on the same
    quadrature and ``remainder = total - its gradient term`` is returned too.
    """
    a = coeffs.a
    terms = {"b2": ("gamma", coeffs.b_n), "c2": ("amp", lambda x: coeffs.ck(2)(x) / a(x))}
    if b2_known is not None:
        terms["b2_known"] = ("gamma", b2_known)
    parts = beam_integrals(system, tau, terms)
    out = {"b2": -2.0 * tau**2 * parts["b2"], "c2": parts["c2"], "meta": parts["_meta"]}
    out["total"] = out["b2"] + out["c2"]
    if b2_known is not None:
        out["remainder"] = out["total"] + 2.0 * tau**2 * parts["b2_known"]
    return out


def manufactured_Ik(system: PhaseSystem, coeffs: Coefficients, k: int, tau: float) -> complex:
    a = coeffs.a
    ck = coeffs.ck(k)
    return beam_integrals(system, tau, {"ck": ("amp", lambda x: ck(x) / a(x))})["ck"]


def _gamma_at_p(system: PhaseSystem) -> complex:
    X = system.point[None]
    return complex(system.gamma_term(system.jets(X))[0])


def _extract(system, taus, values, power, denom, check, residual_limit=0.2):
    scaled = [complex(v) * t**power for t, v in zip(taus, values)]
    L, c, rel = fit_inverse_tau(taus, scaled)
    est = L / denom
    rows = [(t, v, s / denom) for t, v, s in zip(taus, values, scaled)]
    if check and system.mode == "manufactured" and rel > residual_limit and abs(L) > 1e-14:
        raise SlowConvergence(f"tau fit residual {rel:.1%} exceeds {residual_limit:.0%}")
    return est, rel, rows


def _leading(system):
    factor, _ = hessian_factor(system.hessian)
    return factor


def recover_b2_at(p, data, system: PhaseSystem, tau_list: Sequence[float] = DEFAULT_TAUS,
                  report: Optional[ReconstructionReport] = None, reference=None, check: bool = True) -> tuple:
    """b2(p) from I2(tau): tau^{n/2-2} I2 -> -2 (2pi)^{n/2} det(-iQ)^{-1/2} Gamma(p) A(p) b2(p).

    ``data`` is a callable tau -> I2 or a sequence aligned with ``tau_list``.
    """
    taus = [float(t) for t in tau_list]
    vals = [data(t) for t in taus] if callable(data) else list(data)
    n = system.dim
    denom = -2.0 * _leading(system) * _gamma_at_p(system) * system.amplitude_product
    est, rel, rows = _extract(system, taus, vals, n / 2 - 2, denom, check)
    if report is not None:
        report.add(p, est, rel, rows, reference, system.summary())
    return est, rel


def recover_c2_at(p, data, system: PhaseSystem, coeffs_a: ScalarField, tau_list: Sequence[float] = DEFAULT_TAUS,
                  report: Optional[ReconstructionReport] = None, reference=None, check: bool = True) -> tuple:
    """c2(p) from the remainder I2 - (b2 gradient term): tau^{n/2} R -> (2pi)^{n/2} det(-iQ)^{-1/2} c2 A / a."""
    taus = [float(t) for t in tau_list]
    vals = [data(t) for t in taus] if callable(data) else list(data)
    n = system.dim
    a_p = float(coeffs_a(system.point[1:][None])[0])
    denom = _leading(system) * system.amplitude_product / a_p
    est, rel, rows = _extract(system, taus, vals, n / 2, denom, check)
    if report is not None:
        report.add(p, est, rel, rows, reference, system.summary())
    return est, rel


def recover_ck_at(p, k: int, data, system: PhaseSystem, coeffs_a: ScalarField, state: InductionState,
                  tau_list: Sequence[float] = DEFAULT_TAUS, report: Optional[ReconstructionReport] = None,
                  reference=None, check: bool = True) -> tuple:
    """c_k(p) from I_k(tau) = int c_k/a A_k e^{i tau Phi_k}, once lower orders are determined."""
    if k < 3:
        raise ConfigInvalid("recover_ck_at handles k >= 3", "reconstruct/k")
    state.require(k)
    if system.order != k:
        raise ConfigInvalid(f"system built for order {system.order}, need {k}", "reconstruct/system")
    return recover_c2_at(p, data, system, coeffs_a, tau_list, report, reference, check)


# --------------------------------------------------------------------------
# speed and c1 from beam pairs along lines
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LineKernel:
    """Beam-pair kernel of one straight line, integrated over time (z1) at fixed (r, z2)."""

    r: np.ndarray
    z2: np.ndarray
    x: np.ndarray  # (nr, nz, 2) template points
    speed: np.ndarray  # conj(u) Lap u integrated over z1
    lower: np.ndarray  # conj(u) u integrated over z1
    tau: float

    def normalized(self, which: str) -> np.ndarray:
        """Weights with unit transverse mass at every r, times dr dz2."""
        K = self.speed if which == "speed" else self.lower
        dz = self.z2[1] - self.z2[0]
        dr = self.r[1] - self.r[0]
        mass = np.sum(K, axis=1, keepdims=True) * dz
        wr = np.full(self.r.size, dr)
        wr[0] *= 0.5
        wr[-1] *= 0.5
        return K / mass * dz * wr[:, None]


def focused_H0(waist_s: float, beta: float):
    """Initial Hessian whose transverse block has its waist Im H = beta at chart time ``waist_s`` (flat case)."""

    def make(chart):
        s0 = chart.s_range[0]  # Riccati start
        h22 = 1.0 / (-1j / beta - 2.0 * (waist_s - s0))
        return np.diag([1j, h22])

    return make


def line_kernel(a0: float, tau: float, radius: float, delta_prime: float = 0.2, dr: float = 0.01,
                focus: bool = True) -> LineKernel:
    """Template kernel for a straight line of half-length ``radius`` through the origin along e1.

    With ``focus`` the transverse waist sits at the midpoint with Im H = 1/(2L),
    which minimises the widest beam section over a chord of half-length L.
    """
    span = radius + delta_prime + 1.0
    metric = flat_metric(2, -span, span, a=a0)
    ext = 0.5 * delta_prime + 0.2
    c = math.sqrt(a0)
    L = radius / c
    H0 = focused_H0(L, 1.0 / (2 * L)) if focus else None
    beam = _beam_through(metric, [0.0, -radius, 0.0], [1.0, 0.0], tau, delta_prime, 1.0, ext, H0)
    r = np.linspace(0.0, 2 * radius / c, int(round(2 * radius / c / dr)) + 1)
    sig = 1.0 / math.sqrt(2 * tau)
    half = min(0.5 * delta_prime, 9 * sig)
    nz = int(math.ceil(2 * half / (sig / 6))) | 1
    z = np.linspace(-half, half, nz)
    dz = z[1] - z[0]
    R, Z1, Z2 = np.meshgrid(r, z, z, indexing="ij")
    s = R - 0.5 * Z1
    zp = np.stack([Z1, Z2], axis=-1)
    jet = beam.chart_jet(s.ravel(), zp.reshape(-1, 2))
    u = jet.u.reshape(R.shape)
    lap = np.trace(jet.d2u[:, 1:, 1:], axis1=1, axis2=2).reshape(R.shape)
    speed = np.sum(np.conj(u) * lap, axis=1) * dz
    lower = np.sum(np.conj(u) * u, axis=1) * dz
    # spatial points depend on (r, z2) only; the line's midpoint sits at the origin
    rr = np.repeat(r, nz)
    _, x = beam.chart.chart_map(rr, np.column_stack([np.zeros(rr.size), np.tile(z, r.size)]))
    x = x.reshape(r.size, nz, 2)
    return LineKernel(r=r * c - radius, z2=z, x=x, speed=speed, lower=lower, tau=tau)


def synthesize_L1(f: Callable, kernel: LineKernel, which: str, thetas, offsets, center) -> np.ndarray:
    """Kernel-weighted integrals of a spatial field along the line family.

    This is the beam-pair volume term of L1 restricted to one line, with the
    kernel normalised to unit transverse mass, i.e. the estimate of the line
    integral of ``f`` at this tau.
    """
    W = kernel.normalized(which)
    keep = np.abs(W).max(axis=0) > 1e-14 * np.abs(W).max()
    W = W[:, keep]
    xt = kernel.x[:, keep]
    out = np.zeros((len(thetas), len(offsets)), dtype=complex)
    c = np.asarray(center, dtype=float)
    for i, th in enumerate(thetas):
        e = np.array([-math.sin(th), math.cos(th)])
        nrm = np.array([math.cos(th), math.sin(th)])
        rot = np.stack([e, -nrm], axis=1)  # template e1 -> e, e2 -> -n
        pts = xt @ rot.T
        for j, o in enumerate(offsets):
            out[i, j] = np.sum(f(pts + c + o * nrm) * W)
    return out


@dataclass
class LineRecovery:
    xs: np.ndarray
    ys: np.ndarray
    speed_field: np.ndarray  # recovered 1 - a1/a2
    c1_field: np.ndarray  # recovered (c1_2 - c1_1)/a2
    sinograms: dict
    taus: tuple
    report: dict


def recover_speed_and_c1(model1: Coefficients, model2: Coefficients, metric: Metric, *,
                         tau_list: Sequence[float] = (32.0, 64.0, 128.0), n_angles: int = 64, n_offsets: int = 64,
                         grid_points: int = 65, delta_prime: float = 0.2, jobs: int = 1) -> LineRecovery:
    """Line-transform data of (1 - a1/a2) and (c1_2 - c1_1)/a2 from beam pairs, then back-projection.

    The L1 volume terms are synthesised with beams on the flat background of
    model 1; each line's value is normalised by the same kernel applied to
    f = 1, extrapolated in 1/tau, and the sinogram is inverted.
    """
    if metric.dim != 2 or metric.constant_g is None:
        raise ConfigInvalid("line recovery needs a flat 2-d background", "reconstruct/metric")
    a1 = model1.a
    if not a1.is_constant:
        raise ConfigInvalid("model 1 must have constant speed (the flat background)", "reconstruct/model1/a")
    a0 = float(a1(np.zeros((1, 2)))[0])
    lo, hi = np.asarray(metric.lo, dtype=float), np.asarray(metric.hi, dtype=float)
    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    thetas, offsets = transforms.line_family(n_angles, n_offsets, center, radius)

    def f_speed(x):
        return 1.0 - a1(x) / model2.a(x)

    def f_c1(x):
        return (model2.ck(1)(x) - model1.ck(1)(x)) / model2.a(x)

    sino_a, sino_c = [], []
    for tau in tau_list:
        K = line_kernel(a0, tau, radius, delta_prime)
        sino_a.append(synthesize_L1(f_speed, K, "speed", thetas, offsets, center))
        sino_c.append(synthesize_L1(f_c1, K, "lower", thetas, offsets, center))
    taus = np.asarray(tau_list, dtype=float)

    def extrapolate(stack):
        data = np.asarray(stack)
        A = np.stack([np.ones_like(taus), 1.0 / taus], axis=1)
        flat = data.reshape(len(taus), -1)
        coef, *_ = np.linalg.lstsq(A.astype(complex), flat, rcond=None)
        resid = np.max(np.abs(A @ coef - flat)) if len(taus) > 2 else 0.0
        return coef[0].reshape(data.shape[1:]), float(resid)

    ja, ra = extrapolate(sino_a)
    jc, rc = extrapolate(sino_c)
    xs = np.linspace(lo[0], hi[0], grid_points)
    ys = np.linspace(lo[1], hi[1], grid_points)
    fa = transforms.invert_line_transform(transforms.records_from_sinogram(ja.real, thetas, offsets), xs, ys, center)
    fc = transforms.invert_line_transform(transforms.records_from_sinogram(jc.real, thetas, offsets), xs, ys, center)
    report = {
        "taus": taus.tolist(),
        "n_angles": n_angles,
        "n_offsets": n_offsets,
        "extrapolation_residual": {"speed": ra, "c1": rc},
        "max_abs": {"speed": float(np.max(np.abs(fa))), "c1": float(np.max(np.abs(fc)))},
        "imag_over_real": {"speed": float(np.max(np.abs(ja.imag)) / max(np.max(np.abs(ja.real)), 1e-300)),
                           "c1": float(np.max(np.abs(jc.imag)) / max(np.max(np.abs(jc.real)), 1e-300))},
    }
    return LineRecovery(xs=xs, ys=ys, speed_field=fa, c1_field=fc, sinograms={"speed": ja, "c1": jc},
                        taus=tuple(taus.tolist()), report=report)
