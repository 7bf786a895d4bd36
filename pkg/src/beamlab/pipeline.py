"""Task runners behind ``beamlab run``. Each stage returns a JSON-ready report and writes its tables and fields."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import beams, forward, geometry, reconstruct, transforms
from .config import ExperimentConfig
from .errors import ConfigInvalid
from .fields import ScalarField
from .io import write_csv, write_field

log = logging.getLogger("beamlab")

DEFAULT_PHANTOM = {"type": "gaussian", "amplitude": 1.0, "center": [0.5, 0.5], "width": 0.2, "base": 0.5}


@dataclass
class RunContext:
    cfg: ExperimentConfig
    out: Path
    jobs: int = 1
    state: reconstruct.InductionState = field(default_factory=reconstruct.InductionState)
    files: list = field(default_factory=list)

    def csv(self, name: str, header, rows) -> None:
        self.files.append(write_csv(self.out / name, header, rows).name)

    def field(self, name: str, array, meta: dict) -> None:
        p = write_field(self.out / name, array, meta)
        self.files += [p.name, p.with_suffix(".json").name]


def _complex(v) -> list:
    v = complex(v)
    return [v.real, v.imag]


def run_forward(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    metric, coeffs = cfg.metric(), cfg.model()
    adm = forward.check_admissible(coeffs, metric)
    grid = cfg.grid(metric, coeffs)
    h = cfg.signal()
    forward.check_compatibility(h, None, None, coeffs, grid=grid)
    u = forward.solve_forward(coeffs, h, grid=grid)
    energy = u.energy(metric)
    trace = forward.dtn(u, coeffs)
    ctx.csv("forward_energy.csv", ("t", "energy"), zip(grid.times.tolist(), energy.tolist()))
    ctx.field("forward_u_final", u.u[-1], {"t": float(grid.T), "grid": grid.spec()})
    return {"max_abs_u": u.max_abs(), "energy_final": float(energy[-1]), "dtn_l2": trace.l2(), "grid": grid.spec(),
            "admissibility": adm}


def _H0(spec, dim):
    if spec is None:
        return None
    return np.asarray(spec["re"], dtype=float) + 1j * np.asarray(spec["im"], dtype=float)


def run_beam_check(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    metric, coeffs = cfg.metric(), cfg.model()
    b = cfg.section("beam")
    d = metric.dim
    mid = 0.5 * (np.asarray(metric.lo) + np.asarray(metric.hi))
    start = b.get("start", [float(metric.lo[0])] + mid[1:].tolist())
    direction = b.get("direction", [1.0] + [0.0] * (d - 1))
    ng = geometry.null_geodesic_from(metric, 0.0, start, direction, extend=float(b["extend"]))
    chart = geometry.build_fermi_chart(metric, ng, float(b["delta_prime"]))
    ric = beams.solve_riccati(chart, _H0(b.get("H0"), d))
    taus = [float(t) for t in b["taus"]]
    beam = beams.build_beam(chart, ric, taus[0], order=int(b["order"]))
    c1 = coeffs.ck(1) if coeffs.K else None
    rep = beams.residual_norms(beam, metric, c1, taus, T=float(cfg.section("grid")["T"]))
    ctx.csv("beam_residuals.csv", rep.as_csv_rows()[0], rep.as_csv_rows()[1:])
    return {"slope": rep.slope, "rows": [list(r) for r in rep.rows], "order": int(b["order"]),
            "riccati_min_imag_eig": ric.min_imag_eig(), "riccati_identity_defect": ric.imag_det_defect(),
            "im_phase_ratio": beams.im_phase_ratio(beam)}


def run_transform_check(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    metric = cfg.metric()
    t = cfg.section("transform")
    d = metric.dim
    mid = 0.5 * (np.asarray(metric.lo) + np.asarray(metric.hi))
    phantom = ScalarField.from_spec(t.get("phantom", DEFAULT_PHANTOM if d == 2 else 1.0), "transform/phantom")
    point = np.asarray(t.get("point", mid.tolist()), dtype=float)
    direction = t.get("direction", [1.0] + [0.0] * (d - 1))
    geo = geometry.geodesic_through(metric, point, direction, extend=0.05)
    truth = float(phantom(point[None])[0])
    out = {"truth": truth, "localization": {}}
    rows = []
    for m in t["m"]:
        r = transforms.localize_recover(lambda x: phantom(x), geo, int(m), eta_list=t["eta_list"])
        out["localization"][str(m)] = {**r.as_dict(), "rel_error_finest": abs(r.finest - truth) / abs(truth)}
        rows += [(int(m), *row[:1], *_complex(row[2])) for row in r.table]
    ctx.csv("localization.csv", ("m", "eta", "estimate_re", "estimate_im"), rows)
    if t.get("fbp", d == 2) and d == 2 and metric.constant_g is not None:
        lo, hi = np.asarray(metric.lo, float), np.asarray(metric.hi, float)
        radius = 0.5 * float(np.linalg.norm(hi - lo))
        thetas, offsets = transforms.line_family(int(t["n_angles"]), int(t["n_offsets"]), mid, radius)
        sino = transforms.line_sinogram(lambda x: phantom(x), thetas, offsets, mid, radius)
        xs = np.linspace(lo[0], hi[0], int(t["grid_points"]))
        ys = np.linspace(lo[1], hi[1], int(t["grid_points"]))
        img = transforms.invert_line_transform(transforms.records_from_sinogram(sino, thetas, offsets), xs, ys, mid)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        ref = phantom(np.stack([X, Y], axis=-1))
        out["fbp_rel_l2"] = float(np.linalg.norm(img - ref) / np.linalg.norm(ref))
        ctx.field("fbp_image", img, {"xs": [xs[0], xs[-1], xs.size], "ys": [ys[0], ys[-1], ys.size]})
        ctx.csv("sinogram.csv", ("angle", "offset", "value"),
                [(th, off, sino[i, j]) for i, th in enumerate(thetas) for j, off in enumerate(offsets)])
    return out


def run_recover_a_c1(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    metric = cfg.metric()
    if "model2" not in cfg.resolved:
        raise ConfigInvalid("recover-a-c1 needs a second model", "/model2")
    m1, m2 = cfg.model("model"), cfg.model("model2")
    r = cfg.section("reconstruct")
    rec = reconstruct.recover_speed_and_c1(m1, m2, metric, tau_list=[float(x) for x in r["taus"]],
                                           n_angles=int(r["n_angles"]), n_offsets=int(r["n_offsets"]),
                                           grid_points=int(r["grid_points"]), delta_prime=float(r["delta_prime"]),
                                           jobs=ctx.jobs)
    X, Y = np.meshgrid(rec.xs, rec.ys, indexing="ij")
    P = np.stack([X, Y], axis=-1)
    fa = 1.0 - m1.a(P) / m2.a(P)
    fc = (m2.ck(1)(P) - m1.ck(1)(P)) / m2.a(P)
    meta = {"xs": [rec.xs[0], rec.xs[-1], rec.xs.size], "ys": [rec.ys[0], rec.ys[-1], rec.ys.size]}
    ctx.field("speed_contrast", rec.speed_field, meta)
    ctx.field("c1_contrast", rec.c1_field, meta)

    def rel(est, ref):
        n = np.linalg.norm(ref)
        return float(np.linalg.norm(est - ref) / n) if n > 0 else float(np.max(np.abs(est)))

    c1_mean = float(np.mean(rec.c1_field))
    ctx.state.mark("c1", c1_mean)
    return {**rec.report, "speed_rel_l2": rel(rec.speed_field, fa), "c1_rel_l2": rel(rec.c1_field, fc)}


def _points(cfg: ExperimentConfig, dim: int) -> list:
    r = cfg.section("reconstruct")
    default = [[0.6] + [0.5] * dim]
    pts = [np.asarray(p, dtype=float) for p in r.get("points", default)]
    for p in pts:
        if p.shape != (dim + 1,):
            raise ConfigInvalid(f"points are space-time (t, x) with {dim + 1} entries", "/reconstruct/points")
    return pts


def _table(ctx: RunContext, name: str, rep: reconstruct.ReconstructionReport) -> None:
    ctx.csv(name, ("point", "tau", "integral_re", "integral_im", "extracted_re", "extracted_im"), rep.csv_rows())


def run_recover_b2(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    metric, coeffs = cfg.metric(), cfg.model()
    r = cfg.section("reconstruct")
    taus = [float(x) for x in r["taus"]]
    mode = r["mode"]
    check = mode == "manufactured"
    rb, rc = reconstruct.ReconstructionReport("b2"), reconstruct.ReconstructionReport("c2")
    for p in _points(cfg, metric.dim):
        combo = geometry.find_null_combination(metric, p, r.get("seed_angles"))
        system = reconstruct.assemble_phase_system(metric, coeffs, p, combo, taus[0], float(r["delta_prime"]),
                                                   mode=mode)
        x = p[1:][None]
        parts = []
        for tau in taus:
            parts.append(reconstruct.manufactured_I2(system, coeffs, tau, coeffs.b_n))
            log.info("I2 at tau=%g done (%s nodes)", tau, parts[-1]["meta"]["nodes"])
        reconstruct.recover_b2_at(p, [q["total"] for q in parts], system, taus, rb,
                                  reference=float(coeffs.b_n(x)[0]), check=check)
        reconstruct.recover_c2_at(p, [q["remainder"] for q in parts], system, coeffs.a, taus, rc,
                                  reference=float(coeffs.ck(2)(x)[0]), check=check)
    ctx.state.mark("b2", float(np.mean([v.real for v in rb.values])))
    ctx.state.mark("c2", float(np.mean([v.real for v in rc.values])))
    _table(ctx, "b2_table.csv", rb)
    _table(ctx, "c2_table.csv", rc)
    return {"b2": rb.to_dict(), "c2": rc.to_dict()}


def run_recover_ck(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    metric, coeffs = cfg.metric(), cfg.model()
    r = cfg.section("reconstruct")
    k = int(r["k"])
    for name, value in r.get("known", {}).items():
        if name not in ctx.state.known:
            ctx.state.mark(name, value)
    ctx.state.require(k)
    taus = [float(x) for x in r["taus"]]
    mode = r["mode"]
    rep = reconstruct.ReconstructionReport(f"c{k}")
    for p in _points(cfg, metric.dim):
        combo = geometry.find_null_combination(metric, p, r.get("seed_angles"))
        system = reconstruct.assemble_phase_system(metric, coeffs, p, combo, taus[0], float(r["delta_prime"]),
                                                   mode=mode, order=k)
        vals = [reconstruct.manufactured_Ik(system, coeffs, k, tau) for tau in taus]
        reconstruct.recover_ck_at(p, k, vals, system, coeffs.a, ctx.state, taus, rep,
                                  reference=float(coeffs.ck(k)(p[1:][None])[0]), check=mode == "manufactured")
    _table(ctx, f"c{k}_table.csv", rep)
    return {f"c{k}": rep.to_dict(), "known_before": sorted(ctx.state.known)}


STAGES: dict[str, Callable[[RunContext], dict]] = {
    "forward": run_forward,
    "beam-check": run_beam_check,
    "transform-check": run_transform_check,
    "recover-a-c1": run_recover_a_c1,
    "recover-b2": run_recover_b2,
    "recover-ck": run_recover_ck,
}
