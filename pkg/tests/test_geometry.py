import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamlab import geometry as G
from beamlab.errors import InfeasibleSeed, NonUnitTangent

AFFINE = {"type": "affine", "value": 1.0, "gradient": [0.3, 0.0]}


def test_flat_straight_segment_exits_at_one():
    m = G.flat_metric()
    geo = G.trace_geodesic(m, [0.0, 0.5], [1.0, 0.0])
    assert geo.exit_time == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(geo.x[:, 1], 0.5)
    assert np.allclose(geo.point(0.25), [0.25, 0.5])


def test_conformal_geodesic_self_convergence():
    m = G.conformal_metric(AFFINE, g_factor=AFFINE)
    v = np.array([1.0, 0.0])  # unit at x1 = 0 where the factor is 1
    ref = G.trace_geodesic(m, [0.0, 0.5], v, step=1e-3 / 16)
    geo = G.trace_geodesic(m, [0.0, 0.5], v, step=1e-3)
    assert abs(geo.exit_time - ref.exit_time) < 1e-6
    t = np.linspace(0.0, min(geo.exit_time, ref.exit_time), 17)
    assert np.max(np.abs(geo.point(t) - ref.point(t))) < 1e-6
    assert geo.speed_drift() < 1e-6


def test_non_unit_tangent_rejected():
    with pytest.raises(NonUnitTangent):
        G.trace_geodesic(G.flat_metric(), [0.0, 0.5], [2.0, 0.0])


def _chart(metric, dprime=0.4, extend=0.5):
    ng = G.null_geodesic_from(metric, 0.0, [0.0, 0.5], [1.0, 0.0], extend=extend)
    return G.build_fermi_chart(metric, ng, dprime)


def test_flat_chart_is_affine_with_vanishing_curvature():
    ch = _chart(G.flat_metric())
    s = np.linspace(*ch.s_range, 9)
    assert ch.affine
    assert np.max(np.abs(ch.d2_g11(s))) == 0.0
    D, C = G.d_matrix(ch, 0.5)
    assert np.all(D == 0.0)
    assert np.array_equal(C, np.diag([0.0, 2.0]))


def test_c_matrix_in_three_dimensions():
    assert np.array_equal(G.c_matrix(3), np.diag([0.0, 2.0, 2.0]))


def test_conformal_chart_metric_normal_form_on_axis():
    m = G.conformal_metric(AFFINE)
    ch = _chart(m)
    for s in (0.2, 0.5, 0.8):
        g = ch.chart_metric(s, np.zeros(2))
        ref = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert np.max(np.abs(g - ref)) < 1e-6
        h = 1e-4
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            dg = (ch.chart_metric(s, e) - ch.chart_metric(s, -e)) / (2 * h)
            assert np.max(np.abs(dg)) < 1e-6


def test_conformal_d_matrix_symmetric():
    ch = _chart(G.conformal_metric(AFFINE))
    D, _ = G.d_matrix(ch, 0.5)
    assert np.max(np.abs(D - D.T)) == 0.0
    assert np.max(np.abs(D)) > 0.0


def test_d2_g11_matches_finite_differences_of_chart_metric():
    ch = _chart(G.conformal_metric(AFFINE))
    s, h = 0.5, 1e-3
    ref = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            ei, ej = np.eye(2)[i] * h, np.eye(2)[j] * h

            def g11(z):
                # chart coordinates are ordered (s, z1, z2); g^{11} is the z1-z1 entry
                return np.linalg.inv(ch.chart_metric(s, z))[1, 1]

            ref[i, j] = (g11(ei + ej) - g11(ei - ej) - g11(-ei + ej) + g11(-ei - ej)) / (4 * h * h)
    assert np.max(np.abs(ch.d2_g11(s) - ref)) < 1e-4


def test_flat_metric_has_no_conjugate_points():
    assert G.detect_conjugate_points(_chart(G.flat_metric())) == []


@pytest.mark.parametrize("radius", [0.4, 0.45])
def test_first_conjugate_point_on_round_sphere(radius):
    # optical metric of the stereographic speed is the sphere of this radius: conjugate at pi R
    m = G.conformal_metric({"type": "stereographic", "radius": radius, "center": [0.5, 0.5]})
    ng = G.null_geodesic_from(m, 0.0, [0.0, 0.5], [1.0, 0.0], extend=0.2)
    ch = G.build_fermi_chart(m, ng, 0.1)
    roots = G.detect_conjugate_points(ch, s0=0.0, tol=1e-8)
    assert roots and abs(roots[0] - math.pi * radius) < 1e-3


def test_antipodal_combination():
    m = G.flat_metric()
    combo = G.make_null_combination(m, [0.5, 0.5, 0.5], [1, 1, -1, -1], [[1, 0], [-1, 0], [0, 1], [0, -1]])
    ks, kz = combo.residuals()
    assert ks == 0.0 and kz == 0.0


def test_coincident_seeds_infeasible():
    with pytest.raises(InfeasibleSeed):
        G.find_null_combination(G.flat_metric(), [0.5, 0.5, 0.5], [30.0, 30.0, 200.0, 300.0])


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 80), st.floats(100, 170), st.floats(190, 260), st.floats(280, 350))
def test_found_combination_balances(a0, a1, a2, a3):
    m = G.conformal_metric(AFFINE)
    p = np.array([0.5, 0.4, 0.6])
    try:
        combo = G.find_null_combination(m, p, [a0, a1, a2, a3])
    except InfeasibleSeed:
        return
    k, z = combo.kappas, combo.zetas
    # re-check independently: weights and optical unit length
    assert abs(k.sum()) < 1e-12
    assert np.max(np.abs(k @ z)) < 1e-10
    ghat = m.optical().g(p[1:])
    assert np.allclose(np.einsum("ni,ij,nj->n", z, ghat, z), 1.0)
    assert k[0] > 0 and k[1] > 0 and k[2] < 0 and k[3] < 0


def test_speed_drift_fourth_order():
    m = G.conformal_metric(AFFINE, g_factor=AFFINE)
    v = np.array([0.6, 0.8])
    v = v / float(m.norm([0.1, 0.05], v))
    drifts = [G.trace_geodesic(m, [0.1, 0.05], v, step=h).speed_drift() for h in (4e-2, 2e-2)]
    assert drifts[0] < 1e-6
    assert drifts[0] / max(drifts[1], 1e-16) > 8.0
