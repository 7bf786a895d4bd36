import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from beamlab import beams as B
from beamlab import geometry as G
from beamlab.errors import NotPositiveImaginary

AFFINE = {"type": "affine", "value": 1.0, "gradient": [0.3, 0.0]}


@pytest.fixture(scope="module")
def flat_chart():
    m = G.flat_metric()
    ng = G.null_geodesic_from(m, 0.0, [0.0, 0.5], [1.0, 0.0], extend=0.5)
    return G.build_fermi_chart(m, ng, 0.4)


@pytest.fixture(scope="module")
def conformal_chart():
    m = G.conformal_metric(AFFINE)
    ng = G.null_geodesic_from(m, 0.0, [0.0, 0.5], [1.0, 0.0], extend=0.5)
    return G.build_fermi_chart(m, ng, 0.4)


def test_flat_riccati_matches_closed_form(flat_chart):
    ric = B.solve_riccati(flat_chart)
    ds = ric.s_grid - ric.s_grid[0]
    assert np.max(np.abs(ric.H[:, 1, 1] - (2 * ds + 1j) / (1 + 4 * ds**2))) < 1e-8
    H, A = O.flat_riccati(1j * np.eye(2), ds)
    assert np.max(np.abs(ric.H - H)) < 1e-8
    amp = B.amplitude_leading(ric)
    assert np.max(np.abs(amp(ric.s_grid) - A)) < 1e-8
    assert amp.transport_residual <= 1e-5
    assert ric.imag_det_defect() < 1e-10


def test_general_H0_flat_closed_form(flat_chart):
    H0 = np.array([[0.3 + 1j, 0.2 + 0.1j], [0.2 + 0.1j, -0.4 + 0.7j]])
    ric = B.solve_riccati(flat_chart, H0)
    H, A = O.flat_riccati(H0, ric.s_grid - ric.s_grid[0])
    assert np.max(np.abs(ric.H - H)) < 1e-8
    assert np.max(np.abs(B.amplitude_leading(ric)(ric.s_grid) - A)) < 1e-8


def test_non_symmetric_H0_rejected(flat_chart):
    with pytest.raises(NotPositiveImaginary):
        B.solve_riccati(flat_chart, np.array([[1j, 0.3], [0.0, 1j]]))
    with pytest.raises(NotPositiveImaginary):
        B.solve_riccati(flat_chart, np.array([[1j, 0.0], [0.0, -1j]]))


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_riccati_invariants_property(conformal_chart, re, im):
    X = np.array([[re[0], re[1]], [re[1], re[2]]])
    L = np.array([[1.0 + abs(im[0]), 0.0], [im[1], 0.2 + abs(im[2])]])
    H0 = X + 1j * (L @ L.T)
    ric = B.solve_riccati(conformal_chart, H0)
    assert ric.min_imag_eig() > 0
    assert ric.imag_det_defect() <= 1e-6


def test_beam_on_axis_and_cutoff(conformal_chart):
    ric = B.solve_riccati(conformal_chart)
    beam = B.build_beam(conformal_chart, ric, 32.0)
    s = np.linspace(0.1, 0.9, 5)
    A0 = B.amplitude_leading(ric)(s)
    assert np.allclose(beam.chart_value(s, np.zeros((5, 2))), A0, atol=1e-14)
    edge = np.array([[0.6 * beam.delta_prime, 0.0]] * 5)
    assert np.all(beam.chart_value(s, edge) == 0)
    assert B.im_phase_ratio(beam) > 0


def test_ambient_evaluation_on_and_off_axis(conformal_chart):
    ric = B.solve_riccati(conformal_chart)
    beam = B.build_beam(conformal_chart, ric, 32.0)
    ng = conformal_chart.geodesic
    s = np.array([0.2, 0.5])
    t, x = ng.path(s)
    got = B.evaluate_beam(beam, t, x)
    assert np.allclose(got, B.amplitude_leading(ric)(s), atol=1e-8)
    assert B.evaluate_beam(beam, 0.5, np.array([[0.5, 0.95]]))[0] == 0


def test_conjugated_beam_is_complex_conjugate(conformal_chart):
    beam = B.build_beam(conformal_chart, B.solve_riccati(conformal_chart), 24.0)
    rng = np.random.default_rng(3)
    x = np.column_stack([rng.uniform(0.1, 0.9, 50), rng.uniform(0.4, 0.6, 50)])
    t = x[:, 0] + rng.uniform(-0.05, 0.05, 50)
    assert np.allclose(beam.conjugate()(t, x), np.conj(beam(t, x)), atol=1e-14)


def test_beam_orders_one_and_two_coincide(flat_chart):
    ric = B.solve_riccati(flat_chart)
    b1 = B.build_beam(flat_chart, ric, 20.0, order=1)
    b2 = B.build_beam(flat_chart, ric, 20.0, order=2)
    x = np.array([[0.3, 0.52], [0.6, 0.47]])
    assert np.array_equal(b1(x[:, 0], x), b2(x[:, 0], x))


def test_axis_eikonal_residual(conformal_chart):
    beam = B.build_beam(conformal_chart, B.solve_riccati(conformal_chart), 16.0)
    rep = B.residual_norms(beam, conformal_chart.metric, None, [16, 32], T=1.0)
    assert rep.rows[0][2] <= 1e-6
    assert rep.rows[0][3] <= 1e-5
