import numpy as np
import pytest

import oracles as O
from beamlab import forward as F
from beamlab import geometry as G
from beamlab import linearize as L
from beamlab.errors import ConfigInvalid, LadderInconsistent

MODEL = {"a": {"type": "affine", "value": 1.0, "gradient": [0.2, 0.1]}, "b_n": 0.5, "c": [0.3, 0.4, 0.2]}


def _signals():
    W = lambda t: F.onset_window(t, 0.3)  # noqa: E731
    h1 = F.BoundarySignal(lambda t, x: W(t) * np.sin(5 * t) * np.exp(-8 * np.sum((x - [0, 0.5]) ** 2, -1)))
    h2 = F.BoundarySignal(lambda t, x: W(t) * np.cos(4 * t) * np.exp(-8 * np.sum((x - [0.5, 0]) ** 2, -1)))
    return h1, h2


@pytest.fixture(scope="module")
def setup():
    co = F.Coefficients.from_spec(MODEL)
    grid = F.make_grid(G.flat_metric(), 16, 1.0, co)
    h1, h2 = _signals()
    v1 = F.solve_linearized_first(co, h1, grid=grid)
    v2 = F.solve_linearized_first(co, h2, grid=grid)
    return co, grid, h1, h2, v1, v2


def test_difference_quotients_converge_at_first_order(setup):
    co, grid, h1, h2, v1, v2 = setup
    w = F.solve_linearized_second(co, v1, v2)
    wts = L.spacetime_weights(grid)
    nrm = lambda u: np.sqrt(np.sum(wts * np.abs(u) ** 2))  # noqa: E731
    eps = [0.2, 0.1, 0.05]
    e1, e2 = [], []
    for e in eps:
        ue = F.solve_forward(co, h1.scaled(e), grid=grid).u
        u2 = F.solve_forward(co, h2.scaled(e), grid=grid).u
        upp = F.solve_forward(co, F.combine_signals([h1, h2], [e, e]), grid=grid).u
        e1.append(nrm(ue / e - v1.u))
        e2.append(nrm((upp - ue - u2) / e**2 - w.u))
    assert O.log_slope(eps, e1) >= 0.9
    assert O.log_slope(eps, e2) >= 0.9


def test_order_one_derivative_matches_linearized_trace(setup):
    co, grid, h1, _, v1, _ = setup
    d = L.dtn_derivative(co, [h1], grid=grid, ladder=(0.02, 0.01, 0.005))
    ref = F.dtn(v1, co.linear_part())
    assert (d.trace - ref).l2() <= 1e-6 * ref.l2()


def test_order_two_derivative_matches_second_linearization(setup):
    co, grid, h1, h2, v1, v2 = setup
    d = L.dtn_derivative(co, [h1, h2], grid=grid, ladder=(0.02, 0.01, 0.005))
    w = F.solve_linearized_second(co, v1, v2)
    ref = F.dtn_second(co, w, v1, v2)
    assert (d.trace - ref).l2() <= 1e-5 * ref.l2()


def test_linear_model_has_no_second_derivative(setup):
    co, grid, h1, h2, _, _ = setup
    d = L.dtn_derivative(co.linear_part(), [h1, h2], grid=grid, ladder=(0.2, 0.1, 0.05))
    assert d.trace.max_abs() < 1e-10


def test_permutation_invariance(setup):
    co, grid, h1, h2, _, _ = setup
    d12 = L.dtn_derivative(co, [h1, h2], grid=grid, ladder=(0.02, 0.01))
    d21 = L.dtn_derivative(co, [h2, h1], grid=grid, ladder=(0.02, 0.01))
    assert (d12.trace - d21.trace).l2() <= 1e-10 * d12.trace.l2()


def test_ladder_and_order_validation(setup):
    co, grid, h1, h2, _, _ = setup
    with pytest.raises(ConfigInvalid):
        L.dtn_derivative(co, [h1], order=2, grid=grid)
    with pytest.raises(ConfigInvalid):
        L.dtn_derivative(co, [h1], grid=grid, ladder=(0.01, 0.02))
    with pytest.raises(ConfigInvalid):
        L.integral_identity_Lk((co, co), 2, None, [])


def test_inconsistent_ladder_detected(setup):
    # a ladder far outside the asymptotic regime breaks Richardson agreement
    co, grid, h1, h2, _, _ = setup
    with pytest.raises(LadderInconsistent):
        L.dtn_derivative(co, [h1, h2], grid=grid, ladder=(0.8, 0.4, 0.01), tolerance_factor=1.0)


def test_identical_models_give_zero_identity(setup):
    co, _, _, _, v1, v2 = setup
    assert L.integral_identity_L1((co, co), v1, v2) == 0
    assert L.integral_identity_Lk((co, co), 3, v1, [v1, v2, v2]) == 0


def test_first_identity_is_bilinear_in_the_contrast(setup):
    co, _, _, _, v1, v2 = setup
    base = F.Coefficients.from_spec({"a": 1.0, "c": [0.3]})
    one = L.integral_identity_L1((base, co), v1, v2)
    half = F.Coefficients.from_spec({"a": {"type": "affine", "value": 1.0, "gradient": [0.1, 0.05]}, "c": [0.3]})
    assert L.integral_identity_L1((base, half), v1, v2) == pytest.approx(one / 2, rel=1e-12)


def test_boundary_and_volume_forms_of_second_identity_agree():
    m = G.flat_metric(1, [0.0], [1.0])
    co = F.Coefficients.from_spec({"a": {"type": "affine", "value": 1.0, "gradient": [0.2]}, "b_n": 0.5,
                                   "c": [0.1, 0.4]})
    T = 1.0
    W = lambda t: F.onset_window(t, 0.3)  # noqa: E731
    h1 = F.BoundarySignal(lambda t, x: W(t) * np.sin(3 * t) * (1 + 0 * x[..., 0]))
    h2 = F.BoundarySignal(lambda t, x: W(t) * np.cos(2 * t + x[..., 0]))
    g0 = F.BoundarySignal(lambda t, x: W(T - t) * np.sin(4 * t) * (1 + x[..., 0]))
    errs = []
    for n in (40, 80, 160):
        grid = F.make_grid(m, n, T, co)
        v1 = F.solve_linearized_first(co, h1, grid=grid)
        v2 = F.solve_linearized_first(co, h2, grid=grid)
        lam = F.dtn_second(co, F.solve_linearized_second(co, v1, v2), v1, v2)
        wb = F.solve_backward(co, g0, grid=grid)
        errs.append(abs(L.compute_I2_from_boundary(co.a, g0, lam) - L.volume_I2(co, v1, v2, wb)))
    assert errs[0] / errs[1] > 3.0 and errs[1] / errs[2] > 3.0
