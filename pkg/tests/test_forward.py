import math

import numpy as np
import pytest

from beamlab import forward as F
from beamlab import geometry as G
from beamlab.errors import Inadmissible, Incompatible
from beamlab.fields import ScalarField


def _model(**kw):
    return F.Coefficients.from_spec({"a": 1.0, **kw})


def test_admissible_and_not():
    rep = F.check_admissible(_model(b_n=0.5, c=[0.0]), G.flat_metric())
    assert rep["admissible"]
    bad = _model(a={"type": "affine", "value": -0.5, "gradient": [1.0, 0.0]})
    with pytest.raises(Inadmissible) as err:
        F.check_admissible(bad, G.flat_metric())
    assert "strictly positive" in str(err.value)


def test_series_tail_against_direct_sum():
    direct = sum(0.1**k / math.factorial(k) for k in range(7, 40))
    assert F.series_tail(1.0, 0.1, 6) == pytest.approx(direct, rel=1e-14)
    rep = F.check_admissible(_model(c=[0.1] * 6), G.flat_metric(), amplitude=0.1)
    assert rep["tail_bound"] == pytest.approx(direct, rel=1e-14)
    assert rep["tail_bound"] < 1e-7 / math.factorial(7) * 1.02


def test_compatibility_cases():
    m = G.flat_metric()
    co = _model(b_n=0.3, c=[0.2])
    grid = F.make_grid(m, 16, 1.0, co)
    assert F.check_compatibility(F.zero_signal(), None, None, co, grid=grid)["compatible"]
    ramp = F.BoundarySignal(lambda t, x: F.onset_window(t, 0.3) * np.sin(3 * t + x[..., 0]))
    assert F.check_compatibility(ramp, None, None, co, grid=grid)["compatible"]
    target = np.array([0.0, 0.5])

    def bad(t, x):
        hit = np.all(np.isclose(x, target), axis=-1)
        return np.where(hit, 1e-3, 0.0) + 0.0 * t

    with pytest.raises(Incompatible) as err:
        F.check_compatibility(F.BoundarySignal(bad), None, None, co, grid=grid)
    assert "x=[0.0, 0.5]" in str(err.value)


def test_zero_data_gives_zero_solution():
    co = _model(b_n=0.4, c=[0.3, 0.2])
    grid = F.make_grid(G.flat_metric(), 16, 0.5, co)
    u = F.solve_forward(co, F.zero_signal(), grid=grid)
    assert u.max_abs() == 0.0
    assert F.dtn(u, co).max_abs() == 0.0


def _pulse(s):
    return np.where(s > 0, s**3 * np.exp(-30 * (s - 0.3) ** 2), 0.0)


def test_travelling_pulse_matches_characteristics():
    m = G.flat_metric(1, [0.0], [1.0])
    co = _model()
    errs = []
    for n in (50, 100, 200):
        grid = F.make_grid(m, n, 1.0, co)
        h = F.BoundarySignal(lambda t, x: _pulse(t - x[..., 0]))
        u = F.solve_forward(co, h, grid=grid)
        X = grid.coords()[..., 0]
        errs.append(np.max(np.abs(u.u - _pulse(grid.times[:, None] - X[None]))))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_manufactured_solution_second_order():
    m = G.flat_metric(1, [0.0], [1.0])
    co = _model()

    def exact(t, x):
        return t**3 * np.sin(np.pi * x[..., 0])

    def forcing(t, x):
        return (6 * t + np.pi**2 * t**3) * np.sin(np.pi * x[..., 0])

    errs = []
    for n in (20, 40, 80):
        grid = F.make_grid(m, n, 1.0, co)
        u = F.solve_forward(co, F.zero_signal(), forcing=forcing, grid=grid)
        errs.append(np.max(np.abs(u.u[-1] - exact(grid.T, grid.coords()))))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_dtn_of_plane_wave():
    m = G.flat_metric(1, [0.0], [1.0])
    co = _model()
    errs = []
    for n in (40, 80):
        grid = F.make_grid(m, n, 1.0, co)
        h = F.BoundarySignal(lambda t, x: np.sin(t - x[..., 0]))
        u = F.solve_forward(co, h, lambda x: np.sin(-x[..., 0]), lambda x: np.cos(x[..., 0]), grid=grid)
        tr = F.dtn(u, co)
        t = grid.times
        e0 = np.max(np.abs(tr.faces[(0, 0)].ravel() - np.cos(t)))
        e1 = np.max(np.abs(tr.faces[(0, 1)].ravel() + np.cos(t - 1.0)))
        errs.append(max(e0, e1))
    assert errs[0] < 1e-2 and errs[0] / errs[1] > 3.0


def test_dtn_includes_quadratic_term():
    # u = sin(t - x) on the boundary nodes; the trace is d_nu(u + b u^2)
    m = G.flat_metric(1, [0.0], [1.0])
    co = _model(b_n=0.5)
    grid = F.make_grid(m, 400, 0.1, co)
    X = grid.coords()
    t = grid.times
    u = np.sin(t[:, None] - X[None, :, 0])
    tr = F.dtn(F.WaveField(grid=grid, u=u), co)
    exact0 = np.cos(t) * (1 + 2 * 0.5 * np.sin(t))
    assert np.max(np.abs(tr.faces[(0, 0)].ravel() - exact0)) < 1e-4


def _signals():
    W = lambda t: F.onset_window(t, 0.3)  # noqa: E731
    h1 = F.BoundarySignal(lambda t, x: W(t) * np.sin(5 * t) * np.exp(-8 * np.sum((x - [0, 0.5]) ** 2, -1)))
    h2 = F.BoundarySignal(lambda t, x: W(t) * np.cos(4 * t) * np.exp(-8 * np.sum((x - [0.5, 0]) ** 2, -1)))
    return h1, h2


def test_linearized_fields_trivial_cases():
    m = G.flat_metric()
    co = _model(c=[0.3])
    grid = F.make_grid(m, 16, 0.6, co)
    h1, h2 = _signals()
    assert F.solve_linearized_first(co, F.zero_signal(), grid=grid).max_abs() == 0.0
    v1 = F.solve_linearized_first(co, h1, grid=grid)
    v2 = F.solve_linearized_first(co, h2, grid=grid)
    assert F.solve_linearized_second(co, v1, v2).max_abs() == 0.0
    co2 = _model(b_n=0.5, c=[0.3, 0.4])
    w12 = F.solve_linearized_second(co2, v1, v2)
    w21 = F.solve_linearized_second(co2, v2, v1)
    assert np.max(np.abs(w12.u - w21.u)) <= 1e-14 * max(w12.max_abs(), 1.0)
    assert F.solve_backward(co, F.zero_signal(), grid=grid).max_abs() == 0.0


def test_free_wave_reduction_in_one_dimension():
    m = G.flat_metric(1, [0.0], [1.0])
    co = _model(c=[0.0])
    grid = F.make_grid(m, 200, 1.0, co)
    v = F.solve_linearized_first(co, F.BoundarySignal(lambda t, x: _pulse(t - x[..., 0])), grid=grid)
    ref = _pulse(grid.times[:, None] - grid.coords()[None, :, 0])
    assert np.max(np.abs(v.u - ref)) < 1e-3


def test_backward_tilde_form_cross_check():
    m = G.flat_metric(1, [0.0], [1.0])
    a = {"type": "affine", "value": 1.0, "gradient": [0.3]}
    co = F.Coefficients.from_spec({"a": a, "c": [0.2]})
    T = 1.0
    g0 = F.BoundarySignal(lambda t, x: F.onset_window(T - t, 0.3) * np.sin(4 * t) * (1 + x[..., 0]))
    res = []
    for n in (40,):
        grid = F.make_grid(m, n, T, co)
        w = F.solve_backward(co, g0, grid=grid).u
        wt = F.solve_backward(co, g0, grid=grid, return_tilde=True).u
        A = co.a(grid.coords())
        assert np.max(np.abs(wt - A[None] * w)) < 1e-12
        # the discrete residual of w_tt = (a w)_xx + c1 w vanishes up to roundoff
        dt, dx = grid.dt, grid.dx[0]
        wtt = (w[2:, 1:-1] - 2 * w[1:-1, 1:-1] + w[:-2, 1:-1]) / dt**2
        lap = (wt[1:-1, 2:] - 2 * wt[1:-1, 1:-1] + wt[1:-1, :-2]) / dx**2
        res.append(np.max(np.abs(wtt - lap - 0.2 * w[1:-1, 1:-1])))
    assert res[0] < 1e-8


def test_backward_equals_reflected_forward_solve():
    m = G.flat_metric()
    co = _model(c=[0.2])
    grid = F.make_grid(m, 16, 1.0, co)
    h1, _ = _signals()
    g0 = F.BoundarySignal(lambda t, x: h1(1.0 - t, x))
    w = F.solve_backward(co, g0, grid=grid)
    v = F.solve_linearized_first(co, h1, grid=grid)
    assert np.max(np.abs(w.u - v.u[::-1])) < 1e-13


def test_smallness_scaling():
    m = G.flat_metric()
    co = _model(b_n=0.5, c=[0.2, 0.3])
    grid = F.make_grid(m, 16, 1.0, co)
    h1, _ = _signals()
    ratios = [F.solve_forward(co, h1.scaled(lam), grid=grid).max_abs() / lam for lam in (1.0, 0.5, 0.25)]
    assert max(ratios) / min(ratios) < 1.2


def test_time_dependent_coefficient_field():
    f = ScalarField.from_spec({"type": "constant", "value": 2.0, "time_rate": 0.5})
    assert f.time_dependent
    assert f(np.zeros((1, 2)), t=2.0)[0] == pytest.approx(4.0)
