import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnack_lab.columnfile import load_history, save_history
from harnack_lab.geometry import BackgroundSpec, GeometryError
from harnack_lab.heat import (
    SolverError,
    closed_form_kernel,
    fundamental_solution,
    grid_spacing,
    heat_pairing,
    kernel_history,
    solve_conjugate_heat,
    solve_forward_heat,
    sphere_kernel_history,
)


def test_constant_solution_static(torus64):
    hist = solve_forward_heat(torus64, np.ones(torus64.grid.shape))
    assert np.max(np.abs(hist.values - 1.0)) < 1e-14


def test_constant_solution_conformal(conformal32):
    hist = solve_forward_heat(conformal32, np.ones(conformal32.grid.shape))
    assert np.max(np.abs(hist.values - 1.0)) < 1e-12


def test_torus_cosine_mode(torus128):
    X = torus128.grid.coords()
    h0 = 1.0 + 0.5 * np.cos(2 * np.pi * X[0])
    hist = solve_forward_heat(torus128, h0, times=[0.0, 0.1])
    exact = 1.0 + 0.5 * math.exp(-4 * math.pi ** 2 * 0.1) * np.cos(2 * np.pi * X[0])
    assert np.max(np.abs(hist.values[-1] - exact)) < 1e-8


def test_sphere_first_harmonic(sphere):
    # eigenvalue n = 2 on the unit sphere, time change int dt / (1 - 2t) gives factor (1 - 2t)
    x = sphere.grid.x
    hist = solve_forward_heat(sphere, 1.0 + 0.5 * x, times=[0.0, 0.1, 0.2])
    for t, v in zip(hist.times, hist.values):
        assert np.max(np.abs(v - (1.0 + 0.5 * (1 - 2 * t) * x))) < 1e-10


def test_conjugate_mass_conserved(torus64, sphere, conformal32):
    for flow in (torus64, sphere, conformal32):
        shape = flow.grid.x.shape if flow.kind == "shrinking_sphere" else flow.grid.shape
        rng = np.random.default_rng(0)
        u0 = 1.0 + 0.3 * rng.random(shape)
        hist = solve_conjugate_heat(flow, u0)
        m = hist.masses
        assert np.max(np.abs(m - m[-1])) <= 1e-8 * abs(m[-1])


def test_sphere_constant_conjugate_datum(sphere):
    hist = solve_conjugate_heat(sphere, np.full(sphere.grid.x.shape, 2.0))
    vol_T = sphere.total_volume(sphere.T)
    for t, v in zip(hist.times, hist.values):
        assert np.max(np.abs(v - 2.0 * vol_T / sphere.total_volume(t))) < 1e-10


def test_fundamental_solution_euclidean(euclid128):
    # box side 8 keeps periodic images below 1e-9 of the core for tau <= 0.4
    taus = [0.1, 0.2, 0.4]
    H = fundamental_solution(euclid128, center=(0.0, 0.0), taus=taus)
    X = euclid128.grid.coords()
    d2 = np.sum(X * X, axis=0)
    for tau in taus:
        g = np.exp(-d2 / (4 * tau)) / (4 * math.pi * tau)
        core = d2 <= 9 * tau
        assert np.max(np.abs(H.at(tau=tau) - g)[core] / g[core]) < 1e-5


def test_fundamental_solution_torus(torus64):
    taus = [0.02, 0.05]
    H = fundamental_solution(torus64, center=(0.5, 0.5), taus=taus)
    exact = kernel_history(torus64, (0.5, 0.5), taus)
    for tau in taus:
        assert np.max(np.abs(H.at(tau=tau) - exact.at(tau=tau)) / exact.at(tau=tau)) < 1e-5


def test_fundamental_solution_sphere_series(sphere):
    taus = [0.05, 0.1]
    H = fundamental_solution(sphere, taus=taus)
    S = sphere_kernel_history(sphere, taus)
    for tau in taus:
        assert np.max(np.abs(H.at(tau=tau) - S.at(tau=tau))) / S.at(tau=tau).max() < 1e-3
        assert S.masses == pytest.approx(1.0, abs=1e-10)


def test_fundamental_solution_guards(torus64):
    with pytest.raises(SolverError):
        fundamental_solution(torus64, center=(0.501, 0.5), taus=[0.1])
    with pytest.raises(SolverError):
        fundamental_solution(torus64, center=(0.5, 0.5), taus=[1e-5])
    h = grid_spacing(torus64)
    with pytest.raises(SolverError):
        fundamental_solution(torus64, center=(0.5, 0.5), taus=[0.1], widths=(6 * h, 2 * h))


def test_closed_form_kernel_values():
    e = BackgroundSpec("euclidean_static", n=2, T=1.0, sides=(8.0, 8.0), resolution=16)
    assert float(closed_form_kernel(e, (0, 0), (0, 0), 1.0)) == pytest.approx(1 / (4 * math.pi), rel=1e-15)
    assert float(closed_form_kernel(e, (0, 0), (2, 0), 1.0)) == pytest.approx(math.exp(-1) / (4 * math.pi), rel=1e-14)
    t = BackgroundSpec("flat_torus_static", n=2, T=1.0, sides=(1.0, 1.0), resolution=16)
    assert float(closed_form_kernel(t, (0, 0), (0.3, 0.7), 5.0)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(GeometryError):
        closed_form_kernel(t, (0, 0), (0, 0), 0.0)
    tau = 1 / (4 * math.pi)
    assert float(closed_form_kernel(e, (1, 1), (1, 1), tau)) == pytest.approx(1.0, rel=1e-15)
    # nearest lattice images add 4 exp(-25) relative to the Euclidean value
    eu = float(closed_form_kernel(e, (0, 0), (0, 0), 0.01))
    images = sum(math.exp(-(i * i + j * j) / 0.04) for i in range(-4, 5) for j in range(-4, 5))
    to = float(closed_form_kernel(t, (0.2, 0.2), (0.2, 0.2), 0.01))
    assert to == pytest.approx(eu * images, rel=1e-15)
    assert to / eu - 1.0 == pytest.approx(4 * math.exp(-25), rel=1e-9)


def test_delta_property(torus64):
    X = torus64.grid.coords()
    h = 1.0 + 0.3 * np.cos(2 * np.pi * X[0]) * np.cos(2 * np.pi * X[1])
    H = fundamental_solution(torus64, center=(0.0, 0.5), taus=[0.005, 0.01, 0.02])
    pairs = []
    for tau in (0.005, 0.01, 0.02):
        pair = np.sum(H.at(tau=tau) * h) * torus64.grid.cell_volume
        assert pair == pytest.approx(1.0 - 0.3 * math.exp(-8 * math.pi ** 2 * tau), abs=1e-6)
        pairs.append(pair)
    # approaches h(center) = 0.7 as tau -> 0
    assert abs(pairs[0] - 0.7) < abs(pairs[1] - 0.7) < abs(pairs[2] - 0.7)


coord = st.floats(0.0, 1.0, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(coord, coord, coord, coord, st.floats(1e-3, 1.0))
def test_kernel_symmetry_and_positivity(a, b, c, d, tau):
    t = BackgroundSpec("flat_torus_static", n=2, T=1.0, sides=(1.0, 1.0), resolution=16)
    k1 = float(closed_form_kernel(t, (a, b), (c, d), tau))
    k2 = float(closed_form_kernel(t, (c, d), (a, b), tau))
    assert k1 > 0
    assert k1 == pytest.approx(k2, rel=1e-12)


def test_torus_kernel_unit_mass(torus64):
    X = torus64.grid.coords()
    for tau in (0.005, 0.05, 0.5):
        k = closed_form_kernel(torus64.spec, (0.3, 0.6), X, tau)
        assert np.sum(k) * torus64.grid.cell_volume == pytest.approx(1.0, abs=1e-10)


def test_forward_conjugate_pairing_conserved(conformal32):
    X = conformal32.grid.coords()
    h0 = 1.0 + 0.4 * np.cos(2 * np.pi * X[0])
    u0 = 1.0 + 0.4 * np.sin(2 * np.pi * X[1]) * np.cos(2 * np.pi * X[0])
    h = solve_forward_heat(conformal32, h0)
    u = solve_conjugate_heat(conformal32, u0)
    pair = [np.sum(h.values[k] * u.values[k] * conformal32.weights_at(t)) for k, t in enumerate(h.times)]
    assert np.ptp(pair) <= 1e-6 * abs(pair[0])


def test_heat_pairing_matches_forward_kernel(torus64):
    X = torus64.grid.coords()
    F = 1.0 + np.cos(2 * np.pi * X[0])
    val = heat_pairing(torus64, F, (0.25, 0.0), 0.1, 0.2)
    exact = 1.0 + math.exp(-4 * math.pi ** 2 * 0.1) * math.cos(2 * math.pi * 0.25)
    assert val == pytest.approx(exact, abs=1e-12)
    with pytest.raises(SolverError):
        heat_pairing(torus64, F, (0.0, 0.0), 0.2, 0.1)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(0.01, 0.5), st.integers(1, 3))
def test_comparison_principle(a, gap, k):
    from harnack_lab.flow import make_flow

    flow = make_flow(BackgroundSpec("flat_torus_static", n=2, T=0.1, resolution=32), steps=4)
    X = flow.grid.coords()
    g0 = 1.0 + a * np.cos(2 * np.pi * k * X[0])
    h0 = g0 + gap * (1.0 + np.sin(2 * np.pi * X[1]))
    g = solve_forward_heat(flow, g0)
    h = solve_forward_heat(flow, h0)
    assert np.all(h.values - g.values >= -1e-12)
    assert np.all(g.values > 0)


def test_history_round_trip(tmp_path, conformal32):
    X = conformal32.grid.coords()
    hist = solve_forward_heat(conformal32, 1.0 + 0.2 * np.cos(2 * np.pi * X[1]))
    p = tmp_path / "h.csv"
    save_history(hist, p)
    back = load_history(p, conformal32)
    assert back.direction == hist.direction
    assert np.array_equal(back.values, hist.values)


def test_solver_guards(torus64):
    with pytest.raises(SolverError):
        solve_forward_heat(torus64, -np.ones(torus64.grid.shape))
    with pytest.raises(SolverError):
        solve_conjugate_heat(torus64, np.zeros(torus64.grid.shape))
    with pytest.raises(SolverError):
        solve_conjugate_heat(torus64, np.ones(torus64.grid.shape), taus=[0.5])
