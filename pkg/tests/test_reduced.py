import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnack_lab import paths
from harnack_lab.flow import make_flow
from harnack_lab.geometry import BackgroundSpec, curvature_bounds
from harnack_lab.harnack import HarnackError
from harnack_lab.heat import kernel_history, sphere_kernel_history
from harnack_lab.reduced import (
    L_length,
    ReducedDistanceError,
    ReducedDistanceField,
    bounds_check,
    constant_path_L,
    kernel_lower_bound_check,
    load_field,
    minimize_L,
    reduced_distance_field,
    save_field,
    sphere_reduced_distance,
    supersolution_weak_check,
    weak_check_taus,
)


@pytest.fixture(scope="module")
def flat():
    return make_flow(BackgroundSpec("flat_torus_static", n=2, T=0.3, resolution=32), steps=4)


@pytest.fixture(scope="module")
def sph():
    return make_flow(BackgroundSpec("shrinking_sphere", n=2, T=0.2, radius=1.0, resolution=32))


def sphere_constant_L(a, tau):
    """n = 2: int_0^tau 2 sqrt(s) / (a + 2 s) ds in closed form, a = rho(T)^2."""
    return 2 * math.sqrt(tau) - math.sqrt(2 * a) * math.atan(math.sqrt(2 * tau / a))


def test_affine_path_length(flat):
    x, y, tau = np.array([0.2, 0.3]), np.array([0.45, 0.4]), 0.1
    L = L_length(flat, paths.affine_path(x, y, 16), tau)
    d2 = 0.25 ** 2 + 0.1 ** 2
    assert L / (2 * math.sqrt(tau)) == pytest.approx(d2 / (4 * tau), rel=1e-12)


def test_constant_path_flat(flat):
    x = np.array([0.2, 0.3])
    assert L_length(flat, paths.affine_path(x, x, 8), 0.1) == 0.0
    assert constant_path_L(flat, 0.1) == 0.0


def test_constant_path_sphere(sph):
    tau = 0.15
    a = sph.scale_at(sph.T) ** 2
    exact = sphere_constant_L(a, tau)
    assert constant_path_L(sph, tau) == pytest.approx(exact, rel=1e-8)
    assert L_length(sph, np.zeros((33, 1)), tau) == pytest.approx(exact, rel=1e-8)


def test_horizon_guard(flat):
    with pytest.raises(ReducedDistanceError):
        L_length(flat, np.zeros((5, 2)), 0.5)
    with pytest.raises(ReducedDistanceError):
        minimize_L(flat, np.zeros(2), np.zeros(2), 0.0)
    with pytest.raises(ReducedDistanceError):
        L_length(flat, np.zeros((5, 2)))


def test_minimize_near_point(flat):
    x, y, tau = np.array([0.5, 0.5]), np.array([0.6, 0.45]), 0.1
    p = minimize_L(flat, x, y, tau)
    assert p.converged
    assert p.ell == pytest.approx((0.1 ** 2 + 0.05 ** 2) / (4 * tau), rel=1e-4)
    assert p.L_bar == pytest.approx(0.1 ** 2 + 0.05 ** 2, rel=1e-4)
    assert np.all(np.diff(p.taus) > 0) and p.taus[0] == 0.0 and p.taus[-1] == pytest.approx(tau)


def test_minimize_picks_shortest_wrap(flat):
    x, y, tau = np.array([0.05, 0.5]), np.array([0.95, 0.5]), 0.1
    p = minimize_L(flat, x, y, tau)
    assert p.ell == pytest.approx(0.1 ** 2 / (4 * tau), rel=1e-4)


def test_sphere_center_constant_path_optimal(sph):
    tau = 0.15
    p = minimize_L(sph, np.zeros(1), np.zeros(1), tau)
    a = sph.scale_at(sph.T) ** 2
    assert p.ell == pytest.approx(sphere_constant_L(a, tau) / (2 * math.sqrt(tau)), rel=1e-8)
    bump = 0.05 * np.sin(np.linspace(0, math.pi, len(p.nodes)))[:, None]
    assert L_length(sph, p.nodes + bump, tau, chart="angle") > p.L


def test_sphere_reduced_distance_closed_form(sph):
    tau = 0.1
    for theta in (0.3, 1.0, 2.0):
        p = minimize_L(sph, np.zeros(1), np.array([theta]), tau)
        # path discretization error is O(segments^-2), about 5e-6 at the default
        assert p.ell == pytest.approx(sphere_reduced_distance(sph.spec, theta, tau), rel=1e-5)


def test_sphere_azimuthal_symmetry(sph):
    tau, theta = 0.1, 0.8
    r = math.tan(theta / 2)
    ells = [minimize_L(sph, np.zeros(2), r * np.array([math.cos(a), math.sin(a)]), tau, chart="stereographic").ell
            for a in (0.0, 1.1, 2.5)]
    assert max(ells) - min(ells) < 1e-6
    assert ells[0] == pytest.approx(sphere_reduced_distance(sph.spec, theta, tau), rel=1e-5)


@pytest.fixture(scope="module")
def flat_field(flat):
    return reduced_distance_field(flat, np.array([0.5, 0.5]), 0.1, cells=8)


def test_flat_field_matches_oracle(flat, flat_field):
    X = flat_field.points
    d2 = np.sum((X - 0.5) ** 2, axis=0)
    rel = np.abs(flat_field.ell - d2 / 0.4) / np.maximum(d2 / 0.4, 1.0)
    assert np.all(flat_field.converged)
    assert rel.max() < 1e-4


def test_flat_bounds_collapse(flat, flat_field):
    up, lo = bounds_check(flat, flat_field, 0.0, 0.0)
    assert abs(up.max) < 1e-6 and abs(lo.max) < 1e-6
    assert up.passed and lo.passed


def test_flat_kernel_bound_equality_euclidean():
    flow = make_flow(BackgroundSpec("euclidean_static", n=2, T=0.3, sides=(4.0, 4.0), resolution=32), steps=4)
    tau = 0.1
    field_ = reduced_distance_field(flow, np.zeros(2), tau, cells=8)
    H = kernel_history(flow, np.zeros(2), [tau])
    rep = kernel_lower_bound_check(H, field_)
    assert np.max(np.abs(rep.active)) < 1e-4 * max(1.0, float(np.max(field_.ell)))


def test_torus_kernel_bound_strict_at_wraps(flat, flat_field):
    H = kernel_history(flat, np.array([0.5, 0.5]), [0.1])
    rep = kernel_lower_bound_check(H, flat_field)
    assert rep.passed
    X = flat_field.points
    corner = np.max(np.abs(X - 0.5), axis=0) >= 0.49
    assert np.all(rep.values[corner & ~rep.mask] > 1e-3)


def test_kernel_bound_mismatch(flat, flat_field):
    H = kernel_history(flat, np.array([0.25, 0.5]), [0.1])
    with pytest.raises(HarnackError):
        kernel_lower_bound_check(H, flat_field)
    H2 = kernel_history(flat, np.array([0.5, 0.5]), [0.1])
    with pytest.raises(HarnackError):
        kernel_lower_bound_check(H2, flat_field, tau=0.05)


def test_sphere_field_bounds_and_kernel(sph):
    tau = 0.1
    field_ = reduced_distance_field(sph, 0.0, tau)
    exact = np.array([sphere_reduced_distance(sph.spec, th, tau) for th in sph.grid.theta])
    assert np.max(np.abs(field_.ell - exact) / np.maximum(exact, 1.0)) < 1e-4
    k1, k2 = curvature_bounds(sph)
    up, lo = bounds_check(sph, field_, k1, k2)
    assert up.min > 0 and lo.min > 0
    H = sphere_kernel_history(sph, [tau])
    assert kernel_lower_bound_check(H, field_).passed


def test_sphere_weak_supersolution(sph):
    taus = weak_check_taus(0.05, 0.15, 6)
    fields = [reduced_distance_field(sph, 0.0, t) for t in taus]
    reps = supersolution_weak_check(sph, fields, window=(0.05, 0.15))
    assert len(reps) == 10
    assert all(r.passed for r in reps)
    with pytest.raises(HarnackError):
        supersolution_weak_check(sph, fields[:2])


def test_flat_weak_check_is_equality(flat):
    # e^{-ell}/(4 pi tau) is the Gaussian itself: the pairing vanishes up to quadrature
    taus = weak_check_taus(0.05, 0.15, 6)
    fields = [reduced_distance_field(flat, np.array([0.5, 0.5]), t, cells=16) for t in taus]
    reps = supersolution_weak_check(flat, fields, window=(0.05, 0.15))
    assert all(r.passed for r in reps)


@pytest.mark.slow
def test_conformal_field_near_flat():
    eps = 0.01
    spec = BackgroundSpec.conformal_from_function(lambda x, y: eps * np.cos(2 * np.pi * x), resolution=32, T=0.1)
    flow = make_flow(spec, steps=16)
    tau = 0.05
    field_ = reduced_distance_field(flow, np.array([0.5, 0.5]), tau, cells=4)
    d2 = np.sum((field_.points - 0.5) ** 2, axis=0)
    flat_ell = d2 / (4 * tau)
    assert np.max(np.abs(field_.ell - flat_ell) / np.maximum(flat_ell, 1.0)) < 10 * eps
    up, lo = bounds_check(flow, field_)
    assert up.passed and lo.passed


def test_center_ell_vanishes_as_tau_shrinks(sph):
    vals = [minimize_L(sph, np.zeros(1), np.zeros(1), t).ell for t in (0.1, 0.01, 0.001)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert vals[2] < 1e-2


def test_field_round_trip(tmp_path, flat_field, sph):
    p = tmp_path / "f.csv"
    save_field(flat_field, p)
    back = load_field(p)
    assert np.array_equal(back.ell, flat_field.ell)
    assert all(np.array_equal(a, b) for a, b in zip(back.cells, flat_field.cells))
    sf = reduced_distance_field(sph, 0.0, 0.05)
    save_field(sf, p)
    back = load_field(p)
    assert np.array_equal(back.ell, sf.ell) and back.cells is None


def test_field_rejects_unconverged():
    with pytest.raises(ReducedDistanceError):
        ReducedDistanceField(np.zeros(20), 0.1, 0.0, np.zeros(20), np.array([True] * 18 + [False] * 2))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 0.9), st.floats(0.1, 0.9), st.floats(0.02, 0.3))
def test_minimum_below_perturbed_paths(a, b, tau):
    flow = make_flow(BackgroundSpec("flat_torus_static", n=2, T=0.3, resolution=16), steps=2)
    x, y = np.array([0.5, 0.5]), np.array([a, b])
    p = minimize_L(flow, x, y, tau, segments=16)
    wiggle = 0.05 * np.sin(np.linspace(0, math.pi, 17))[:, None] * np.array([1.0, -0.5])
    assert L_length(flow, p.nodes + wiggle, tau) >= p.L - 1e-12
    assert p.ell <= float(np.sum((y - x) ** 2)) / (4 * tau) * (1 + 1e-8)
