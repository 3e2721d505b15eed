import math

import numpy as np
import pytest

from harnack_lab import heatball as hb
from harnack_lab.flow import make_flow
from harnack_lab.geometry import BackgroundSpec
from harnack_lab.harnack import HarnackError
from harnack_lab.heat import closed_form_kernel
from harnack_lab.reduced import reduced_distance_field

EUCLID = BackgroundSpec("euclidean_static", n=2, T=1.0, sides=(8.0, 8.0), resolution=32)
TORUS = BackgroundSpec("flat_torus_static", n=2, T=1.0, sides=(1.0, 1.0), resolution=32)
X0 = np.array([0.1, -0.2])


def test_distance_kernel_is_exact_on_plane():
    y = np.array([[0.3, -0.5, 1.0], [0.0, 0.4, -0.7]])
    v = hb.pseudo_backward_kernel(EUCLID, X0, 1.0, y, 0.8, mode=hb.DISTANCE)
    exact = closed_form_kernel(EUCLID, X0, y, 0.2)
    assert np.allclose(v, exact, rtol=1e-14)
    assert hb.pseudo_backward_kernel(EUCLID, X0, 1.0, X0, 0.8) == pytest.approx(1 / (0.8 * math.pi), rel=1e-14)


def test_torus_exact_vs_distance_near_center():
    x0 = np.array([0.5, 0.5])
    y = x0[:, None] + np.array([[0.0, 0.05, -0.1], [0.0, 0.02, 0.08]])
    a = hb.pseudo_backward_kernel(TORUS, x0, 0.1, y, 0.1 - 0.005, mode=hb.EXACT)
    b = hb.pseudo_backward_kernel(TORUS, x0, 0.1, y, 0.1 - 0.005, mode=hb.DISTANCE)
    assert np.max(np.abs(a - b) / b) < 1e-8


def test_reduced_mode_matches_distance_on_flat():
    flow = make_flow(TORUS.with_resolution(32), steps=2)
    x0 = np.array([0.5, 0.5])
    field_ = reduced_distance_field(flow, x0, 0.1, cells=16)
    y = x0[:, None] + np.array([[0.05, -0.1, 0.2], [0.02, 0.08, -0.15]])
    a = hb.pseudo_backward_kernel(flow, x0, 0.5, y, 0.45, mode=hb.REDUCED, field_=field_)
    b = hb.pseudo_backward_kernel(flow, x0, 0.5, y, 0.45, mode=hb.DISTANCE)
    assert np.max(np.abs(np.log(a) - np.log(b))) < 1e-3


def test_kernel_guards():
    with pytest.raises(hb.HeatBallError):
        hb.pseudo_backward_kernel(EUCLID, X0, 1.0, X0, 1.0)
    with pytest.raises(hb.HeatBallError):
        hb.BackwardKernel(EUCLID, X0, 1.0, mode=hb.REDUCED)
    with pytest.raises(hb.HeatBallError):
        hb.BackwardKernel(EUCLID, X0, 1.0, mode="other")
    with pytest.raises(hb.HeatBallError):
        hb.BackwardKernel(BackgroundSpec("shrinking_sphere", n=2, T=0.2, radius=1.0), 0.0, 0.1)
    with pytest.raises(hb.HeatBallError):
        hb.BackwardKernel(BackgroundSpec("flat_torus_static", n=3, T=1.0), np.zeros(3), 0.5)


@pytest.mark.parametrize("r", [0.1, 0.5, 1.0])
def test_euclidean_top_time_and_volume(r):
    k = hb.BackwardKernel(EUCLID, X0, 1.0)
    assert hb.top_time(k, r) == pytest.approx(r * r / (4 * math.pi), rel=1e-12)
    ball = hb.heat_ball_region(k, r)
    assert ball.volume == pytest.approx(r ** 4 / (16 * math.pi), rel=1e-6)


def test_shrinking_family():
    k = hb.BackwardKernel(EUCLID, X0, 1.0)
    vols, cents = [], []
    for r in (0.4, 0.1, 0.025):
        ball = hb.heat_ball_region(k, r)
        vols.append(ball.volume)
        y, t = ball.centroid()
        cents.append(float(np.linalg.norm(y - X0)) + abs(t - 1.0))
    assert vols[0] > vols[1] > vols[2]
    assert cents[0] > cents[2] and cents[2] < 1e-3


def test_nesting_and_psi_sign():
    k = hb.BackwardKernel(TORUS, np.array([0.5, 0.5]), 0.1)
    small = hb.heat_ball_region(k, 0.1)
    big = hb.heat_ball_region(k, 0.2)
    for tau, (pts, w) in zip(small.taus, small.slices):
        if tau < 1e-10:  # the vertex slice, where t0 - tau rounds to t0
            continue
        assert np.all(big.contains(pts, small.t0 - tau))
        assert np.all(small.psi(pts, tau)[0] >= -1e-12)


def test_boundary_has_zero_psi():
    k = hb.BackwardKernel(EUCLID, X0, 1.0)
    r = 0.5
    ball = hb.heat_ball_region(k, r, angles=16, radial=24)
    tau = ball.taus[5]
    pts, w = ball.slices[5]
    rho = np.linalg.norm(pts - X0[:, None], axis=0).reshape(16, 24)
    # the outermost Gauss-Legendre node sits at (1 + x_max)/2 of the boundary radius
    xg, _ = np.polynomial.legendre.leggauss(24)
    rb = rho[:, -1] / (0.5 * (xg[-1] + 1))
    th = 2 * math.pi * np.arange(16) / 16
    edge = X0[:, None] + rb * np.array([np.cos(th), np.sin(th)])
    assert np.max(np.abs(ball.psi(edge, tau)[0])) < 1e-10


def test_ball_guards():
    k = hb.BackwardKernel(TORUS, np.array([0.5, 0.5]), 0.1)
    with pytest.raises(hb.HeatBallError):
        hb.heat_ball_region(k, 2.0)  # reaches t = 0
    k2 = hb.BackwardKernel(TORUS, np.array([0.5, 0.5]), 5.0)
    with pytest.raises(hb.HeatBallError):
        hb.heat_ball_region(k2, 1.5)  # wider than half a period
    with pytest.raises(hb.HeatBallError):
        hb.heat_ball_region(k, -0.1)
    with pytest.raises(hb.HeatBallError):
        hb.heat_ball_region(k, 0.1, method="other")


def test_P_zero_density():
    ball = hb.heat_ball_region(hb.BackwardKernel(EUCLID, X0, 1.0), 0.5)
    assert hb.local_quantity_P(ball, lambda p, t: np.zeros(p.shape[1:])) == 0.0


def test_P_constant_density_two_quadratures():
    k = hb.BackwardKernel(EUCLID, X0, 1.0)
    r = 0.5
    one = lambda p, t: np.ones(p.shape[1:])  # noqa: E731
    polar = hb.local_quantity_P(hb.heat_ball_region(k, r), one)
    cells = hb.local_quantity_P(hb.heat_ball_region(k, r, method="cells", cells=128, supersample=4), one)
    assert polar == pytest.approx(r ** 2, rel=5e-3)
    assert cells == pytest.approx(polar, rel=5e-3)


def test_P_trace_term_zero_on_static():
    ball = hb.heat_ball_region(hb.BackwardKernel(EUCLID, X0, 1.0), 0.5)
    one = lambda p, t: np.ones(p.shape[1:])  # noqa: E731
    zero = lambda p, t: np.zeros(p.shape[1:])  # noqa: E731
    assert hb.local_quantity_P(ball, one, trace_kappa=zero) == hb.local_quantity_P(ball, one)


def test_P_refinement():
    k = hb.BackwardKernel(TORUS, np.array([0.5, 0.55]), 0.1)
    u = hb.CaloricSum(TORUS, sources=[[0.35, 0.5], [0.7, 0.6]], weights=[1.0, 0.7], times=[-0.005, -0.005],
                      constant=1e-3)
    Q = hb.li_yau_density_model(u)
    coarse = hb.local_quantity_P(hb.heat_ball_region(k, 0.3), Q)
    fine = hb.local_quantity_P(hb.heat_ball_region(k, 0.3, time_nodes=48, angles=128, radial=48), Q)
    assert abs(coarse - fine) <= 5e-3 * abs(fine)


def test_P_missing_cells():
    ball = hb.heat_ball_region(hb.BackwardKernel(EUCLID, X0, 1.0), 0.5)
    with pytest.raises(HarnackError):
        hb.local_quantity_P(ball, lambda p, t: np.ones(3))


@pytest.mark.parametrize("name,u", [
    ("constant", hb.CaloricSum(EUCLID, constant=1.0)),
    ("gaussian", hb.CaloricSum(EUCLID, sources=[[0.3, 0.1]], weights=[1.0], times=[0.0])),
    ("linear", hb.CaloricSum(EUCLID, constant=2.0, slope=np.array([0.7, -0.4]))),
])
def test_watson_mean_value(name, u):
    rep = hb.watson_mean_value_check(X0, 1.0, u, hb.geometric_radii(0.1, 1.0, 4))
    assert rep.passed, (name, rep.deviation)
    assert rep.caloric_residual < 1e-5


def test_watson_guards():
    bad = hb.CaloricSum(EUCLID, constant=1.0)

    class NotCaloric:
        spec = EUCLID

        def __call__(self, p, t):
            return p[0] ** 2 + 1.0

        def jet(self, p, t):
            hess = np.zeros((2, 2) + p.shape[1:])
            hess[0, 0] = 2.0
            return self(p, t), np.stack([2 * p[0], 0 * p[1]]), hess

    bad_q = NotCaloric()
    with pytest.raises(hb.HeatBallError):
        hb.watson_mean_value_check(X0, 1.0, bad_q, [0.1, 0.2, 0.4])
    with pytest.raises(hb.HeatBallError):
        hb.watson_mean_value_check(X0, 1.0, bad, [0.1, 0.2], spec=TORUS)
    with pytest.raises(hb.HeatBallError):
        hb.CaloricSum(TORUS, slope=np.array([1.0, 0.0]))
    with pytest.raises(hb.HeatBallError):
        late = hb.CaloricSum(EUCLID, sources=[[0.0, 0.0]], weights=[1.0], times=[2.0])
        late(X0.reshape(-1, 1), 1.0)


def test_gaussian_saturation_curve():
    u = hb.CaloricSum(EUCLID, sources=[X0], weights=[1.0], times=[0.0])
    k = hb.BackwardKernel(EUCLID, X0, 1.0)
    curve = hb.monotonicity_curve(k, hb.li_yau_density_model(u), hb.geometric_radii(0.1, 1.0, 4), brackets=False)
    assert np.max(np.abs(curve.I)) < 1e-8


@pytest.fixture(scope="module")
def example_curves():
    x0 = np.array([0.5, 0.55])
    k = hb.BackwardKernel(TORUS, x0, 0.1)
    c = np.array([0.5, 0.5])
    u3 = hb.CaloricSum(TORUS, sources=[c + [-0.15, 0.0], c + [0.2, 0.1]], weights=[1.0, 0.7],
                       times=[-0.005, -0.005], constant=1e-3)
    u4 = hb.CaloricSum(TORUS, sources=[c + [0.3, 0.2]], weights=[1.0], times=[0.0])
    radii = hb.geometric_radii(0.08, 0.8, 6)
    return [hb.monotonicity_curve(k, Q, radii) for Q in (hb.li_yau_density_model(u3), hb.entropy_density_model(u4))]


def test_example_curves_monotone_and_bounded(example_curves):
    for curve in example_curves:
        assert curve.monotone("nonincreasing"), curve.quantity
        assert curve.lower_bound_holds, curve.quantity
        assert curve.verdict == "pass"
        assert curve.bracket["Q_bracket_min"] >= -1e-3 * max(1.0, float(np.max(np.abs(curve.P))))
        assert np.all(curve.I > 0)


def test_example_curves_save(tmp_path, example_curves):
    from harnack_lab.columnfile import read_columns

    p = tmp_path / "curve.csv"
    example_curves[0].save(p)
    meta, cols = read_columns(p)
    assert meta["type"] == "LocalMonotonicityCurve"
    assert np.array_equal(cols["I"], example_curves[0].I)


def test_curve_radius_grid_guard():
    k = hb.BackwardKernel(EUCLID, X0, 1.0)
    with pytest.raises(hb.HeatBallError):
        hb.monotonicity_curve(k, lambda p, t: np.ones(p.shape[1:]), [0.2, 0.1, 0.3])
    with pytest.raises(HarnackError):
        hb.monotonicity_curve(k, lambda p, t: np.ones(p.shape[1:]), [0.1, 0.2, 0.3]).margins("sideways")
