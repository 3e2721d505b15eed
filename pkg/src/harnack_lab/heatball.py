"""Heat balls, local monotone quantities and mean-value checks.

For a positive backward kernel ``v`` centered at ``(x0, t0)`` the heat ball is
``E_r = {(y, t) : v >= r^-n, t < t0}`` and ``psi_r = log v + n log r >= 0``
on it. The local quantity of a density ``Q`` is

    P(r) = int_{E_r} (|grad psi_r|^2 + psi_r tr kappa) Q dmu dt,  I(r) = P(r) / r^n.

Quadrature: in ``tau = t0 - t`` the ball is sliced at Gauss-Laguerre nodes
of ``s = log(tau_top / tau)``, which absorbs the logarithmic growth of the
slice integrals as ``tau -> 0``. Each slice is star-shaped about ``x0``; the
boundary radius along every ray solves ``psi_r = 0`` and the slice integral
is trapezoidal in the angle, Gauss-Legendre in the radius. An independent
route (``method="cells"``) integrates each slice over a Cartesian patch with
supersampled bilinear interpolation of ``psi_r`` inside boundary cells.

Heat balls live on static flat backgrounds in two dimensions (Euclidean
plane, flat torus); there ``tr kappa = 0`` unless a trace is supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage, optimize

from .frames import kernel_jet_components
from .harnack import HarnackError

EXACT = "exact"
DISTANCE = "distance"
REDUCED = "reduced"
MODES = (EXACT, DISTANCE, REDUCED)


class HeatBallError(ValueError):
    pass


def _spec(source):
    return getattr(source, "spec", source)


# -- backward kernels ----------------------------------------------------------
class BackwardKernel:
    """``v(y, t)`` centered at ``(x0, t0)`` with ``log v`` and its gradient.

    ``exact``: the heat kernel (Gaussian or theta product). ``distance``:
    ``exp(-d^2 / 4 tau) / (4 pi tau)^{n/2}`` with the flat distance (minimal
    image on the torus). ``reduced``: ``exp(-ell) / (4 pi tau)^{n/2}`` from a
    reduced distance field; on a static background ``4 tau ell`` does not
    depend on ``tau`` so one field serves every slice.
    """

    def __init__(self, source, x0, t0, mode=EXACT, field_=None):
        spec = _spec(source)
        if mode not in MODES:
            raise HeatBallError(f"unknown kernel mode {mode!r}")
        if spec.kind not in ("euclidean_static", "flat_torus_static"):
            raise HeatBallError("heat balls need a static flat background")
        if spec.n != 2:
            raise HeatBallError("heat balls are implemented in two dimensions")
        self.spec = spec
        self.n = spec.n
        self.x0 = np.asarray(x0, dtype=float)
        self.t0 = float(t0)
        self.mode = mode
        if mode == REDUCED:
            if field_ is None:
                raise HeatBallError("reduced mode needs a ReducedDistanceField")
            if not np.allclose(np.asarray(field_.center, dtype=float), self.x0):
                raise HeatBallError("reduced distance field is centered elsewhere")
            self._lbar = _PeriodicCellSpline(field_, spec)

    @property
    def periodic(self):
        return self.spec.kind == "flat_torus_static"

    def _disp(self, pts):
        d = np.asarray(pts, dtype=float) - self.x0.reshape((-1,) + (1,) * (np.ndim(pts) - 1))
        if self.periodic:
            L = np.asarray(self.spec.sides).reshape((-1,) + (1,) * (d.ndim - 1))
            d = d - L * np.round(d / L)
        return d

    def log_v(self, pts, tau):
        """``(log v, grad log v)`` at points of shape ``(n, ...)`` and scalar ``tau > 0``."""
        if tau <= 0:
            raise HeatBallError("kernel evaluated at t >= t0")
        norm = -0.5 * self.n * math.log(4.0 * math.pi * tau)
        if self.mode == EXACT and self.periodic:
            val, grad, _ = kernel_jet_components(self.spec, self.x0, pts, tau)
            with np.errstate(divide="ignore", invalid="ignore"):
                # underflowed far cells give -inf, which only ever reads as "outside"
                return np.log(val), grad / val
        if self.mode in (EXACT, DISTANCE):
            # on the plane the exact kernel is the Gaussian of the distance
            d = self._disp(pts)
            return norm - np.sum(d * d, axis=0) / (4.0 * tau), -d / (2.0 * tau)
        lb, glb = self._lbar(pts)
        return norm - lb / (4.0 * tau), -glb / (4.0 * tau)

    def value(self, pts, tau):
        return np.exp(self.log_v(pts, tau)[0])


class _PeriodicCellSpline:
    """Cubic spline of ``L_bar = 4 tau ell`` on the cells of a reduced distance field."""

    def __init__(self, field_, spec):
        pts = np.asarray(field_.points)
        self.origin = pts[(slice(None),) + (0,) * (pts.ndim - 1)]
        self.h = np.array([pts[i].reshape(pts.shape[1:]).take(1, axis=i).flat[0] - self.origin[i]
                           for i in range(pts.shape[0])])
        self.coeffs = ndimage.spline_filter(4.0 * field_.tau * field_.ell, order=3, mode="grid-wrap")
        self.step = 1e-4 * float(np.min(self.h))

    def _eval(self, pts):
        pts = np.asarray(pts, dtype=float)
        c = np.array([np.ravel((pts[i] - self.origin[i]) / self.h[i]) for i in range(len(self.h))])
        out = ndimage.map_coordinates(self.coeffs, c, order=3, mode="grid-wrap", prefilter=False)
        return out.reshape(pts.shape[1:])

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        val = self._eval(pts)
        grad = np.empty(pts.shape)
        for i in range(pts.shape[0]):
            e = np.zeros((pts.shape[0],) + (1,) * (pts.ndim - 1))
            e[i] = self.step
            grad[i] = (self._eval(pts + e) - self._eval(pts - e)) / (2.0 * self.step)
        return val, grad


def pseudo_backward_kernel(source, x0, t0, y, t, mode=DISTANCE, field_=None):
    """Value of the backward kernel centered at ``(x0, t0)`` at ``(y, t)``, ``t < t0``."""
    if not t < t0:
        raise HeatBallError("kernel needs t < t0")
    kern = BackwardKernel(source, x0, t0, mode, field_)
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return float(kern.value(y.reshape(-1, 1), t0 - t)[0])
    return kern.value(y, t0 - t)


# -- caloric models ---------------------------------------------------------------
@dataclass
class CaloricSum:
    """Exact solutions ``c + b.y + sum_k w_k K(y - p_k, t - s_k)`` of the heat equation.

    ``K`` is the heat kernel of the background (theta product on the torus);
    the linear term is only caloric on the plane and is rejected on the torus.
    """

    spec: object
    sources: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    constant: float = 0.0
    slope: Optional[np.ndarray] = None

    def __post_init__(self):
        self.spec = _spec(self.spec)
        self.sources = np.atleast_2d(np.asarray(self.sources, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        self.times = np.broadcast_to(np.asarray(self.times, dtype=float), self.weights.shape).copy()
        if self.slope is not None and self.spec.kind != "euclidean_static":
            raise HeatBallError("linear functions are not periodic")

    def jet(self, pts, t):
        """Value, gradient ``(n, ...)`` and Hessian ``(n, n, ...)`` at time ``t``."""
        pts = np.asarray(pts, dtype=float)
        n = pts.shape[0]
        shape = pts.shape[1:]
        val = np.full(shape, float(self.constant))
        grad = np.zeros((n,) + shape)
        hess = np.zeros((n, n) + shape)
        if self.slope is not None:
            b = np.asarray(self.slope, dtype=float)
            val = val + np.tensordot(b, pts, axes=1)
            grad += b.reshape((n,) + (1,) * len(shape))
        for p, w, s in zip(self.sources, self.weights, self.times):
            if not t > s:
                raise HeatBallError("caloric sum evaluated before one of its sources")
            kv, kg, kh = kernel_jet_components(self.spec, p, pts, t - s)
            val = val + w * kv
            grad += w * kg
            hess += w * kh
        return val, grad, hess

    def __call__(self, pts, t):
        return self.jet(pts, t)[0]


def li_yau_density_model(u):
    """``Q = t^2 (Delta u - |grad u|^2 / u + n u / 2t)`` as a callable of ``(pts, t)``."""

    def Q(pts, t):
        val, grad, hess = u.jet(pts, t)
        n = grad.shape[0]
        lap = np.trace(hess, axis1=0, axis2=1)
        return t * t * (lap - np.sum(grad * grad, axis=0) / val + 0.5 * n * val / t)

    Q.label = "t2_li_yau_Q"
    return Q


def entropy_density_model(u):
    """``Q = -u W`` with ``W = t (2 Delta f - |grad f|^2) + f - n`` and ``u = e^{-f} / (4 pi t)^{n/2}``."""

    def Q(pts, t):
        val, grad, hess = u.jet(pts, t)
        n = grad.shape[0]
        gl = grad / val
        lap = np.trace(hess, axis1=0, axis2=1)
        f = -np.log(val) - 0.5 * n * math.log(4.0 * math.pi * t)
        lap_f = -lap / val + np.sum(gl * gl, axis=0)
        W = t * (2.0 * lap_f - np.sum(gl * gl, axis=0)) + f - n
        return -val * W

    Q.label = "minus_u_W"
    return Q


# -- heat balls --------------------------------------------------------------------
@dataclass
class HeatBall:
    """Quadrature description of ``E_r``: time nodes with per-slice spatial nodes."""

    x0: np.ndarray
    t0: float
    r: float
    kernel: BackwardKernel = field(repr=False)
    tau_top: float
    taus: np.ndarray = field(repr=False)
    tau_weights: np.ndarray = field(repr=False)
    slices: list = field(repr=False)  # [(points (n, m), weights (m,))]
    method: str = "polar"
    max_radius: float = 0.0

    @property
    def n(self):
        return self.kernel.n

    def psi(self, pts, tau):
        lv, glv = self.kernel.log_v(pts, tau)
        return lv + self.n * math.log(self.r), glv

    def contains(self, pts, t):
        """Membership of points at time ``t`` (``psi_r >= 0`` and ``t < t0``)."""
        tau = self.t0 - t
        if tau <= 0:
            return np.zeros(np.shape(pts)[1:], dtype=bool)
        return self.psi(pts, tau)[0] >= 0.0

    def integrate(self, density):
        """``int_{E_r} density(pts, t, tau) dmu dt`` with the ball's quadrature."""
        total = 0.0
        for tau, wt, (pts, w) in zip(self.taus, self.tau_weights, self.slices):
            if w.size:
                total += wt * float(np.sum(w * density(pts, self.t0 - tau, tau)))
        return total

    @property
    def volume(self):
        return self.integrate(lambda p, t, tau: np.ones(p.shape[1:]))

    @property
    def node_count(self):
        return int(sum(int(np.count_nonzero(w)) for _, w in self.slices))

    def centroid(self):
        """Space-time centroid ``(y_bar, t_bar)`` of the ball."""
        vol = self.volume
        y = [self.integrate(lambda p, t, tau, i=i: p[i]) / vol for i in range(self.n)]
        t = self.integrate(lambda p, t, tau: np.full(p.shape[1:], t)) / vol
        return np.array(y), t


def _domain_limit(kernel):
    if kernel.periodic:
        return 0.5 * min(kernel.spec.sides)
    return np.inf


def top_time(kernel, r):
    """Largest ``tau`` with ``v(x0, tau) >= r^-n``; the ball reaches down to ``t0 - tau``."""
    target = -kernel.n * math.log(r)

    def g(tau):
        return float(kernel.log_v(kernel.x0.reshape(-1, 1), tau)[0][0]) - target

    guess = r * r / (4.0 * math.pi)
    lo, hi = 1e-6 * guess, guess
    while g(hi) > 0:
        hi *= 2.0
        if hi > 1e6 * guess:
            raise HeatBallError("kernel does not decay at the center; E_r is not compact")
    return optimize.brentq(g, lo, hi, xtol=1e-15 * guess, rtol=1e-14)


def _ray_boundary(ball_psi, x0, dirs, tau, limit, probes=48):
    """Boundary radius along each direction; checks star-shapedness by probing."""
    psi0 = float(ball_psi(x0.reshape(-1, 1), tau)[0][0])
    if psi0 < 0:
        return np.zeros(dirs.shape[1])
    hi = math.sqrt(4.0 * tau * max(psi0, 1e-3)) * 2.0
    hi = min(hi, limit)
    pts = lambda rho: x0[:, None] + dirs * rho[None, :]  # noqa: E731
    rho_hi = np.full(dirs.shape[1], hi)
    for _ in range(60):
        out = ball_psi(pts(rho_hi), tau)[0] < 0
        if np.all(out):
            break
        if np.any(rho_hi[~out] >= limit):
            raise HeatBallError("heat ball touches the domain boundary; radius too large")
        rho_hi = np.where(out, rho_hi, np.minimum(2.0 * rho_hi, limit))
    # star-shapedness: a single sign change along every probed ray
    s = np.linspace(0.0, 1.0, probes)[:, None]
    grid = x0[:, None, None] + dirs[:, None, :] * (s * rho_hi[None, :])[None]
    sign = ball_psi(grid, tau)[0] >= 0
    if np.any(np.diff(sign.astype(int), axis=0) > 0):
        raise HeatBallError("heat ball slice is not star-shaped about its center")
    lo = np.zeros_like(rho_hi)
    hi_ = rho_hi.copy()
    for _ in range(64):
        mid = 0.5 * (lo + hi_)
        inside = ball_psi(pts(mid), tau)[0] >= 0
        lo = np.where(inside, mid, lo)
        hi_ = np.where(inside, hi_, mid)
        if np.all(hi_ - lo <= 1e-15 * np.maximum(hi_, 1e-300)):
            break
    return 0.5 * (lo + hi_)


def _polar_slice(ball_psi, x0, tau, limit, angles, radial):
    th = 2.0 * math.pi * np.arange(angles) / angles
    dirs = np.array([np.cos(th), np.sin(th)])
    rb = _ray_boundary(ball_psi, x0, dirs, tau, limit)
    xg, wg = np.polynomial.legendre.leggauss(radial)
    lam = 0.5 * (xg + 1.0)
    rho = rb[:, None] * lam[None, :]  # (angles, radial)
    w = (2.0 * math.pi / angles) * (0.5 * wg[None, :] * rb[:, None]) * rho
    pts = x0[:, None, None] + dirs[:, :, None] * rho[None]
    return pts.reshape(2, -1), w.ravel(), float(np.max(rb))


def _cell_slice(ball_psi, x0, tau, limit, cells, supersample):
    """Cartesian patch covering the slice; sub-samples weighted by bilinear ``psi``."""
    th = 2.0 * math.pi * np.arange(32) / 32
    rb = _ray_boundary(ball_psi, x0, np.array([np.cos(th), np.sin(th)]), tau, limit)
    half = 1.15 * float(np.max(rb))
    if half == 0.0:
        return np.zeros((2, 0)), np.zeros(0), 0.0
    h = 2.0 * half / cells
    edges = -half + h * np.arange(cells + 1)
    X, Y = np.meshgrid(edges, edges, indexing="ij")
    corners = np.array([X, Y]) + x0[:, None, None]
    psi_c = ball_psi(corners, tau)[0]
    # sub-sample positions inside each cell (midpoints of an s x s split)
    a = (np.arange(supersample) + 0.5) / supersample
    A, B = np.meshgrid(a, a, indexing="ij")
    p00, p10 = psi_c[:-1, :-1, None, None], psi_c[1:, :-1, None, None]
    p01, p11 = psi_c[:-1, 1:, None, None], psi_c[1:, 1:, None, None]
    interp = (1 - A) * (1 - B) * p00 + A * (1 - B) * p10 + (1 - A) * B * p01 + A * B * p11
    inside = interp >= 0.0
    sx = corners[0][:-1, :-1, None, None] + h * A
    sy = corners[1][:-1, :-1, None, None] + h * B
    keep = inside.ravel()
    pts = np.array([sx.ravel()[keep], sy.ravel()[keep]])
    w = np.full(pts.shape[1], h * h / supersample ** 2)
    return pts, w, half


def heat_ball_region(kernel, r, method="polar", time_nodes=24, angles=64, radial=24,
                     cells=96, supersample=4, t_min=0.0):
    """Quadrature of ``E_r`` for the kernel; raises if the ball is not compactly inside.

    ``t_min`` is the earliest admissible time (the ball must satisfy
    ``t0 - tau_top > t_min``); spatially every slice must stay within half a
    period of the center.
    """
    if not r > 0:
        raise HeatBallError("radius must be positive")
    tau_top = top_time(kernel, r)
    if kernel.t0 - tau_top <= t_min:
        raise HeatBallError("heat ball reaches the initial time; radius too large")
    s, ws = np.polynomial.laguerre.laggauss(time_nodes)
    taus = tau_top * np.exp(-s)
    tau_w = tau_top * ws  # int_0^tau_top F dtau = tau_top int_0^inf F(tau_top e^-s) e^-s ds
    limit = _domain_limit(kernel)
    x0 = kernel.x0
    log_r = kernel.n * math.log(r)

    def ball_psi(pts, tau):
        lv, glv = kernel.log_v(pts, tau)
        return lv + log_r, glv

    slices = []
    max_radius = 0.0
    for tau in taus:
        if method == "polar":
            pts, w, rad = _polar_slice(ball_psi, x0, tau, limit, angles, radial)
        elif method == "cells":
            pts, w, rad = _cell_slice(ball_psi, x0, tau, limit, cells, supersample)
        else:
            raise HeatBallError(f"unknown quadrature method {method!r}")
        max_radius = max(max_radius, rad)
        slices.append((pts, w))
    return HeatBall(x0, kernel.t0, float(r), kernel, tau_top, taus, tau_w, slices, method, max_radius)


def local_quantity_P(ball, Q, trace_kappa=None):
    """``P(r) = int_{E_r} (|grad psi_r|^2 + psi_r tr kappa) Q dmu dt``.

    ``Q`` and ``trace_kappa`` are callables of ``(pts, t)``; a static
    background has ``kappa = 0`` and the trace term is skipped.
    """

    def density(pts, t, tau):
        psi, gpsi = ball.psi(pts, tau)
        dens = np.sum(gpsi * gpsi, axis=0)
        if trace_kappa is not None:
            dens = dens + np.maximum(psi, 0.0) * trace_kappa(pts, t)
        q = Q(pts, t)
        if np.shape(q) != np.shape(dens):
            raise HarnackError("Q missing on some ball nodes")
        return dens * q

    return ball.integrate(density)


# -- monotonicity ----------------------------------------------------------------------
def geometric_radii(r_min, r_max, per_decade=12):
    count = int(round(per_decade * math.log10(r_max / r_min))) + 1
    return np.geomspace(r_min, r_max, count)


def _I_curve(kernel, Q, radii, quad, trace_kappa, t_min, workers):
    def one(r):
        ball = heat_ball_region(kernel, r, t_min=t_min, **quad)
        return local_quantity_P(ball, Q, trace_kappa)

    if workers and workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            P = np.array(list(pool.map(one, radii)))
    else:
        P = np.array([one(r) for r in radii])
    return P, P / radii ** kernel.n


def _coarser(quad):
    return {k: (max(4, int(round(0.75 * v))) if isinstance(v, int) and k != "supersample" else v)
            for k, v in quad.items()}


@dataclass
class LocalMonotonicityCurve:
    quantity: str
    radii: np.ndarray
    P: np.ndarray
    I: np.ndarray
    dI_dr: np.ndarray
    dI_dr_error: np.ndarray
    center_value: float
    tolerance: float
    bracket: dict = field(default_factory=dict)

    def margins(self, direction):
        """Per-node margin: ``-dI/dr`` for ``"nonincreasing"``, ``dI/dr`` for ``"nondecreasing"``."""
        if direction == "nonincreasing":
            return -self.dI_dr
        if direction == "nondecreasing":
            return self.dI_dr
        raise HarnackError(f"unknown direction {direction!r}")

    def monotone(self, direction="nonincreasing"):
        return bool(np.all(self.margins(direction) >= -self.tolerance))

    @property
    def lower_bound_margins(self):
        """``Q(x0, t0) - I(r)`` per radius; the sub-mean-value bound asks for ``>= -tol``."""
        return self.center_value - self.I

    @property
    def lower_bound_holds(self):
        return bool(np.all(self.lower_bound_margins >= -self.tolerance))

    @property
    def verdict(self):
        return "pass" if self.monotone("nonincreasing") and self.lower_bound_holds else "fail"

    def to_columns(self):
        ok = (self.margins("nonincreasing") >= -self.tolerance).astype(float)
        return {"r": self.radii, "P": self.P, "I": self.I, "dI_dr": self.dI_dr,
                "dI_dr_error": self.dI_dr_error, "verdict": ok}

    def save(self, path):
        from .columnfile import write_columns

        meta = {"type": "LocalMonotonicityCurve", "quantity": self.quantity, "tolerance": self.tolerance,
                "center_value": self.center_value, "verdict": self.verdict,
                "bracket": {k: float(v) for k, v in self.bracket.items()}}
        return write_columns(path, meta, self.to_columns())


def _bracket_terms(kernel, Q, radii, quad, t_min, trace_kappa=None, step=1e-4):
    """Sampled minima of both bracket terms over the largest ball.

    The kernel term is reported as ``tau (d_t + Lap - tr kappa) v / v``,
    computed from ``log v`` as ``tau (-d_tau log v + Lap log v + |grad log v|^2)``
    so it stays well conditioned at small ``tau``; the density term is
    ``(d_t - Lap) Q``. Both are centered differences.
    """
    ball = heat_ball_region(kernel, float(radii[-1]), t_min=t_min,
                            **dict(quad, time_nodes=min(12, quad.get("time_nodes", 12)),
                                   angles=16, radial=8))
    v_min = np.inf
    q_min = np.inf
    e = np.eye(kernel.n)
    for tau, (pts, w) in zip(ball.taus, ball.slices):
        t = ball.t0 - tau
        hs = 1e-3 * math.sqrt(tau)
        ht = 1e-3 * tau
        lv, glv = kernel.log_v(pts, tau)
        dlv = (kernel.log_v(pts, tau + ht)[0] - kernel.log_v(pts, tau - ht)[0]) / (2 * ht)
        lap = sum(kernel.log_v(pts + hs * e[i][:, None], tau)[0] + kernel.log_v(pts - hs * e[i][:, None], tau)[0]
                  - 2 * lv for i in range(kernel.n)) / hs ** 2
        bv = -dlv + lap + np.sum(glv * glv, axis=0)
        if trace_kappa is not None:
            bv = bv - trace_kappa(pts, t)
        q = Q(pts, t)
        hq, htq = step, step * abs(t)
        dq_t = (Q(pts, t + htq) - Q(pts, t - htq)) / (2 * htq)
        lap_q = sum(Q(pts + hq * e[i][:, None], t) + Q(pts - hq * e[i][:, None], t) - 2 * q
                    for i in range(kernel.n)) / hq ** 2
        v_min = min(v_min, float(np.min(tau * bv)))
        q_min = min(q_min, float(np.min(dq_t - lap_q)))
    return {"kernel_bracket_min": v_min, "Q_bracket_min": q_min}


def monotonicity_curve(kernel, Q, radii, quantity=None, trace_kappa=None, t_min=0.0, tol=None,
                       workers=None, brackets=True, **quad):
    """``I(r)`` on a geometric radius grid with ``dI/dr`` and error bars.

    ``dI/dr`` is the centered difference in ``log r``; its error bar combines
    the change under a 3/4 coarser quadrature with the size of the next
    finite-difference term. The curve also records the sampled signs of both
    bracket terms of the monotonicity identity (kernel and density).
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 3 or np.any(np.diff(radii) <= 0):
        raise HeatBallError("radius grid must be strictly increasing with at least three nodes")
    P, I = _I_curve(kernel, Q, radii, quad, trace_kappa, t_min, workers)
    _, I_c = _I_curve(kernel, Q, radii, _coarser(quad), trace_kappa, t_min, workers)
    logr = np.log(radii)
    dI = np.gradient(I, logr) / radii
    dI_c = np.gradient(I_c, logr) / radii
    d3 = np.abs(np.gradient(np.gradient(np.gradient(I, logr), logr), logr))
    h = np.gradient(logr)
    err = np.abs(dI - dI_c) + d3 * h * h / 6.0 / radii
    q0 = float(np.squeeze(Q(kernel.x0.reshape(-1, 1), kernel.t0)))
    if tol is None:
        tol = float(np.max(err)) + 1e-9 * max(1.0, float(np.max(np.abs(I))))
    extra = _bracket_terms(kernel, Q, radii, quad, t_min, trace_kappa) if brackets else {}
    name = quantity or getattr(Q, "label", "Q")
    return LocalMonotonicityCurve(name, radii, P, I, dI, err, q0, tol, extra)


# -- Euclidean mean-value oracle ---------------------------------------------------------
@dataclass
class WatsonReport:
    radii: np.ndarray
    I: np.ndarray
    target: float
    rel_tol: float
    caloric_residual: float

    @property
    def deviation(self):
        return np.abs(self.I - self.target) / max(abs(self.target), 1e-300)

    @property
    def passed(self):
        return bool(np.all(self.deviation <= self.rel_tol))

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"


def caloric_residual(u, kernel, r, t_min=0.0, step=1e-4):
    """Relative ``max |(d_t - Lap) u| / max |u|`` on the nodes of the largest ball."""
    ball = heat_ball_region(kernel, r, time_nodes=8, angles=12, radial=6, t_min=t_min)
    worst, scale = 0.0, 0.0
    for tau, (pts, _) in zip(ball.taus, ball.slices):
        t = ball.t0 - tau
        ht = step * max(abs(t), tau)
        val, grad, hess = u.jet(pts, t)
        ut = (u(pts, t + ht) - u(pts, t - ht)) / (2.0 * ht)
        res = ut - np.trace(hess, axis1=0, axis2=1)
        worst = max(worst, float(np.max(np.abs(res))))
        scale = max(scale, float(np.max(np.abs(val))))
    return worst / max(scale, 1e-300)


def watson_mean_value_check(x0, t0, u, radii, rel_tol=5e-3, caloric_tol=1e-5, spec=None, **quad):
    """Constancy ``I(r) = u(x0, t0)`` for a caloric ``u`` with the exact Euclidean kernel.

    Both terms of the monotonicity identity vanish, so ``I`` is constant and
    equal to its ``r -> 0`` limit; this pins the normalization of ``P`` at 1.
    """
    from .geometry import BackgroundSpec

    spec = spec or getattr(u, "spec", None) or BackgroundSpec("euclidean_static", n=2, sides=(8.0, 8.0))
    if spec.kind != "euclidean_static":
        raise HeatBallError("the mean-value oracle runs on the Euclidean background")
    kernel = BackwardKernel(spec, x0, t0, EXACT)
    radii = np.asarray(radii, dtype=float)
    res = caloric_residual(u, kernel, float(radii[-1]), t_min=-np.inf)
    if res > caloric_tol:
        raise HeatBallError(f"u is not caloric (relative residual {res:.2e})")
    P, I = _I_curve(kernel, lambda p, t: u(p, t), radii, quad, None, -np.inf, None)
    target = float(np.squeeze(u(np.asarray(x0, dtype=float).reshape(-1, 1), t0)))
    return WatsonReport(radii, I, target, rel_tol, res)
