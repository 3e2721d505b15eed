"""Reduced distance by direct minimization of the L-length.

With ``tau = sigma^2`` the L-length of a path from ``(x, tau=0)`` to
``(y, tau)`` becomes

    L = int_0^{sqrt(tau)} [ 0.5 |gamma'(sigma)|^2_{g(T - sigma^2)}
                            + 2 sigma^2 R(gamma, T - sigma^2) ] d sigma

which has no endpoint singularity; on static flat backgrounds the minimizer
is affine in ``sigma`` and ``ell = L / (2 sqrt(tau)) = d^2 / (4 tau)``. The
base point sits at ``tau = 0``, i.e. at flow time ``T``, matching the center
of the conjugate heat kernel.

Coordinates ("charts"): flat coordinates on the torus kinds; on the sphere
either the signed angle along a great circle through the north pole
(``"angle"``, one coordinate) or stereographic coordinates from the south
pole (``"stereographic"``, ``n`` coordinates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import paths
from .geometry import conformal_distance, curvature_bounds, distance_field
from .harnack import GE_ZERO, LE_ZERO, HarnackError, HarnackReport, flow_tolerance

DEFAULT_SEGMENTS = 32
FLAG_LIMIT = 0.05


class ReducedDistanceError(RuntimeError):
    pass


@dataclass
class LGeodesicPath:
    nodes: np.ndarray  # (N+1, d) chart coordinates
    tau: float
    L: float
    converged: bool
    chart: str = "flat"

    @property
    def sigmas(self):
        return np.linspace(0.0, math.sqrt(self.tau), len(self.nodes))

    @property
    def taus(self):
        return self.sigmas ** 2

    @property
    def ell(self):
        return self.L / (2.0 * math.sqrt(self.tau))

    @property
    def L_bar(self):
        return 4.0 * self.tau * self.ell


@dataclass
class ReducedDistanceField:
    ell: np.ndarray
    tau: float
    center: object
    points: np.ndarray = field(repr=False)
    converged: np.ndarray = field(repr=False)
    cells: object = None  # index arrays into the flow grid (None for the sphere)
    kind: str = ""

    def __post_init__(self):
        if self.flagged_fraction > FLAG_LIMIT:
            raise ReducedDistanceError(
                f"{100 * self.flagged_fraction:.1f}% of cells did not converge; field rejected")

    @property
    def flagged_fraction(self):
        return float(1.0 - np.mean(self.converged))

    @property
    def L_bar(self):
        return 4.0 * self.tau * self.ell


# -- functionals ------------------------------------------------------------------------
def _sphere_rho2(spec, t):
    return spec.radius ** 2 - 2.0 * (spec.n - 1) * t


def path_functional(flow, tau, chart=None):
    """The sigma-form L functional on ``[0, sqrt(tau)]`` for the flow and chart."""
    if not 0.0 < tau <= flow.T + 1e-12:
        raise ReducedDistanceError("path leaves the time horizon")
    spec = flow.spec
    T = flow.T
    span = math.sqrt(tau)
    if flow.kind == "shrinking_sphere":
        chart = chart or "angle"
        n = spec.n

        def rho2(s):
            return _sphere_rho2(spec, T - s * s)

        def potential(p, s):
            return 2.0 * s * s * n * (n - 1) / rho2(s)

        if chart == "angle":
            return paths.PathFunctional(factor=lambda p, s: rho2(s), factor_grad=lambda p, s: np.zeros(p.shape),
                                        potential=potential, potential_grad=lambda p, s: np.zeros(p.shape),
                                        span=span)
        if chart == "stereographic":
            def factor(p, s):
                return rho2(s) * 4.0 / (1.0 + np.sum(p * p, axis=-1)) ** 2

            def factor_grad(p, s):
                q = 1.0 + np.sum(p * p, axis=-1)
                return (-16.0 * rho2(s) / q ** 3)[..., None] * p

            return paths.PathFunctional(factor, factor_grad, potential, lambda p, s: np.zeros(p.shape), span)
        raise ReducedDistanceError(f"unknown sphere chart {chart!r}")
    if spec.is_static:
        return paths.PathFunctional(factor=lambda p, s: np.ones(p.shape[:-1]),
                                    factor_grad=lambda p, s: np.zeros(p.shape), span=span)
    sampler = flow.spacetime_sampler()

    def factor(p, s):
        return np.exp(2.0 * sampler.sample(0, p, T - s * s))

    def factor_grad(p, s):
        t = T - s * s
        a = np.exp(2.0 * sampler.sample(0, p, t))
        g = np.stack([sampler.sample(1, p, t), sampler.sample(2, p, t)], axis=-1)
        return 2.0 * a[..., None] * g

    def potential(p, s):
        return 2.0 * s * s * sampler.sample(3, p, T - s * s)

    def potential_grad(p, s):
        t = T - s * s
        g = np.stack([sampler.sample(4, p, t), sampler.sample(5, p, t)], axis=-1)
        return 2.0 * (s * s)[..., None] * g

    return paths.PathFunctional(factor, factor_grad, potential, potential_grad, span)


def L_length(flow, path, tau=None, chart=None):
    """L-length of a path (an :class:`LGeodesicPath` or raw chart nodes with ``tau``)."""
    if isinstance(path, LGeodesicPath):
        tau, chart, nodes = path.tau, path.chart, path.nodes
    else:
        nodes = np.asarray(path, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
    if tau is None:
        raise ReducedDistanceError("tau required for raw paths")
    return path_functional(flow, tau, chart).value(nodes)


def constant_path_L(flow, tau):
    """Closed-form-by-quadrature L of the path resting at a point (sphere and flat)."""
    from scipy import integrate

    if flow.spec.is_static:
        return 0.0
    if flow.kind != "shrinking_sphere":
        raise ReducedDistanceError("spatially varying curvature: constant path depends on the point")
    spec = flow.spec
    n = spec.n

    def integrand(s):
        return math.sqrt(s) * n * (n - 1) / _sphere_rho2(spec, flow.T - s)

    val, _ = integrate.quad(integrand, 0.0, tau, epsabs=1e-14, epsrel=1e-13)
    return val


def sphere_reduced_distance(spec, theta, tau):
    """Closed-form ``ell`` on the shrinking sphere for polar angle ``theta`` from the base point."""
    spec = getattr(spec, "spec", spec)
    n = spec.n
    a = _sphere_rho2(spec, spec.T)
    b = 2.0 * (n - 1)
    s = math.sqrt(tau)
    J = math.atan(s * math.sqrt(b / a)) / math.sqrt(a * b)
    kinetic = 0.5 * np.asarray(theta, dtype=float) ** 2 / J
    pot = 2.0 * n * (n - 1) * (s / b - (a / b) * math.atan(s * math.sqrt(b / a)) / math.sqrt(a * b))
    return (kinetic + pot) / (2.0 * s)


# -- minimization -----------------------------------------------------------------------
def _wrap_targets(flow, x, y, reach=2):
    L = np.asarray(flow.spec.sides)
    base = y - L * np.round((y - x) / L)
    rng = range(-reach, reach + 1)
    return [base + np.array([i, j]) * L for i in rng for j in rng] if flow.n == 2 else \
        [base + np.array([i]) * L for i in rng]


def _initial_paths(flow, x, y, tau, N):
    """Initialization set: wrap copies, a static geodesic interpolant, a rest-then-move profile."""
    inits = []
    if flow.kind == "euclidean_static":
        targets = [y]
    else:
        targets = _wrap_targets(flow, x, y)
    for target in targets:
        inits.append(paths.affine_path(x, target, N))
    nearest = min(targets, key=lambda z: float(np.linalg.norm(z - x)))
    if flow.kind == "conformal_torus_flow" and not np.allclose(nearest, x):
        interp = flow.static_sampler(flow.T - 0.5 * tau)
        static = paths.PathFunctional(
            factor=lambda p, s: np.exp(2.0 * interp.value(p)),
            factor_grad=lambda p, s: 2.0 * np.exp(2.0 * interp.value(p))[..., None] * interp.gradient(p))
        inits.append(paths.minimize_path(static, paths.affine_path(x, nearest, N), max_iter=200).nodes)
    half = N // 2
    jump = np.vstack([np.repeat(x[None], half, axis=0), paths.affine_path(x, nearest, N - half)])
    inits.append(jump)
    return inits


def minimize_L(flow, x, y, tau, segments=DEFAULT_SEGMENTS, keep=3, max_iter=2000, chart=None):
    """Locally minimal L-geodesic from ``(x, 0)`` to ``(y, tau)``; best over the initialization set.

    Every initial path is scored by its L-length and the ``keep`` best are
    minimized with L-BFGS; the overall best is returned with its convergence
    flag. On the sphere ``x``/``y`` are chart coordinates.
    """
    if not 0.0 < tau <= flow.T + 1e-12:
        raise ReducedDistanceError("tau must lie in (0, T]")
    functional = path_functional(flow, tau, chart)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if flow.kind == "shrinking_sphere":
        inits = [paths.affine_path(x, y, segments)]
        chart = chart or "angle"
    else:
        inits = _initial_paths(flow, x, y, tau, segments)
        chart = "flat"
    scored = sorted(inits, key=functional.value)[:keep]
    best = None
    for init in scored:
        res = paths.minimize_path(functional, init, max_iter=max_iter)
        if best is None or res.value < best.value:
            best = res
    return LGeodesicPath(best.nodes, float(tau), float(best.value), bool(best.converged), chart)


def _cell_indices(flow, cells):
    """Flow-grid indices of the field cells: every ``stride``-th grid point."""
    shape = flow.grid.shape
    stride = max(1, shape[0] // int(cells))
    axes = [np.arange(0, m, stride) for m in shape]
    return np.meshgrid(*axes, indexing="ij")


def _cell_job(args):
    flow, x, y, tau, segments, kw = args
    p = minimize_L(flow, x, y, tau, segments, **kw)
    return p.ell, p.converged


def _run_cells(flow, x, targets, tau, segments, workers, kw):
    jobs = [(flow, x, y, tau, segments, kw) for y in targets]
    if workers and workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_cell_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_cell_job(j) for j in jobs]
    ell = np.array([r[0] for r in results])
    conv = np.array([r[1] for r in results], dtype=bool)
    return ell, conv


def reduced_distance_field(flow, x, tau, cells=32, segments=DEFAULT_SEGMENTS, workers=None, **kw):
    """``ell(., tau)`` on a ``cells^n`` sub-grid of the flow grid (polar nodes on the sphere).

    Cells are independent minimizations; ``workers > 1`` spreads them over a
    process pool.
    """
    if flow.kind == "shrinking_sphere":
        theta = flow.grid.theta
        ell, conv = _run_cells(flow, np.zeros(1), [np.array([th]) for th in theta], tau, segments, workers, kw)
        return ReducedDistanceField(ell, float(tau), 0.0, theta, conv, None, flow.kind)
    idx = _cell_indices(flow, cells)
    X = flow.grid.coords()
    pts = np.array([X[i][tuple(idx)] for i in range(flow.n)])
    x = np.asarray(x, dtype=float)
    shape = pts.shape[1:]
    targets = [pts[(slice(None),) + k] for k in np.ndindex(shape)]
    ell, conv = _run_cells(flow, x, targets, tau, segments, workers, kw)
    return ReducedDistanceField(ell.reshape(shape), float(tau), x, pts, conv.reshape(shape), tuple(idx), flow.kind)


def constant_path_bound(flow, tau, steps=2001):
    """Upper bound ``(1 / 2 sqrt(tau)) int_0^tau sqrt(s) sup R(T - s) ds`` for ``ell`` at the center."""
    from scipy import integrate

    s = np.linspace(0.0, tau, steps)
    supR = np.array([float(np.max(flow.R_at(flow.T - si))) for si in s])
    return float(integrate.simpson(np.sqrt(s) * supR, x=s)) / (2.0 * math.sqrt(tau))


def save_field(field_, path):
    from .columnfile import write_columns

    meta = {"type": "ReducedDistanceField", "tau": field_.tau, "kind": field_.kind,
            "center": np.atleast_1d(np.asarray(field_.center, dtype=float)).tolist(),
            "shape": list(field_.ell.shape),
            "cells": None if field_.cells is None else [np.asarray(c).tolist() for c in field_.cells]}
    cols = {"ell": field_.ell, "converged": field_.converged.astype(float)}
    for i, p in enumerate(np.reshape(field_.points, (-1,) + field_.ell.shape)):
        cols[f"point{i}"] = p
    return write_columns(path, meta, cols)


def load_field(path):
    from .columnfile import ColumnFileError, read_columns

    meta, cols = read_columns(path)
    if meta.get("type") != "ReducedDistanceField":
        raise ColumnFileError(f"{path}: not a reduced distance field")
    shape = tuple(meta["shape"])
    names = sorted(k for k in cols if k.startswith("point"))
    pts = np.array([cols[k].reshape(shape) for k in names])
    center = np.array(meta["center"])
    cells = None
    if meta["cells"] is not None:
        cells = tuple(np.array(c, dtype=int) for c in meta["cells"])
    else:
        pts, center = pts[0], float(center[0])
    return ReducedDistanceField(cols["ell"].reshape(shape), meta["tau"], center, pts,
                                cols["converged"].reshape(shape) > 0.5, cells, meta["kind"])


def field_distance(flow, field_):
    """``d_0`` (distance at ``tau = 0``) from the center to each field cell.

    On the conformal torus every cell gets its own path minimization; the
    grid-graph distance field is too coarse for a pointwise comparison.
    """
    if flow.kind == "shrinking_sphere":
        return flow.scale_at(flow.T) * field_.points
    if flow.kind == "conformal_torus_flow":
        out = np.empty(field_.ell.shape)
        for k in np.ndindex(out.shape):
            out[k] = conformal_distance(flow, flow.T, field_.center, field_.points[(slice(None),) + k])
        return out
    d = distance_field(flow, flow.T, field_.center)
    return d[field_.cells]


# -- checks ---------------------------------------------------------------------------------
def bounds_check(flow, field_, k1=None, k2=None, tol=1e-6):
    """Margins of the two-sided comparison between ``L_bar = 4 tau ell`` and ``d_0^2``.

    ``L_bar <= e^{2 k2 tau} d0^2 + (4 k2 n / 3) tau^2`` and
    ``d0^2 <= e^{2 k1 tau} (L_bar + (4 k1 n / 3) tau^2)``; returns both reports.
    """
    if k1 is None or k2 is None:
        k1, k2 = curvature_bounds(flow)
    tau, n = field_.tau, flow.n
    d2 = field_distance(flow, field_) ** 2
    Lb = field_.L_bar
    upper = math.exp(2 * k2 * tau) * d2 + 4.0 * k2 * n / 3.0 * tau ** 2 - Lb
    lower = math.exp(2 * k1 * tau) * (Lb + 4.0 * k1 * n / 3.0 * tau ** 2) - d2
    res = int(flow.spec.resolution)
    common = dict(background=flow.kind, resolution=res, time=tau, extra={"k1": k1, "k2": k2})
    return (HarnackReport("L_bar_upper", upper, GE_ZERO, tol, ~field_.converged, **common),
            HarnackReport("L_bar_lower", lower, GE_ZERO, tol, ~field_.converged, **dict(common, extra={"k1": k1, "k2": k2})))


def kernel_lower_bound_check(H, field_, tau=None, tol=None, rel_floor=1e-8):
    """Margin of ``f <= ell`` (equivalently ``H >= exp(-ell) / (4 pi tau)^{n/2}``) per cell."""
    tau = field_.tau if tau is None else tau
    if abs(tau - field_.tau) > 1e-12:
        raise HarnackError("field and kernel tau differ")
    flow = H.flow
    if flow.kind != "shrinking_sphere":
        if H.center is None or not np.allclose(np.asarray(H.center), np.asarray(field_.center)):
            raise HarnackError("field and kernel centers differ")
    jet = H.jet(tau=tau, rel_floor=rel_floor)
    f = jet.potential(tau)
    mask = jet.mask
    if field_.cells is not None:
        f, mask = f[field_.cells], mask[field_.cells]
    margin = field_.ell - f
    tol = flow_tolerance(flow) if tol is None else tol
    return HarnackReport("ell_minus_f", margin, GE_ZERO, tol, mask | ~field_.converged, flow.kind,
                         int(flow.spec.resolution), tau)


# -- weak supersolution test ------------------------------------------------------------------
def _von_mises(z, c, kappa, L):
    """Periodic bump ``exp(kappa (cos(2 pi (z - c) / L) - 1))`` with two derivatives."""
    k = 2.0 * math.pi / L
    th = k * (z - c)
    f = np.exp(kappa * (np.cos(th) - 1.0))
    d1 = -kappa * k * np.sin(th) * f
    d2 = (kappa * kappa * k * k * np.sin(th) ** 2 - kappa * k * k * np.cos(th)) * f
    return f, d1, d2


def test_function_suite(flow, count=10, seed=0):
    """Smooth nonnegative bumps as ``(psi, flat Laplacian)`` pairs of callables on points.

    Torus kinds use products of periodic von Mises bumps; the sphere uses
    zonal bumps in ``x = cos(theta)`` with the unit-sphere Laplacian.
    """
    rng = np.random.default_rng(seed)
    out = []
    if flow.kind == "shrinking_sphere":
        n = flow.n
        for _ in range(count):
            c, w = rng.uniform(-0.9, 1.0), rng.uniform(0.15, 0.5)

            def psi(x, c=c, w=w):
                return np.exp(-(x - c) ** 2 / (2 * w * w))

            def lap(x, c=c, w=w):
                f = np.exp(-(x - c) ** 2 / (2 * w * w))
                fx = -(x - c) / (w * w) * f
                fxx = ((x - c) ** 2 / w ** 4 - 1.0 / (w * w)) * f
                return (1.0 - x * x) * fxx - n * x * fx

            out.append((psi, lap))
        return out
    sides = flow.grid.sides
    origin = flow.grid.origin
    for _ in range(count):
        c = [o + rng.uniform(0.0, s) for o, s in zip(origin, sides)]
        kappa = rng.uniform(1.0, 4.0)

        def psi(p, c=c, kappa=kappa):
            return np.prod([_von_mises(p[i], c[i], kappa, sides[i])[0] for i in range(len(c))], axis=0)

        def lap(p, c=c, kappa=kappa):
            comps = [_von_mises(p[i], c[i], kappa, sides[i]) for i in range(len(c))]
            total = 0.0
            for i in range(len(c)):
                rest = np.prod([comps[j][0] for j in range(len(c)) if j != i], axis=0)
                total = total + comps[i][2] * rest
            return total

        out.append((psi, lap))
    return out


def _field_measure(flow, field_, t):
    """Quadrature weights, ``psi``-evaluation points and conformal Laplacian factor on a field's cells."""
    if flow.kind == "shrinking_sphere":
        rho2 = float(flow.scale_at(t)) ** 2
        return flow.weights_at(t), flow.grid.x, 1.0 / rho2
    shape = field_.ell.shape
    vol = float(np.prod([s / m for s, m in zip(flow.grid.sides, shape)]))
    if flow.kind == "conformal_torus_flow":
        e2 = np.exp(2.0 * flow.phi_at(t)[field_.cells])
        return e2 * vol, field_.points, 1.0 / e2
    return np.full(shape, vol), field_.points, 1.0


def weak_check_taus(tau_a, tau_b, count=6):
    """Gauss-Legendre ``tau`` nodes inside the window ``(tau_a, tau_b)``."""
    x, _ = np.polynomial.legendre.leggauss(count)
    return tau_a + 0.5 * (tau_b - tau_a) * (x + 1.0)


def _interpolatory_weights(nodes, a, b):
    """Weights of the interpolatory rule on ``nodes`` for ``int_a^b``."""
    from numpy.polynomial import legendre

    z = (2.0 * np.asarray(nodes) - (a + b)) / (b - a)
    V = legendre.legvander(z, len(z) - 1).T
    moments = np.zeros(len(z))
    moments[0] = 2.0
    return 0.5 * (b - a) * np.linalg.solve(V, moments)


def supersolution_weak_check(flow, fields, tests=None, tol=None, window=None):
    """Weak form of ``(d_tau - Lap + R) w <= 0`` for ``w = exp(-ell) / (4 pi tau)^{n/2}``.

    Each test function is ``psi(y) chi(tau)`` with ``chi = sin^2`` on the
    ``tau`` window (default: the span of the field nodes), vanishing to first
    order at both ends. The pairing ``int int w (-d_tau psi - Lap psi) dmu
    dtau`` (the ``R`` terms cancel against ``d_tau dmu = R dmu``) uses the
    interpolatory rule on the field nodes, so Gauss-Legendre nodes from
    :func:`weak_check_taus` with their window are the accurate choice. The
    pairing is normalized by ``int int w (|d_tau psi| + |Lap psi|)``; one
    report per test function.
    """
    fields = sorted(fields, key=lambda f: f.tau)
    if len(fields) < 3:
        raise HarnackError("need at least three tau nodes")
    taus = np.array([f.tau for f in fields])
    ta, tb = (taus[0], taus[-1]) if window is None else window
    if taus[0] < ta - 1e-14 or taus[-1] > tb + 1e-14:
        raise HarnackError("tau nodes outside the window")
    qw = _interpolatory_weights(taus, ta, tb)
    chi = np.sin(math.pi * (taus - ta) / (tb - ta)) ** 2
    dchi = math.pi / (tb - ta) * np.sin(2 * math.pi * (taus - ta) / (tb - ta))
    n = flow.n
    tests = test_function_suite(flow) if tests is None else tests
    tol = 1e-4 if tol is None else tol
    reports = []
    for j, (psi, lap) in enumerate(tests):
        pair, scale = [], []
        for f, c, dc in zip(fields, chi, dchi):
            t = flow.T - f.tau
            w = np.exp(-f.ell) / (4.0 * math.pi * f.tau) ** (0.5 * n)
            weights, pts, lap_factor = _field_measure(flow, f, t)
            p, lap_psi = psi(pts), lap_factor * lap(pts)
            pair.append(np.sum(w * (-dc * p - c * lap_psi) * weights))
            scale.append(np.sum(w * (np.abs(dc * p) + np.abs(c * lap_psi)) * weights))
        P = float(np.dot(qw, pair))
        S = float(np.dot(qw, scale))
        reports.append(HarnackReport(f"weak_pairing[{j}]", np.array([P / S]), LE_ZERO, tol,
                                     background=flow.kind, resolution=int(flow.spec.resolution),
                                     time=float(taus[len(taus) // 2]), extra={"pairing": P, "scale": S}))
    return reports
