"""Ricci-flow solutions on the model backgrounds.

Static kinds and the shrinking sphere are closed form. The 2-D conformal torus
flow ``d phi/dt = exp(-2 phi) Lap0 phi`` is integrated with classical RK4 and a
spectral Laplacian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .geometry import BackgroundSpec, GeometryError, conformal_scalar_curvature
from .spectral import PeriodicGrid

log = logging.getLogger(__name__)

# RK4 is stable for lambda*dt in [-2.785, 0]; the corner mode of the 2-D spectral
# Laplacian has lambda = -2 pi^2 / h^2, so dt <= c h^2 min(exp(2 phi)) needs
# c < 2.785 / (2 pi^2) ~ 0.141.
DEFAULT_STABILITY = 0.125


class FlowError(RuntimeError):
    pass


@dataclass(eq=False)
class FlowSolution:
    spec: BackgroundSpec
    times: np.ndarray
    phi: Optional[np.ndarray] = field(default=None, repr=False)  # (K+1, N, N), conformal only
    phi_dot: Optional[np.ndarray] = field(default=None, repr=False)
    residual: float = 0.0
    residual_tol: float = np.inf

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 2 or np.any(np.diff(self.times) <= 0):
            raise FlowError("time grid must be strictly increasing with at least two nodes")
        if abs(self.times[0]) > 1e-12 or abs(self.times[-1] - self.spec.T) > 1e-9 * max(1.0, self.spec.T):
            raise FlowError("time grid must cover [0, T]")
        self.grid = self.spec.grid()
        self._splines = None

    @property
    def kind(self):
        return self.spec.kind

    @property
    def n(self):
        return self.spec.n

    @property
    def T(self):
        return self.spec.T

    # -- metric data -------------------------------------------------------
    def _locate(self, t):
        if not (-1e-12 <= t <= self.T + 1e-12):
            raise GeometryError(f"time {t} outside [0, {self.T}]")
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        dt = self.times[k + 1] - self.times[k]
        return k, dt, (t - self.times[k]) / dt

    def phi_at(self, t):
        """Conformal factor at ``t``; cubic Hermite between stored nodes."""
        if self.phi is None:
            return np.zeros(self.grid.shape) if isinstance(self.grid, PeriodicGrid) else np.zeros(self.grid.x.shape)
        k, dt, s = self._locate(t)
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        return (h00 * self.phi[k] + h10 * dt * self.phi_dot[k]
                + h01 * self.phi[k + 1] + h11 * dt * self.phi_dot[k + 1])

    def scale_at(self, t):
        """Sphere radius at ``t`` (sphere kind only)."""
        return float(self.spec.sphere_radius(t))

    def weights_at(self, t):
        """Quadrature weights of ``dmu_t`` on the grid."""
        if self.kind == "shrinking_sphere":
            return self.grid.equator_area * self.scale_at(t) ** self.n * self.grid.weights
        if self.kind == "conformal_torus_flow":
            return np.exp(2.0 * self.phi_at(t)) * self.grid.cell_volume
        return np.full(self.grid.shape, self.grid.cell_volume)

    def R_at(self, t):
        if self.kind == "shrinking_sphere":
            return np.full(self.grid.x.shape, self.n * (self.n - 1) / self.scale_at(t) ** 2)
        if self.kind == "conformal_torus_flow":
            return conformal_scalar_curvature(self.grid, self.phi_at(t))
        return np.zeros(self.grid.shape)

    def total_volume(self, t):
        return float(np.sum(self.weights_at(t)))

    # -- samplers for path functionals --------------------------------------
    def static_sampler(self, t):
        phi = self.phi_at(t)
        return _PeriodicSpline(self.grid, None, [phi] + list(self.grid.gradient(phi)))

    def spacetime_sampler(self):
        """Spline interpolants of phi, grad phi, R, grad R over space-time."""
        if self._splines is None:
            stacks = [[], [], [], [], [], []]
            for k, t in enumerate(self.times):
                phi = self.phi[k]
                R = conformal_scalar_curvature(self.grid, phi)
                gphi = self.grid.gradient(phi)
                gR = self.grid.gradient(R)
                for lst, arr in zip(stacks, [phi, gphi[0], gphi[1], R, gR[0], gR[1]]):
                    lst.append(arr)
            self._splines = _PeriodicSpline(self.grid, self.times, [np.array(s) for s in stacks])
        return self._splines


class _PeriodicSpline:
    """Cubic-spline interpolation, periodic in space, optionally linear-trend padded in time."""

    PAD = 6

    def __init__(self, grid, times, fields):
        self.grid = grid
        self.times = times
        self.coeffs = []
        for f in fields:
            f = np.asarray(f, dtype=float)
            if times is not None:
                f = np.pad(f, [(self.PAD, self.PAD), (0, 0), (0, 0)], mode="reflect", reflect_type="odd")
            self.coeffs.append(ndimage.spline_filter(f, order=3, mode="grid-wrap"))

    def _coords(self, pts, t=None):
        pts = np.asarray(pts, dtype=float)
        c = [(pts[..., i] - self.grid.origin[i]) / self.grid.h[i] for i in range(2)]
        if self.times is not None:
            dt = self.times[1] - self.times[0]
            c = [np.broadcast_to((np.asarray(t, dtype=float) - self.times[0]) / dt + self.PAD, c[0].shape)] + c
        return np.array([np.ravel(ci) for ci in c]), pts.shape[:-1]

    def sample(self, index, pts, t=None):
        coords, shape = self._coords(pts, t)
        out = ndimage.map_coordinates(self.coeffs[index], coords, order=3, mode="grid-wrap", prefilter=False)
        return out.reshape(shape)

    def value(self, pts, t=None):
        return self.sample(0, pts, t)

    def gradient(self, pts, t=None):
        return np.stack([self.sample(1, pts, t), self.sample(2, pts, t)], axis=-1)


# -- constructors -------------------------------------------------------------
def static_flow(spec, steps=64):
    if not spec.is_static:
        raise FlowError("static_flow needs a static background")
    return FlowSolution(spec, np.linspace(0.0, spec.T, steps + 1))


def shrinking_sphere_solution(spec, steps=64):
    if spec.kind != "shrinking_sphere":
        raise FlowError("background is not a shrinking sphere")
    if spec.T >= spec.radius ** 2 / (2.0 * (spec.n - 1)):
        raise FlowError("horizon reaches the extinction time")
    return FlowSolution(spec, np.linspace(0.0, spec.T, steps + 1))


def conformal_rhs(grid, phi):
    return np.exp(-2.0 * phi) * grid.laplacian(phi)


def evolve_conformal_flow(spec, steps, substeps=None, stability=DEFAULT_STABILITY, residual_tol=5e-2):
    """Integrate ``d phi/dt = exp(-2 phi) Lap0 phi`` with RK4.

    ``steps`` storage intervals cover ``[0, T]``; each is split into
    ``substeps`` RK4 steps (chosen automatically from the stability bound
    when omitted). Raises :class:`FlowError` on a stability violation or
    non-finite values.
    """
    if spec.kind != "conformal_torus_flow":
        raise FlowError("background is not a conformal torus flow")
    grid = spec.grid()
    h2 = min(grid.h) ** 2
    times = np.linspace(0.0, spec.T, steps + 1)
    dt_store = times[1] - times[0]
    phi = spec.phi0.copy()

    def limit(p):
        return stability * h2 * float(np.exp(2.0 * p.min()))

    if substeps is None:
        substeps = max(1, int(np.ceil(dt_store / (0.8 * limit(phi)))))
    dt = dt_store / substeps
    if dt > limit(phi):
        raise FlowError(f"time step {dt:.3e} exceeds stability limit {limit(phi):.3e}")

    phis = [phi.copy()]
    for k in range(steps):
        for _ in range(substeps):
            k1 = conformal_rhs(grid, phi)
            k2 = conformal_rhs(grid, phi + 0.5 * dt * k1)
            k3 = conformal_rhs(grid, phi + 0.5 * dt * k2)
            k4 = conformal_rhs(grid, phi + dt * k3)
            phi = phi + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(phi)):
            raise FlowError(f"non-finite conformal factor at t={times[k + 1]:.4g}")
        if dt > limit(phi):
            raise FlowError(f"stability limit violated at t={times[k + 1]:.4g}")
        phis.append(phi.copy())
    phis = np.array(phis)
    dots = np.array([conformal_rhs(grid, p) for p in phis])
    residual = flow_residual(grid, times, phis)
    if residual > residual_tol:
        raise FlowError(f"flow residual {residual:.3e} above tolerance {residual_tol:.3e}")
    log.debug("conformal flow: %d x %d substeps, residual %.3e", steps, substeps, residual)
    return FlowSolution(spec, times, phis, dots, residual, residual_tol)


def flow_residual(grid, times, phis):
    """Max of ``|(phi_{k+1} - phi_k)/dt - F(phi_mid)|`` relative to ``max |F|``.

    Midpoint averaging makes this a second-order measure of the storage step.
    """
    worst = 0.0
    scale = max(float(np.max(np.abs(conformal_rhs(grid, p)))) for p in phis)
    for k in range(len(times) - 1):
        dt = times[k + 1] - times[k]
        mid = 0.5 * (phis[k] + phis[k + 1])
        r = (phis[k + 1] - phis[k]) / dt - conformal_rhs(grid, mid)
        worst = max(worst, float(np.max(np.abs(r))))
    return worst / scale if scale > 0 else worst


def make_flow(spec, steps=64, **kw):
    if spec.is_static:
        return static_flow(spec, steps)
    if spec.kind == "shrinking_sphere":
        return shrinking_sphere_solution(spec, steps)
    return evolve_conformal_flow(spec, steps, **kw)


def check_measure_evolution(flow):
    """Max relative residual of ``d/dt dmu + R dmu`` over sampled space-time."""
    if flow.spec.is_static:
        return 0.0
    if flow.kind == "shrinking_sphere":
        n = flow.n
        worst = 0.0
        for t in flow.times:
            rho = flow.scale_at(t)
            # d/dt rho^n = -n (n-1) rho^(n-2)
            d_dmu = -n * (n - 1) * rho ** (n - 2)
            R = n * (n - 1) / rho ** 2
            worst = max(worst, abs(d_dmu + R * rho ** n) / rho ** n)
        return worst
    worst = 0.0
    t = flow.times
    for k in range(1, len(t) - 1):
        mu_p = np.exp(2.0 * flow.phi[k + 1])
        mu_m = np.exp(2.0 * flow.phi[k - 1])
        mu = np.exp(2.0 * flow.phi[k])
        dmu = (mu_p - mu_m) / (t[k + 1] - t[k - 1])
        R = conformal_scalar_curvature(flow.grid, flow.phi[k])
        worst = max(worst, float(np.max(np.abs(dmu + R * mu) / mu)))
    return worst
