"""Forward heat and conjugate heat solvers, fundamental solutions, closed-form kernels.

Time conventions: a history stores its nodes in flow time ``t`` (ascending);
``tau = T - t`` is attached for conjugate solutions.

Propagation is exact wherever the operator is diagonal in a known basis:
Fourier modes on static flat backgrounds, Gegenbauer modes on the shrinking
sphere (whose curvature is spatially constant). The conformal torus flow is
integrated with RK4; the conjugate equation is advanced in the conserved
density ``w = u exp(2 phi)``, for which ``dw/dtau = Lap0 u`` and the discrete
mass is conserved to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .flow import DEFAULT_STABILITY, FlowSolution
from .frames import UNDERFLOW, kernel_jet_components
from .geometry import GeometryError, _as_sphere_vector

FORWARD = "forward_in_t"
BACKWARD = "backward_in_t"


class SolverError(RuntimeError):
    pass


@dataclass(eq=False)
class FieldHistory:
    flow: FlowSolution
    direction: str
    times: np.ndarray
    values: np.ndarray = field(repr=False)
    center: Optional[np.ndarray] = None
    coeffs: Optional[np.ndarray] = field(default=None, repr=False)
    error: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.direction not in (FORWARD, BACKWARD):
            raise SolverError(f"unknown direction {self.direction!r}")
        if np.any(np.diff(self.times) <= 0):
            raise SolverError("history time nodes must be strictly increasing")
        self.mask = self.values <= UNDERFLOW
        self.values = np.where(self.mask, UNDERFLOW, self.values)

    @property
    def taus(self):
        return self.flow.T - self.times

    @property
    def masses(self):
        return np.array([np.sum(v * self.flow.weights_at(t)) for t, v in zip(self.times, self.values)])

    def index(self, t=None, tau=None):
        if t is None:
            t = self.flow.T - tau
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise SolverError(f"no history node at t={t}")
        return k

    def at(self, t=None, tau=None):
        return self.values[self.index(t, tau)]

    def coeffs_at(self, t=None, tau=None):
        return None if self.coeffs is None else self.coeffs[self.index(t, tau)]

    def frame(self, t=None, tau=None):
        from .frames import Frame

        k = self.index(t, tau)
        return Frame(self.flow, self.times[k])

    def jet(self, t=None, tau=None, rel_floor=None):
        from .frames import DEFAULT_REL_FLOOR

        k = self.index(t, tau)
        fr = self.frame(t, tau)
        c = None if self.coeffs is None else self.coeffs[k]
        return fr.jet(self.values[k], coeffs=c, rel_floor=DEFAULT_REL_FLOOR if rel_floor is None else rel_floor)


# -- sphere helpers ----------------------------------------------------------------
def _inv_rho2_integral(spec, t_a, t_b):
    """Signed integral of ``1 / rho(t)^2`` from ``t_a`` to ``t_b``."""
    ra = spec.radius ** 2 - 2.0 * (spec.n - 1) * t_a
    rb = spec.radius ** 2 - 2.0 * (spec.n - 1) * t_b
    return -math.log(rb / ra) / (2.0 * (spec.n - 1))


def _sphere_forward_factor(flow, t_a, t_b):
    return np.exp(-flow.grid.eigenvalues * _inv_rho2_integral(flow.spec, t_a, t_b))


def _sphere_conjugate_factor(flow, t_a, t_b):
    """Mode factors for the conjugate equation run from ``t_a`` back to ``t_b < t_a``."""
    n = flow.n
    G = _inv_rho2_integral(flow.spec, t_b, t_a)
    return np.exp(-(flow.grid.eigenvalues + n * (n - 1)) * G)


# -- time stepping for the conformal flow ------------------------------------------
def _rk4_substeps(flow, span):
    h2 = min(flow.grid.h) ** 2
    lim = DEFAULT_STABILITY * h2 * float(np.exp(2.0 * flow.phi.min()))
    return max(1, int(math.ceil(abs(span) / (0.8 * lim))))


def _conformal_forward(flow, h, t_a, t_b):
    grid = flow.grid
    m = _rk4_substeps(flow, t_b - t_a)
    dt = (t_b - t_a) / m

    def rhs(v, t):
        return np.exp(-2.0 * flow.phi_at(t)) * grid.laplacian(v)

    t = t_a
    for _ in range(m):
        k1 = rhs(h, t)
        k2 = rhs(h + 0.5 * dt * k1, t + 0.5 * dt)
        k3 = rhs(h + 0.5 * dt * k2, t + 0.5 * dt)
        k4 = rhs(h + dt * k3, t + dt)
        h = h + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    if not np.all(np.isfinite(h)):
        raise SolverError("non-finite values in forward heat solve")
    return h


def _conformal_conjugate(flow, u, t_a, t_b):
    """Advance ``w = u exp(2 phi)`` from ``t_a`` back to ``t_b``."""
    grid = flow.grid
    m = _rk4_substeps(flow, t_a - t_b)
    dtau = (t_a - t_b) / m

    def rhs(w, t):
        return grid.laplacian(w * np.exp(-2.0 * flow.phi_at(t)))

    w = u * np.exp(2.0 * flow.phi_at(t_a))
    t = t_a
    for _ in range(m):
        k1 = rhs(w, t)
        k2 = rhs(w + 0.5 * dtau * k1, t - 0.5 * dtau)
        k3 = rhs(w + 0.5 * dtau * k2, t - 0.5 * dtau)
        k4 = rhs(w + dtau * k3, t - dtau)
        w = w + dtau / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t -= dtau
    if not np.all(np.isfinite(w)):
        raise SolverError("non-finite values in conjugate heat solve")
    return w * np.exp(-2.0 * flow.phi_at(t_b))


# -- solvers -----------------------------------------------------------------------
def solve_forward_heat(flow, h0, t_init=0.0, times=None):
    """Solve ``(d/dt - Lap) h = 0`` from ``h0`` at ``t_init`` up to ``T``."""
    h0 = np.asarray(h0, dtype=float)
    if np.any(h0 < 0):
        raise SolverError("initial data must be nonnegative")
    if not (0.0 <= t_init < flow.T):
        raise SolverError("t_init must lie in [0, T)")
    if times is None:
        times = np.concatenate([[t_init], flow.times[flow.times > t_init + 1e-12]])
    times = np.asarray(times, dtype=float)
    if times[0] < t_init - 1e-12 or times[-1] > flow.T + 1e-12:
        raise SolverError("requested times outside [t_init, T]")
    values, coeffs = [], None
    if flow.kind == "shrinking_sphere":
        c0 = flow.grid.project(h0)
        coeffs = np.array([c0 * _sphere_forward_factor(flow, t_init, t) for t in times])
        values = [flow.grid.synthesize(c)[0] for c in coeffs]
    elif flow.spec.is_static:
        values = [flow.grid.heat_propagate(h0, t - t_init) for t in times]
    else:
        h, t_prev = h0, t_init
        for t in times:
            if t > t_prev:
                h = _conformal_forward(flow, h, t_prev, t)
            values.append(h)
            t_prev = t
    return FieldHistory(flow, FORWARD, times, np.array(values), coeffs=coeffs)


def solve_conjugate_heat(flow, terminal, taus=None, tau_start=0.0):
    """Solve ``u_tau - Lap u + R u = 0`` backward in ``t`` from ``terminal``.

    The datum is given at ``tau = tau_start`` (default: ``t = T``). Returns the
    history on the requested ``tau`` nodes.
    """
    terminal = np.asarray(terminal, dtype=float)
    if np.any(terminal < 0) or not np.sum(terminal) > 0:
        raise SolverError("terminal datum must be nonnegative with positive mass")
    if taus is None:
        taus = flow.T - flow.times[::-1]
        taus = taus[taus >= tau_start - 1e-12]
    taus = np.sort(np.asarray(taus, dtype=float))
    if taus[0] < tau_start - 1e-12 or taus[-1] > flow.T + 1e-12:
        raise SolverError("requested tau outside [tau_start, T]")
    t_start = flow.T - tau_start
    out, coeffs = [], None
    if flow.kind == "shrinking_sphere":
        c0 = flow.grid.project(terminal)
        coeffs = np.array([c0 * _sphere_conjugate_factor(flow, t_start, flow.T - tau) for tau in taus])
        out = [flow.grid.synthesize(c)[0] for c in coeffs]
    elif flow.spec.is_static:
        out = [flow.grid.heat_propagate(terminal, tau - tau_start) for tau in taus]
    else:
        u, t_prev = terminal, t_start
        for tau in taus:
            t = flow.T - tau
            if t < t_prev:
                u = _conformal_conjugate(flow, u, t_prev, t)
            out.append(u)
            t_prev = t
    # store ascending in t
    times = (flow.T - taus)[::-1]
    values = np.array(out)[::-1]
    if coeffs is not None:
        coeffs = coeffs[::-1]
    return FieldHistory(flow, BACKWARD, times, values, coeffs=coeffs)


def _local_gaussian(flow, center, eps, t):
    """Normalized Gaussian of width ``eps`` in the metric at ``t`` (grid data)."""
    weights = flow.weights_at(t)
    if flow.kind == "shrinking_sphere":
        d = flow.scale_at(t) * flow.grid.theta
    else:
        disp = flow.grid.displacement(center)
        if flow.spec.kind == "euclidean_static":
            disp = flow.grid.coords() - np.asarray(center, dtype=float).reshape((-1,) + (1,) * flow.n)
        scale = 1.0
        if flow.kind == "conformal_torus_flow":
            scale = math.exp(flow.grid.evaluate_at(flow.phi_at(t), center))
        d = scale * np.sqrt(np.sum(disp * disp, axis=0))
    g = np.exp(-d * d / (2.0 * eps * eps))
    return g / np.sum(g * weights)


def grid_spacing(flow, t=None):
    if flow.kind == "shrinking_sphere":
        t = flow.T if t is None else t
        return flow.scale_at(t) * math.pi / len(flow.grid.x)
    h = min(flow.grid.h)
    if flow.kind == "conformal_torus_flow":
        h *= math.exp(float(flow.phi.min()))
    return h


def fundamental_solution(flow, center=None, taus=None, widths=None):
    """Conjugate heat kernel ``H(., t; x, T)`` by two-width extrapolation.

    Each width ``eps`` seeds a Gaussian of variance ``eps^2`` (the leading-order
    kernel at ``tau0 = eps^2 / 2``) renormalized to discrete mass one; the two
    evolutions are combined to cancel the ``O(eps^2)`` seeding error. The
    history's ``error`` holds the size of that correction per node.
    """
    if flow.kind == "shrinking_sphere":
        center = None
    elif center is None:
        center = np.zeros(flow.n)
    if center is not None:
        center = np.asarray(center, dtype=float)
        grid = flow.grid
        snapped = grid.point(grid.index_of(center))
        if np.max(np.abs(snapped - center)) > 1e-9:
            raise SolverError("center must be a grid point")
    h = grid_spacing(flow)
    if widths is None:
        widths = (6.0 * h, 4.0 * h)
    e1, e2 = sorted(widths, reverse=True)
    if e2 < 4.0 * h * (1 - 1e-9):
        raise SolverError(f"width {e2:.3e} is not resolved by 4 cells (h={h:.3e})")
    if taus is None:
        taus = flow.T - flow.times[::-1]
    taus = np.sort(np.asarray(taus, dtype=float))
    if taus[0] < 0.5 * e1 * e1:
        raise SolverError("requested tau below the seeding time of the widest Gaussian")

    runs = []
    for eps in (e1, e2):
        tau0 = 0.5 * eps * eps
        seed = _local_gaussian(flow, center, eps, flow.T - tau0)
        runs.append(solve_conjugate_heat(flow, seed, taus, tau_start=tau0))
    H1, H2 = runs
    w = e2 * e2 / (e1 * e1 - e2 * e2)
    values = H2.values + w * (H2.values - H1.values)
    error = np.abs(w * (H2.values - H1.values))
    coeffs = None
    if H1.coeffs is not None:
        coeffs = H2.coeffs + w * (H2.coeffs - H1.coeffs)
    hist = FieldHistory(flow, BACKWARD, H2.times, values, center=center, coeffs=coeffs, error=error)
    return hist


# -- closed-form kernels -----------------------------------------------------------
def closed_form_kernel(spec, x, y, tau):
    """Flat heat kernel: Gaussian on R^n, theta-function product on the torus.

    ``y`` may be a single point or an array of points with leading axis ``n``.
    """
    spec = getattr(spec, "spec", spec)
    if spec.kind not in ("euclidean_static", "flat_torus_static"):
        raise GeometryError(f"no closed-form kernel for {spec.kind}")
    if not tau > 0:
        raise GeometryError("tau must be positive")
    val, _, _ = kernel_jet_components(spec, x, y, tau)
    return val


def sphere_kernel_coefficients(flow, tau):
    """Gegenbauer coefficients of the conjugate heat kernel centered at the north pole at ``T``."""
    zb = flow.grid
    rho_T = flow.scale_at(flow.T)
    delta = zb.delta_coefficients(rho_T)
    return delta * _sphere_conjugate_factor(flow, flow.T, flow.T - tau)


def sphere_kernel_history(flow, taus):
    taus = np.sort(np.asarray(taus, dtype=float))
    coeffs = np.array([sphere_kernel_coefficients(flow, tau) for tau in taus])[::-1]
    values = np.array([flow.grid.synthesize(c)[0] for c in coeffs])
    return FieldHistory(flow, BACKWARD, (flow.T - taus)[::-1], values, coeffs=coeffs)


def kernel_history(flow, center, taus):
    """Closed-form conjugate kernel history on static flat backgrounds."""
    taus = np.sort(np.asarray(taus, dtype=float))
    pts = flow.grid.coords()
    values = np.array([closed_form_kernel(flow.spec, center, pts, tau) for tau in taus])[::-1]
    return FieldHistory(flow, BACKWARD, (flow.T - taus)[::-1], values, center=np.asarray(center, dtype=float))


def heat_pairing(flow, F, x0, t0, t):
    """``int F(y) h(y, t; x0, t0) dmu_t(y)`` with ``h`` the forward heat kernel.

    Equals the conjugate evolution of ``F`` from ``t`` back to ``t0`` evaluated
    at ``x0``. Static flat backgrounds and the sphere (``x0`` a pole) only.
    """
    if t < t0:
        raise SolverError("pairing needs t >= t0")
    if flow.kind == "shrinking_sphere":
        zb = flow.grid
        c = zb.project(F) * _sphere_conjugate_factor(flow, t, t0)
        p = _as_sphere_vector(x0, flow.n)
        return float(zb.synthesize(c, np.array([p[-1]]))[0][0])
    if not flow.spec.is_static:
        raise SolverError("heat pairing needs a static or spherical background")
    grid = flow.grid
    return grid.evaluate_at(grid.heat_propagate(F, t - t0), x0)
