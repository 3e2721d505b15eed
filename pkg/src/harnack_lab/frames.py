"""Per-time geometry on the discretization and second-order jets of fields.

A :class:`Frame` bundles everything the Harnack evaluators need at one time
slice: quadrature weights of ``dmu_t``, scalar and Ricci curvature in an
orthonormal frame, and a Laplacian for derived fields. A :class:`FieldJet`
holds a positive field with its gradient and covariant Hessian, both in
orthonormal-frame components.

Numerical jets differentiate ``u`` itself (spectrally, or through the
Gegenbauer series on the sphere) and form log-derivatives algebraically.
Heat solutions are band-limited, so this is exact up to rounding, whereas
``log u`` develops steep layers near the cut locus of the torus.
"""

from __future__ import annotations

import math

import numpy as np

UNDERFLOW = 1e-300
DEFAULT_REL_FLOOR = 1e-12


class Frame:
    def __init__(self, flow, t):
        self.flow = flow
        self.spec = flow.spec
        self.t = float(t)
        self.tau = flow.T - self.t
        self.n = flow.n
        self.grid = flow.grid
        self.weights = flow.weights_at(self.t)
        self.R = flow.R_at(self.t)
        if flow.kind == "conformal_torus_flow":
            self.phi = flow.phi_at(self.t)
            self.grad_phi = self.grid.gradient(self.phi)
        if flow.kind == "shrinking_sphere":
            self.rho = flow.scale_at(self.t)

    @property
    def shape(self):
        return self.weights.shape

    @property
    def is_sphere(self):
        return self.flow.kind == "shrinking_sphere"

    def points(self):
        if self.is_sphere:
            return self.grid.theta
        return self.grid.coords()

    def ricci(self):
        """Ricci tensor in orthonormal components, shape ``(n, n, *shape)``."""
        eye = np.eye(self.n).reshape((self.n, self.n) + (1,) * len(self.shape))
        if self.is_sphere:
            return eye * ((self.n - 1) / self.rho ** 2) * np.ones(self.shape)
        if self.flow.kind == "conformal_torus_flow":
            return eye * (0.5 * self.R)
        return eye * np.zeros(self.shape)

    def integrate(self, f):
        return float(np.sum(np.asarray(f) * self.weights))

    def laplacian(self, f):
        if self.is_sphere:
            c = self.grid.project(f)
            return self.grid.synthesize(-self.grid.eigenvalues * c)[0] / self.rho ** 2
        lap0 = self.grid.laplacian(f)
        if self.flow.kind == "conformal_torus_flow":
            return np.exp(-2.0 * self.phi) * lap0
        return lap0

    def distance_from(self, center):
        """Distance to ``center`` under the metric of this slice, per grid cell."""
        from .geometry import distance_field

        return distance_field(self.flow, self.t, center)

    def jet(self, u, coeffs=None, rel_floor=DEFAULT_REL_FLOOR, x=None):
        """Jet of grid data ``u`` (or of a sphere series given by ``coeffs``).

        On the sphere ``x`` selects evaluation points ``cos(theta)`` other than
        the quadrature nodes (e.g. the poles).
        """
        if self.is_sphere:
            zb = self.grid
            c = zb.project(np.asarray(u, dtype=float)) if coeffs is None else coeffs
            x = zb.x if x is None else np.asarray(x, dtype=float)
            val, ux, uxx = zb.synthesize(c, x)
            s2 = 1.0 - x * x
            u_tt = s2 * uxx - x * ux  # d2/dtheta2
            u_t = -np.sqrt(np.maximum(s2, 0.0)) * ux
            cot_ut = -x * ux  # cot(theta) * du/dtheta, regular at the poles
            grad = np.zeros((self.n,) + val.shape)
            grad[0] = u_t / self.rho
            hess = np.zeros((self.n, self.n) + val.shape)
            hess[0, 0] = u_tt / self.rho ** 2
            for i in range(1, self.n):
                hess[i, i] = cot_ut / self.rho ** 2
            return FieldJet(val, grad, hess, self, rel_floor=rel_floor)
        u = np.asarray(u, dtype=float)
        grid = self.grid
        g0 = grid.gradient(u)
        h0 = grid.hessian(u)
        if self.flow.kind == "conformal_torus_flow":
            e = np.exp(-self.phi)
            gp = self.grad_phi
            dot = np.sum(gp * g0, axis=0)
            hc = h0.copy()
            for i in range(2):
                for j in range(2):
                    hc[i, j] -= gp[j] * g0[i] + gp[i] * g0[j]
                    if i == j:
                        hc[i, j] += dot
            return FieldJet(u, g0 * e, hc * e * e, self, rel_floor=rel_floor)
        return FieldJet(u, g0, h0, self, rel_floor=rel_floor)


class FieldJet:
    """A positive field with first and second covariant derivatives."""

    def __init__(self, u, grad, hess, frame, rel_floor=0.0):
        self.frame = frame
        self.n = frame.n
        raw = np.asarray(u, dtype=float)
        floor = max(UNDERFLOW, rel_floor * float(np.max(raw))) if raw.size else UNDERFLOW
        self.underflow = raw <= UNDERFLOW
        # cells below the relative floor are unresolved by the spectral
        # derivatives: excluded from margins like underflowed ones
        self.mask = raw <= floor
        self.u = np.where(raw <= UNDERFLOW, UNDERFLOW, raw)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = np.asarray(hess, dtype=float)

    @property
    def valid(self):
        return ~self.mask

    @property
    def laplacian(self):
        return np.trace(self.hess, axis1=0, axis2=1)

    @property
    def grad_sq(self):
        return np.sum(self.grad * self.grad, axis=0)

    @property
    def _den(self):
        # masked cells get a dummy denominator; they never enter a margin
        return np.where(self.mask, 1.0, self.u)

    @property
    def grad_log(self):
        return self.grad / self._den

    @property
    def hess_log(self):
        gl = self.grad_log
        return self.hess / self._den - gl[:, None] * gl[None, :]

    def potential(self, tau):
        """``f = -log u - (n/2) log(4 pi tau)``."""
        return -np.log(self.u) - 0.5 * self.n * math.log(4.0 * math.pi * tau)


# -- analytic jets ---------------------------------------------------------------
def _theta_1d(dx, tau, L):
    """Periodized 1-D heat kernel and its first two derivatives."""
    dx = np.asarray(dx, dtype=float)
    dx = dx - L * np.round(dx / L)
    # images are cheap when the kernel is narrow, Fourier modes when it is wide
    n_img = int(math.ceil(math.sqrt(4.0 * tau * 40.0) / L)) + 1
    n_fou = int(math.ceil(L * math.sqrt(40.0 / tau) / (2.0 * math.pi))) + 1
    if n_img <= n_fou:
        m = np.arange(-n_img, n_img + 1).reshape((-1,) + (1,) * dx.ndim)
        d = dx[None] + m * L
        g = np.exp(-d * d / (4.0 * tau)) / math.sqrt(4.0 * math.pi * tau)
        val = g.sum(axis=0)
        d1 = (-d / (2.0 * tau) * g).sum(axis=0)
        d2 = ((d * d / (4.0 * tau * tau) - 1.0 / (2.0 * tau)) * g).sum(axis=0)
        return val, d1, d2
    m = np.arange(1, n_fou + 1).reshape((-1,) + (1,) * dx.ndim)
    k = 2.0 * math.pi * m / L
    e = np.exp(-k * k * tau)
    c = np.cos(k * dx[None])
    s = np.sin(k * dx[None])
    val = (1.0 + 2.0 * (e * c).sum(axis=0)) / L
    d1 = (-2.0 * (e * k * s).sum(axis=0)) / L
    d2 = (-2.0 * (e * k * k * c).sum(axis=0)) / L
    return val, d1, d2


def kernel_jet_components(spec, center, pts, tau):
    """Value, gradient and Hessian of the flat heat kernel at points ``pts``.

    ``pts`` has shape ``(n, ...)``. Euclidean kinds use the Gaussian, torus
    kinds the theta-function product.
    """
    n = spec.n
    center = np.asarray(center, dtype=float)
    pts = np.asarray(pts, dtype=float)
    comps = []
    for i in range(n):
        dx = pts[i] - center[i]
        if spec.kind == "euclidean_static":
            g = np.exp(-dx * dx / (4.0 * tau)) / math.sqrt(4.0 * math.pi * tau)
            comps.append((g, -dx / (2.0 * tau) * g, (dx * dx / (4.0 * tau * tau) - 1.0 / (2.0 * tau)) * g))
        else:
            comps.append(_theta_1d(dx, tau, spec.sides[i]))
    val = np.prod([c[0] for c in comps], axis=0)
    grad = np.zeros((n,) + val.shape)
    hess = np.zeros((n, n) + val.shape)
    for i in range(n):
        others = [comps[j][0] for j in range(n) if j != i]
        rest = np.prod(others, axis=0) if others else 1.0
        grad[i] = comps[i][1] * rest
        hess[i, i] = comps[i][2] * rest
        for j in range(i + 1, n):
            others = [comps[k][0] for k in range(n) if k not in (i, j)]
            rest = np.prod(others, axis=0) if others else 1.0
            hess[i, j] = hess[j, i] = comps[i][1] * comps[j][1] * rest
    return val, grad, hess


def kernel_jet(frame, center, tau):
    """Analytic jet of the flat heat kernel at time ``tau`` on the frame's grid."""
    val, grad, hess = kernel_jet_components(frame.spec, center, frame.points(), tau)
    return FieldJet(val, grad, hess, frame)
