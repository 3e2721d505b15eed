"""Model backgrounds: metrics, curvature, distances and volume measures.

Four kinds are supported:

``euclidean_static``
    Flat R^n, represented on a large periodic computational patch centered at
    the origin. Distances are Euclidean (no wrap).
``flat_torus_static``
    Flat torus with the given side lengths.
``shrinking_sphere``
    Round sphere with ``rho(t)^2 = rho0^2 - 2 (n - 1) t``. Fields are zonal and
    live on a Gauss-Gegenbauer grid in the polar angle.
``conformal_torus_flow``
    2-D torus with metric ``exp(2 phi(x, t)) |dx|^2`` evolving by Ricci flow.
    Needs a :class:`~harnack_lab.flow.FlowSolution`.

Sphere points are unit vectors in R^{n+1}; a bare float is read as the polar
angle measured from the north pole ``e_{n+1}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import paths
from .spectral import PeriodicGrid, ZonalBasis

KINDS = ("euclidean_static", "flat_torus_static", "shrinking_sphere", "conformal_torus_flow")
STATIC_KINDS = ("euclidean_static", "flat_torus_static")


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BackgroundSpec:
    kind: str
    n: int = 2
    T: float = 1.0
    sides: Optional[tuple] = None
    radius: Optional[float] = None
    phi0: Optional[np.ndarray] = field(default=None, repr=False)
    resolution: int = 128

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeometryError(f"unknown background kind {self.kind!r}")
        if int(self.n) < 1:
            raise GeometryError("dimension must be >= 1")
        if not self.T > 0:
            raise GeometryError("horizon T must be positive")
        if self.kind in ("euclidean_static", "flat_torus_static", "conformal_torus_flow"):
            sides = self.sides if self.sides is not None else (1.0,) * self.n
            sides = tuple(float(s) for s in np.broadcast_to(np.asarray(sides, dtype=float), (self.n,)))
            if any(s <= 0 for s in sides):
                raise GeometryError("side lengths must be positive")
            object.__setattr__(self, "sides", sides)
        if self.kind == "shrinking_sphere":
            if self.n < 2:
                raise GeometryError("shrinking sphere needs n >= 2")
            if self.radius is None or not self.radius > 0:
                raise GeometryError("shrinking sphere needs a positive initial radius")
            if self.T >= self.radius ** 2 / (2.0 * (self.n - 1)):
                raise GeometryError("horizon reaches the extinction time of the sphere")
        if self.kind == "conformal_torus_flow":
            if self.n != 2:
                raise GeometryError("conformal torus flow is two-dimensional")
            if self.phi0 is None:
                raise GeometryError("conformal torus flow needs an initial conformal factor")
            phi0 = np.asarray(self.phi0, dtype=float)
            if phi0.shape != (self.resolution, self.resolution):
                raise GeometryError("phi0 must be sampled on the resolution x resolution grid")
            object.__setattr__(self, "phi0", phi0)

    # -- constructors ------------------------------------------------------
    @classmethod
    def conformal_from_function(cls, func, sides=(1.0, 1.0), resolution=128, T=0.1):
        grid = PeriodicGrid(sides, (resolution, resolution))
        X = grid.coords()
        return cls("conformal_torus_flow", n=2, T=T, sides=sides, phi0=func(X[0], X[1]), resolution=resolution)

    def with_resolution(self, resolution):
        """Same background at another resolution (phi0 resampled spectrally)."""
        phi0 = self.phi0
        if self.kind == "conformal_torus_flow":
            phi0 = _resample_periodic(self.phi0, resolution)
        return BackgroundSpec(self.kind, self.n, self.T, self.sides, self.radius, phi0, resolution)

    # -- discretization ----------------------------------------------------
    @property
    def is_static(self):
        return self.kind in STATIC_KINDS

    def grid(self):
        if self.kind == "shrinking_sphere":
            return ZonalBasis(self.n, modes=self.resolution)
        origin = None
        if self.kind == "euclidean_static":
            origin = tuple(-0.5 * s for s in self.sides)
        return PeriodicGrid(self.sides, (self.resolution,) * self.n, origin)

    def sphere_radius(self, t):
        r2 = self.radius ** 2 - 2.0 * (self.n - 1) * np.asarray(t, dtype=float)
        return np.sqrt(r2)

    # -- serialization -----------------------------------------------------
    def to_dict(self):
        d = {"kind": self.kind, "n": int(self.n), "T": float(self.T), "resolution": int(self.resolution)}
        if self.sides is not None:
            d["sides"] = list(self.sides)
        if self.radius is not None:
            d["radius"] = float(self.radius)
        if self.phi0 is not None:
            d["phi0"] = self.phi0.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        phi0 = d.pop("phi0", None)
        modes = d.pop("phi0_modes", None)
        sides = d.pop("sides", None)
        spec_kw = {k: d[k] for k in ("kind", "n", "T", "radius", "resolution") if k in d}
        if sides is not None:
            spec_kw["sides"] = tuple(sides)
        if modes is not None and phi0 is None:
            res = int(spec_kw.get("resolution", 128))
            grid = PeriodicGrid(spec_kw.get("sides", (1.0, 1.0)), (res, res))
            X = grid.coords()
            phi0 = np.zeros((res, res))
            for m in modes:
                kx, ky = m.get("kx", 0), m.get("ky", 0)
                arg = 2 * np.pi * (kx * X[0] / grid.sides[0] + ky * X[1] / grid.sides[1]) + m.get("phase", 0.0)
                phi0 = phi0 + m.get("amplitude", 0.0) * np.cos(arg)
            phi0 = phi0 + d.get("phi0_constant", 0.0)
        if phi0 is not None:
            spec_kw["phi0"] = np.asarray(phi0, dtype=float)
        return cls(**spec_kw)


def _resample_periodic(f, resolution):
    m = f.shape[0]
    if m == resolution:
        return f.copy()
    F = np.fft.fftshift(np.fft.fft2(f)) / f.size
    out = np.zeros((resolution, resolution), dtype=complex)
    keep = min(m, resolution)
    lo_src = (m - keep) // 2
    lo_dst = (resolution - keep) // 2
    out[lo_dst:lo_dst + keep, lo_dst:lo_dst + keep] = F[lo_src:lo_src + keep, lo_src:lo_src + keep]
    return np.fft.ifft2(np.fft.ifftshift(out)).real * resolution ** 2


@dataclass(frozen=True)
class MetricSample:
    """Metric ``g = coefficient * g_ref`` and volume weight ``dmu``.

    ``g_ref`` is the flat metric for torus/Euclidean kinds and the unit round
    metric for the sphere (so ``coefficient = rho(t)^2`` there).
    """

    t: float
    coefficient: np.ndarray
    weight: np.ndarray


@dataclass(frozen=True)
class CurvatureSample:
    t: float
    R: np.ndarray
    ricci_lower: np.ndarray  # smallest eigenvalue of Ric relative to g
    grad_R_sq: np.ndarray


def _resolve(source):
    spec = getattr(source, "spec", source)
    flow = source if spec is not source else None
    return spec, flow


def _check_time(spec, t):
    if not (-1e-12 <= t <= spec.T + 1e-12):
        raise GeometryError(f"time {t} outside [0, {spec.T}]")


def sphere_point(theta, n=2):
    """Unit vector at polar angle ``theta`` (azimuth zero)."""
    p = np.zeros(n + 1)
    p[0] = np.sin(theta)
    p[-1] = np.cos(theta)
    return p


def _as_sphere_vector(p, n):
    p = np.asarray(p, dtype=float)
    if p.ndim == 0:
        return sphere_point(float(p), n)
    return p / np.linalg.norm(p)


def metric_at(source, t, where="grid"):
    """Metric coefficient and volume weight at time ``t``.

    ``where`` is ``"grid"`` (per-cell quadrature weights) or a single point
    (weight is the volume density relative to the reference measure).
    """
    spec, flow = _resolve(source)
    _check_time(spec, t)
    on_grid = isinstance(where, str)
    if spec.is_static:
        if on_grid:
            grid = spec.grid()
            ones = np.ones(grid.shape)
            return MetricSample(t, ones, ones * grid.cell_volume)
        return MetricSample(t, np.array(1.0), np.array(1.0))
    if spec.kind == "shrinking_sphere":
        rho2 = float(spec.sphere_radius(t)) ** 2
        if on_grid:
            zb = spec.grid()
            w = zb.equator_area * rho2 ** (spec.n / 2) * zb.weights
            return MetricSample(t, np.full(zb.x.shape, rho2), w)
        return MetricSample(t, np.array(rho2), np.array(rho2 ** (spec.n / 2)))
    # conformal torus flow
    if flow is None:
        raise GeometryError("conformal torus flow needs a FlowSolution")
    phi = flow.phi_at(t)
    if on_grid:
        a = np.exp(2.0 * phi)
        return MetricSample(t, a, a * flow.grid.cell_volume)
    a = np.exp(2.0 * flow.grid.evaluate_at(phi, where))
    return MetricSample(t, np.array(a), np.array(a))


def curvature_at(source, t, where="grid"):
    spec, flow = _resolve(source)
    _check_time(spec, t)
    on_grid = isinstance(where, str)
    if spec.is_static:
        shape = spec.grid().shape if on_grid else ()
        z = np.zeros(shape)
        return CurvatureSample(t, z, z.copy(), z.copy())
    if spec.kind == "shrinking_sphere":
        rho2 = float(spec.sphere_radius(t)) ** 2
        shape = spec.grid().x.shape if on_grid else ()
        R = np.full(shape, spec.n * (spec.n - 1) / rho2)
        return CurvatureSample(t, R, np.full(shape, (spec.n - 1) / rho2), np.zeros(shape))
    if flow is None:
        raise GeometryError("conformal torus flow needs a FlowSolution")
    grid = flow.grid
    phi = flow.phi_at(t)
    R = conformal_scalar_curvature(grid, phi)
    gR = grid.gradient(R)
    grad_R_sq = np.exp(-2.0 * phi) * np.sum(gR * gR, axis=0)
    if on_grid:
        return CurvatureSample(t, R, 0.5 * R, grad_R_sq)
    Rp = grid.evaluate_at(R, where)
    return CurvatureSample(t, np.array(Rp), np.array(0.5 * Rp), np.array(grid.evaluate_at(grad_R_sq, where)))


def conformal_scalar_curvature(grid, phi):
    """``R = -2 exp(-2 phi) Lap0 phi`` for a 2-D conformal metric."""
    return -2.0 * np.exp(-2.0 * phi) * grid.laplacian(phi)


def curvature_bounds(source, T=None, times=None):
    """Grid suprema ``(k1, k2)`` with ``Ric >= -k1 g`` and ``max(R, |grad R|^2) <= k2``."""
    spec, flow = _resolve(source)
    T = spec.T if T is None else float(T)
    if times is None:
        if flow is not None and getattr(flow, "times", None) is not None:
            times = flow.times[flow.times <= T + 1e-12]
        else:
            times = np.linspace(0.0, T, 101)
    k1 = 0.0
    k2 = 0.0
    for t in times:
        c = curvature_at(source, float(t))
        k1 = max(k1, float(-np.min(c.ricci_lower)))
        k2 = max(k2, float(np.max(c.R)), float(np.max(c.grad_R_sq)))
    return max(k1, 0.0), max(k2, 0.0)


def distance(source, t, x, y):
    """Geodesic distance under ``g(t)``."""
    spec, flow = _resolve(source)
    _check_time(spec, t)
    if spec.kind == "euclidean_static":
        return float(np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(x, dtype=float)))
    if spec.kind == "flat_torus_static":
        L = np.asarray(spec.sides)
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        d = d - L * np.round(d / L)
        return float(np.linalg.norm(d))
    if spec.kind == "shrinking_sphere":
        p, q = _as_sphere_vector(x, spec.n), _as_sphere_vector(y, spec.n)
        angle = float(np.arccos(np.clip(np.dot(p, q), -1.0, 1.0)))
        return float(spec.sphere_radius(t)) * angle
    if flow is None:
        raise GeometryError("conformal torus flow needs a FlowSolution")
    return conformal_distance(flow, t, x, y)


def conformal_distance(flow, t, x, y, segments=32, candidates=3):
    """Length of the energy-minimizing path among the nearest wrap copies."""
    interp = flow.static_sampler(t)
    func = paths.PathFunctional(
        factor=lambda p, s: np.exp(2.0 * interp.value(p)),
        factor_grad=lambda p, s: 2.0 * np.exp(2.0 * interp.value(p))[..., None] * interp.gradient(p),
        span=1.0,
    )
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    L = np.asarray(flow.spec.sides)
    base = y - L * np.round((y - x) / L)
    shifts = [np.array([i, j]) * L for i in (-1, 0, 1) for j in (-1, 0, 1)]
    targets = sorted((base + s for s in shifts), key=lambda z: np.linalg.norm(z - x))[:candidates]
    best = np.inf
    for target in targets:
        if np.allclose(target, x):
            return 0.0
        res = paths.minimize_path(func, paths.affine_path(x, target, segments))
        best = min(best, np.sqrt(2.0 * res.value))
    return float(best)


def distance_field(source, t, center):
    """Distance from ``center`` to every grid cell under ``g(t)``.

    Flat and sphere kinds are closed form. The conformal torus uses Dijkstra on
    the 8-neighbour periodic grid graph with edge length ``exp(phi_mid) |dx|``;
    this is first-order accurate and only used as a weight inside integrals.
    """
    spec, flow = _resolve(source)
    _check_time(spec, t)
    if spec.kind == "shrinking_sphere":
        zb = flow.grid if flow is not None else spec.grid()
        p = _as_sphere_vector(center, spec.n)
        angle = np.arccos(np.clip(p[-1] * zb.x, -1.0, 1.0)) if abs(abs(p[-1]) - 1.0) < 1e-14 else None
        if angle is None:
            raise GeometryError("zonal distance fields need a pole as center")
        return float(spec.sphere_radius(t)) * angle
    grid = flow.grid if flow is not None else spec.grid()
    if spec.kind == "euclidean_static":
        X = grid.coords()
        c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * spec.n)
        return np.sqrt(np.sum((X - c) ** 2, axis=0))
    disp = grid.displacement(center)
    flat = np.sqrt(np.sum(disp * disp, axis=0))
    if spec.kind == "flat_torus_static":
        return flat
    if flow is None:
        raise GeometryError("conformal torus flow needs a FlowSolution")
    return _dijkstra_field(grid, np.exp(flow.phi_at(t)), grid.index_of(center))


def _dijkstra_field(grid, scale, source_index):
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import dijkstra

    N0, N1 = grid.shape
    idx = np.arange(N0 * N1).reshape(N0, N1)
    rows, cols, vals = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        nb = np.roll(np.roll(idx, -di, axis=0), -dj, axis=1)
        s_nb = np.roll(np.roll(scale, -di, axis=0), -dj, axis=1)
        length = np.hypot(di * grid.h[0], dj * grid.h[1]) * 0.5 * (scale + s_nb)
        rows.append(idx.ravel())
        cols.append(nb.ravel())
        vals.append(length.ravel())
    rows, cols, vals = map(np.concatenate, (rows, cols, vals))
    G = coo_matrix((vals, (rows, cols)), shape=(idx.size, idx.size)).tocsr()
    src = int(np.ravel_multi_index(tuple(source_index), grid.shape))
    return dijkstra(G, directed=False, indices=src).reshape(grid.shape)
