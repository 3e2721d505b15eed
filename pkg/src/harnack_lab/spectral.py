"""Spectral discretizations: periodic Fourier grids and zonal Gegenbauer bases.

Both classes are stateless after construction; every method returns new arrays.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special


class PeriodicGrid:
    """Uniform periodic grid on a box ``prod [o_i, o_i + L_i)``.

    Derivatives are computed by trigonometric (FFT) differentiation. The
    Nyquist mode is dropped from odd derivatives so that real input gives
    real output.
    """

    def __init__(self, sides, shape, origin=None):
        self.sides = tuple(float(s) for s in sides)
        self.shape = tuple(int(m) for m in shape)
        if len(self.sides) != len(self.shape):
            raise ValueError("sides and shape must have the same length")
        if any(s <= 0 for s in self.sides) or any(m < 2 for m in self.shape):
            raise ValueError("grid needs positive sides and at least 2 points per axis")
        self.n = len(self.shape)
        self.origin = tuple(float(o) for o in origin) if origin is not None else (0.0,) * self.n
        self.h = tuple(L / m for L, m in zip(self.sides, self.shape))
        self.cell_volume = float(np.prod(self.h))

        ks = []
        ks_odd = []
        for L, m in zip(self.sides, self.shape):
            k = 2.0 * np.pi * np.fft.fftfreq(m, d=L / m)
            k_odd = k.copy()
            if m % 2 == 0:
                k_odd[m // 2] = 0.0
            ks.append(k)
            ks_odd.append(k_odd)
        self._k = np.meshgrid(*ks, indexing="ij")
        self._k_odd = np.meshgrid(*ks_odd, indexing="ij")
        self.k2 = sum(k * k for k in self._k)

    @property
    def axes(self):
        return [o + np.arange(m) * h for o, m, h in zip(self.origin, self.shape, self.h)]

    def coords(self):
        """Coordinate arrays, shape ``(n, *shape)``."""
        return np.array(np.meshgrid(*self.axes, indexing="ij"))

    def index_of(self, x):
        """Nearest grid index of a point (with periodic wrap)."""
        x = np.asarray(x, dtype=float)
        idx = [int(round((xi - o) / h)) % m for xi, o, h, m in zip(x, self.origin, self.h, self.shape)]
        return tuple(idx)

    def point(self, index):
        return np.array([o + i * h for i, o, h in zip(index, self.origin, self.h)])

    def displacement(self, x, pts=None):
        """Minimal-image displacement ``pts - x`` on the torus, shape ``(n, ...)``."""
        pts = self.coords() if pts is None else np.asarray(pts, dtype=float)
        x = np.asarray(x, dtype=float).reshape((self.n,) + (1,) * (pts.ndim - 1))
        L = np.asarray(self.sides).reshape(x.shape)
        d = pts - x
        return d - L * np.round(d / L)

    # -- spectral calculus -------------------------------------------------
    def fft(self, f):
        return np.fft.fftn(f, axes=tuple(range(-self.n, 0)))

    def ifft(self, F):
        return np.fft.ifftn(F, axes=tuple(range(-self.n, 0))).real

    def gradient(self, f):
        F = self.fft(f)
        return np.array([self.ifft(1j * k * F) for k in self._k_odd])

    def hessian(self, f):
        F = self.fft(f)
        out = np.empty((self.n, self.n) + np.shape(f))
        for i in range(self.n):
            for j in range(i, self.n):
                if i == j:
                    mult = -self._k[i] ** 2
                else:
                    mult = -self._k_odd[i] * self._k_odd[j]
                out[i, j] = self.ifft(mult * F)
                out[j, i] = out[i, j]
        return out

    def laplacian(self, f):
        return self.ifft(-self.k2 * self.fft(f))

    def heat_propagate(self, f, s):
        """Apply the flat heat semigroup ``exp(s * Laplacian)`` exactly."""
        return self.ifft(np.exp(-self.k2 * s) * self.fft(f))

    def integrate(self, f, axis_offset=0):
        axes = tuple(range(axis_offset, axis_offset + self.n)) if axis_offset else tuple(range(-self.n, 0))
        return np.sum(f, axis=axes) * self.cell_volume

    def evaluate_at(self, f, x):
        """Trigonometric interpolation of grid data at a single point."""
        F = self.fft(f) / f.size
        phase = sum(k * (xi - o) for k, xi, o in zip(self._k, np.asarray(x, dtype=float), self.origin))
        return float(np.real(np.sum(F * np.exp(1j * phase))))

    def refine(self, factor=2):
        return PeriodicGrid(self.sides, [m * factor for m in self.shape], self.origin)


def _gegenbauer_table(K, alpha, x):
    """Rows ``C_k^alpha(x)`` for ``k < K`` via the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((K,) + x.shape)
    if K == 0:
        return out
    out[0] = 1.0
    if K > 1:
        out[1] = 2.0 * alpha * x
    for k in range(2, K):
        out[k] = (2.0 * x * (k + alpha - 1.0) * out[k - 1] - (k + 2.0 * alpha - 2.0) * out[k - 2]) / k
    return out


class ZonalBasis:
    """Zonal (rotationally symmetric) functions on the round sphere ``S^n``.

    A zonal function depends only on ``x = cos(theta)`` where ``theta`` is the
    polar angle from the north pole. It is expanded in normalized Gegenbauer
    polynomials ``Z_k = C_k^a / C_k^a(1)``, ``a = (n - 1) / 2``, which are the
    zonal spherical harmonics with Laplace eigenvalue ``-k (k + n - 1)`` on the
    unit sphere. Nodes and weights are Gauss-Gegenbauer, so products of modes
    integrate exactly.
    """

    def __init__(self, n, modes=256, nodes=None):
        if n < 2:
            raise ValueError("zonal basis needs n >= 2")
        self.n = int(n)
        self.modes = int(modes)
        self.alpha = 0.5 * (n - 1)
        m = int(nodes) if nodes is not None else self.modes + 64
        if m < self.modes:
            raise ValueError("need at least as many nodes as modes")
        x, w = special.roots_gegenbauer(m, self.alpha)
        order = np.argsort(-x)  # ascending polar angle
        self.x = x[order]
        self.weights = w[order]
        self.theta = np.arccos(np.clip(self.x, -1.0, 1.0))
        self.unit_sphere_area = 2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2)
        self.equator_area = 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)

        k = np.arange(self.modes)
        self.eigenvalues = k * (k + n - 1.0)
        self._Z, self._Zx, self._Zxx = self._tables(self.x)
        self.norms = self._Z ** 2 @ self.weights

    def _tables(self, x):
        K, a = self.modes, self.alpha
        at_one = _gegenbauer_table(K, a, np.array(1.0))
        C = _gegenbauer_table(K, a, x)
        Cx = np.zeros_like(C)
        Cxx = np.zeros_like(C)
        if K > 1:
            Cx[1:] = 2.0 * a * _gegenbauer_table(K - 1, a + 1.0, x)
        if K > 2:
            Cxx[2:] = 4.0 * a * (a + 1.0) * _gegenbauer_table(K - 2, a + 2.0, x)
        scale = 1.0 / at_one.reshape((K,) + (1,) * np.ndim(x))
        return C * scale, Cx * scale, Cxx * scale

    def project(self, values):
        """Mode coefficients of nodal values (last axis = nodes)."""
        return (np.asarray(values) * self.weights) @ self._Z.T / self.norms

    def synthesize(self, coeffs, x=None):
        """Values, d/dx and d2/dx2 of the series at ``x`` (default: the nodes)."""
        if x is None:
            Z, Zx, Zxx = self._Z, self._Zx, self._Zxx
        else:
            Z, Zx, Zxx = self._tables(np.asarray(x, dtype=float))
        c = np.asarray(coeffs)
        return c @ Z, c @ Zx, c @ Zxx

    def integrate(self, values, radius=1.0):
        """Integral over the sphere of given radius (last axis = nodes)."""
        return self.equator_area * radius ** self.n * (np.asarray(values) @ self.weights)

    def delta_coefficients(self, radius=1.0):
        """Coefficients of the Dirac mass at the north pole w.r.t. the sphere measure."""
        return 1.0 / (self.equator_area * radius ** self.n * self.norms)
