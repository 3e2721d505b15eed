"""Discrete path functionals shared by the distance and reduced-distance code.

A path is a polyline ``nodes[0..N]`` in coordinate space, linear on each
segment of a uniform parameter grid on ``[0, S]``. The functional is

    F = sum over segments of the integral of
        0.5 * a(p, s) * |p'|^2 + V(p, s)

with ``a`` the conformal factor of the metric in the chosen coordinates and
``V`` a potential; both are integrated with Gauss-Legendre points on each
segment. Endpoints are held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize

_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(4)


@dataclass
class PathFunctional:
    """Callables take ``(points (..., d), s (...))`` and return arrays."""

    factor: Callable
    factor_grad: Optional[Callable] = None  # returns (..., d)
    potential: Optional[Callable] = None
    potential_grad: Optional[Callable] = None
    span: float = 1.0

    def _quad(self, N):
        ds = self.span / N
        left = np.arange(N) * ds
        # (N, q) parameter values and local weights in [0, 1]
        lam = 0.5 * (_GAUSS_X + 1.0)
        s = left[:, None] + ds * lam[None, :]
        w = 0.5 * _GAUSS_W * ds
        return ds, lam, s, w

    def value(self, nodes):
        return self.value_and_grad(nodes, need_grad=False)[0]

    def value_and_grad(self, nodes, need_grad=True):
        nodes = np.asarray(nodes, dtype=float)
        N = nodes.shape[0] - 1
        ds, lam, s, w = self._quad(N)
        delta = nodes[1:] - nodes[:-1]  # (N, d)
        vel = delta / ds
        pts = nodes[:-1, None, :] + lam[None, :, None] * delta[:, None, :]  # (N, q, d)
        a = self.factor(pts, s)
        speed2 = np.sum(vel * vel, axis=-1)  # (N,)
        total = 0.5 * np.sum(a * w * speed2[:, None])
        if self.potential is not None:
            total += np.sum(self.potential(pts, s) * w)
        if not need_grad:
            return float(total), None

        grad = np.zeros_like(nodes)
        # kinetic: d/d vel
        a_int = np.sum(a * w, axis=1)  # (N,)
        dvel = (a_int[:, None] * vel) / ds
        grad[1:] += dvel
        grad[:-1] -= dvel
        # position dependence of a and V through the quadrature points
        gp = np.zeros(pts.shape)
        if self.factor_grad is not None:
            gp += 0.5 * self.factor_grad(pts, s) * speed2[:, None, None]
        if self.potential_grad is not None:
            gp += self.potential_grad(pts, s)
        if self.factor_grad is not None or self.potential_grad is not None:
            gp *= w[None, :, None]
            grad[:-1] += np.sum(gp * (1.0 - lam)[None, :, None], axis=1)
            grad[1:] += np.sum(gp * lam[None, :, None], axis=1)
        return float(total), grad


@dataclass
class PathResult:
    nodes: np.ndarray
    value: float
    converged: bool
    iterations: int


def minimize_path(functional, initial, max_iter=2000, rtol=1e-10):
    """Minimize over interior nodes with L-BFGS; endpoints stay fixed."""
    initial = np.asarray(initial, dtype=float)
    shape = initial.shape
    if shape[0] <= 2:
        return PathResult(initial, functional.value(initial), True, 0)
    a, b = initial[0], initial[-1]

    def unpack(z):
        nodes = np.empty(shape)
        nodes[0], nodes[-1] = a, b
        nodes[1:-1] = z.reshape(shape[0] - 2, shape[1])
        return nodes

    def fun(z):
        val, g = functional.value_and_grad(unpack(z))
        return val, g[1:-1].ravel()

    res = optimize.minimize(
        fun,
        initial[1:-1].ravel(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": rtol, "gtol": 1e-12, "maxcor": 20},
    )
    nodes = unpack(res.x)
    value = functional.value(nodes)
    start = functional.value(initial)
    if start < value:
        return PathResult(initial, start, bool(res.success), int(res.nit))
    return PathResult(nodes, value, bool(res.success), int(res.nit))


def affine_path(x, y, N):
    t = np.linspace(0.0, 1.0, N + 1)[:, None]
    return (1.0 - t) * np.asarray(x, dtype=float) + t * np.asarray(y, dtype=float)
