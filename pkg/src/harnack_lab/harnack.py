"""Pointwise and integral Harnack quantities, entropy identities, small-time limits.

Orientation: every entropy functional is parametrized by ``tau = T - t`` and
its derivative is taken in ``tau``; with that convention the entropy identity
reads ``dW_h/dtau = -D(tau)`` with

    D(tau) = 2 int tau |Ric + Hess f - g / (2 tau)|^2 H h dmu.

Evaluators accept either a :class:`~harnack_lab.frames.FieldJet` or a
:class:`~harnack_lab.heat.FieldHistory` together with the node to read.
Inequality margins are signed distances from violation: positive means the
inequality holds with room to spare.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .frames import DEFAULT_REL_FLOOR, FieldJet, Frame
from .heat import FieldHistory, grid_spacing, heat_pairing

# Discretization zero: tol = C1 h^2 + C2 dt, with h the grid spacing of the
# metric at the slice and dt the time step of the scheme that produced the
# field. See calibrate_tolerance.
DEFAULT_C1 = 1.0
DEFAULT_C2 = 0.1
TOL_FLOOR = 1e-10

LE_ZERO = "<= 0"
GE_ZERO = ">= 0"


class HarnackError(ValueError):
    pass


# -- tolerance model -----------------------------------------------------------------
def discretization_tolerance(h, dt=0.0, c1=DEFAULT_C1, c2=DEFAULT_C2, floor=TOL_FLOOR):
    return max(c1 * h * h + c2 * dt, floor)


def flow_tolerance(flow, dt=0.0, **kw):
    return discretization_tolerance(grid_spacing(flow), dt, **kw)


def calibrate_tolerance(samples, safety=4.0):
    """Fit ``(c1, c2)`` so that ``c1 h^2 + c2 dt`` bounds the observed errors.

    ``samples`` holds ``(h, dt, error)`` triples, typically the saturation
    residuals of a deliberately under-resolved Gaussian. A nonnegative least
    squares fit is scaled until it dominates every sample, then by ``safety``.
    """
    samples = np.asarray(samples, dtype=float)
    A = np.column_stack([samples[:, 0] ** 2, samples[:, 1]])
    err = np.abs(samples[:, 2])
    coef, _ = optimize.nnls(A, err)
    if not np.any(coef > 0):
        return 0.0, 0.0
    pred = A @ coef
    scale = np.max(np.where(pred > 0, err / np.where(pred > 0, pred, 1.0), np.inf))
    scale = 1.0 if not np.isfinite(scale) else max(scale, 1.0)
    return float(coef[0] * scale * safety), float(coef[1] * scale * safety)


# -- reports -------------------------------------------------------------------------
@dataclass
class PotentialField:
    f: np.ndarray
    tau: float
    mask: np.ndarray
    n: int

    def reconstruct(self):
        return np.exp(-self.f) / (4.0 * math.pi * self.tau) ** (0.5 * self.n)


@dataclass
class HarnackReport:
    """Per-cell values of a signed quantity and its margin against the asserted sign."""

    quantity: str
    values: np.ndarray = field(repr=False)
    direction: str
    tolerance: float
    mask: Optional[np.ndarray] = field(default=None, repr=False)
    background: str = ""
    resolution: int = 0
    time: float = float("nan")
    advisory: bool = False
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.mask is None:
            self.mask = np.zeros(self.values.shape, dtype=bool)
        self.mask = np.broadcast_to(np.asarray(self.mask, dtype=bool), self.values.shape)

    @property
    def active(self):
        return self.values[~self.mask]

    @property
    def max(self):
        a = self.active
        return float(a.max()) if a.size else float("nan")

    @property
    def min(self):
        a = self.active
        return float(a.min()) if a.size else float("nan")

    @property
    def margin(self):
        return -self.max if self.direction == LE_ZERO else self.min

    @property
    def masked_count(self):
        return int(np.count_nonzero(self.mask))

    @property
    def violations(self):
        a = self.active
        bad = a > self.tolerance if self.direction == LE_ZERO else a < -self.tolerance
        return int(np.count_nonzero(bad))

    @property
    def passed(self):
        return self.margin >= -self.tolerance

    @property
    def verdict(self):
        if self.advisory:
            return "advisory"
        return "pass" if self.passed else "fail"

    def to_row(self):
        t = self.time
        if np.ndim(t):
            t = float(np.max(t))
        return {
            "quantity": self.quantity,
            "background": self.background,
            "resolution": self.resolution,
            "time": float(t),
            "min": self.min,
            "max": self.max,
            "margin": self.margin,
            "masked_count": self.masked_count,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }


def merge_reports(reports, quantity=None):
    """Fold a sweep of reports into one (margin = worst node)."""
    reports = list(reports)
    if not reports:
        raise HarnackError("nothing to merge")
    first = reports[0]
    if any(r.direction != first.direction for r in reports):
        raise HarnackError("cannot merge reports with different directions")
    values = np.concatenate([np.ravel(r.values) for r in reports])
    mask = np.concatenate([np.ravel(r.mask) for r in reports])
    # per-node tolerance: shift each node so a single tolerance applies
    tol = max(r.tolerance for r in reports)
    return HarnackReport(quantity or first.quantity, values, first.direction, tol, mask,
                         first.background, first.resolution, np.array([r.time for r in reports]),
                         first.advisory, {"nodes": len(reports)})


@dataclass
class MonotonicityCurve:
    quantity: str
    params: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    derivative_error: np.ndarray
    companion: np.ndarray
    parameter: str = "tau"

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float)
        d = np.diff(self.params)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise HarnackError("parameter grid must be strictly monotone")


@dataclass
class LimitReport:
    quantity: str
    taus: np.ndarray
    values: np.ndarray
    limit: float
    error: float
    target: float
    tolerance: float
    comparison: str = "=="

    @property
    def deviation(self):
        return self.limit - self.target

    @property
    def passed(self):
        if self.comparison == "<=":
            return self.deviation <= self.tolerance
        return abs(self.deviation) <= self.tolerance

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"


# -- helpers ---------------------------------------------------------------------------
def _jet(u, t=None, tau=None, rel_floor=DEFAULT_REL_FLOOR):
    if isinstance(u, FieldJet):
        return u
    if isinstance(u, FieldHistory):
        return u.jet(t=t, tau=tau, rel_floor=rel_floor)
    raise HarnackError("expected a FieldJet or a FieldHistory")


def _h_values(h, frame):
    if h is None:
        return np.ones(frame.shape)
    if isinstance(h, FieldHistory):
        return h.at(t=frame.t)
    h = np.asarray(h, dtype=float)
    return np.broadcast_to(h, frame.shape) if h.ndim == 0 else h


def _background(frame):
    return frame.flow.kind


def _resolution(frame):
    return int(frame.flow.spec.resolution)


def _hess_f_term(jet, tau):
    """``Ric + Hess f - g / (2 tau)`` per cell, with ``f = -log u + const``."""
    n = jet.n
    eye = np.eye(n).reshape((n, n) + (1,) * jet.u.ndim)
    return jet.frame.ricci() - jet.hess_log - eye / (2.0 * tau)


def frobenius_sq(A):
    return np.sum(A * A, axis=(0, 1))


# -- potential and v_H -----------------------------------------------------------------
def potential_f(u, tau, n=None, mask=None):
    """``f = -log u - (n/2) log(4 pi tau)``."""
    if not tau > 0:
        raise HarnackError("tau must be positive")
    if isinstance(u, FieldJet):
        return PotentialField(u.potential(tau), tau, u.mask, u.n)
    u = np.asarray(u, dtype=float)
    if n is None:
        raise HarnackError("dimension needed for raw arrays")
    safe = np.maximum(u, 1e-300)
    m = (u <= 1e-300) if mask is None else mask
    return PotentialField(-np.log(safe) - 0.5 * n * math.log(4.0 * math.pi * tau), tau, m, n)


def v_H_values(jet, tau):
    """``[tau (2 Lap f - |grad f|^2 + R) + f - n] u`` on every cell."""
    gl = jet.grad_log
    lap_f = -np.trace(jet.hess_log, axis1=0, axis2=1)
    grad_f_sq = np.sum(gl * gl, axis=0)
    f = jet.potential(tau)
    return (tau * (2.0 * lap_f - grad_f_sq + jet.frame.R) + f - jet.n) * jet.u


def v_H_field(u, tau, tol=None, max_masked=0.5):
    """The Harnack quantity ``v_H`` with its margin against ``v_H <= 0``."""
    if not tau > 0:
        raise HarnackError("tau must be positive")
    jet = _jet(u, tau=tau)
    if jet.underflow.mean() > max_masked:
        raise HarnackError(f"{100 * jet.underflow.mean():.0f}% of cells underflowed; report unusable")
    v = np.where(jet.mask, 0.0, v_H_values(jet, tau))
    fr = jet.frame
    tol = flow_tolerance(fr.flow) if tol is None else tol
    return HarnackReport("v_H", v, LE_ZERO, tol, jet.mask, _background(fr), _resolution(fr), tau)


# -- entropy ---------------------------------------------------------------------------
def entropy_W_h(u, h=None, tau=None):
    """``W_h = int v_H h dmu`` (``h = None`` means ``h = 1``)."""
    jet = _jet(u, tau=tau)
    tau = jet.frame.tau if tau is None else tau
    if isinstance(h, FieldHistory) and h.flow is not jet.frame.flow:
        raise HarnackError("u and h live on different flows")
    v = np.where(jet.mask, 0.0, v_H_values(jet, tau))
    return jet.frame.integrate(v * _h_values(h, jet.frame))


def entropy_decomposition(u, h=None, tau=None):
    """``W_h`` split into four integrals after one integration by parts.

    gradient = int tau |grad f|^2 u h, laplacian_h = -2 tau int u Lap h,
    curvature = tau int R u h, potential = int (f - n) u h.
    """
    jet = _jet(u, tau=tau)
    fr = jet.frame
    tau = fr.tau if tau is None else tau
    hv = _h_values(h, fr)
    u = np.where(jet.mask, 0.0, jet.u)
    gl = np.where(jet.mask, 0.0, jet.grad_log)
    f = np.where(jet.mask, 0.0, jet.potential(tau))
    terms = {
        "gradient": fr.integrate(tau * np.sum(gl * gl, axis=0) * u * hv),
        "laplacian_h": -2.0 * tau * fr.integrate(u * fr.laplacian(hv)) if h is not None else 0.0,
        "curvature": tau * fr.integrate(fr.R * u * hv),
        "potential": fr.integrate((f - jet.n) * u * hv),
    }
    terms["total"] = sum(terms.values())
    return terms


def dissipation(u, h=None, tau=None):
    """``D(tau) = 2 int tau |Ric + Hess f - g/(2 tau)|^2 u h dmu`` (nonnegative)."""
    jet = _jet(u, tau=tau)
    fr = jet.frame
    tau = fr.tau if tau is None else tau
    if isinstance(h, FieldHistory) and h.flow is not fr.flow:
        raise HarnackError("u and h live on different flows")
    sq = frobenius_sq(_hess_f_term(jet, tau))
    dens = np.where(jet.mask, 0.0, sq * jet.u)
    return 2.0 * tau * fr.integrate(dens * _h_values(h, fr))


def entropy_curve(u, h=None, taus=None, step=None):
    """Entropy ``W_h(tau)``, a centered-difference derivative and ``-D(tau)``.

    ``u`` (and ``h`` if a history) must hold nodes at ``tau``, ``tau +- step``
    and ``tau +- step/2``; the half step supplies the error bar.
    """
    taus = np.asarray(taus, dtype=float)
    vals, der, err, comp = [], [], [], []
    for tau in taus:
        W = {s: entropy_W_h(u, h, tau + s) for s in (-step, -0.5 * step, 0.0, 0.5 * step, step)}
        d_full = (W[step] - W[-step]) / (2.0 * step)
        d_half = (W[0.5 * step] - W[-0.5 * step]) / step
        vals.append(W[0.0])
        der.append(d_half + (d_half - d_full) / 3.0)
        err.append(abs(d_half - d_full) / 3.0)
        comp.append(-dissipation(u, h, tau))
    return MonotonicityCurve("W_h", taus, np.array(vals), np.array(der), np.array(err), np.array(comp))


def entropy_identity_residual(u, h, tau, step):
    """Centered-difference ``dW_h/dtau`` against ``-D(tau)``.

    Returns ``(derivative, D, |derivative + D| / |D|)``. The difference quotient
    is second order in ``step``; refinement studies tie ``step`` to the grid
    spacing so space and time are refined together.
    """
    d = (entropy_W_h(u, h, tau + step) - entropy_W_h(u, h, tau - step)) / (2.0 * step)
    D = dissipation(u, h, tau)
    return d, D, abs(d + D) / abs(D) if D != 0 else abs(d + D)


def conjugate_evolution_residual(u, tau, h=None, step=None):
    """h-weighted L1 norm of ``(d_tau - Lap + R) v_u + 2 tau |Ric + Hess f - g/2tau|^2 u``.

    ``u`` is a history with nodes at ``tau`` and ``tau +- step``, or a callable
    ``tau -> FieldJet`` (analytic jets) together with an explicit ``step``.
    """
    if not isinstance(u, FieldHistory):
        if not callable(u) or step is None:
            raise HarnackError("need a field history (or a jet callable and a step) for time differencing")
        nodes = [u(tau + s) for s in (-step, 0.0, step)]
    elif step is None:
        k = u.index(tau=tau)
        if k == 0 or k == len(u.times) - 1:
            raise HarnackError("insufficient time nodes around tau")
        step = u.times[k + 1] - u.times[k]
    if isinstance(u, FieldHistory):
        try:
            nodes = [u.jet(tau=tau + s) for s in (-step, 0.0, step)]
        except Exception as exc:
            raise HarnackError("insufficient time nodes around tau") from exc
    vs = [np.where(j.mask, 0.0, v_H_values(j, tau + s)) for j, s in zip(nodes, (-step, 0.0, step))]
    jet = nodes[1]
    fr = jet.frame
    dv = (vs[2] - vs[0]) / (2.0 * step)
    sq = np.where(jet.mask, 0.0, frobenius_sq(_hess_f_term(jet, tau)) * jet.u)
    res = dv - fr.laplacian(vs[1]) + fr.R * vs[1] + 2.0 * tau * sq
    return fr.integrate(np.abs(res) * _h_values(h, fr))


# -- fixed-metric Li-Yau quantities ------------------------------------------------------
def _require_nonneg_static(frame):
    if not frame.flow.spec.is_static:
        raise HarnackError("this quantity is asserted only on static backgrounds with Ric >= 0")


def li_yau_Q(u, t, tol=None):
    """``Q = u (Lap log u + n/(2t))`` with margin against ``Q >= 0``.

    ``u`` is a forward heat solution on a static background and ``t`` is
    measured from its initial time. ``extra['upsilon']`` holds
    ``Upsilon_ij = u_ij + u g_ij/(2t) - u_i u_j / u``.
    """
    jet = _jet(u, t=t)
    _require_nonneg_static(jet.frame)
    if not t > 0:
        raise HarnackError("t must be positive")
    n = jet.n
    eye = np.eye(n).reshape((n, n) + (1,) * jet.u.ndim)
    ups = jet.hess + eye * jet.u / (2.0 * t) - jet.grad[:, None] * jet.grad[None, :] / jet.u
    Q = np.where(jet.mask, 0.0, np.trace(ups, axis1=0, axis2=1))
    fr = jet.frame
    tol = flow_tolerance(fr.flow) if tol is None else tol
    return HarnackReport("Q", Q, GE_ZERO, tol, jet.mask, _background(fr), _resolution(fr), t,
                         extra={"upsilon": ups})


def linear_W(u, t, tol=None, fundamental=True, rel_floor=1e-6):
    """``W = t (2 Lap f - |grad f|^2) + f - n`` with margin against ``W <= 0``.

    ``f = -log u - (n/2) log(4 pi t)``. The inequality is only asserted for
    fundamental solutions; other inputs give an advisory report. ``W`` is not
    weighted by ``u``, so rounding in the derivatives of ``u`` is amplified by
    ``max u / u``; cells below ``rel_floor * max u`` are masked (for histories).
    """
    jet = _jet(u, t=t, rel_floor=rel_floor)
    _require_nonneg_static(jet.frame)
    gl = jet.grad_log
    lap_f = -np.trace(jet.hess_log, axis1=0, axis2=1)
    f = jet.potential(t)
    W = np.where(jet.mask, 0.0, t * (2.0 * lap_f - np.sum(gl * gl, axis=0)) + f - jet.n)
    fr = jet.frame
    tol = flow_tolerance(fr.flow) if tol is None else tol
    return HarnackReport("W", W, LE_ZERO, tol, jet.mask, _background(fr), _resolution(fr), t,
                         advisory=not fundamental)


# -- gradient estimates --------------------------------------------------------------
def _checked_taus(history, taus):
    if taus is None:
        taus = history.taus[history.taus > 0]
    taus = np.sort(np.asarray(taus, dtype=float))
    return taus


def gradient_estimate_check(history, k1, k2, taus=None, A=None, tol=None):
    """Explicit maximum-principle gradient bound for a conjugate heat solution.

    Checks ``phi |grad u|^2 / u <= e^{k2 tau} u log(A/u) + (k2 + n k1 e^{k2}) tau u``
    with ``phi = tau / (1 + C1 tau)``, ``C1 = (4+n) k1 + 1``, on every node.
    ``extra['packaged']`` holds the (advisory) packaged form
    ``tau |grad u|^2/u^2 <= (1 + C1 tau)(log(A/u) + C2 tau)``.
    """
    taus = _checked_taus(history, taus)
    if taus[0] <= 0 or taus[-1] > min(1.0, history.flow.T) + 1e-12:
        raise HarnackError("tau range must lie in (0, min(1, T)]")
    n = history.flow.n
    if A is None:
        A = max(float(np.max(history.at(tau=tau))) for tau in taus)
    C1 = (4 + n) * k1 + 1.0
    # e^{k2} overflows for rough flows; the bound is then vacuous, not false
    C2 = k2 + n * k1 * math.exp(k2) if k2 < 700.0 else math.inf
    explicit, packaged = [], []
    for tau in taus:
        jet = history.jet(tau=tau)
        u = jet.u
        phi = tau / (1.0 + C1 * tau)
        lhs = phi * jet.grad_sq / u
        log_term = np.log(A / u)
        rhs = math.exp(k2 * tau) * u * log_term + C2 * tau * u
        explicit.append(np.where(jet.mask, 0.0, rhs - lhs))
        p_lhs = tau * np.sum(jet.grad_log ** 2, axis=0)
        p_rhs = (1.0 + C1 * tau) * (log_term + C2 * tau)
        packaged.append(np.where(jet.mask, 0.0, p_rhs - p_lhs))
        mask = jet.mask
    fr = history.frame(tau=taus[0])
    tol = flow_tolerance(fr.flow) if tol is None else tol
    masks = np.array([history.jet(tau=tau).mask for tau in taus]) if len(taus) > 1 else mask[None]
    rep = HarnackReport("gradient_estimate", np.array(explicit), GE_ZERO, tol, masks,
                        _background(fr), _resolution(fr), taus,
                        extra={"A": A, "C1": C1, "C2": C2, "vacuous": not math.isfinite(C2)})
    rep.extra["packaged"] = HarnackReport("gradient_estimate_packaged", np.array(packaged), GE_ZERO, tol,
                                          masks, _background(fr), _resolution(fr), taus, advisory=True)
    return rep


def mean_value_bound_check(history, taus=None):
    """Empirical ``B = sup tau^{n/2} u / int u dmu`` and where it is attained."""
    taus = _checked_taus(history, taus)
    n = history.flow.n
    best, where = -np.inf, None
    for tau in taus:
        fr = history.frame(tau=tau)
        u = history.at(tau=tau)
        ratio = tau ** (0.5 * n) * u / fr.integrate(u)
        k = int(np.argmax(ratio))
        if ratio.flat[k] > best:
            best = float(ratio.flat[k])
            where = (float(tau), np.unravel_index(k, u.shape))
    return best, where


@dataclass
class KernelGradientResult:
    delta: float
    taus: np.ndarray
    C_grad: np.ndarray
    C_lap: np.ndarray

    @property
    def bounded(self):
        """No growth of either constant as tau decreases (beyond a small slack)."""
        order = np.argsort(self.taus)[::-1]
        ok = True
        for C in (self.C_grad, self.C_lap):
            c = C[order]
            ok &= bool(np.all(np.diff(c) <= 1e-6 * (1.0 + np.abs(c[:-1]))))
        return ok


def kernel_gradient_checks(H, delta, taus=None, center=None, rel_floor=1e-8):
    """Smallest constants ``C(delta)`` in the fixed-metric kernel gradient bounds.

    ``|grad H|^2/H <= 2 (H/tau)(C + d^2/((4-delta) tau))`` and
    ``Lap H + |grad H|^2/H <= 2 (H/tau)(C + 4 d^2/((4-delta) tau))``.
    ``H`` is a history or a callable ``tau -> FieldJet``.
    """
    if not 0.0 < delta < 4.0:
        raise HarnackError("delta must lie in (0, 4)")
    if isinstance(H, FieldHistory):
        taus = _checked_taus(H, taus)
        center = H.center if center is None else center
        jets = [H.jet(tau=tau, rel_floor=rel_floor) for tau in taus]
    else:
        taus = np.sort(np.asarray(taus, dtype=float))
        jets = [H(tau) for tau in taus]
    _require_nonneg_static(jets[0].frame)
    Cg, Cl = [], []
    for tau, jet in zip(taus, jets):
        d2 = jet.frame.distance_from(center) ** 2
        q = np.sum(jet.grad_log ** 2, axis=0)
        need_g = 0.5 * tau * q - d2 / ((4.0 - delta) * tau)
        need_l = 0.5 * tau * (jet.laplacian / jet._den + q) - 4.0 * d2 / ((4.0 - delta) * tau)
        ok = ~jet.mask
        Cg.append(float(np.max(need_g[ok])))
        Cl.append(float(np.max(need_l[ok])))
    return KernelGradientResult(delta, taus, np.array(Cg), np.array(Cl))


# -- small-time limits -----------------------------------------------------------------
def richardson_limit(taus, values, order=1):
    """Extrapolate ``F(tau) -> F(0)`` on a geometric schedule.

    Assumes ``F = L + a1 tau + a2 tau^2 + ...``. Returns ``(limit, error)``
    with the limit taken from the deepest tableau level and the error the
    largest spread between the finest-node entries of all levels, a
    conservative bar when the data are not yet in the asymptotic regime.
    """
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.argsort(taus)[::-1]
    taus, values = taus[idx], values[idx]
    if len(taus) < 2:
        raise HarnackError("need at least two tau nodes")
    ratios = taus[1:] / taus[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-9) or not 0 < ratios[0] < 1:
        raise HarnackError("tau schedule is not geometric")
    r = ratios[0]
    table = [values]
    p = order
    while len(table[-1]) > 1:
        prev = table[-1]
        fac = r ** p
        table.append((prev[1:] - fac * prev[:-1]) / (1.0 - fac))
        p += 1
    finest = np.array([level[-1] for level in table])
    limit = float(finest[-1])
    error = float(np.max(np.abs(finest[:-1] - limit)))
    return limit, error


def small_time_terms(H, h, tau, center):
    """The integrands of the small-time limits at one ``tau`` node."""
    jet = _jet(H, tau=tau)
    fr = jet.frame
    hv = _h_values(h, fr)
    u = np.where(jet.mask, 0.0, jet.u)
    d0 = _distance_at_top(fr.flow, center)
    f = np.where(jet.mask, 0.0, jet.potential(tau))
    return {
        "moment": fr.integrate(d0 ** 2 / (4.0 * tau) * u * hv),
        "f_minus_half_n": fr.integrate((f - 0.5 * jet.n) * u * hv),
        "W_h": entropy_W_h(jet, hv, tau),
        "laplacian_h": -2.0 * tau * fr.integrate(u * fr.laplacian(hv)),
        "curvature": tau * fr.integrate(fr.R * u * hv),
    }


def _distance_at_top(flow, center):
    from .geometry import distance_field

    if flow.kind == "shrinking_sphere":
        center = 0.0 if center is None else center
    return distance_field(flow, flow.T, center)


def small_time_limits(H, h, taus, center=None, tolerances=None):
    """Extrapolated small-tau limits of the moment, entropy and remainder terms.

    ``h`` is a forward heat history (or a fixed array / None for ``h = 1``);
    its value at ``(x, T)`` sets the target of the moment limit. Returns a
    dict of :class:`LimitReport`.
    """
    taus = np.asarray(taus, dtype=float)
    center = H.center if center is None and isinstance(H, FieldHistory) else center
    rows = [small_time_terms(H, h, tau, center) for tau in taus]
    flow = H.flow
    n = flow.n
    if isinstance(h, FieldHistory):
        h_top = h.at(t=flow.T)
    else:
        h_top = _h_values(h, Frame(flow, flow.T))
    if flow.kind == "shrinking_sphere":
        h_center = float(flow.grid.synthesize(flow.grid.project(h_top), np.array([1.0]))[0][0])
    else:
        h_center = float(flow.grid.evaluate_at(h_top, center))
    tol = {"moment": 0.01 * abs(0.5 * n * h_center), "laplacian_h": 1e-3, "curvature": 1e-3}
    tol.update(tolerances or {})
    targets = {"moment": 0.5 * n * h_center, "f_minus_half_n": 0.0, "W_h": 0.0, "laplacian_h": 0.0, "curvature": 0.0}
    out = {}
    for key, target in targets.items():
        vals = np.array([r[key] for r in rows])
        lim, err = richardson_limit(taus, vals)
        t = tol.get(key, err + 1e-9)
        comparison = "<=" if key == "f_minus_half_n" and flow.kind != "flat_torus_static" else "=="
        out[key] = LimitReport(key, taus, vals, lim, err, target, t, comparison)
    return out


# -- Li-Yau monotonicity (fixed metric) ---------------------------------------------------
def pseudo_kernel(frame, x0, tau):
    """``exp(-d^2/(4 tau)) / (4 pi tau)^{n/2}`` with ``d`` the distance to ``x0``."""
    d = frame.distance_from(x0)
    return np.exp(-d * d / (4.0 * tau)) / (4.0 * math.pi * tau) ** (0.5 * frame.n)


def li_yau_density(jet, t):
    """``2 t^2 (|Hess log u + g/2t|^2 + Ric(grad log u, grad log u)) u`` per cell."""
    n = jet.n
    eye = np.eye(n).reshape((n, n) + (1,) * jet.u.ndim)
    A = jet.hess_log + eye / (2.0 * t)
    gl = jet.grad_log
    ric = np.einsum("ij...,i...,j...->...", jet.frame.ricci(), gl, gl)
    return 2.0 * t * t * (frobenius_sq(A) + ric) * jet.u


def _li_yau_functional(u_hist, x0, t0, t):
    jet = u_hist.jet(t=t, rel_floor=0.0)
    Q = li_yau_Q(jet, t).values
    Hh = pseudo_kernel(jet.frame, x0, t0 - t)
    return jet.frame.integrate(t * t * Q * Hh), jet.frame.integrate(li_yau_density(jet, t) * Hh)


def weighted_li_yau_series(u, x0, t0, ts, step):
    """Curve ``t -> int t^2 Q H_hat dmu`` with derivative and the sum-of-squares right side.

    ``u`` is a forward heat history holding nodes at every ``t`` and
    ``t +- step``, ``t +- step/2``; the derivative is the Richardson-combined
    centered difference and its error bar the change between the two steps.
    """
    ts = np.asarray(ts, dtype=float)
    if np.any(ts + step >= t0):
        raise HarnackError("t schedule reaches t0")
    vals, der, err, rhs = [], [], [], []
    for t in ts:
        F = {s: _li_yau_functional(u, x0, t0, t + s)[0] for s in (-step, -0.5 * step, 0.5 * step, step)}
        v, r = _li_yau_functional(u, x0, t0, t)
        d_full = (F[step] - F[-step]) / (2.0 * step)
        d_half = (F[0.5 * step] - F[-0.5 * step]) / step
        vals.append(v)
        der.append(d_half + (d_half - d_full) / 3.0)
        err.append(abs(d_half - d_full) / 3.0)
        rhs.append(r)
    return MonotonicityCurve("t^2 Q H_hat", ts, np.array(vals), np.array(der), np.array(err), np.array(rhs), "t")


def weighted_li_yau_bound(u, x0, t0, ts):
    """Both sides of the integrated bound at ``(x0, t0)``.

    Returns ``(Q(x0, t0), (2/t0^2) int_0^{t0} t^2 int (...) u H_hat dmu dt)``
    with the time integral taken by the trapezoid rule over ``ts`` (ascending,
    ending below ``t0``); the integrand is nonnegative, so truncation only
    lowers the bound.
    """
    ts = np.asarray(ts, dtype=float)
    rhs_t = np.array([_li_yau_functional(u, x0, t0, t)[1] for t in ts])
    bound = np.trapezoid(rhs_t, ts) / (t0 * t0) if hasattr(np, "trapezoid") else np.trapz(rhs_t, ts) / (t0 * t0)
    jet = u.jet(t=t0, rel_floor=0.0)
    Q = li_yau_Q(jet, t0).values
    Qx = float(jet.frame.grid.evaluate_at(Q, x0))
    return Qx, float(bound)


# -- representation of v_H -------------------------------------------------------------
def vH_representation_check(flow, make_H, x0, t0, n_nodes=32, tau_min=None):
    """Direct ``v_H(x0, t0)`` against ``-2 int (T-t) int |Ric + Hess f - g/2(T-t)|^2 H h dmu dt``.

    ``make_H(taus)`` returns the conjugate kernel history centered at
    ``(x, T)`` on the requested ``tau`` nodes. The forward kernel ``h``
    centered at ``(x0, t0)`` enters only through :func:`heat_pairing`. The
    time integral is Gauss-Legendre in ``s = log(tau)`` over
    ``[tau_min, T - t0]``; below ``tau_min`` the integrand is negligible.
    The default ``tau_min`` keeps the kernel width at three grid cells or more,
    since narrower kernels give spectral Hessians that are pure noise.
    """
    T = flow.T
    if not t0 < T:
        raise HarnackError("t0 must precede T")
    tau0 = T - t0
    if tau_min is None:
        from .heat import grid_spacing

        tau_min = max(1e-3 * tau0, (3.0 * grid_spacing(flow)) ** 2)
    xg, wg = np.polynomial.legendre.leggauss(n_nodes)
    a, b = math.log(tau_min), math.log(tau0)
    s = 0.5 * (b - a) * (xg + 1.0) + a
    taus = np.exp(s)
    H = make_H(np.concatenate([taus, [tau0]]))
    integrand = []
    for tau in taus:
        jet = H.jet(tau=tau)
        F = np.where(jet.mask, 0.0, 2.0 * tau * frobenius_sq(_hess_f_term(jet, tau)) * jet.u)
        integrand.append(heat_pairing(flow, F, x0, t0, T - tau))
    integrand = np.array(integrand)
    rep = -float(np.sum(0.5 * (b - a) * wg * integrand * taus))
    direct = _v_H_at(H, tau0, x0)
    return direct, rep


def _v_H_at(H, tau, x0):
    fr = H.frame(tau=tau)
    if fr.is_sphere:
        from .geometry import _as_sphere_vector

        p = _as_sphere_vector(x0, fr.n)
        jet = fr.jet(None, coeffs=H.coeffs_at(tau=tau), rel_floor=0.0, x=np.array([p[-1]]))
        return float(v_H_values(jet, tau)[0])
    jet = H.jet(tau=tau, rel_floor=0.0)
    v = v_H_values(jet, tau)
    return float(v[fr.grid.index_of(x0)])


# -- parametrix leading order ----------------------------------------------------------
def parametrix_leading_order_check(H, x, taus, y=None):
    """Extrapolated ``(4 pi tau)^{n/2} exp(d^2/4tau) H(x, y, tau)`` as ``tau -> 0``.

    ``H`` is a conjugate kernel history centered at ``x`` on a static
    background; ``y = None`` means ``y = x``.
    """
    from .geometry import distance

    flow = H.flow
    if not flow.spec.is_static:
        raise HarnackError("leading-order check needs a static background")
    y = x if y is None else y
    d = distance(flow.spec, flow.T, x, y)
    vals = []
    for tau in taus:
        u = H.at(tau=tau)
        Hy = float(flow.grid.evaluate_at(u, y))
        vals.append((4.0 * math.pi * tau) ** (0.5 * flow.n) * math.exp(d * d / (4.0 * tau)) * Hy)
    vals = np.array(vals)
    lim, err = richardson_limit(taus, vals)
    return LimitReport("parametrix_leading_order", np.asarray(taus, dtype=float), vals, lim, err, 1.0,
                       max(err, 1e-9))
