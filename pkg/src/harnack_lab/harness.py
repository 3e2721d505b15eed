"""Declarative experiments: configs, suites, report bundles and baseline comparison.

A config is a TOML file::

    name = "torus-signs"
    resolution = 64
    suites = ["signs", "identities"]
    seed = 0

    [background]
    kind = "flat_torus_static"
    T = 0.3

    [schedules]
    taus = [0.01, 0.02, 0.05]

Running it writes one CSV per suite (fixed column order, 17 significant
digits, so reruns are byte-identical) plus ``bundle.json`` with the config,
its hash, the code version and the wall time.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import harnack as hk
from . import heat, heatball, reduced
from .columnfile import load_flow, save_flow
from .flow import FlowError, make_flow
from .geometry import BackgroundSpec, curvature_bounds

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SUITES = ("signs", "identities", "limits", "reduced_distance", "heat_ball")
ROW_FIELDS = ("suite", "quantity", "background", "resolution", "time", "value_min", "value_max",
              "margin", "tolerance", "masked_count", "verdict")
CACHE_ENV = "HARNACK_LAB_CACHE"
BUNDLE_FILE = "bundle.json"


class ConfigError(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


def _version():
    try:
        from importlib.metadata import version

        return version("harnack-lab")
    except Exception:  # noqa: BLE001  (running from a source tree)
        return "0+unknown"


# -- configuration --------------------------------------------------------------
@dataclass
class ExperimentConfig:
    background: dict
    name: str = "experiment"
    resolution: int = 64
    time_steps: int = 64
    suites: list = field(default_factory=lambda: ["signs"])
    schedules: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output: str = "harnack-out"
    seed: int = 0
    fault_injection: bool = False
    budget_seconds: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.background, dict) or "kind" not in self.background:
            raise ConfigError("[background] table with a 'kind' is required")
        for name, res in (("resolution", self.resolution), ("time_steps", self.time_steps)):
            if int(res) < 2 or int(res) & (int(res) - 1):
                raise ConfigError(f"{name} must be a power of two")
        self.resolution = int(self.resolution)
        self.time_steps = int(self.time_steps)
        unknown = [s for s in self.suites if s not in SUITES]
        if unknown or not self.suites:
            raise ConfigError(f"unknown or empty suite selection: {unknown}")
        for key, sched in self.schedules.items():
            arr = np.asarray(sched, dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ConfigError(f"schedule {key!r} must be a nonempty list")
            d = np.diff(arr)
            if arr.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
                raise ConfigError(f"schedule {key!r} must be strictly monotone")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def replace(self, **kw):
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig.from_dict(d)

    def spec(self):
        bg = dict(self.background)
        bg.setdefault("resolution", self.resolution)
        bg["resolution"] = self.resolution
        return BackgroundSpec.from_dict(bg)

    @property
    def config_hash(self):
        return _hash(self.to_dict())

    @property
    def compat_hash(self):
        """Hash of the parts that define *what* is measured (not how finely or how strictly)."""
        d = self.to_dict()
        for k in ("resolution", "time_steps", "tolerances", "output", "budget_seconds"):
            d.pop(k, None)
        return _hash(d)

    def schedule(self, key, default):
        return np.asarray(self.schedules.get(key, default), dtype=float)


def _hash(d):
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


# -- flows and cache ---------------------------------------------------------------------
def cache_dir():
    return Path(os.environ.get(CACHE_ENV, Path.home() / ".cache" / "harnack-lab"))


def _flow_key(cfg):
    return _hash({"background": cfg.background, "resolution": cfg.resolution, "steps": cfg.time_steps})


def get_flow(cfg, use_cache=True):
    """The flow of a config, from the cache when a conformal flow was built before."""
    spec = cfg.spec()
    if spec.kind != "conformal_torus_flow" or not use_cache:
        return make_flow(spec, cfg.time_steps)
    path = cache_dir() / f"flow-{_flow_key(cfg)}.csv"
    if path.exists():
        return load_flow(path)
    flow = make_flow(spec, cfg.time_steps)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_flow(flow, path)
    return flow


def cache_build(cfg):
    flow = get_flow(cfg, use_cache=True)
    return cache_dir() / f"flow-{_flow_key(cfg)}.csv" if flow.kind == "conformal_torus_flow" else None


def cache_clear():
    d = cache_dir()
    removed = 0
    if d.exists():
        for p in d.glob("flow-*.csv"):
            p.unlink()
            removed += 1
    return removed


# -- rows ----------------------------------------------------------------------------------
def _row(suite, quantity, background, resolution, time_, vmin, vmax, margin, tol, masked, verdict):
    return {"suite": suite, "quantity": quantity, "background": background, "resolution": int(resolution),
            "time": float(time_), "value_min": float(vmin), "value_max": float(vmax), "margin": float(margin),
            "tolerance": float(tol), "masked_count": int(masked), "verdict": verdict}


def report_row(suite, rep):
    r = rep.to_row()
    return _row(suite, r["quantity"], r["background"], r["resolution"], r["time"], r["min"], r["max"],
                r["margin"], r["tolerance"], r["masked_count"], r["verdict"])


def limit_row(suite, rep, background, resolution):
    margin = rep.tolerance - (rep.deviation if rep.comparison == "<=" else abs(rep.deviation))
    return _row(suite, f"limit:{rep.quantity}", background, resolution, float(np.min(rep.taus)),
                rep.limit, rep.limit, margin, rep.tolerance, 0, rep.verdict)


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in ROW_FIELDS])
    return buf.getvalue()


def read_rows(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in ("time", "value_min", "value_max", "margin", "tolerance"):
            r[k] = float(r[k])
        r["resolution"] = int(r["resolution"])
        r["masked_count"] = int(r["masked_count"])
    return rows


# -- suites ---------------------------------------------------------------------------------
SATURATION_TOL = 1e-8


def _center(cfg, flow):
    c = cfg.options.get("center")
    if flow.kind == "shrinking_sphere":
        return None
    if c is not None:
        return np.asarray(c, dtype=float)
    if flow.kind == "euclidean_static":
        return np.zeros(flow.n)
    return np.array([o + 0.5 * s for o, s in zip(flow.grid.origin, flow.grid.sides)])


def _kernel(flow, center, taus):
    taus = np.asarray(taus, dtype=float)
    if flow.kind == "shrinking_sphere":
        return heat.sphere_kernel_history(flow, taus)
    if flow.spec.is_static:
        return heat.kernel_history(flow, center, taus)
    return heat.fundamental_solution(flow, center, taus)


def resolved_tau(flow):
    """Smallest ``tau`` whose kernel the grid resolves.

    Static kernels need a width of three cells; on evolving backgrounds the
    fundamental solution is seeded by a Gaussian of width six cells and
    needs about three seeding times to shed the transient of that seed.
    """
    h = heat.grid_spacing(flow)
    if flow.spec.is_static or flow.kind == "shrinking_sphere":
        return (3.0 * h) ** 2
    return 4.0 * 0.5 * (6.0 * h) ** 2


def _default_taus(flow, count=10):
    hi = min(0.2, 0.5 * flow.T)
    lo = max(0.05 * hi, resolved_tau(flow))
    if lo >= hi:
        raise ConfigError("grid too coarse for any tau below T/2; raise the resolution")
    return np.geomspace(lo, hi, count)


def _step(flow, tau):
    """Time-difference step, tied to the grid spacing so space and time refine together."""
    return min(heat.grid_spacing(flow), 0.25 * tau)


def _row_of(suite, quantity, values, direction, tol, flow, time_, mask=None, advisory=False):
    rep = hk.HarnackReport(quantity, np.asarray(values, dtype=float), direction, tol, mask,
                           background=flow.kind, resolution=int(flow.spec.resolution), time=time_,
                           advisory=advisory)
    return report_row(suite, rep)


def _corrupt(values, rng):
    """Flip the sign of one cell near the maximum of a random slice (fault injection)."""
    k = rng.integers(values.shape[0])
    flat = values[k].reshape(-1)
    candidates = np.flatnonzero(flat >= 0.5 * flat.max())
    cell = candidates[rng.integers(candidates.size)]
    flat[cell] = -flat[cell]
    return int(k), int(cell)


def _two_bump_history(flow, times, cfg):
    """Forward heat solution from two weighted point sources, evaluated in closed form."""
    opts = cfg.options
    o = np.asarray(flow.grid.origin, dtype=float)
    L = np.asarray(flow.grid.sides, dtype=float)
    sources = np.asarray(opts.get("bumps", [o + L * [0.35, 0.5], o + L * [0.65, 0.55]]), dtype=float)
    weights = opts.get("bump_weights", [1.0, 0.7])
    X = flow.grid.coords()
    vals = np.array([sum(w * heat.closed_form_kernel(flow.spec, p, X, t) for p, w in zip(sources, weights))
                     for t in times])
    return heat.FieldHistory(flow, heat.FORWARD, times, vals)


def _saturation_rows(flow, cfg, rng):
    """Euclidean Gaussian: every Harnack quantity vanishes identically (analytic jets)."""
    with np.errstate(invalid="ignore"):  # a corrupted cell has no logarithm
        return _saturation_rows_inner(flow, cfg, rng)


def _saturation_rows_inner(flow, cfg, rng):
    from .frames import Frame, kernel_jet

    tol = cfg.tolerances.get("saturation", SATURATION_TOL)
    center = _center(cfg, flow)
    taus = cfg.schedule("taus", np.geomspace(0.01, min(0.5, flow.T), 10))

    def jet(tau):
        return kernel_jet(Frame(flow, flow.T - tau), center, tau)

    jets = [jet(tau) for tau in taus]
    if cfg.fault_injection:
        j = jets[int(rng.integers(len(jets)))]
        cell = np.unravel_index(int(np.argmax(j.u)), j.u.shape)
        j.u[cell] = -j.u[cell]
    rows = [_row_of("signs", "positivity_H", [j.u.min() for j in jets], hk.GE_ZERO, 0.0, flow, float(taus[0]))]
    absval = {"v_H": [], "Q": [], "W": [], "D": [], "evolution_residual": []}
    masks = {"v_H": [], "Q": [], "W": []}
    for tau, j in zip(taus, jets):
        for name, rep in (("v_H", hk.v_H_field(j, tau, tol=tol)), ("Q", hk.li_yau_Q(j, tau, tol=tol)),
                          ("W", hk.linear_W(j, tau, tol=tol))):
            absval[name].append(np.abs(rep.values))
            masks[name].append(rep.mask)
        absval["D"].append(hk.dissipation(j, None, tau))
        absval["evolution_residual"].append(hk.conjugate_evolution_residual(jet, tau, step=1e-3 * tau))
    for name, vals in absval.items():
        mask = np.array(masks[name]) if name in masks else None
        rows.append(_row_of("signs", f"abs_{name}", np.array(vals), hk.LE_ZERO, tol, flow, float(taus[0]), mask))
    return rows


def suite_signs(flow, cfg, rng):
    if flow.kind == "euclidean_static":
        return _saturation_rows(flow, cfg, rng), {}
    tol = cfg.tolerances.get("signs", hk.flow_tolerance(flow))
    center = _center(cfg, flow)
    taus = cfg.schedule("taus", _default_taus(flow))
    H = _kernel(flow, center, taus)
    fwd = None
    if flow.kind == "flat_torus_static":
        ts = cfg.schedule("ts", taus)
        fwd = _two_bump_history(flow, ts, cfg)
    if cfg.fault_injection:
        _corrupt((fwd if fwd is not None else H).values, rng)
    rows = [_row_of("signs", "positivity_H", [v.min() for v in H.values], hk.GE_ZERO, 0.0, flow, float(taus[0]))]
    rows.append(report_row("signs", hk.merge_reports(
        [hk.v_H_field(H, tau, tol=tol + _kernel_error(H, tau)) for tau in taus], "v_H")))
    D = np.array([hk.dissipation(H, None, tau) for tau in taus])
    rows.append(_row_of("signs", "D", D, hk.GE_ZERO, 0.0, flow, float(taus[0])))
    if fwd is not None:
        rows.append(_row_of("signs", "positivity_u", [v.min() for v in fwd.values], hk.GE_ZERO, 0.0, flow,
                            float(fwd.times[0])))
        rows.append(report_row("signs", hk.merge_reports([hk.li_yau_Q(fwd, t, tol=tol) for t in fwd.times], "Q")))
        # the W inequality is asserted for fundamental solutions: the kernel run forward from t = 0
        X = flow.grid.coords()
        K = heat.FieldHistory(flow, heat.FORWARD, taus,
                              np.array([heat.closed_form_kernel(flow.spec, center, X, t) for t in taus]))
        rows.append(report_row("signs", hk.merge_reports([hk.linear_W(K, t, tol=tol) for t in taus], "W")))
    # explicit gradient estimate with measured curvature bounds
    grad_taus = taus[taus <= min(1.0, flow.T)]
    k1, k2 = curvature_bounds(flow)
    with np.errstate(invalid="ignore", over="ignore"):
        g = hk.gradient_estimate_check(H, k1, k2, taus=grad_taus, tol=tol)
    if g.extra["vacuous"]:
        g.advisory = True
        g.extra["packaged"].advisory = True
    rows.append(report_row("signs", g))
    rows.append(report_row("signs", g.extra["packaged"]))
    if flow.kind == "flat_torus_static":
        small = taus[taus <= 0.01]
        if small.size:
            B, _ = hk.mean_value_bound_check(H, small)
            target = (4.0 * math.pi) ** (-0.5 * flow.n)
            rows.append(_row_of("signs", "B_emp_deviation", [abs(B - target)], hk.LE_ZERO,
                                cfg.tolerances.get("B_emp", 1e-6), flow, float(small[-1])))
    return rows, {}


def _kernel_error(H, tau, core=1e-3):
    """Relative error estimate of a computed kernel on its core (0 for closed forms).

    A relative error ``delta`` in ``u`` shifts ``f = -log u`` by ``delta``,
    which enters ``v_H`` undamped, so it adds to the grid tolerance.
    """
    if H.error is None:
        return 0.0
    k = H.index(tau=tau)
    u, e = H.values[k], H.error[k]
    sel = u > core * u.max()
    return float(np.max(e[sel] / u[sel]))


def _bump_h(flow, times, tau):
    """Forward heat solution started shortly before ``T - tau`` from a smooth bump."""
    X = flow.grid.coords()
    o = np.asarray(flow.grid.origin, dtype=float)
    L = np.asarray(flow.grid.sides, dtype=float)
    z = [(X[i] - o[i]) / L[i] for i in range(flow.n)]
    h0 = 1.0 + 0.5 * np.prod([np.cos(2.0 * math.pi * zi) for zi in z], axis=0)
    t_init = max(0.0, float(min(times)) - 0.02)
    return heat.solve_forward_heat(flow, h0, t_init=t_init, times=np.asarray(sorted(times)))


def suite_identities(flow, cfg, rng):
    rows = []
    center = _center(cfg, flow)
    tau = float(cfg.options.get("identity_tau", min(0.1, 0.5 * flow.T)))
    step = float(cfg.options.get("identity_step", _step(flow, tau)))
    if flow.kind == "euclidean_static":
        return _saturated_identity_rows(flow, cfg, center, tau), {}
    H = _kernel(flow, center, [tau - step, tau, tau + step])
    tol_id = cfg.tolerances.get("entropy_identity", 0.02)
    hs = [("h1", None)]
    if flow.kind != "shrinking_sphere":
        hs.append(("hbump", _bump_h(flow, [flow.T - tau - step, flow.T - tau, flow.T - tau + step], tau)))
    for label, h in hs:
        _, D, rel = hk.entropy_identity_residual(H, h, tau, step)
        rows.append(_row_of("identities", f"entropy_identity_rel_{label}", [rel], hk.LE_ZERO, tol_id, flow, tau))
        r = hk.conjugate_evolution_residual(H, tau, h=h, step=step)
        rows.append(_row_of("identities", f"evolution_residual_rel_{label}", [r / max(D, 1e-300)], hk.LE_ZERO,
                            cfg.tolerances.get("evolution", 0.02), flow, tau))
    if flow.kind in ("flat_torus_static", "shrinking_sphere"):
        if flow.kind == "shrinking_sphere":
            x0 = np.asarray(cfg.options.get("x0", [0.0, 0.0, -1.0]), dtype=float)
            tol_rep = cfg.tolerances.get("representation", 0.05)
        else:
            o = np.asarray(flow.grid.origin, dtype=float)
            x0 = np.asarray(cfg.options.get("x0", o + np.asarray(flow.grid.sides) * [0.25, 0.125]), dtype=float)
            tol_rep = cfg.tolerances.get("representation", 0.03)
        t0 = float(cfg.options.get("t0", flow.T / 3.0))
        direct, rep = hk.vH_representation_check(flow, lambda ts: _kernel(flow, center, ts), x0, t0)
        err = abs(direct - rep) / max(abs(direct), 1e-300)
        rows.append(_row_of("identities", "representation_rel", [err], hk.LE_ZERO, tol_rep, flow, t0))
        rows.append(_row_of("identities", "representation_sides", [direct, rep], hk.LE_ZERO, 0.0, flow, t0))
    if flow.kind == "flat_torus_static":
        rows.extend(_weighted_li_yau_rows(flow, cfg))
    return rows, {}


def _saturated_identity_rows(flow, cfg, center, tau):
    """Euclidean Gaussian: ``dW/dtau``, ``D`` and the evolution residual all vanish (analytic jets)."""
    from .frames import Frame, kernel_jet

    tol = cfg.tolerances.get("saturation", SATURATION_TOL)
    step = 1e-3 * tau

    def jet(t):
        return kernel_jet(Frame(flow, flow.T - t), center, t)

    d = (hk.entropy_W_h(jet(tau + step), None, tau + step) - hk.entropy_W_h(jet(tau - step), None, tau - step)) / (2 * step)
    D = hk.dissipation(jet(tau), None, tau)
    r = hk.conjugate_evolution_residual(jet, tau, step=step)
    return [
        _row_of("identities", "abs_entropy_identity", [abs(d + D)], hk.LE_ZERO, tol, flow, tau),
        _row_of("identities", "abs_evolution_residual", [r], hk.LE_ZERO, tol, flow, tau),
    ]


def _weighted_li_yau_rows(flow, cfg):
    t0 = float(cfg.options.get("weighted_t0", flow.T / 3.0))
    ts = cfg.schedule("weighted_ts", np.linspace(0.2 * t0, 0.8 * t0, 7))
    step = float(cfg.options.get("weighted_step", 0.04 * t0))
    offsets = (-step, -0.5 * step, 0.0, 0.5 * step, step)
    times = np.unique(np.round(np.concatenate([ts + s for s in offsets] + [[t0]]), 12))
    u = _two_bump_history(flow, times, cfg)
    o = np.asarray(flow.grid.origin, dtype=float)
    x0 = np.asarray(cfg.options.get("weighted_x0", o + 0.5 * np.asarray(flow.grid.sides)), dtype=float)
    curve = hk.weighted_li_yau_series(u, x0, t0, ts, step)
    rel = (curve.derivative - curve.companion) / np.abs(curve.companion)
    return [
        _row_of("identities", "weighted_Q_derivative_minus_rhs_rel", rel, hk.GE_ZERO,
                cfg.tolerances.get("weighted_Q", 0.03), flow, float(ts[0])),
        _row_of("identities", "weighted_Q_rhs", curve.companion, hk.GE_ZERO, 0.0, flow, float(ts[0])),
    ]


def suite_limits(flow, cfg, rng):
    center = _center(cfg, flow)
    taus = cfg.schedule("limit_taus", [0.02, 0.01, 0.005])
    H = _kernel(flow, center, taus)
    h = None
    amp = float(cfg.options.get("h_amplitude", 0.0))
    if amp and flow.kind != "shrinking_sphere":
        X = flow.grid.coords()
        o = np.asarray(flow.grid.origin, dtype=float)
        h0 = 1.0 + amp * np.cos(2.0 * math.pi * (X[0] - o[0]) / flow.grid.sides[0])
        times = np.unique(np.concatenate([flow.T - taus, [flow.T]]))
        h = heat.solve_forward_heat(flow, h0, times=times)
    reps = hk.small_time_limits(H, h, taus, center, tolerances=cfg.tolerances.get("limits"))
    return [limit_row("limits", rep, flow.kind, flow.spec.resolution) for rep in reps.values()], {}


def suite_reduced(flow, cfg, rng):
    rows = []
    center = _center(cfg, flow)
    x = 0.0 if center is None else center
    tau = float(cfg.options.get("reduced_tau", min(0.1, 0.5 * flow.T)))
    cells = int(cfg.options.get("reduced_cells", 16))
    field_ = reduced.reduced_distance_field(flow, x, tau, cells=cells)
    objects = {"reduced_field": field_}
    if flow.spec.is_static:
        d = reduced.field_distance(flow, field_)
        ex = d ** 2 / (4.0 * tau)
        dev = np.abs(field_.ell - ex) / np.maximum(ex, 1.0)
        rows.append(_row_of("reduced_distance", "ell_oracle_rel", dev, hk.LE_ZERO,
                            cfg.tolerances.get("ell_oracle", 1e-4), flow, tau))
        k1 = k2 = 0.0
    else:
        k1, k2 = curvature_bounds(flow)
    for rep in reduced.bounds_check(flow, field_, k1, k2, tol=cfg.tolerances.get("distance_bounds", 1e-6)):
        rows.append(report_row("reduced_distance", rep))
    if flow.kind in ("flat_torus_static", "shrinking_sphere", "euclidean_static"):
        H = _kernel(flow, center, [tau])
        rows.append(report_row("reduced_distance", reduced.kernel_lower_bound_check(
            H, field_, tol=cfg.tolerances.get("kernel_lower_bound"))))
    weak = int(cfg.options.get("weak_nodes", 0))
    if weak:
        lo, hi = 0.5 * tau, min(1.5 * tau, flow.T)
        fields = [reduced.reduced_distance_field(flow, x, t, cells=cells) for t in reduced.weak_check_taus(lo, hi, weak)]
        tests = reduced.test_function_suite(flow, seed=cfg.seed)
        reps = reduced.supersolution_weak_check(flow, fields, tests, window=(lo, hi),
                                                tol=cfg.tolerances.get("weak", 1e-4))
        rows.append(report_row("reduced_distance", hk.merge_reports(reps, "weak_pairing")))
    return rows, objects


def _curve_rows(curve, background, resolution):
    tol = curve.tolerance
    m_dec = curve.margins("nonincreasing")
    m_inc = curve.margins("nondecreasing")
    lb = curve.lower_bound_margins
    r0 = float(curve.radii[0])
    return [
        _row("heat_ball", f"{curve.quantity}:dI_dr_nonincreasing", background, resolution, r0,
             float(curve.dI_dr.min()), float(curve.dI_dr.max()), float(m_dec.min()), tol, 0,
             "pass" if m_dec.min() >= -tol else "fail"),
        _row("heat_ball", f"{curve.quantity}:dI_dr_nondecreasing", background, resolution, r0,
             float(curve.dI_dr.min()), float(curve.dI_dr.max()), float(m_inc.min()), tol, 0, "advisory"),
        _row("heat_ball", f"{curve.quantity}:center_minus_I", background, resolution, r0,
             float(lb.min()), float(lb.max()), float(lb.min()), tol, 0,
             "pass" if lb.min() >= -tol else "fail"),
        _row("heat_ball", f"{curve.quantity}:kernel_bracket_min", background, resolution, r0,
             curve.bracket.get("kernel_bracket_min", float("nan")),
             curve.bracket.get("kernel_bracket_min", float("nan")),
             curve.bracket.get("kernel_bracket_min", float("nan")), tol, 0, "advisory"),
    ]


def suite_heat_ball(flow, cfg, rng):
    rows, objects = [], {}
    spec = flow.spec
    res = int(spec.resolution)
    radii = cfg.schedule("radii", heatball.geometric_radii(0.08, 0.8, 12))
    if spec.kind == "euclidean_static":
        x0 = np.asarray(cfg.options.get("x0", [0.1, -0.2]), dtype=float)
        t0 = float(cfg.options.get("t0", 1.0))
        wr = cfg.schedule("watson_radii", heatball.geometric_radii(0.1, 1.0, 6))
        models = {
            "constant": heatball.CaloricSum(spec, constant=1.0),
            "gaussian": heatball.CaloricSum(spec, sources=[[0.3, 0.1]], weights=[1.0], times=[0.0]),
            "linear": heatball.CaloricSum(spec, constant=2.0, slope=np.array([0.7, -0.4])),
        }
        for name, u in models.items():
            w = heatball.watson_mean_value_check(x0, t0, u, wr, rel_tol=cfg.tolerances.get("watson", 5e-3))
            dev = w.deviation
            rows.append(_row("heat_ball", f"watson_{name}", spec.kind, res, t0, float(dev.min()), float(dev.max()),
                             float(w.rel_tol - dev.max()), w.rel_tol, 0, w.verdict))
        sat = heatball.CaloricSum(spec, sources=[x0], weights=[1.0], times=[0.0])
        kernel = heatball.BackwardKernel(spec, x0, t0, heatball.EXACT)
        curve = heatball.monotonicity_curve(kernel, heatball.li_yau_density_model(sat), wr, brackets=False)
        rows.append(_row("heat_ball", "saturation_abs_I", spec.kind, res, t0, float(np.abs(curve.I).min()),
                         float(np.abs(curve.I).max()), -float(np.abs(curve.I).max()),
                         cfg.tolerances.get("saturation", SATURATION_TOL), 0,
                         "pass" if np.abs(curve.I).max() <= cfg.tolerances.get("saturation", SATURATION_TOL)
                         else "fail"))
        return rows, objects
    if spec.kind != "flat_torus_static":
        raise heatball.HeatBallError("the heat-ball suite runs on the plane and the flat torus")
    o = np.asarray(flow.grid.origin, dtype=float)
    L = np.asarray(flow.grid.sides, dtype=float)
    x0 = np.asarray(cfg.options.get("x0", o + L * [0.5, 0.55]), dtype=float)
    t0 = float(cfg.options.get("t0", 0.1))
    mode = cfg.options.get("kernel_mode", heatball.EXACT)
    kernel = heatball.BackwardKernel(spec, x0, t0, mode)
    c = o + 0.5 * L
    u3 = heatball.CaloricSum(spec, sources=[c + [-0.15, 0.0], c + [0.2, 0.1]], weights=[1.0, 0.7],
                             times=[-0.005, -0.005], constant=1e-3)
    u4 = heatball.CaloricSum(spec, sources=[c + [0.3, 0.2]], weights=[1.0], times=[0.0])
    for Q in (heatball.li_yau_density_model(u3), heatball.entropy_density_model(u4)):
        curve = heatball.monotonicity_curve(kernel, Q, radii)
        objects[f"curve_{curve.quantity}"] = curve
        rows.extend(_curve_rows(curve, spec.kind, res))
    return rows, objects


SUITE_RUNNERS = {
    "signs": suite_signs,
    "identities": suite_identities,
    "limits": suite_limits,
    "reduced_distance": suite_reduced,
    "heat_ball": suite_heat_ball,
}


# -- bundles ------------------------------------------------------------------------------------
@dataclass
class ReportBundle:
    config: ExperimentConfig
    rows: dict  # suite -> list of row dicts
    errors: dict  # suite -> message
    objects: dict = field(default_factory=dict, repr=False)
    wall_time: float = 0.0

    @property
    def suite_verdicts(self):
        out = {}
        for s in self.config.suites:
            if s in self.errors:
                out[s] = "error"
            elif any(r["verdict"] == "fail" for r in self.rows.get(s, [])):
                out[s] = "fail"
            else:
                out[s] = "pass"
        return out

    @property
    def verdict(self):
        v = self.suite_verdicts.values()
        if "error" in v:
            return "error"
        return "fail" if "fail" in v else "pass"

    @property
    def failures(self):
        return [(s, r["quantity"]) for s, rows in self.rows.items() for r in rows if r["verdict"] == "fail"]

    def manifest(self):
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash,
            "compat_hash": self.config.compat_hash,
            "code_version": _version(),
            "wall_time": self.wall_time,
            "verdict": self.verdict,
            "suites": {s: {"verdict": v, "csv": f"{s}.csv", "error": self.errors.get(s)}
                       for s, v in self.suite_verdicts.items()},
        }

    def write(self, out=None):
        out = Path(out or self.config.output)
        out.mkdir(parents=True, exist_ok=True)
        for s in self.config.suites:
            (out / f"{s}.csv").write_text(rows_to_csv(self.rows.get(s, [])))
        for name, obj in self.objects.items():
            if isinstance(obj, heatball.LocalMonotonicityCurve):
                obj.save(out / f"{name}.csv")
            elif isinstance(obj, reduced.ReducedDistanceField):
                reduced.save_field(obj, out / f"{name}.csv")
        (out / BUNDLE_FILE).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        return out


def run_experiment(config, write=True, flow=None):
    """Execute every selected suite; solver failures are recorded per suite."""
    start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    rows, errors, objects = {}, {}, {}
    try:
        flow = flow or get_flow(config)
    except FlowError as exc:
        errors = {s: f"flow: {exc}" for s in config.suites}
        flow = None
    for suite in config.suites:
        if flow is None:
            break
        if config.budget_seconds is not None and time.perf_counter() - start > config.budget_seconds:
            errors[suite] = "budget exceeded"
            continue
        try:
            r, objs = SUITE_RUNNERS[suite](flow, config, rng)
            rows[suite] = r
            objects.update(objs)
            elapsed = time.perf_counter() - start
            if config.budget_seconds is not None and elapsed > config.budget_seconds:
                errors[suite] = f"budget exceeded (finished at {elapsed:.1f} s)"
        except Exception as exc:  # noqa: BLE001  (every suite failure is reported, not raised)
            log.warning("suite %s failed: %s", suite, exc)
            errors[suite] = f"{type(exc).__name__}: {exc}"
    bundle = ReportBundle(config, rows, errors, objects, time.perf_counter() - start)
    if write:
        bundle.write()
    return bundle


def load_bundle(path):
    path = Path(path)
    if path.is_file():
        path = path.parent
    manifest = json.loads((path / BUNDLE_FILE).read_text())
    rows = {s: read_rows(path / info["csv"]) for s, info in manifest["suites"].items()
            if (path / info["csv"]).exists()}
    return manifest, rows


# -- baseline comparison ---------------------------------------------------------------------------
@dataclass
class DiffReport:
    entries: list  # (suite, quantity, metric, value, baseline, drift, allowed)
    verdict_changes: list
    threshold: float
    same_resolution: bool
    missing: list

    @property
    def max_drift(self):
        return max((e[5] for e in self.entries), default=0.0)

    @property
    def passed(self):
        return not self.missing and all(e[5] <= e[6] for e in self.entries)

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["suite", "quantity", "metric", "value", "baseline", "drift", "allowed", "ok"])
        for e in self.entries:
            w.writerow([e[0], e[1], e[2], _fmt(e[3]), _fmt(e[4]), _fmt(e[5]), _fmt(e[6]), int(e[5] <= e[6])])
        return buf.getvalue()


def compare_baseline(bundle, baseline, threshold=0.01):
    """Per-metric drift between two bundles of compatible configs.

    At equal resolution a metric may drift by ``threshold`` relative. Across
    resolutions the allowed change is the larger row tolerance (the declared
    discretization error model) plus the relative threshold.
    """
    man_a, rows_a = load_bundle(bundle)
    man_b, rows_b = load_bundle(baseline)
    if man_a["compat_hash"] != man_b["compat_hash"]:
        raise ConfigError("bundles come from incompatible configs")
    same_res = man_a["config"]["resolution"] == man_b["config"]["resolution"]
    entries, changes, missing = [], [], []
    for suite, rows in sorted(rows_a.items()):
        base = {(r["quantity"], r["time"]): r for r in rows_b.get(suite, [])}
        for r in rows:
            b = base.get((r["quantity"], r["time"]))
            if b is None:
                missing.append((suite, r["quantity"]))
                continue
            if r["verdict"] != b["verdict"]:
                changes.append((suite, r["quantity"], b["verdict"], r["verdict"]))
            for metric in ("value_min", "value_max"):
                a_v, b_v = r[metric], b[metric]
                if not (np.isfinite(a_v) and np.isfinite(b_v)):
                    continue
                drift = abs(a_v - b_v)
                scale = max(abs(b_v), 1e-12)
                if same_res:
                    allowed = threshold * scale + 1e-14
                else:
                    allowed = max(r["tolerance"], b["tolerance"]) + threshold * scale
                entries.append((suite, r["quantity"], metric, a_v, b_v, drift, allowed))
    return DiffReport(entries, changes, threshold, same_res, missing)
