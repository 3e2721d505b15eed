"""Acceptance criteria 1-10, each recorded as one pass/fail line in the terminal summary."""

import time

import pytest

from harnack_lab import harness
from harnack_lab.harness import ExperimentConfig

pytestmark = pytest.mark.acceptance

UNIT_TORUS = {"kind": "flat_torus_static", "T": 0.3}
WIDE_TORUS = {"kind": "flat_torus_static", "T": 0.3, "sides": [2.0, 2.0]}
SPHERE = {"kind": "shrinking_sphere", "T": 0.2, "radius": 1.0}
EUCLID = {"kind": "euclidean_static", "T": 0.3, "sides": [8.0, 8.0]}


def run(background, resolution, suites, **kw):
    kw.setdefault("options", {})
    kw["options"].setdefault("reduced_cells", 8)
    cfg = ExperimentConfig.from_dict(dict(background=background, resolution=resolution, suites=suites, **kw))
    return harness.run_experiment(cfg, write=False)


def rows(bundle, suite):
    return {r["quantity"]: r for r in bundle.rows[suite]}


@pytest.fixture(scope="module")
def euclid():
    start = time.perf_counter()
    saturation = run(EUCLID, 128, ["signs", "identities"])
    elapsed = time.perf_counter() - start
    rest = run(EUCLID, 128, ["reduced_distance", "heat_ball"])
    return saturation, elapsed, rest


@pytest.fixture(scope="module")
def torus128():
    return run(UNIT_TORUS, 128, ["signs", "identities", "reduced_distance", "heat_ball"])


@pytest.fixture(scope="module")
def torus64():
    return run(UNIT_TORUS, 64, ["signs", "identities", "reduced_distance"])


@pytest.fixture(scope="module")
def sphere128():
    return run(SPHERE, 128, ["signs", "identities", "reduced_distance"])


def test_criterion_1_gaussian_saturation(euclid, criterion):
    bundle, elapsed, _ = euclid
    r = {**rows(bundle, "signs"), **rows(bundle, "identities")}
    names = ["abs_v_H", "abs_Q", "abs_W", "abs_D", "abs_evolution_residual", "abs_entropy_identity"]
    worst = max(r[q]["value_max"] for q in names)
    ok = criterion(1, "saturation zeros", worst <= 1e-8 and bundle.verdict == "pass", f"max {worst:.2e} <= 1e-8")
    fast = criterion(1, "runtime", elapsed < 30.0, f"{elapsed:.1f} s < 30 s")
    assert ok and fast


@pytest.mark.parametrize("which", ["torus", "sphere"])
def test_criterion_2_sign_sweeps(which, torus128, criterion):
    if which == "torus":
        bundle = torus128
    else:
        # the calibrated zero on the sphere scales with pi R(T) / N, so check at the stated 1e-4 directly
        bundle = run(SPHERE, 128, ["signs"], tolerances={"signs": 1e-4})
    r = rows(bundle, "signs")
    nodes = len(harness._default_taus(harness.get_flow(bundle.config)))
    checks = [r["v_H"]] + ([r["Q"], r["W"]] if which == "torus" else [])
    tol = max(c["tolerance"] for c in checks)
    ok = all(c["verdict"] == "pass" for c in checks) and all(
        row["verdict"] in ("pass", "advisory") for row in bundle.rows["signs"])
    detail = f"{which}: {', '.join(c['quantity'] for c in checks)} clean, tol {tol:.2e}, {nodes} nodes"
    good = criterion(2, which, ok and tol <= 1e-4 and nodes >= 10, detail)
    assert good


def test_criterion_3_entropy_identity(torus64, torus128, criterion):
    r64, r128 = rows(torus64, "identities"), rows(torus128, "identities")
    ok = True
    for label in ("h1", "hbump"):
        q = f"entropy_identity_rel_{label}"
        fine, coarse = r128[q]["value_max"], r64[q]["value_max"]
        ratio = coarse / fine
        ok &= criterion(3, label, fine <= 0.02 and 3.0 <= ratio <= 5.0,
                        f"residual {fine:.2e} <= 2%, ratio 64/128 {ratio:.2f} in [3, 5]")
    assert ok


def test_criterion_4_small_time_limits(criterion):
    bundle = run(WIDE_TORUS, 128, ["limits"], options={"h_amplitude": 0.3})
    r = rows(bundle, "limits")
    m = r["limit:moment"]
    rel = (m["tolerance"] - m["margin"]) / abs(m["value_min"])
    ok = criterion(4, "moment", m["verdict"] == "pass" and rel <= 0.01, f"relative deviation {rel:.1e} <= 1%")
    w = r["limit:W_h"]
    ok &= criterion(4, "W_h", w["verdict"] == "pass", f"|W_h| {abs(w['value_min']):.2e} <= bar {w['tolerance']:.2e}")
    for q in ("limit:laplacian_h", "limit:curvature"):
        ok &= criterion(4, q[6:], r[q]["verdict"] == "pass" and abs(r[q]["value_min"]) <= 1e-3,
                        f"{abs(r[q]['value_min']):.1e} <= 1e-3")
    assert ok


def test_criterion_5_gradient_estimate_and_mean_value(torus128, sphere128, criterion):
    ok = True
    for name, bundle in (("torus", torus128), ("sphere", sphere128)):
        g = rows(bundle, "signs")["gradient_estimate"]
        ok &= criterion(5, f"gradient estimate {name}", g["verdict"] == "pass", f"min margin {g['margin']:.2e}")
    b = rows(torus128, "signs")["B_emp_deviation"]
    ok &= criterion(5, "B_emp", b["verdict"] == "pass" and b["value_max"] <= 1e-6 and b["time"] <= 0.01,
                    f"|B_emp - 1/(4 pi)| {b['value_max']:.1e} at tau <= {b['time']:.3g}")
    assert ok


def test_criterion_6_reduced_distance(euclid, torus128, sphere128, criterion):
    ok = True
    for name, bundle in (("plane", euclid[2]), ("torus", torus128)):
        r = rows(bundle, "reduced_distance")
        ok &= criterion(6, f"ell oracle {name}", r["ell_oracle_rel"]["value_max"] <= 1e-4,
                        f"{r['ell_oracle_rel']['value_max']:.1e}")
        eq = max(abs(r[q]["value_min"]) + abs(r[q]["value_max"]) for q in ("L_bar_upper", "L_bar_lower"))
        ok &= criterion(6, f"bounds equality {name}", eq <= 1e-6, f"|margin| {eq:.1e}")
    for name, bundle in (("torus", torus128), ("sphere", sphere128)):
        r = rows(bundle, "reduced_distance")
        ok &= criterion(6, f"bounds {name}", min(r[q]["margin"] for q in ("L_bar_upper", "L_bar_lower")) >= -1e-6)
        k = r["ell_minus_f"]
        ok &= criterion(6, f"f <= ell {name}", k["margin"] >= -k["tolerance"], f"min {k['value_min']:.2e}")
    assert ok


def test_criterion_7_representation(torus128, sphere128, criterion):
    ok = True
    for name, bundle, tol in (("torus", torus128, 0.03), ("sphere", sphere128, 0.05)):
        r = rows(bundle, "identities")["representation_rel"]
        ok &= criterion(7, name, r["value_max"] <= tol, f"{r['value_max']:.1e} <= {tol:.0%}")
    assert ok


def test_criterion_8_watson(euclid, criterion):
    r = rows(euclid[2], "heat_ball")
    ok = True
    for name in ("constant", "gaussian", "linear"):
        w = r[f"watson_{name}"]
        ok &= criterion(8, f"Watson {name}", w["verdict"] == "pass" and w["value_max"] <= 5e-3,
                        f"{w['value_max']:.1e} <= 0.5%")
    assert ok


EXAMPLES = ["t2_li_yau_Q", "minus_u_W"]


@pytest.mark.parametrize("quantity", EXAMPLES)
def test_criterion_8_examples_nonincreasing_with_lower_bound(quantity, torus128, criterion):
    r = rows(torus128, "heat_ball")
    dec = r[f"{quantity}:dI_dr_nonincreasing"]
    lb = r[f"{quantity}:center_minus_I"]
    ok = criterion(8, f"{quantity} dI/dr <= tol", dec["verdict"] == "pass", f"max dI/dr {dec['value_max']:.2e}")
    ok &= criterion(8, f"{quantity} lower bound", lb["verdict"] == "pass", f"min Q - I {lb['value_min']:.2e}")
    assert ok


@pytest.mark.xfail(strict=True, reason="the monotonicity identity makes I(r) nonincreasing; see the README")
@pytest.mark.parametrize("quantity", EXAMPLES)
def test_criterion_8_examples_nondecreasing_literal(quantity, torus128, criterion):
    row = rows(torus128, "heat_ball")[f"{quantity}:dI_dr_nondecreasing"]
    ok = criterion(8, f"{quantity} dI/dr >= -tol", row["value_min"] >= -row["tolerance"],
                   f"min dI/dr {row['value_min']:.2e}")
    assert ok


def test_criterion_9_weighted_li_yau(torus128, criterion):
    r = rows(torus128, "identities")
    rel, rhs = r["weighted_Q_derivative_minus_rhs_rel"], r["weighted_Q_rhs"]
    ok = criterion(9, "derivative >= RHS - 3%", rel["value_min"] >= -0.03, f"min rel {rel['value_min']:.2e}")
    ok &= criterion(9, "RHS >= 0", rhs["value_min"] >= 0.0, f"min {rhs['value_min']:.2e}")
    assert ok


def test_criterion_10_determinism_and_regression(tmp_path, criterion):
    base = dict(background=UNIT_TORUS, suites=["signs", "identities", "reduced_distance"],
                options={"reduced_cells": 8})
    dirs = {}
    for name, res in (("a", 64), ("b", 64), ("fine", 128)):
        cfg = ExperimentConfig.from_dict(dict(base, resolution=res, output=str(tmp_path / name)))
        harness.run_experiment(cfg)
        dirs[name] = tmp_path / name
    same = all((dirs["a"] / f).read_bytes() == (dirs["b"] / f).read_bytes()
               for f in ("signs.csv", "identities.csv", "reduced_distance.csv", "reduced_field.csv"))
    ok = criterion(10, "byte-identical rerun", same)
    diff = harness.compare_baseline(dirs["a"], dirs["fine"])
    ok &= criterion(10, "64 vs 128 drift", diff.passed and not diff.verdict_changes,
                    f"max drift {diff.max_drift:.2e} within declared error model")
    assert ok
