
import numpy as np
import pytest

from harnack_lab import harness
from harnack_lab.harness import ConfigError, ExperimentConfig

EUCLID = {
    "name": "euclid",
    "resolution": 128,
    "suites": ["signs", "identities", "reduced_distance", "heat_ball"],
    "background": {"kind": "euclidean_static", "T": 0.3, "sides": [8.0, 8.0]},
    "options": {"reduced_cells": 8},
}
TORUS = {
    "name": "torus",
    "resolution": 64,
    "suites": ["signs", "identities", "reduced_distance"],
    "background": {"kind": "flat_torus_static", "T": 0.3},
    "options": {"reduced_cells": 8},
}


@pytest.fixture(autouse=True)
def _private_cache(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.CACHE_ENV, str(tmp_path / "cache"))


def cfg(base, tmp_path, **kw):
    d = dict(base, output=str(tmp_path), **kw)
    return ExperimentConfig.from_dict(d)


@pytest.fixture(scope="module")
def euclid_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("euclid")
    return harness.run_experiment(cfg(EUCLID, out)), out


def test_euclid_passes_with_tiny_identity_errors(euclid_bundle):
    bundle, out = euclid_bundle
    assert bundle.verdict == "pass", bundle.failures or bundle.errors
    ids = [r for r in bundle.rows["identities"] if r["quantity"].startswith("abs_")]
    assert ids and max(r["value_max"] for r in ids) <= 1e-8
    assert {p.name for p in out.iterdir()} >= {"bundle.json", "signs.csv", "identities.csv", "heat_ball.csv"}


def test_bundle_manifest(euclid_bundle):
    bundle, out = euclid_bundle
    man, rows = harness.load_bundle(out)
    assert man["verdict"] == "pass"
    assert man["config_hash"] == bundle.config.config_hash
    assert set(rows) == set(EUCLID["suites"])
    assert rows["signs"][0].keys() == set(harness.ROW_FIELDS)


def test_rows_round_trip_exactly(euclid_bundle):
    bundle, out = euclid_bundle
    back = harness.read_rows(out / "signs.csv")
    for a, b in zip(bundle.rows["signs"], back):
        for k in ("value_min", "value_max", "margin", "tolerance", "time"):
            assert a[k] == b[k]


def test_run_is_deterministic(tmp_path):
    a = harness.run_experiment(cfg(TORUS, tmp_path / "a"))
    b = harness.run_experiment(cfg(TORUS, tmp_path / "b"))
    for s in TORUS["suites"]:
        assert (tmp_path / "a" / f"{s}.csv").read_text() == (tmp_path / "b" / f"{s}.csv").read_text()
    assert a.verdict == b.verdict == "pass"


def test_fault_injection_is_detected(tmp_path):
    bundle = harness.run_experiment(cfg(TORUS, tmp_path, fault_injection=True, suites=["signs", "identities"]))
    assert bundle.verdict == "fail"
    assert bundle.suite_verdicts["signs"] == "fail"
    assert bundle.suite_verdicts["identities"] == "pass"


def test_compare_identical(tmp_path):
    harness.run_experiment(cfg(TORUS, tmp_path / "a"))
    harness.run_experiment(cfg(TORUS, tmp_path / "b"))
    diff = harness.compare_baseline(tmp_path / "a", tmp_path / "b")
    assert diff.passed and diff.max_drift == 0.0 and not diff.verdict_changes
    assert diff.to_csv().startswith("suite,quantity,metric")


def test_compare_tolerance_change_flags_verdicts(tmp_path):
    harness.run_experiment(cfg(TORUS, tmp_path / "a", suites=["identities"]))
    tight = cfg(TORUS, tmp_path / "b", suites=["identities"], tolerances={"entropy_identity": 1e-12})
    harness.run_experiment(tight)
    diff = harness.compare_baseline(tmp_path / "b", tmp_path / "a")
    assert diff.max_drift == 0.0
    assert diff.verdict_changes


def test_compare_incompatible_raises(tmp_path):
    harness.run_experiment(cfg(TORUS, tmp_path / "a", suites=["signs"]))
    harness.run_experiment(cfg(TORUS, tmp_path / "b", suites=["signs"], seed=3))
    with pytest.raises(ConfigError):
        harness.compare_baseline(tmp_path / "a", tmp_path / "b")


def test_compare_across_resolutions(tmp_path):
    harness.run_experiment(cfg(TORUS, tmp_path / "a", suites=["identities"]))
    harness.run_experiment(cfg(TORUS, tmp_path / "b", suites=["identities"], resolution=128))
    diff = harness.compare_baseline(tmp_path / "a", tmp_path / "b")
    assert not diff.same_resolution
    assert diff.passed


def test_budget_exceeded_is_an_error(tmp_path):
    bundle = harness.run_experiment(cfg(TORUS, tmp_path, budget_seconds=1e-9))
    assert bundle.verdict == "error"
    assert all("budget" in m for m in bundle.errors.values())


def test_flow_error_recorded(tmp_path):
    # two RK4 steps over a strong conformal factor cannot meet the residual tolerance
    bad = cfg({**TORUS, "resolution": 16, "time_steps": 2,
               "background": {"kind": "conformal_torus_flow", "T": 0.5,
                              "phi0_modes": [{"kx": 1, "amplitude": 0.3}]}}, tmp_path, suites=["signs"])
    bundle = harness.run_experiment(bad, write=False)
    assert bundle.verdict == "error" and bundle.errors["signs"].startswith("flow:")


@pytest.mark.parametrize("bad", [
    {"background": {"T": 1.0}},
    {"resolution": 48},
    {"time_steps": 0},
    {"suites": ["nope"]},
    {"suites": []},
    {"schedules": {"taus": [0.1, 0.3, 0.2]}},
    {"schedules": {"taus": []}},
    {"unexpected": 1},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TORUS, **bad})


def test_config_load_and_replace(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('name = "x"\nresolution = 32\n[background]\nkind = "flat_torus_static"\nT = 0.3\n')
    c = ExperimentConfig.load(p)
    assert c.resolution == 32 and c.suites == ["signs"]
    c2 = c.replace(resolution=64, seed=None)
    assert c2.resolution == 64 and c2.seed == c.seed
    assert c.compat_hash == c2.compat_hash and c.config_hash != c2.config_hash
    assert np.array_equal(c.schedule("taus", [0.1, 0.2]), [0.1, 0.2])
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("name = \n")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.toml")


def test_conformal_cache(tmp_path):
    c = cfg({**TORUS, "resolution": 16, "time_steps": 8,
             "background": {"kind": "conformal_torus_flow", "T": 0.05, "phi0_modes": [{"kx": 1, "amplitude": 0.05}]}},
            tmp_path)
    path = harness.cache_build(c)
    assert path.exists() and path.parent == harness.cache_dir()
    f1 = harness.get_flow(c)
    f2 = harness.get_flow(c, use_cache=False)
    assert np.array_equal(f1.times, f2.times)
    assert harness.cache_clear() == 1
    assert harness.cache_clear() == 0
    assert harness.cache_build(cfg(TORUS, tmp_path)) is None
