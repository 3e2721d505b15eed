import numpy as np
import pytest

from harnack_lab.flow import make_flow
from harnack_lab.geometry import BackgroundSpec


@pytest.fixture(scope="session")
def torus64():
    return make_flow(BackgroundSpec("flat_torus_static", n=2, T=0.3, sides=(1.0, 1.0), resolution=64))


@pytest.fixture(scope="session")
def torus128():
    return make_flow(BackgroundSpec("flat_torus_static", n=2, T=0.3, sides=(1.0, 1.0), resolution=128))


@pytest.fixture(scope="session")
def euclid128():
    return make_flow(BackgroundSpec("euclidean_static", n=2, T=1.0, sides=(8.0, 8.0), resolution=128))


@pytest.fixture(scope="session")
def sphere():
    return make_flow(BackgroundSpec("shrinking_sphere", n=2, T=0.2, radius=1.0, resolution=64))


@pytest.fixture(scope="session")
def conformal32():
    spec = BackgroundSpec.conformal_from_function(
        lambda x, y: 0.05 * np.cos(2 * np.pi * x) + 0.02 * np.cos(2 * np.pi * y + 0.3), resolution=32, T=0.1)
    return make_flow(spec, steps=32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ----------------------------------------------------------------
ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """``record(number, label, ok, detail)`` collects one sub-check of an acceptance criterion."""
    results = request.config.stash[ACCEPTANCE]

    def record(number, label, ok, detail=""):
        results.setdefault(number, []).append((label, bool(ok), detail))
        print(f"criterion {number} {label}: {'ok' if ok else 'FAILED'} {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        subs = results[number]
        ok = all(s[1] for s in subs)
        shown = [s for s in subs if not s[1]] or subs
        detail = "; ".join(f"{label} {'ok' if good else 'FAILED'} ({d})" if d else f"{label} {'ok' if good else 'FAILED'}"
                           for label, good, d in shown)
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
