import time
from collections import OrderedDict

import pytest

from tabsim.core import EnergyParams, PhaseTypeService, all_idle_on
from tabsim.fluid import FluidParams, integrate_fluid
from tabsim.simulate import SimConfig, run_simulation

LAM, MU, NU = 0.3, 0.1, 0.1
HORIZON = 250.0
SIZES = (100, 1000, 10000)
REPS = 5

# criterion number -> list of (part, passed, detail); filled by test_acceptance
ACCEPTANCE: "OrderedDict[int, list]" = OrderedDict()


def record(criterion: int, part: str, passed: bool, detail: str):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    print(f"criterion {criterion} [{part}]: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {'ok' if p else 'FAIL'} {d}" for name, p, d in parts)
        tr.write_line(f"criterion {c:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def energy():
    return EnergyParams(200.0, 140.0)


@pytest.fixture(scope="session")
def hyperexp():
    return PhaseTypeService.hyperexponential([0.75, 0.25], [2.0, 0.4])


@pytest.fixture(scope="session")
def fluid_left():
    return integrate_fluid(all_idle_on(), FluidParams(LAM, MU, NU), HORIZON, sample_interval=1.0)


def _timed(cfg):
    t0 = time.perf_counter()
    res = run_simulation(cfg)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def tabs_runs():
    """TABS replications per N at the constant-load scenario; value: (results, seconds)."""
    out = {}
    for n in SIZES:
        runs, secs = [], 0.0
        for rep in range(REPS):
            res, dt = _timed(SimConfig(n, LAM, MU, NU, horizon=HORIZON, seed=rep))
            runs.append(res)
            secs += dt
        out[n] = (runs, secs)
    return out


@pytest.fixture(scope="session")
def jiq_big():
    return _timed(SimConfig(10000, LAM, 0.0, NU, policy="jiq", horizon=HORIZON, seed=0))


@pytest.fixture(scope="session")
def delayedoff_big():
    return _timed(SimConfig(10000, LAM, MU, NU, policy="delayedoff", horizon=HORIZON, seed=0))


@pytest.fixture(scope="session")
def hyper_big(hyperexp):
    return _timed(SimConfig(10000, LAM, MU, NU, service=hyperexp, horizon=HORIZON, seed=0))


# compiled kernels load on first use, so wall-clock deadlines are meaningless here
from hypothesis import settings  # noqa: E402

settings.register_profile("default_no_deadline", deadline=None)
settings.load_profile("default_no_deadline")
