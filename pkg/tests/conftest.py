import numpy as np
import pytest

from robstab.netmodel import load_case
from robstab.powerflow import Correlated, SingleBus, calibrate, trace_nose

TWO_BUS_SC = SingleBus(2, 0.98)

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []
WSCC_SINGLE = SingleBus(8, 0.894)
WSCC_CORR = Correlated(8, 1.0, 0.9)


@pytest.fixture(scope="session")
def two_bus():
    return load_case("rudimentary2")


@pytest.fixture(scope="session")
def wscc():
    return load_case("wscc9")


@pytest.fixture(scope="session")
def wscc_cal(wscc):
    return calibrate(wscc)


@pytest.fixture(scope="session")
def two_bus_nose(two_bus):
    return trace_nose(two_bus, TWO_BUS_SC, 0.0, 0.1)


@pytest.fixture(scope="session")
def wscc_corr_nose(wscc, wscc_cal):
    return trace_nose(wscc, WSCC_CORR, 0.1, 0.1, calibration=wscc_cal)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


SCREEN_RATES = (1.0, 5.0, 10.0)
SCREEN_TRIPS = ((1, 4), (2, 7), (7, 8), (9, 3))


def screening_base(case):
    """WSCC base case used for contingency screening: load 8 at 1.8 + j0.5."""
    from dataclasses import replace

    loads = list(case.loads)
    k = case.load_at(8)
    loads[k] = replace(loads[k], p0=1.8, q0=0.5)
    return case.with_loads(loads)


@pytest.fixture(scope="session")
def screening_report(wscc):
    from robstab.linmodel import TauAssignment
    from robstab.rsa import screen_contingencies

    taus = [TauAssignment.uniform(3, 1.0 / r) for r in SCREEN_RATES]
    return screen_contingencies(screening_base(wscc), SCREEN_TRIPS, taus, seed=0, jobs=4)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
