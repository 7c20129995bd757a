import numpy as np
import pytest

from robstab.eigscan import abscissa
from robstab.linmodel import TauAssignment, build_a, linearize
from robstab.powerflow import solve_powerflow
from robstab.rsa import post_contingency_equilibrium
from robstab.tdsim import (
    INCONCLUSIVE,
    LIMIT_CYCLE,
    STABLE,
    UNSTABLE,
    BranchTrip,
    LoadOffset,
    SimTrace,
    StateOffset,
    classify,
    simulate,
)

from conftest import TWO_BUS_SC, WSCC_CORR, WSCC_SINGLE, screening_base


def _trace(t, x, v, x_ref=None, early=False):
    t = np.asarray(t, float)
    return SimTrace(t, np.asarray(x, float), np.asarray(v, float), (8,), early, "", x_ref, float(t[-1]))


def test_zero_perturbation_constant(two_bus, wscc, wscc_cal):
    for eq, n in ((solve_powerflow(two_bus, TWO_BUS_SC, 2.0), 1), (solve_powerflow(wscc, WSCC_CORR, 1.2, calibration=wscc_cal), 3)):
        tr = simulate(None, TauAssignment.uniform(n, 1.0), eq, LoadOffset(1.0), t_end=20.0)
        assert not tr.terminated_early
        assert np.max(np.abs(tr.states - tr.states[0])) < 1e-9
        assert classify(tr).label == STABLE


def test_time_strictly_increasing_and_algebra_closed(two_bus):
    eq = solve_powerflow(two_bus, TWO_BUS_SC, 2.0)
    tr = simulate(None, TauAssignment.uniform(1, 0.5), eq, t_end=30.0)
    assert np.all(np.diff(tr.t) > 0)
    assert tr.max_alg_residual < 1e-8
    assert tr.t[-1] == pytest.approx(30.0)


def test_decaying_trace_is_stable():
    t = np.linspace(0, 50, 2001)
    x = np.exp(-0.5 * t)[:, None] * np.array([1.0, -2.0])
    cl = classify(_trace(t, x, 1 + 0.1 * x[:, :1], x_ref=np.zeros(2)))
    assert cl.label == STABLE
    assert cl.metrics["settle_time"] > 0


def test_stationary_oscillation_is_limit_cycle():
    t = np.linspace(0, 100, 20001)
    s = np.sin(2 * np.pi * t / 5)
    x = s[:, None] * np.array([1.0])
    assert classify(_trace(t, x, 1 + 0.2 * s[:, None], x_ref=np.zeros(1))).label == LIMIT_CYCLE


def test_growing_oscillation_is_unstable():
    t = np.linspace(0, 100, 20001)
    s = np.exp(0.03 * t) * np.sin(2 * np.pi * t / 5) * 1e-2
    cl = classify(_trace(t, s[:, None], 1 + s[:, None], x_ref=np.zeros(1)))
    assert cl.label == UNSTABLE


def test_early_termination_is_collapse():
    t = np.linspace(0, 3, 10)
    cl = classify(_trace(t, np.ones((10, 1)), np.ones((10, 1)), early=True))
    assert cl.label == UNSTABLE and cl.collapse


def test_slow_drift_is_inconclusive():
    t = np.linspace(0, 10, 101)
    x = (1 - 0.05 * t / 10)[:, None]
    assert classify(_trace(t, x, np.ones((101, 1)), x_ref=np.zeros(1))).label == INCONCLUSIVE


def test_classification_is_deterministic(two_bus):
    eq = solve_powerflow(two_bus, TWO_BUS_SC, 2.0)
    a = classify(simulate(None, TauAssignment.uniform(1, 0.5), eq, t_end=40.0))
    b = classify(simulate(None, TauAssignment.uniform(1, 0.5), eq, t_end=40.0))
    assert a == b


def test_state_offset_and_bad_tau(two_bus):
    eq = solve_powerflow(two_bus, TWO_BUS_SC, 2.0)
    dx = np.zeros(eq.x().size)
    dx[0] = 0.01
    tr = simulate(None, TauAssignment.uniform(1, 1.0), eq, StateOffset(tuple(dx)), t_end=60.0)
    assert classify(tr).label == STABLE
    with pytest.raises(ValueError, match="dimension"):
        simulate(None, TauAssignment.uniform(2, 1.0), eq)


def test_step_size_independence(wscc, wscc_cal):
    eq = solve_powerflow(wscc, WSCC_CORR, 1.5, calibration=wscc_cal)
    tau = TauAssignment.uniform(3, 0.3)
    a = simulate(None, tau, eq, t_end=5.0, dt=0.01, dt_max=0.05)
    b = simulate(None, tau, eq, t_end=5.0, dt=0.005, dt_max=0.025)
    assert np.max(np.abs(a.states[-1] - b.states[-1])) < 1e-4
    # the state has not yet settled, so the comparison is not trivial
    assert np.max(np.abs(a.states[-1] - a.x_ref)) > 1e-4


def test_fast_loads_settle_monotonically(two_bus):
    eq = solve_powerflow(two_bus, TWO_BUS_SC, 1.0)
    tr = simulate(None, TauAssignment.uniform(1, 0.01), eq, t_end=60.0)
    dev = np.max(np.abs(tr.states - tr.x_ref), axis=1)
    # running maximum of the tail never exceeds the running maximum before it
    env = np.maximum.accumulate(dev[::-1])[::-1]
    assert np.all(np.diff(env) <= 1e-15)
    assert classify(tr).label == STABLE


def test_branch_trip_perturbation(wscc, wscc_cal):
    base = solve_powerflow(wscc, WSCC_CORR, 1.0, calibration=wscc_cal)
    tr = simulate(None, TauAssignment.uniform(3, 1.0), base, BranchTrip(9, 3), t_end=100.0)
    assert tr.x_ref is not None
    assert classify(tr).label == STABLE


ORACLE_SPECS = (("two", 3.2), ("single", 3.4), ("corr", 2.1))


def test_oracle_agreement(two_bus, wscc, wscc_cal):
    """Simulation outcome agrees with the sign of the spectral abscissa.

    The horizon spans at least fifteen time constants of the slowest mode.
    """
    cases = {
        "two": (two_bus, TWO_BUS_SC, 1, None),
        "single": (wscc, WSCC_SINGLE, 3, wscc_cal),
        "corr": (wscc, WSCC_CORR, 3, wscc_cal),
    }
    rng = np.random.default_rng(2024)
    n_unstable = 0
    for i in range(30):
        name, lmax = ORACLE_SPECS[i % 3]
        case, sc, n, cal = cases[name]
        lam = float(rng.uniform(0.5 * lmax, lmax))
        rates = np.exp(rng.uniform(np.log(0.5), np.log(20.0), n))
        tau = TauAssignment.from_pairs(list(1.0 / rates))
        eq = solve_powerflow(case, sc, lam, calibration=cal)
        a = abscissa(build_a(linearize(None, eq), tau))
        if abs(a) < 1e-3:
            continue
        t_end = float(np.clip(15.0 / abs(a), 50.0, 3000.0))
        label = classify(simulate(None, tau, eq, t_end=t_end)).label
        if a < 0:
            assert label == STABLE, (name, lam, rates, a, label)
        else:
            n_unstable += 1
            assert label != STABLE, (name, lam, rates, a, label)
    assert n_unstable >= 1


def test_limit_cycle_after_trip_1_4(wscc):
    eq = post_contingency_equilibrium(screening_base(wscc), (1, 4))
    tr = simulate(None, TauAssignment.uniform(3, 1 / 5.0), eq, t_end=200.0)
    cl = classify(tr)
    assert cl.label == LIMIT_CYCLE
    assert 0.2 <= np.min(tr.v_loads) and np.max(tr.v_loads) <= 1.8
