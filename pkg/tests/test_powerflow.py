import numpy as np
import pytest

from robstab.errors import NoConvergence, SingularJacobian
from robstab.powerflow import (
    BaseLoading,
    Correlated,
    GlobalScale,
    SingleBus,
    equilibrium_residual,
    q_over_p,
    solve_contingency,
    solve_powerflow,
    trace_nose,
)

from conftest import TWO_BUS_SC, WSCC_CORR, WSCC_SINGLE


def _check_invariants(eq, tol=1e-9):
    m = eq.model()
    x, y = eq.x(), eq.y()
    assert np.max(np.abs(m.f(x, y))) < tol
    assert np.max(np.abs(m.g(x, y))) < tol
    for k, ld in enumerate(eq.case.loads):
        v = eq.voltage(ld.bus)
        assert eq.g[k] * v**2 == pytest.approx(ld.p_static(v), abs=tol)
        assert eq.b[k] * v**2 == pytest.approx(ld.q_static(v), abs=tol)


def test_q_over_p():
    assert q_over_p(1.0) == 0.0
    assert q_over_p(0.8) == pytest.approx(0.75)
    assert q_over_p(0.8, lagging=False) == pytest.approx(-0.75)
    with pytest.raises(ValueError):
        q_over_p(0.0)


def test_zero_load_two_bus(two_bus):
    eq = solve_powerflow(two_bus, TWO_BUS_SC, 0.0)
    assert eq.g[0] == 0.0 and eq.b[0] == 0.0
    _check_invariants(eq)
    # no current flows, so the load bus sits at the source voltage
    assert eq.voltage(2) == pytest.approx(eq.voltage(1), abs=1e-9)


def test_two_bus_at_s_point(two_bus):
    eq = solve_powerflow(two_bus, TWO_BUS_SC, 2.51)
    _check_invariants(eq)
    assert equilibrium_residual(eq) < 1e-10
    assert eq.voltage(2) > 0.5


def test_wscc_base_case(wscc, wscc_cal):
    base = solve_powerflow(wscc, SingleBus(8, 1.0), 1.8, calibration=wscc_cal)
    k = base.case.load_at(8)
    assert base.case.loads[k].p0 == 1.8
    _check_invariants(base)
    # a non-unity power factor goes through the same path
    eq = solve_powerflow(wscc, SingleBus(8, 0.964), 1.8, calibration=wscc_cal)
    _check_invariants(eq)


def test_base_loading_reproduces_calibration(wscc, wscc_cal):
    eq = solve_powerflow(wscc, BaseLoading(), None, calibration=wscc_cal)
    assert np.allclose(eq.v, wscc_cal.base.v, atol=1e-9)


@pytest.mark.parametrize("sc", [Correlated(8, 0.5), GlobalScale("equal"), GlobalScale("slack")])
def test_other_scenarios_converge(wscc, wscc_cal, sc):
    eq = solve_powerflow(wscc, sc, 1.2, calibration=wscc_cal)
    _check_invariants(eq)


def test_negative_load_rejected(two_bus):
    with pytest.raises(ValueError):
        solve_powerflow(two_bus, TWO_BUS_SC, -1.0)


def test_beyond_nose_fails(two_bus):
    with pytest.raises((NoConvergence, SingularJacobian)):
        solve_powerflow(two_bus, TWO_BUS_SC, 6.0)


def test_two_bus_nose(two_bus_nose):
    assert two_bus_nose.snb_lambda == pytest.approx(4.2, rel=0.05)
    lo, hi = two_bus_nose.snb_bracket
    assert hi - lo < 1e-3 * hi


def test_wscc_single_bus_nose(wscc, wscc_cal):
    nose = trace_nose(wscc, WSCC_SINGLE, 1.0, 0.1, calibration=wscc_cal)
    assert nose.snb_lambda == pytest.approx(3.5, rel=0.05)


def test_wscc_correlated_nose(wscc_corr_nose):
    assert wscc_corr_nose.snb_lambda == pytest.approx(2.16, rel=0.05)


@pytest.mark.parametrize("fixture", ["two_bus_nose", "wscc_corr_nose"])
def test_nose_monotone(fixture, request):
    nose = request.getfixturevalue(fixture)
    lam, v = nose.lambdas, nose.voltages
    assert np.all(np.diff(lam) > 0)
    assert np.all(np.diff(v) <= 1e-12)
    for p in nose.points:
        _check_invariants(p.equilibrium, tol=1e-8)


def test_nose_points_reverified(two_bus, two_bus_nose, wscc, wscc_cal, wscc_corr_nose):
    for case, sc, nose, cal in ((two_bus, TWO_BUS_SC, two_bus_nose, None), (wscc, WSCC_CORR, wscc_corr_nose, wscc_cal)):
        pts = nose.points
        # skip the last points, where a cold start may not find the upper branch
        for p in pts[: max(1, len(pts) - 3) : max(1, len(pts) // 8)]:
            eq = solve_powerflow(case, sc, p.lam, calibration=cal)
            assert np.max(np.abs(eq.v - p.equilibrium.v)) < 1e-8


def test_line_trip_equilibrium(wscc, wscc_cal):
    base = solve_powerflow(wscc, SingleBus(8, 0.964), 1.8, calibration=wscc_cal)
    eq = solve_contingency(base.case, base, (7, 8))
    _check_invariants(eq)
    assert not eq.case.branches[eq.case.find_branch(7, 8)].in_service
