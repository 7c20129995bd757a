import numpy as np
import pytest

from robstab.eigscan import abscissa
from robstab.errors import CertificateViolation
from robstab.linmodel import ReducedJacobian, TauAssignment, build_a, linearize
from robstab.powerflow import solve_powerflow
from robstab.rsa import sample_taus
from robstab.sdpcert import (
    RHO_TOL,
    RobustBoundary,
    certify_equilibrium,
    find_robust_boundary,
    margin_pct,
    solve_certificate,
    verify_certificate,
)

from conftest import TWO_BUS_SC, WSCC_CORR


def _check_residuals(cert):
    r = cert.residuals
    assert cert.rho > 0
    assert r["q_min_eig"] > 0
    assert r["trace_err"] < 1e-8
    assert r["lmi_max_eig"] <= -cert.rho + 1e-7


@pytest.fixture(scope="module")
def two_bus_j(two_bus):
    return {lam: linearize(None, solve_powerflow(two_bus, TWO_BUS_SC, lam)) for lam in (1.0, 2.0, 2.6, 3.0)}


def test_negative_identity_is_rs():
    c = solve_certificate(ReducedJacobian.from_matrix(-np.eye(2), 1))
    assert c.status == "RS"
    assert c.rho == pytest.approx(1.0, rel=1e-6)
    assert np.allclose(c.Q, np.eye(2) / 2, atol=1e-6)
    _check_residuals(c)


def test_rotation_is_nrs():
    c = solve_certificate(ReducedJacobian.from_matrix([[0.0, 1.0], [-1.0, 0.0]], 1))
    assert c.status == "NRS"
    assert c.rho <= RHO_TOL


def test_two_bus_verdicts(two_bus_j):
    assert solve_certificate(two_bus_j[2.0]).status == "RS"
    assert solve_certificate(two_bus_j[2.6]).status == "NRS"


def test_q_structure(two_bus_j):
    c = solve_certificate(two_bus_j[1.0])
    Q = c.Q
    nG = c.q_g.shape[0]
    assert np.all(Q[:nG, nG:] == 0)
    assert np.count_nonzero(Q[nG:, nG:] - np.diag(np.diag(Q[nG:, nG:]))) == 0
    _check_residuals(c)


def test_transfer_to_random_taus(two_bus_j):
    j = two_bus_j[2.0]
    c = solve_certificate(j)
    canon = verify_certificate(j, TauAssignment.uniform(1, 1.0), c)
    assert canon["lmi_max_eig"] == pytest.approx(c.residuals["lmi_max_eig"], abs=1e-12)
    for t in sample_taus(j.n_L, 100, seed=3):
        out = verify_certificate(j, TauAssignment(tuple(t)), c)
        assert out["lmi_max_eig"] < 0
        assert abscissa(build_a(j, TauAssignment(tuple(t)))) < 0
    assert verify_certificate(j, TauAssignment.uniform(1, 10.0), c)["lmi_max_eig"] < 0


def test_transfer_from_noncanonical_tau(wscc, wscc_cal):
    j = linearize(None, solve_powerflow(wscc, WSCC_CORR, 1.0, calibration=wscc_cal))
    t0 = TauAssignment.from_pairs([0.5, 2.0, 7.0])
    c = solve_certificate(j, t0)
    assert c.status == "RS"
    for t in sample_taus(j.n_L, 50, seed=4):
        verify_certificate(j, TauAssignment(tuple(t)), c)


def test_violation_is_hard_failure(two_bus_j):
    c = solve_certificate(two_bus_j[1.0])
    with pytest.raises(CertificateViolation):
        verify_certificate(two_bus_j[3.0], TauAssignment.uniform(1, 1.0), c)
    nrs = solve_certificate(two_bus_j[3.0])
    with pytest.raises(ValueError):
        verify_certificate(two_bus_j[3.0], TauAssignment.uniform(1, 1.0), nrs)


def test_verdict_independent_of_canonical_tau(two_bus_j, wscc, wscc_cal):
    js = [two_bus_j[2.0], two_bus_j[3.0]]
    js += [linearize(None, solve_powerflow(wscc, WSCC_CORR, lam, calibration=wscc_cal)) for lam in (1.0, 2.05)]
    rng = np.random.default_rng(7)
    for j in js:
        verdicts = {solve_certificate(j).status}
        for _ in range(4):
            tau = TauAssignment(tuple(np.exp(rng.uniform(-2, 2, j.n_L))))
            verdicts.add(solve_certificate(j, tau).status)
        assert len(verdicts) == 1


def test_sufficiency_only():
    """A matrix that is stable for every diagonal scaling yet gets no certificate.

    For ``[[-1, 1], [-1, 0]]`` every ``diag(1/t1, 1/t2) A`` has negative trace
    and positive determinant, so it is Hurwitz for all positive ``t``.  A
    diagonal Lyapunov matrix cannot make the (2, 2) entry of ``QA + A'Q``
    negative, so the best decay rate is zero and the verdict is NRS.  This is
    expected: NRS makes no claim about instability.
    """
    A = np.array([[-1.0, 1.0], [-1.0, 0.0]])
    j = ReducedJacobian.from_matrix(A, 0)
    for t in sample_taus(2, 200, seed=0):
        assert abscissa(build_a(j, TauAssignment(tuple(t)))) < 0
    assert solve_certificate(j).status == "NRS"


def test_solver_failure_is_not_nrs(two_bus_j):
    c = solve_certificate(two_bus_j[2.0], max_iter=1)
    assert c.status == "SolverFailure"


def test_certify_equilibrium_records_status(two_bus):
    pc = certify_equilibrium(solve_powerflow(two_bus, TWO_BUS_SC, 1.0))
    assert pc.status == "RS" and pc.jacobian is not None


def test_margin_arithmetic():
    b = RobustBoundary.make(1.86, 2.16)
    assert b.margin_pct == 100 * (2.16 - 1.86) / 2.16
    assert margin_pct(1.0, 2.0) == 50.0


@pytest.fixture(scope="module")
def two_bus_boundary(two_bus, two_bus_nose):
    return find_robust_boundary(two_bus, TWO_BUS_SC, nose=two_bus_nose)


@pytest.fixture(scope="module")
def wscc_boundary(wscc, wscc_cal, wscc_corr_nose):
    return find_robust_boundary(wscc, WSCC_CORR, nose=wscc_corr_nose, calibration=wscc_cal)


def test_boundary_invariants(two_bus_boundary, wscc_boundary):
    for b in (two_bus_boundary, wscc_boundary):
        assert 0 <= b.s_lambda <= b.snb_lambda
        lo, hi = b.s_bracket
        assert hi - lo <= 1e-3 * hi


@pytest.mark.parametrize("which", ["two", "wscc"])
def test_rs_below_boundary(which, two_bus, wscc, wscc_cal, two_bus_boundary, wscc_boundary):
    case, sc, b, cal, start = (
        (two_bus, TWO_BUS_SC, two_bus_boundary, None, 0.0) if which == "two" else (wscc, WSCC_CORR, wscc_boundary, wscc_cal, 0.1)
    )
    warm = None
    for lam in np.linspace(start, b.s_lambda, 21)[1:]:
        eq = solve_powerflow(case, sc, float(lam), warm_start=warm, calibration=cal)
        warm = eq
        pc = certify_equilibrium(eq)
        assert pc.status == "RS", lam
        _check_residuals(pc.certificate)
    # just past the bracket the certificate is gone
    eq = solve_powerflow(case, sc, b.s_bracket[1] * 1.01, warm_start=warm, calibration=cal)
    assert certify_equilibrium(eq).status == "NRS"
