import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from robstab.dae import fd_jacobian
from robstab.errors import NearSingularAlgebraic
from robstab.linmodel import (
    DaeBlocks,
    ReducedJacobian,
    TauAssignment,
    assemble_blocks,
    build_a,
    linearize,
    reduce,
    retune_exciter_gain,
)
from robstab.powerflow import solve_powerflow

from conftest import TWO_BUS_SC, WSCC_CORR, WSCC_SINGLE


def _random_blocks(rng, n_g, n_l, m):
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    gy = r(m, m) + 3 * np.eye(m)
    return DaeBlocks(r(n_g, n_g), r(n_g, n_l), r(n_g, m), np.zeros((n_l, n_g)), r(n_l, n_l), r(n_l, m), r(m, n_g), r(m, n_l), gy)


def _pencil_eigs(blocks, tau):
    """Finite generalized eigenvalues of the unreduced linear DAE."""
    n_g, n_l, m = blocks.n_G, blocks.n_L, blocks.m
    M = np.block([[blocks.fx(), blocks.fy()], [blocks.gx(), blocks.g_y]])
    E = np.diag(np.concatenate([np.ones(n_g), np.asarray(tau.values), np.zeros(m)]))
    w = sla.eig(M, E, right=False)
    return w[np.isfinite(w)]


def _match(a, b, tol):
    a = np.sort_complex(np.asarray(a))
    b = np.sort_complex(np.asarray(b))
    assert a.shape == b.shape
    used = np.zeros(b.size, bool)
    for e in a:
        d = np.where(used, np.inf, np.abs(b - e))
        k = int(np.argmin(d))
        assert d[k] <= tol * max(1.0, abs(e)), (e, b[k])
        used[k] = True


def _equilibria(two_bus, wscc, wscc_cal):
    out = []
    for lam in np.linspace(0.5, 3.8, 7):
        out.append(solve_powerflow(two_bus, TWO_BUS_SC, float(lam)))
    for lam in np.linspace(1.0, 3.3, 7):
        out.append(solve_powerflow(wscc, WSCC_SINGLE, float(lam), calibration=wscc_cal))
    for lam in np.linspace(0.3, 2.0, 6):
        out.append(solve_powerflow(wscc, WSCC_CORR, float(lam), calibration=wscc_cal))
    return out


@pytest.fixture(scope="module")
def equilibria(two_bus, wscc, wscc_cal):
    return _equilibria(two_bus, wscc, wscc_cal)


def test_analytic_partials_match_fd(equilibria):
    assert len(equilibria) == 20
    worst = 0.0
    for eq in equilibria:
        m = eq.model()
        x, y = eq.x(), eq.y()
        P = m.partials(x, y)
        pairs = [
            (P.fx, fd_jacobian(lambda z: m.f(z, y), x)),
            (P.fy, fd_jacobian(lambda z: m.f(x, z), y)),
            (P.gx, fd_jacobian(lambda z: m.g(z, y), x)),
            (P.gy, fd_jacobian(lambda z: m.g(x, z), y)),
        ]
        for an, fd in pairs:
            worst = max(worst, np.max(np.abs(an - fd)) / max(1.0, np.max(np.abs(an))))
    assert worst < 1e-6


def test_load_rows_do_not_see_machine_states(equilibria):
    for eq in equilibria:
        assert np.all(assemble_blocks(None, eq).f_l_xg == 0)


def test_hand_elimination():
    b = DaeBlocks(
        np.array([[-1.0]]), np.zeros((1, 0)), np.array([[1.0]]),
        np.zeros((0, 1)), np.zeros((0, 0)), np.zeros((0, 1)),
        np.array([[1.0]]), np.zeros((1, 0)), np.array([[-2.0]]),
    )
    assert reduce(b).matrix[0, 0] == pytest.approx(-0.5)


def test_no_coupling_gives_state_partials(rng):
    b = _random_blocks(rng, 2, 2, 3)
    b.g_xg[:] = 0
    b.g_xl[:] = 0
    assert np.array_equal(reduce(b).matrix, b.fx())


def test_near_singular_algebraic(rng):
    b = _random_blocks(rng, 2, 2, 3)
    b.g_y[:] = 0
    with pytest.raises(NearSingularAlgebraic):
        reduce(b)


@pytest.mark.parametrize("seed", range(3))
def test_pencil_oracle_random(seed):
    rng = np.random.default_rng(seed)
    b = _random_blocks(rng, 2 + seed, 2 * (seed + 1), 3 + seed)
    tau = TauAssignment(tuple(np.exp(rng.uniform(-2, 2, b.n_L))))
    _match(np.linalg.eigvals(build_a(reduce(b), tau)), _pencil_eigs(b, tau), 1e-8)


def test_pencil_oracle_embedded(two_bus, wscc, wscc_cal):
    for eq, tau in (
        (solve_powerflow(two_bus, TWO_BUS_SC, 2.6), TauAssignment.uniform(1, 1 / 7.35)),
        (solve_powerflow(wscc, WSCC_CORR, 1.5, calibration=wscc_cal), TauAssignment.from_pairs([0.3, 2.0, 5.0])),
    ):
        b = assemble_blocks(None, eq)
        _match(np.linalg.eigvals(build_a(reduce(b), tau)), _pencil_eigs(b, tau), 1e-8)


def test_build_a_examples():
    J = ReducedJacobian.from_matrix([[-1.0, 0.0], [0.0, -2.0]], 1)
    assert np.array_equal(build_a(J, TauAssignment((2.0,))), np.array([[-1.0, 0.0], [0.0, -1.0]]))
    assert np.array_equal(build_a(J, TauAssignment((1.0,))), J.matrix)
    with pytest.raises(ValueError, match="dimension"):
        build_a(J, TauAssignment((1.0, 1.0)))


def test_tau_must_be_positive():
    with pytest.raises(ValueError):
        TauAssignment((1.0, 0.0))
    with pytest.raises(ValueError):
        TauAssignment((1.0, float("inf")))


@settings(max_examples=50)
@given(
    st.lists(st.floats(0.01, 100), min_size=4, max_size=4),
    st.lists(st.floats(0.01, 100), min_size=4, max_size=4),
)
def test_row_scaling_law(t, d):
    rng = np.random.default_rng(0)
    J = ReducedJacobian.from_matrix(rng.standard_normal((6, 6)), 2)
    tau = TauAssignment(tuple(t))
    D = np.array(d)
    lhs = build_a(J, TauAssignment(tuple(D * t)))
    rhs = np.diag(np.concatenate([np.ones(2), 1 / D])) @ build_a(J, tau)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_doubling_tau_halves_load_rows(rng):
    J = ReducedJacobian.from_matrix(rng.standard_normal((5, 5)), 3)
    a1 = build_a(J, TauAssignment((0.7, 1.3)))
    a2 = build_a(J, TauAssignment((1.4, 2.6)))
    assert np.array_equal(a2[:3], a1[:3])
    assert np.allclose(a2[3:], 0.5 * a1[3:], rtol=1e-15)


def test_j_independent_of_case_taus(wscc, wscc_cal):
    eq = solve_powerflow(wscc, WSCC_CORR, 1.2, calibration=wscc_cal)
    j0 = linearize(None, eq).matrix
    for taus in ([(1.0, 1.0)] * 3, [(0.1, 5.0), (2.0, 2.0), (9.0, 0.3)]):
        c = eq.case.with_taus(taus)
        assert np.array_equal(linearize(c, eq).matrix, j0)


def test_j_singular_at_fold(wscc_corr_nose):
    """With frozen exciter references the reduced Jacobian loses rank at the fold."""
    for nose in (wscc_corr_nose,):
        s0 = np.linalg.svd(linearize(None, nose.points[0].equilibrium).matrix, compute_uv=False)[-1]
        s1 = np.linalg.svd(linearize(None, nose.points[-1].equilibrium).matrix, compute_uv=False)[-1]
        assert s1 < 1e-2 * s0


def test_retune_keeps_equilibrium(wscc, wscc_cal):
    eq = solve_powerflow(wscc, WSCC_CORR, 1.5, calibration=wscc_cal)
    for k in (5.0, 50.0):
        e = retune_exciter_gain(eq, k)
        assert np.max(np.abs(e.model().f(e.x(), e.y()))) < 1e-9
        assert all(g.K_exc == k for g in e.case.generators)
