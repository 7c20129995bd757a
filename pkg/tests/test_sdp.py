import cvxpy as cp
import numpy as np
import pytest

from robstab.linmodel import ReducedJacobian
from robstab.sdp import Block, solve_sdp
from robstab.sdpcert import solve_certificate


def _cvx_rho(A, n_g):
    n = A.shape[0]
    Qg = cp.Variable((n_g, n_g), symmetric=True)
    ql = cp.Variable(n - n_g)
    rho = cp.Variable()
    Q = cp.bmat([[Qg, np.zeros((n_g, n - n_g))], [np.zeros((n - n_g, n_g)), cp.diag(ql)]])
    L = Q @ A + A.T @ Q
    cons = [0.5 * (L + L.T) + rho * np.eye(n) << 0, Qg >> 0, ql >= 0, cp.trace(Q) == 1]
    cp.Problem(cp.Maximize(rho), cons).solve(solver=cp.CLARABEL)
    return float(rho.value)


def test_min_eigenvalue_sdp(rng):
    # min <C, X> s.t. tr X = 1, X >= 0  has value lambda_min(C)
    for n in (2, 4, 7):
        M = rng.standard_normal((n, n))
        C = M + M.T
        res = solve_sdp([Block("s", C, np.eye(n)[None])], np.array([1.0]))
        assert res.converged
        assert res.primal_obj == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-7)
        assert res.dual_obj == pytest.approx(np.linalg.eigvalsh(C)[0], abs=1e-7)


def test_lp_block():
    # min c'x s.t. sum x = 1, x >= 0
    c = np.array([3.0, 1.0, 2.0])
    res = solve_sdp([Block("l", c, np.ones((1, 3)))], np.array([1.0]))
    assert res.converged
    assert res.primal_obj == pytest.approx(1.0, abs=1e-8)
    assert res.X[0][1] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("seed", range(8))
def test_certificate_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    n_g = int(rng.integers(1, 4))
    n_l = int(rng.integers(1, 4))
    n = n_g + n_l
    A = rng.standard_normal((n, n)) - rng.uniform(0.0, 3.0) * np.eye(n)
    cert = solve_certificate(ReducedJacobian.from_matrix(A, n_g))
    ref = _cvx_rho(A, n_g)
    assert cert.rho == pytest.approx(ref, abs=1e-5 * max(1.0, abs(ref)))
    if abs(ref) > 1e-4:
        assert (cert.status == "RS") == (ref > 0)
