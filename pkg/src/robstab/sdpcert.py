"""Robust-stability certificate: block-diagonal Lyapunov SDP and boundary search.

For ``A = blockdiag(I, T^{-1}) J`` the certificate is a matrix
``Q = blockdiag(Q_G, diag(q_L))`` with trace one maximizing ``rho`` subject to
``Q A + A' Q + rho I <= 0``.  A positive ``rho`` proves that ``A`` stays
Hurwitz for every positive diagonal ``T``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from robstab.errors import CertificateViolation, NearSingularAlgebraic, SolverFailure
from robstab.linmodel import ReducedJacobian, TauAssignment, build_a, linearize, retune_exciter_gain
from robstab.sdp import Block, solve_sdp

RHO_TOL = 1e-8
GAP_TOL = 1e-7

RS = "RS"
NRS = "NRS"
FAILED = "SolverFailure"


@dataclass
class Certificate:
    rho: float
    q_g: np.ndarray
    q_l: np.ndarray
    residuals: dict
    status: str
    tau: tuple = ()
    gap: float = math.nan
    iterations: int = 0

    @property
    def Q(self) -> np.ndarray:
        nG, nL = self.q_g.shape[0], self.q_l.size
        Q = np.zeros((nG + nL, nG + nL))
        Q[:nG, :nG] = self.q_g
        Q[nG:, nG:] = np.diag(self.q_l)
        return Q

    def to_dict(self, with_q: bool = False) -> dict:
        out = {
            "status": self.status,
            "rho": self.rho,
            "residuals": dict(self.residuals),
            "duality_gap": self.gap,
            "iterations": self.iterations,
        }
        if with_q:
            out["q_g"] = self.q_g.tolist()
            out["q_l"] = self.q_l.tolist()
        return out


@dataclass
class RobustBoundary:
    s_lambda: float
    snb_lambda: float
    margin_pct: float
    s_bracket: tuple = (math.nan, math.nan)
    samples: list = field(default_factory=list)  # (lambda, status, rho)

    @classmethod
    def make(cls, s, snb, bracket=(math.nan, math.nan), samples=()):
        return cls(float(s), float(snb), margin_pct(s, snb), tuple(bracket), list(samples))


def margin_pct(s, snb):
    return 100.0 * (snb - s) / snb


# ---------------------------------------------------------------------------
# SDP assembly


def _sym_basis(n):
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = 1.0
            E[j, i] = 1.0
            basis.append(E)
    return basis


def _build_problem(A: np.ndarray, n_G: int):
    """Dual-form data for max rho over (rho, Q_G upper triangle, q_1..q_{nL-1}).

    ``q_nL`` is eliminated through ``tr Q = 1``.
    """
    n = A.shape[0]
    n_L = n - n_G
    if n_L < 1:
        raise ValueError("at least one load state is required")
    last = n - 1
    El = np.zeros((n, n))
    El[last, last] = 1.0

    mats_q = []  # B_i, the direction in Q of each variable
    lp_rows = []  # matching change in the q_L vector
    g_basis = _sym_basis(n_G)
    for E in g_basis:
        B = np.zeros((n, n))
        B[:n_G, :n_G] = E
        B[last, last] -= np.trace(E)
        mats_q.append(B)
        v = np.zeros(n_L)
        v[-1] = -np.trace(E)
        lp_rows.append(v)
    for k in range(n_L - 1):
        B = np.zeros((n, n))
        B[n_G + k, n_G + k] = 1.0
        B[last, last] = -1.0
        mats_q.append(B)
        v = np.zeros(n_L)
        v[k] = 1.0
        v[-1] = -1.0
        lp_rows.append(v)
    m = 1 + len(mats_q)

    # block 1: Z1 = -(Q A + A' Q) - rho I
    A1 = np.empty((m, n, n))
    A1[0] = np.eye(n)
    for i, B in enumerate(mats_q):
        A1[i + 1] = B @ A + A.T @ B
    C1 = -(El @ A + A.T @ El)
    blocks = [Block("s", C1, A1)]
    # block 2: Z2 = Q_G
    if n_G > 0:
        A2 = np.zeros((m, n_G, n_G))
        for i, E in enumerate(g_basis):
            A2[i + 1] = -E
        blocks.append(Block("s", np.zeros((n_G, n_G)), A2))
    # block 3: z3 = q_L
    A3 = np.zeros((m, n_L))
    for i, v in enumerate(lp_rows):
        A3[i + 1] = -v
    C3 = np.zeros(n_L)
    C3[-1] = 1.0
    blocks.append(Block("l", C3, A3))
    b = np.zeros(m)
    b[0] = 1.0

    def q_of(y):
        Q = El.copy()
        for yi, B in zip(y[1:], mats_q):
            Q += yi * B
        return _sym(Q)

    return blocks, b, q_of


def _sym(M):
    return 0.5 * (M + M.T)


def lmi_residuals(A: np.ndarray, Q: np.ndarray) -> dict:
    L = _sym(Q @ A + A.T @ Q)
    return {
        "lmi_max_eig": float(np.linalg.eigvalsh(L)[-1]),
        "q_min_eig": float(np.linalg.eigvalsh(_sym(Q))[0]),
        "trace_err": float(abs(np.trace(Q) - 1.0)),
    }


def solve_certificate(j: ReducedJacobian, tau: TauAssignment | None = None, rho_tol: float = RHO_TOL, max_iter: int = 200) -> Certificate:
    """Maximize the worst-case decay margin over block-diagonal Lyapunov matrices."""
    if tau is None:
        tau = TauAssignment((1.0,) * j.n_L)
    A = build_a(j, tau)
    if not np.all(np.isfinite(A)):
        raise ValueError("J must be finite")
    n_G = j.n_G
    scale = max(1.0, float(np.max(np.abs(A))))
    blocks, b, q_of = _build_problem(A / scale, n_G)
    res = solve_sdp(blocks, b, max_iter=max_iter, accept=GAP_TOL)
    Q = q_of(res.y)
    # renormalize so tr(Q) = 1 holds to rounding
    Q = Q / np.trace(Q)
    resid = lmi_residuals(A, Q)
    rho = -resid["lmi_max_eig"]
    ok = res.converged
    if not ok or not np.all(np.isfinite(Q)):
        status = FAILED
    elif rho > rho_tol and resid["q_min_eig"] > 0:
        status = RS
    else:
        status = NRS
    return Certificate(
        rho=float(rho),
        q_g=Q[:n_G, :n_G].copy(),
        q_l=np.diag(Q)[n_G:].copy(),
        residuals=resid,
        status=status,
        tau=tuple(tau.values),
        gap=float(res.gap),
        iterations=res.iterations,
    )


def verify_certificate(j: ReducedJacobian, tau: TauAssignment, cert: Certificate) -> dict:
    """Transfer the certificate to another time-constant matrix and re-check it.

    With ``A = blockdiag(I, T^{-1}) J`` the transferred Lyapunov matrix is
    ``Q~ = Q blockdiag(I, T0^{-1} T)`` where ``T0`` is the matrix the
    certificate was computed for.
    """
    if cert.status != RS:
        raise ValueError("only RS certificates can be verified")
    tau0 = np.array(cert.tau) if cert.tau else np.ones(j.n_L)
    t = np.asarray(tau.values, dtype=float)
    scale = np.concatenate([np.ones(j.n_G), t / tau0])
    Qt = cert.Q * scale[None, :]
    Qt = _sym(Qt)
    A = build_a(j, tau)
    L = _sym(Qt @ A + A.T @ Qt)
    out = {
        "lmi_max_eig": float(np.linalg.eigvalsh(L)[-1]),
        "q_min_eig": float(np.linalg.eigvalsh(Qt)[0]),
    }
    if not (out["lmi_max_eig"] < 0 and out["q_min_eig"] > 0):
        raise CertificateViolation(f"certificate does not transfer to tau={tuple(t)}: {out}")
    return out


# ---------------------------------------------------------------------------
# boundary search


@dataclass
class PointCertificate:
    lam: float
    equilibrium: object
    jacobian: ReducedJacobian | None
    certificate: Certificate | None
    note: str = ""

    @property
    def status(self):
        if self.certificate is None:
            return NRS
        return self.certificate.status


def certify_equilibrium(eq, k_exc: float | None = None) -> PointCertificate:
    e = retune_exciter_gain(eq, k_exc) if k_exc is not None else eq
    try:
        J = linearize(None, e)
    except NearSingularAlgebraic as exc:
        # the network cannot be eliminated here, so nothing can be certified
        return PointCertificate(eq.lam, eq, None, None, note=str(exc))
    return PointCertificate(eq.lam, eq, J, solve_certificate(J))


def find_robust_boundary(
    case,
    scenario,
    nose=None,
    calibration=None,
    lam_start: float = 0.0,
    step: float = 0.1,
    rel_tol: float = 1e-3,
    k_exc: float | None = None,
    jobs: int = 1,
) -> RobustBoundary:
    """Largest certified load level on the upper branch, by scan then bisection."""
    from robstab.powerflow import calibrate, solve_powerflow, trace_nose

    if calibration is None and case.exciter_reference == "calibrated":
        calibration = calibrate(case)
    if nose is None:
        nose = trace_nose(case, scenario, lam_start, step, calibration=calibration)
    pts = nose.points

    def cert_of(p):
        return certify_equilibrium(p.equilibrium, k_exc)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            certs = list(ex.map(cert_of, pts))
    else:
        certs = [cert_of(p) for p in pts]
    samples = [(p.lam, c.status, c.certificate.rho if c.certificate else math.nan) for p, c in zip(pts, certs)]
    for p, c in zip(pts, certs):
        if c.status == FAILED:
            raise SolverFailure(f"SDP failed at lambda={p.lam:.6g}")

    first_bad = next((i for i, c in enumerate(certs) if c.status != RS), None)
    if first_bad is None:
        s = pts[-1].lam
        return RobustBoundary.make(s, nose.snb_lambda, (s, nose.snb_lambda), samples)
    if first_bad == 0:
        return RobustBoundary.make(pts[0].lam, nose.snb_lambda, (pts[0].lam, pts[0].lam), samples)

    lo, hi = pts[first_bad - 1], pts[first_bad]
    lam_lo, lam_hi = lo.lam, hi.lam
    eq_lo = lo.equilibrium
    while lam_hi - lam_lo > rel_tol * max(abs(lam_hi), 1e-3) * 0.5:
        mid = 0.5 * (lam_lo + lam_hi)
        eq = solve_powerflow(case, scenario, mid, warm_start=eq_lo, calibration=calibration)
        c = certify_equilibrium(eq, k_exc)
        if c.status == FAILED:
            raise SolverFailure(f"SDP failed at lambda={mid:.6g}")
        samples.append((mid, c.status, c.certificate.rho if c.certificate else math.nan))
        if c.status == RS:
            lam_lo, eq_lo = mid, eq
        else:
            lam_hi = mid
    samples.sort(key=lambda s: s[0])
    return RobustBoundary.make(lam_lo, nose.snb_lambda, (lam_lo, lam_hi), samples)


__all__ = [
    "Certificate",
    "RobustBoundary",
    "PointCertificate",
    "solve_certificate",
    "verify_certificate",
    "certify_equilibrium",
    "find_robust_boundary",
    "margin_pct",
    "RHO_TOL",
]
