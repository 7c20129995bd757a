"""Operating points: Newton power flow, dynamic-state initialization and nose tracing.

Two exciter conventions are supported, selected per case by
``NetworkCase.exciter_reference``:

* ``"regulated"``  generator terminal voltages stay at their setpoints, and the
  exciter references ``E_r`` are re-derived at every operating point;
* ``"calibrated"`` ``E_r`` is solved once at a base operating point and then
  frozen, so terminal voltages drift as the loading changes.

Both are expressed through one extended equilibrium system in the unknowns
``z = [E', Efd (interleaved), y, (E_r if regulated)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from robstab.dae import DaeModel
from robstab.errors import CaseError, NoConvergence, SingularJacobian
from robstab.netmodel import BusKind, DynamicLoad, NetworkCase, contingency_case

TOL_PF = 1e-10
MAX_ITER = 50


# ---------------------------------------------------------------------------
# loading scenarios


def q_over_p(pf: float, lagging: bool = True) -> float:
    if not (0.0 < pf <= 1.0):
        raise ValueError("power factor must lie in (0, 1]")
    t = math.tan(math.acos(pf))
    return t if lagging else -t


@dataclass(frozen=True)
class BaseLoading:
    """The case exactly as stored; the load level is ignored."""

    def apply(self, case: NetworkCase, lam: float) -> NetworkCase:
        return case

    def reference_bus(self, case):
        return case.loads[-1].bus


@dataclass(frozen=True)
class SingleBus:
    """Load at ``bus`` set to ``P = lam`` at constant power factor; others at base."""

    bus: int
    pf: float = 1.0
    lagging: bool = True

    def apply(self, case: NetworkCase, lam: float) -> NetworkCase:
        if lam < 0:
            raise ValueError("load level must be non-negative")
        k = case.load_at(self.bus)
        loads = list(case.loads)
        loads[k] = replace(loads[k], p0=lam, q0=lam * q_over_p(self.pf, self.lagging))
        return case.with_loads(loads)

    def reference_bus(self, case):
        return self.bus


@dataclass(frozen=True)
class Correlated:
    """``P_ref = lam`` and every other load ``P_i = k_c * lam``, all at one power factor."""

    ref_bus: int
    k_c: float = 1.0
    pf: float = 0.9
    lagging: bool = True

    def apply(self, case: NetworkCase, lam: float) -> NetworkCase:
        if lam < 0:
            raise ValueError("load level must be non-negative")
        case.load_at(self.ref_bus)
        r = q_over_p(self.pf, self.lagging)
        loads = []
        for ld in case.loads:
            p = lam if ld.bus == self.ref_bus else self.k_c * lam
            loads.append(replace(ld, p0=p, q0=p * r))
        return case.with_loads(loads)

    def reference_bus(self, case):
        return self.ref_bus


@dataclass(frozen=True)
class GlobalScale:
    """All base loads multiplied by ``lam``.

    With ``dispatch="equal"`` the added demand is shared equally by all
    machines (the slack machine additionally covers losses); with
    ``dispatch="slack"`` the slack machine takes all of it.
    """

    dispatch: str = "equal"
    ref_bus: int | None = None

    def apply(self, case: NetworkCase, lam: float) -> NetworkCase:
        if lam < 0:
            raise ValueError("load level must be non-negative")
        if self.dispatch not in ("equal", "slack"):
            raise ValueError("dispatch must be 'equal' or 'slack'")
        loads = [replace(ld, p0=ld.p0 * lam, q0=ld.q0 * lam) for ld in case.loads]
        out = case.with_loads(loads)
        if self.dispatch == "equal":
            dp = (lam - 1.0) * sum(ld.p0 for ld in case.loads) / len(case.generators)
            sg = case.slack_generator
            gens = [g if j == sg else replace(g, p_set=g.p_set + dp) for j, g in enumerate(case.generators)]
            out = out.with_generators(gens)
        return out

    def reference_bus(self, case):
        return self.ref_bus if self.ref_bus is not None else case.loads[-1].bus


LoadingScenario = BaseLoading | SingleBus | Correlated | GlobalScale


# ---------------------------------------------------------------------------
# result types


@dataclass
class Equilibrium:
    case: NetworkCase  # case with the scenario applied
    v: np.ndarray
    theta: np.ndarray
    e_prime: np.ndarray
    delta_prime: np.ndarray
    e_fd: np.ndarray
    g: np.ndarray
    b: np.ndarray
    e_r: np.ndarray
    p_m: np.ndarray
    scenario: object = None
    lam: float | None = None
    residual: float = 0.0

    def model(self) -> DaeModel:
        return DaeModel(self.case, self.e_r, self.p_m)

    def x(self) -> np.ndarray:
        return self.model().pack_x(self.e_prime, self.e_fd, self.g, self.b)

    def y(self) -> np.ndarray:
        return self.model().pack_y(self.v, self.theta, self.delta_prime)

    def voltage(self, bus_id: int) -> float:
        return float(self.v[self.case.bus_index()[bus_id]])


@dataclass
class Calibration:
    e_r: np.ndarray
    base: Equilibrium


@dataclass
class NosePoint:
    lam: float
    v_monitored: float
    equilibrium: Equilibrium


@dataclass
class NoseCurve:
    points: list[NosePoint]
    snb_lambda: float
    monitored_bus: int
    snb_bracket: tuple[float, float] = (math.nan, math.nan)

    @property
    def lambdas(self):
        return np.array([p.lam for p in self.points])

    @property
    def voltages(self):
        return np.array([p.v_monitored for p in self.points])


# ---------------------------------------------------------------------------
# classic PV power flow


def _newton(residual, jacobian, z0, tol=TOL_PF, max_iter=MAX_ITER, what="power flow"):
    z = np.array(z0, dtype=float)
    r = residual(z)
    nr = np.max(np.abs(r))
    for it in range(max_iter):
        if nr < tol:
            return z, nr, it
        J = jacobian(z)
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"{what}: singular Jacobian") from exc
        if not np.all(np.isfinite(dz)):
            raise SingularJacobian(f"{what}: singular Jacobian")
        t = 1.0
        while True:
            zn = z + t * dz
            rn = residual(zn)
            nrn = np.max(np.abs(rn)) if np.all(np.isfinite(rn)) else np.inf
            if nrn < nr or t < 1e-3:
                break
            t *= 0.5
        z, r, nr = zn, rn, nrn
    if nr < tol:
        return z, nr, max_iter
    raise NoConvergence(f"{what}: no convergence after {max_iter} iterations", nr, max_iter)


def solve_network(case: NetworkCase, v0=None, theta0=None, tol=TOL_PF, max_iter=MAX_ITER):
    """Standard polar Newton power flow with PV and slack buses.

    Returns ``(v, theta, s_gen)`` where ``s_gen`` is the complex injection of
    each generator.
    """
    idx = case.bus_index()
    nb = case.n_bus
    kinds = [b.kind for b in case.buses]
    slack = idx[case.slack_bus.id]
    pv = [i for i in range(nb) if kinds[i] is BusKind.PV]
    pq = [i for i in range(nb) if kinds[i] is BusKind.PQ]
    ns = [i for i in range(nb) if i != slack]
    Y = case.ybus()
    vset = np.ones(nb)
    for b in case.buses:
        if b.v_setpoint is not None and b.kind is not BusKind.PQ:
            vset[idx[b.id]] = b.v_setpoint
    p_sched = np.zeros(nb)
    for g in case.generators:
        p_sched[idx[g.bus]] += g.p_set
    lb = np.array([idx[ld.bus] for ld in case.loads], dtype=int)
    p0 = np.array([ld.p0 for ld in case.loads])
    q0 = np.array([ld.q0 for ld in case.loads])
    ea = np.array([ld.exp_a for ld in case.loads])
    eb = np.array([ld.exp_b for ld in case.loads])

    def unpack(z):
        th = np.zeros(nb)
        v = vset.copy()
        th[ns] = z[: len(ns)]
        v[pq] = z[len(ns) :]
        return v, th

    def mismatch(z):
        v, th = unpack(z)
        vc = v * np.exp(1j * th)
        s = vc * np.conj(Y @ vc)
        vl = v[lb]
        P = p_sched.copy()
        Q = np.zeros(nb)
        np.add.at(P, lb, -p0 * vl**ea)
        np.add.at(Q, lb, -q0 * vl**eb)
        return np.concatenate([(s.real - P)[ns], (s.imag - Q)[pq]])

    def jac(z):
        v, th = unpack(z)
        vc = v * np.exp(1j * th)
        ib = Y @ vc
        vn = np.exp(1j * th)
        dth = 1j * np.diag(vc) @ np.conj(np.diag(ib) - Y @ np.diag(vc))
        dv = np.diag(vc) @ np.conj(Y @ np.diag(vn)) + np.diag(np.conj(ib) * vn)
        dv = dv.copy()
        vl = v[lb]
        dpl = np.where(ea == 0, 0.0, ea * p0 * vl ** (ea - 1))
        dql = np.where(eb == 0, 0.0, eb * q0 * vl ** (eb - 1))
        for k, i in enumerate(lb):
            dv[i, i] += dpl[k] + 1j * dql[k]
        top = np.hstack([dth.real[np.ix_(ns, ns)], dv.real[np.ix_(ns, pq)]])
        bot = np.hstack([dth.imag[np.ix_(pq, ns)], dv.imag[np.ix_(pq, pq)]])
        return np.vstack([top, bot])

    z0 = np.zeros(len(ns) + len(pq))
    z0[len(ns) :] = 1.0
    if theta0 is not None:
        z0[: len(ns)] = np.asarray(theta0)[ns]
    if v0 is not None:
        z0[len(ns) :] = np.asarray(v0)[pq]
    z, _, _ = _newton(mismatch, jac, z0, tol, max_iter)
    v, th = unpack(z)
    th = th - th[slack] + case.slack_bus.angle_ref
    vc = v * np.exp(1j * th)
    s = vc * np.conj(Y @ vc)
    vl = v[lb]
    sl = np.zeros(nb, dtype=complex)
    np.add.at(sl, lb, p0 * vl**ea + 1j * q0 * vl**eb)
    s_bus = s + sl
    s_gen = np.array([s_bus[idx[g.bus]] for g in case.generators])
    return v, th, s_gen


def init_dynamic_states(case: NetworkCase, v, theta, s_gen, scenario=None, lam=None) -> Equilibrium:
    """Back-solve machine and load states from a converged power flow."""
    idx = case.bus_index()
    ng = len(case.generators)
    ep = np.empty(ng)
    dp = np.empty(ng)
    efd = np.empty(ng)
    er = np.empty(ng)
    for j, gen in enumerate(case.generators):
        k = idx[gen.bus]
        vt = v[k] * np.exp(1j * theta[k])
        if abs(vt) <= 0:
            raise CaseError(f"generator at bus {gen.bus}: zero terminal voltage")
        cur = np.conj(s_gen[j] / vt)
        e = vt + 1j * gen.x_dp * cur
        ep[j] = abs(e)
        dp[j] = np.angle(e)
        efd[j] = gen.x_d / gen.x_dp * ep[j] - (gen.x_d - gen.x_dp) / gen.x_dp * v[k] * np.cos(theta[k] - dp[j])
        er[j] = v[k] + efd[j] / gen.K_exc
    p_m = np.real(s_gen).astype(float)
    lb = np.array([idx[ld.bus] for ld in case.loads], dtype=int)
    vl = v[lb]
    g = np.array([ld.p_static(x) for ld, x in zip(case.loads, vl)]) / vl**2
    b = np.array([ld.q_static(x) for ld, x in zip(case.loads, vl)]) / vl**2
    eq = Equilibrium(case, np.array(v, float), np.array(theta, float), ep, dp, efd, g, b, er, p_m, scenario, lam)
    eq.residual = equilibrium_residual(eq)
    return eq


def equilibrium_residual(eq: Equilibrium) -> float:
    m = eq.model()
    x, y = eq.x(), eq.y()
    return float(max(np.max(np.abs(m.f(x, y))), np.max(np.abs(m.g(x, y)))))


# ---------------------------------------------------------------------------
# extended equilibrium system


class EquilibriumSystem:
    """Residual and Jacobian of the steady-state equations for one applied case."""

    def __init__(self, case: NetworkCase, e_r=None, regulated: bool = False, p_m=None):
        self.case = case
        self.regulated = regulated
        if p_m is None:
            p_m = np.array([g.p_set for g in case.generators], dtype=float)
        er = np.zeros(len(case.generators)) if e_r is None else np.asarray(e_r, float)
        self.model = DaeModel(case, er, p_m)
        m = self.model
        idx = case.bus_index()
        self.vset = np.array([case.buses[idx[g.bus]].v_setpoint for g in case.generators], dtype=float)
        self.n = 2 * m.ng + m.ny + (m.ng if regulated else 0)

    def split(self, z):
        m = self.model
        xg = z[: 2 * m.ng]
        y = z[2 * m.ng : 2 * m.ng + m.ny]
        er = z[2 * m.ng + m.ny :] if self.regulated else m.e_r
        return xg, y, er

    def full_x(self, xg, y):
        m = self.model
        v = y[: m.nb]
        g, b = m.load_states(v)
        x = np.empty(m.nx)
        x[: 2 * m.ng] = xg
        x[2 * m.ng :: 2] = g
        x[2 * m.ng + 1 :: 2] = b
        return x

    def residual(self, z):
        m = self.model
        xg, y, er = self.split(z)
        if self.regulated:
            m.e_r = np.asarray(er, float)
        x = self.full_x(xg, y)
        parts = [m.f(x, y)[: 2 * m.ng], m.g(x, y)]
        if self.regulated:
            parts.append(y[m.gbus] - self.vset)
        return np.concatenate(parts)

    def jacobian(self, z):
        m = self.model
        xg, y, er = self.split(z)
        if self.regulated:
            m.e_r = np.asarray(er, float)
        x = self.full_x(xg, y)
        P = m.partials(x, y)
        n2 = 2 * m.ng
        dg, db = m.load_state_derivs(y[: m.nb])
        dxl = np.zeros((2 * m.nl, m.ny))
        for l in range(m.nl):
            dxl[2 * l, m.lbus[l]] = dg[l]
            dxl[2 * l + 1, m.lbus[l]] = db[l]
        J = np.zeros((self.n, self.n))
        J[:n2, :n2] = P.fx[:n2, :n2]
        J[:n2, n2 : n2 + m.ny] = P.fy[:n2] + P.fx[:n2, n2:] @ dxl
        J[n2 : n2 + m.n_alg, :n2] = P.gx[:, :n2]
        J[n2 : n2 + m.n_alg, n2 : n2 + m.ny] = P.gy + P.gx[:, n2:] @ dxl
        if self.regulated:
            r0 = n2 + m.n_alg
            for j in range(m.ng):
                J[2 * j + 1, n2 + m.ny + j] = m.kexc[j] / m.texc[j]
                J[r0 + j, n2 + m.gbus[j]] = 1.0
        return J

    def pack(self, eq: Equilibrium):
        m = self.model
        xg = np.empty(2 * m.ng)
        xg[0::2] = eq.e_prime
        xg[1::2] = eq.e_fd
        parts = [xg, m.pack_y(eq.v, eq.theta, eq.delta_prime)]
        if self.regulated:
            parts.append(eq.e_r)
        return np.concatenate(parts)

    def unpack(self, z, scenario=None, lam=None) -> Equilibrium:
        m = self.model
        xg, y, er = self.split(z)
        v, th, dp = m.split_y(y)
        g, b = m.load_states(v)
        p_m = m.p_m.copy()
        pg, _ = m.gen_injection(xg[0::2], v, th, dp)
        p_m[m.slack_gen] = pg[m.slack_gen]
        eq = Equilibrium(
            self.case, v.copy(), th.copy(), xg[0::2].copy(), dp.copy(), xg[1::2].copy(),
            g, b, np.array(er, float).copy(), p_m, scenario, lam,
        )
        eq.residual = float(np.max(np.abs(self.residual(z))))
        return eq


def _mode(case):
    return case.exciter_reference == "regulated"


def calibrate(case: NetworkCase, scenario=None, lam=None) -> Calibration:
    """Solve the PV power flow at a base loading and back-solve the exciter references.

    Machines that carry an explicit ``E_r`` in the case keep it; the base
    operating point is then re-solved with those references frozen.
    """
    applied = case if scenario is None else scenario.apply(case, lam)
    v, th, sg = solve_network(applied)
    base = init_dynamic_states(applied, v, th, sg, scenario, lam)
    fixed = [g.E_r for g in case.generators]
    if any(e is not None for e in fixed):
        er = np.array([base.e_r[j] if e is None else e for j, e in enumerate(fixed)])
        sys_ = EquilibriumSystem(applied, er, regulated=False)
        z, _, _ = _newton(sys_.residual, sys_.jacobian, sys_.pack(base), what="calibration")
        base = sys_.unpack(z, scenario, lam)
    return Calibration(base.e_r.copy(), base)


def _blend(a: NetworkCase, b: NetworkCase, t: float) -> NetworkCase:
    loads = [
        replace(la, p0=(1 - t) * la.p0 + t * lb_.p0, q0=(1 - t) * la.q0 + t * lb_.q0)
        for la, lb_ in zip(a.loads, b.loads)
    ]
    gens = [replace(ga, p_set=(1 - t) * ga.p_set + t * gb.p_set) for ga, gb in zip(a.generators, b.generators)]
    return b.with_loads(loads).with_generators(gens)


def solve_powerflow(
    case: NetworkCase,
    scenario=None,
    lam: float | None = None,
    warm_start: Equilibrium | None = None,
    calibration: Calibration | None = None,
    tol: float = TOL_PF,
    max_iter: int = MAX_ITER,
) -> Equilibrium:
    """Equilibrium of the full model at load level ``lam`` of ``scenario``.

    ``warm_start`` selects the branch; without it the upper branch is reached
    from a flat start (regulated cases) or by load homotopy from the
    calibration point (calibrated cases).
    """
    scenario = BaseLoading() if scenario is None else scenario
    applied = scenario.apply(case, lam)
    regulated = _mode(case)
    if regulated:
        sys_ = EquilibriumSystem(applied, regulated=True)
        if warm_start is None:
            v, th, sg = solve_network(applied, tol=tol, max_iter=max_iter)
            eq = init_dynamic_states(applied, v, th, sg, scenario, lam)
            z0 = sys_.pack(eq)
        else:
            z0 = sys_.pack(warm_start)
        z, _, _ = _newton(sys_.residual, sys_.jacobian, z0, tol, max_iter, "equilibrium")
        return sys_.unpack(z, scenario, lam)

    cal = calibration if calibration is not None else calibrate(case)
    sys_ = EquilibriumSystem(applied, cal.e_r, regulated=False)
    start = warm_start if warm_start is not None else cal.base
    try:
        z, _, _ = _newton(sys_.residual, sys_.jacobian, sys_.pack(start), tol, max_iter, "equilibrium")
        return sys_.unpack(z, scenario, lam)
    except (NoConvergence, SingularJacobian):
        if warm_start is not None:
            raise
    # load homotopy from the calibration point
    base_case = cal.base.case
    t, h = 0.0, 0.25
    z = sys_.pack(cal.base)
    while t < 1.0:
        tn = min(1.0, t + h)
        s_t = EquilibriumSystem(_blend(base_case, applied, tn), cal.e_r, regulated=False)
        try:
            zn, _, _ = _newton(s_t.residual, s_t.jacobian, z, tol, max_iter, "equilibrium")
            t, z = tn, zn
            h = min(0.5, 1.5 * h)
        except (NoConvergence, SingularJacobian):
            h *= 0.5
            if h < 1e-4:
                raise NoConvergence(f"equilibrium: homotopy stalled at t={t:.4g}", math.nan, max_iter)
    return sys_.unpack(z, scenario, lam)


# ---------------------------------------------------------------------------
# continuation


def _system_at(case, scenario, lam, cal):
    applied = scenario.apply(case, lam)
    if _mode(case):
        return EquilibriumSystem(applied, regulated=True)
    return EquilibriumSystem(applied, cal.e_r, regulated=False)


def trace_nose(
    case: NetworkCase,
    scenario,
    lam_start: float = 0.0,
    step: float = 0.1,
    calibration: Calibration | None = None,
    monitored_bus: int | None = None,
    min_step: float = 1e-5,
    max_points: int = 2000,
    lam_max: float | None = None,
) -> NoseCurve:
    """Pseudo-arclength continuation of the upper branch up to the fold.

    The fold is located by the sign change of ``d lam / ds`` along the branch
    and refined by step halving; ``snb_lambda`` is the largest load level
    reached on either side of the turning point.
    """
    cal = None if _mode(case) else (calibration if calibration is not None else calibrate(case))
    mon = scenario.reference_bus(case) if monitored_bus is None else monitored_bus
    eq0 = solve_powerflow(case, scenario, lam_start, calibration=cal)
    sys0 = _system_at(case, scenario, lam_start, cal)
    z = sys0.pack(eq0)
    n = z.size

    def R(w):
        s = _system_at(case, scenario, w[-1], cal)
        return s.residual(w[:-1])

    def dR(w):
        lam = w[-1]
        s = _system_at(case, scenario, lam, cal)
        Jz = s.jacobian(w[:-1])
        h = 1e-6 * max(1.0, abs(lam))
        rp = _system_at(case, scenario, lam + h, cal).residual(w[:-1])
        if lam - h >= 0:
            rm = _system_at(case, scenario, lam - h, cal).residual(w[:-1])
            jl = (rp - rm) / (2 * h)
        else:
            jl = (rp - s.residual(w[:-1])) / h
        return np.hstack([Jz, jl[:, None]])

    def tangent(w, prev):
        M = dR(w)
        A = np.vstack([M, prev[None, :]])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        t = np.linalg.solve(A, rhs)
        return t / np.linalg.norm(t)

    def correct(wp, t):
        def res(w):
            return np.concatenate([R(w), [t @ (w - wp)]])

        def jac(w):
            return np.vstack([dR(w), t[None, :]])

        w, _, it = _newton(res, jac, wp, TOL_PF, 15, "continuation")
        return w, it

    w = np.concatenate([z, [lam_start]])
    prev = np.zeros(n + 1)
    prev[-1] = 1.0
    t = tangent(w, prev)
    points = [NosePoint(lam_start, eq0.voltage(mon), eq0)]
    h = step
    hmax = step
    overshoot = None
    while len(points) < max_points:
        wp = w + h * t
        try:
            wn, it = correct(wp, t)
            tn = tangent(wn, t)
        except (NoConvergence, SingularJacobian, np.linalg.LinAlgError):
            h *= 0.5
            if h < min_step:
                break
            continue
        if tn[-1] <= 0 or wn[-1] < w[-1]:
            # passed the turning point: shrink and retry from the last upper point
            overshoot = wn[-1]
            h *= 0.5
            if h < min_step:
                break
            continue
        w, t = wn, tn
        s_n = _system_at(case, scenario, w[-1], cal)
        eq = s_n.unpack(w[:-1], scenario, float(w[-1]))
        points.append(NosePoint(float(w[-1]), eq.voltage(mon), eq))
        if lam_max is not None and w[-1] >= lam_max:
            break
        if it <= 3:
            h = min(hmax, 1.5 * h)
    lam_last = points[-1].lam
    snb = max(lam_last, overshoot) if overshoot is not None else lam_last
    bracket = (lam_last, snb)
    return NoseCurve(points, float(snb), mon, bracket)


# ---------------------------------------------------------------------------
# contingencies


def transfer_equilibrium(eq: Equilibrium, post: NetworkCase) -> Equilibrium:
    """Re-index the states of ``eq`` onto a post-event case.

    Machines missing from ``post`` are dropped and angles are shifted to the
    new reference bus.  The result is generally not an equilibrium of ``post``.
    """
    idx = eq.case.bus_index()
    keep_b = [idx[b.id] for b in post.buses]
    gpos = {g.bus: j for j, g in enumerate(eq.case.generators)}
    keep_g = [gpos[g.bus] for g in post.generators]
    shift = eq.theta[idx[post.slack_bus.id]]
    post = post.with_loads(eq.case.loads)
    return Equilibrium(
        post,
        eq.v[keep_b].copy(),
        eq.theta[keep_b] - shift,
        eq.e_prime[keep_g].copy(),
        eq.delta_prime[keep_g] - shift,
        eq.e_fd[keep_g].copy(),
        eq.g.copy(),
        eq.b.copy(),
        eq.e_r[keep_g].copy(),
        eq.p_m[keep_g].copy(),
        eq.scenario,
        eq.lam,
        math.nan,
    )


def solve_contingency(case: NetworkCase, eq: Equilibrium, trip: tuple[int, int]) -> Equilibrium:
    """Post-trip equilibrium reached from ``eq`` with the exciter references held.

    Raises :class:`CaseError` for trips that island loads and
    :class:`NoConvergence` / :class:`SingularJacobian` when no nearby
    equilibrium exists.
    """
    post, _ = contingency_case(case, *trip)
    start = transfer_equilibrium(eq, post)
    post = start.case
    if _mode(case):
        sys_ = EquilibriumSystem(post, regulated=True)
    else:
        sys_ = EquilibriumSystem(post, start.e_r, regulated=False)
    z, _, _ = _newton(sys_.residual, sys_.jacobian, sys_.pack(start), what="post-contingency equilibrium")
    return sys_.unpack(z, eq.scenario, eq.lam)


__all__ = [
    "BaseLoading",
    "SingleBus",
    "Correlated",
    "GlobalScale",
    "Equilibrium",
    "Calibration",
    "NoseCurve",
    "NosePoint",
    "EquilibriumSystem",
    "solve_network",
    "init_dynamic_states",
    "calibrate",
    "solve_powerflow",
    "trace_nose",
    "transfer_equilibrium",
    "solve_contingency",
]
