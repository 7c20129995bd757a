"""Trapezoidal integration of the semi-explicit DAE and trace classification.

The differential rows are ``x' = D f(x, y)`` with ``D = 1`` on machine states
and ``1/tau`` on load states; the network equations ``g(x, y) = 0`` are solved
together with each implicit step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from robstab.dae import DaeModel
from robstab.linmodel import TauAssignment
from robstab.netmodel import contingency_case
from robstab.powerflow import transfer_equilibrium

DT_MIN = 1e-5
LTE_TOL = 1e-6
V_COLLAPSE = 0.05
ALG_TOL = 1e-10

STABLE = "Stable"
LIMIT_CYCLE = "LimitCycle"
UNSTABLE = "Unstable"
INCONCLUSIVE = "Inconclusive"


# ---------------------------------------------------------------------------
# perturbations


@dataclass(frozen=True)
class LoadOffset:
    """Multiplicative offset on every load conductance (the default disturbance)."""

    factor: float = 1.01


@dataclass(frozen=True)
class StateOffset:
    dx: tuple


@dataclass(frozen=True)
class BranchTrip:
    from_bus: int
    to_bus: int
    offset: LoadOffset | StateOffset | None = None


DEFAULT_PERTURBATION = LoadOffset()


# ---------------------------------------------------------------------------
# results


@dataclass
class SimTrace:
    t: np.ndarray
    states: np.ndarray  # (n_steps, n_x)
    v_loads: np.ndarray  # (n_steps, n_loads)
    load_buses: tuple
    terminated_early: bool = False
    reason: str = ""
    x_ref: np.ndarray | None = None  # post-event equilibrium when one exists
    t_end: float = math.nan
    max_alg_residual: float = 0.0


@dataclass
class Classification:
    label: str
    reason: str = ""
    metrics: dict = field(default_factory=dict)

    @property
    def collapse(self) -> bool:
        return self.label == UNSTABLE and self.reason == "collapse"


# ---------------------------------------------------------------------------
# integrator


class _Dae:
    def __init__(self, model: DaeModel, tau: np.ndarray):
        self.m = model
        self.nx = model.nx
        self.d = np.concatenate([np.ones(model.n_gen_states), 1.0 / tau])

    def rhs(self, x, y):
        return self.d * self.m.f(x, y)

    def jac(self, x, y):
        P = self.m.partials(x, y)
        return self.d[:, None] * P.fx, self.d[:, None] * P.fy, P.gx, P.gy


def _solve_algebraic(dae: _Dae, x, y0, tol=ALG_TOL, max_iter=30):
    y = y0.copy()
    for _ in range(max_iter):
        r = dae.m.g(x, y)
        if np.max(np.abs(r)) < tol:
            return y
        gy = dae.m.partials(x, y).gy
        try:
            dy = np.linalg.solve(gy, -r)
        except np.linalg.LinAlgError:
            return None
        y = y + dy
        if not np.all(np.isfinite(y)):
            return None
    return y if np.max(np.abs(dae.m.g(x, y))) < tol else None


def _equilibrium_near(dae: _Dae, x, y, tol=1e-9, max_iter=40):
    """Newton on ``f = 0, g = 0`` from (x, y); ``None`` when it does not converge."""
    z = np.concatenate([x, y])
    nx = dae.nx
    for _ in range(max_iter):
        xx, yy = z[:nx], z[nx:]
        r = np.concatenate([dae.m.f(xx, yy), dae.m.g(xx, yy)])
        if not np.all(np.isfinite(r)):
            return None
        if np.max(np.abs(r)) < tol:
            return z
        P = dae.m.partials(xx, yy)
        J = np.block([[P.fx, P.fy], [P.gx, P.gy]])
        try:
            dz = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            return None
        z = z + dz
    return None


def _trap_step(dae: _Dae, x0, y0, f0, h, y_guess, max_iter=12, tol=1e-10):
    """One trapezoidal step; returns (x1, y1, f1) or ``None`` on Newton failure."""
    nx = dae.nx
    x, y = x0 + h * f0, y_guess.copy()
    lu = None
    prev_norm = math.inf
    for it in range(max_iter):
        f1 = dae.rhs(x, y)
        r1 = x - x0 - 0.5 * h * (f0 + f1)
        r2 = dae.m.g(x, y)
        r = np.concatenate([r1, r2])
        nrm = np.max(np.abs(r))
        if not np.isfinite(nrm):
            return None
        if nrm < tol:
            return x, y, f1
        if lu is None or nrm > 0.5 * prev_norm:
            fx, fy, gx, gy = dae.jac(x, y)
            J = np.block([[np.eye(nx) - 0.5 * h * fx, -0.5 * h * fy], [gx, gy]])
            try:
                lu = lu_factor(J, check_finite=False)
            except (ValueError, np.linalg.LinAlgError):
                return None
            if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0:
                return None
        prev_norm = nrm
        dz = lu_solve(lu, -r, check_finite=False)
        x = x + dz[:nx]
        y = y + dz[nx:]
    f1 = dae.rhs(x, y)
    r = np.concatenate([x - x0 - 0.5 * h * (f0 + f1), dae.m.g(x, y)])
    if np.max(np.abs(r)) < 1e-8:
        return x, y, f1
    return None


def _apply_offset(model: DaeModel, x, offset):
    x = x.copy()
    if offset is None:
        return x
    if isinstance(offset, LoadOffset):
        x[model.n_gen_states :: 2] *= offset.factor
    elif isinstance(offset, StateOffset):
        x += np.asarray(offset.dx, dtype=float)
    else:
        raise TypeError(f"unsupported offset {offset!r}")
    return x


def simulate(
    case,
    tau: TauAssignment,
    eq,
    perturbation=DEFAULT_PERTURBATION,
    t_end: float = 200.0,
    dt: float = 0.01,
    dt_max: float = 0.5,
    lte_tol: float = LTE_TOL,
    dt_min: float = DT_MIN,
    max_steps: int = 2_000_000,
) -> SimTrace:
    """Integrate from the equilibrium ``eq`` after ``perturbation``.

    ``case`` supplies network and machine data (``None`` means ``eq.case``);
    load demands always come from ``eq``.  A :class:`BranchTrip` removes the
    branch at ``t = 0+`` with the states held continuous; a trip that
    separates a machine is the outage of that machine.
    """
    base = eq.case if case is None else case.with_loads(eq.case.loads)
    tau_arr = np.asarray(tau.values, dtype=float)
    if tau_arr.size != 2 * len(base.loads):
        raise ValueError(f"dimension mismatch: {tau_arr.size} time constants for {2 * len(base.loads)} load states")
    start = replace(eq, case=base)
    offset = perturbation
    if isinstance(perturbation, BranchTrip):
        post, _ = contingency_case(base, perturbation.from_bus, perturbation.to_bus)
        start = transfer_equilibrium(start, post)
        offset = perturbation.offset
    post = start.case
    model = DaeModel(post, start.e_r, start.p_m)
    x = model.pack_x(start.e_prime, start.e_fd, start.g, start.b)
    y = model.pack_y(start.v, start.theta, start.delta_prime)
    dae = _Dae(model, tau_arr)
    x = _apply_offset(model, x, offset)
    lbus = model.lbus
    buses = tuple(ld.bus for ld in post.loads)

    def result(ts, xs, vs, early=False, reason="", x_ref=None, res=0.0):
        return SimTrace(np.array(ts), np.array(xs), np.array(vs), buses, early, reason, x_ref, float(t_end), res)

    y = _solve_algebraic(dae, x, y)
    if y is None:
        return result([0.0], [x], [np.full(len(lbus), np.nan)], True, "algebraic Newton failed at t=0+")
    z_ref = _equilibrium_near(dae, x, y)
    x_ref = None if z_ref is None else z_ref[: dae.nx]

    ts, xs, vs = [0.0], [x.copy()], [y[lbus].copy()]
    f = dae.rhs(x, y)
    f_prev, h_prev = None, None
    t = 0.0
    h = min(dt, t_end)
    max_res = float(np.max(np.abs(model.g(x, y))))
    steps = 0
    while t < t_end - 1e-12:
        steps += 1
        if steps > max_steps:
            return result(ts, xs, vs, True, "step budget exhausted", x_ref, max_res)
        h = min(h, t_end - t)
        out = _trap_step(dae, x, y, f, h, y)
        if out is None:
            if h <= dt_min * 1.000001:
                return result(ts, xs, vs, True, "collapse: algebraic Newton failed", x_ref, max_res)
            h = max(0.5 * h, dt_min)
            continue
        x1, y1, f1 = out
        # local error from the gap to an explicit predictor (Milne's device)
        if f_prev is None:
            pred = x + h * f
            c = 1.0 / 7.0
        else:
            w = h / (2.0 * h_prev)
            pred = x + h * ((1.0 + w) * f - w * f_prev)
            c = 1.0 / 6.0
        err = c * np.max(np.abs(x1 - pred) / (1.0 + np.abs(x1)))
        if err > lte_tol and h > dt_min * 1.000001:
            h = max(dt_min, h * max(0.2, 0.9 * (lte_tol / err) ** (1.0 / 3.0)))
            continue
        t += h
        f_prev, h_prev = f, h
        x, y, f = x1, y1, f1
        ts.append(t)
        xs.append(x.copy())
        vs.append(y[lbus].copy())
        max_res = max(max_res, float(np.max(np.abs(model.g(x, y)))))
        if np.min(y[lbus]) < V_COLLAPSE:
            return result(ts, xs, vs, True, "collapse: load voltage below 0.05 p.u.", x_ref, max_res)
        grow = 2.0 if err == 0 else min(2.0, 0.9 * (lte_tol / err) ** (1.0 / 3.0))
        h = min(dt_max, max(dt_min, h * max(grow, 0.2)))
    return result(ts, xs, vs, False, "", x_ref, max_res)


# ---------------------------------------------------------------------------
# classification


def _peaks(sig):
    i = np.where((sig[1:-1] > sig[:-2]) & (sig[1:-1] >= sig[2:]))[0] + 1
    return i


def _troughs(sig):
    i = np.where((sig[1:-1] < sig[:-2]) & (sig[1:-1] <= sig[2:]))[0] + 1
    return i


def _cycle_amplitudes(t, sig):
    """Peak-to-trough amplitude of each full cycle."""
    pk, tr = _peaks(sig), _troughs(sig)
    amps = []
    for p in pk:
        nxt = tr[tr > p]
        if nxt.size:
            amps.append(sig[p] - sig[nxt[0]])
    return np.array(amps), pk


def classify(trace: SimTrace, decay: float = 1e-4, window: float = 0.2, amp_var: float = 0.05) -> Classification:
    """Deterministic labelling of a trace.

    * Unstable/collapse when the run terminated early.
    * Stable when the state deviation from the post-event equilibrium falls
      below ``decay`` times its initial value and stays there over the
      trailing ``window`` of the horizon.
    * LimitCycle when the load voltages oscillate over the trailing
      ``window`` of the horizon with cycle amplitudes varying by less than
      ``amp_var``.
    * Unstable when the trailing oscillation grows by more than ``amp_var`` or
      the deviation ends above its initial value.
    * Inconclusive otherwise.
    """
    t, X, V = trace.t, trace.states, trace.v_loads
    metrics = {"min_voltage": float(np.nanmin(V)) if V.size else math.nan, "t_final": float(t[-1])}
    if trace.terminated_early:
        metrics["t_collapse"] = float(t[-1])
        return Classification(UNSTABLE, "collapse", metrics)

    ref = trace.x_ref if trace.x_ref is not None else X[-1]
    dev = np.max(np.abs(X - ref[None, :]), axis=1)
    d0 = dev[0]
    if trace.x_ref is not None:
        if np.max(dev) < 1e-12:
            metrics["settle_time"] = 0.0
            return Classification(STABLE, "no deviation", metrics)
        below = dev < decay * max(d0, np.max(dev[: max(1, len(dev) // 100)]))
        if below[-1]:
            # first time after which the trace stays below the threshold
            k = len(below) - 1
            while k > 0 and below[k - 1]:
                k -= 1
            # it must stay there over the whole trailing window
            if t[k] <= t[-1] - window * (t[-1] - t[0]):
                metrics["settle_time"] = float(t[k])
                return Classification(STABLE, "decayed", metrics)

    t0 = t[-1] - window * (t[-1] - t[0])
    sel = t >= t0
    tw = t[sel]
    best = None
    for k in range(V.shape[1]):
        sig = V[sel, k]
        amps, _ = _cycle_amplitudes(tw, sig)
        span = float(np.ptp(sig))
        if best is None or span > best[0]:
            best = (span, amps, k)
    span, amps, kbus = best
    metrics["amplitude"] = span
    metrics["oscillation_bus"] = trace.load_buses[kbus] if trace.load_buses else kbus
    if amps.size >= 3 and span > 1e-6:
        a0, a1 = amps[0], amps[-1]
        var = abs(a1 - a0) / max(a0, a1)
        metrics["amplitude_variation"] = float(var)
        if var < amp_var:
            return Classification(LIMIT_CYCLE, "stationary oscillation", metrics)
        if a1 > a0:
            return Classification(UNSTABLE, "growing oscillation", metrics)
    if trace.x_ref is not None and dev[-1] > d0:
        return Classification(UNSTABLE, "diverging", metrics)
    if trace.x_ref is None:
        return Classification(UNSTABLE, "no post-event equilibrium", metrics)
    return Classification(INCONCLUSIVE, "no rule fired", metrics)


__all__ = [
    "LoadOffset",
    "StateOffset",
    "BranchTrip",
    "SimTrace",
    "Classification",
    "simulate",
    "classify",
    "DEFAULT_PERTURBATION",
]
