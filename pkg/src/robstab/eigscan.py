"""Direct eigenvalue analysis: spectra, Hopf points and critical-pair trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from robstab.errors import NearSingularAlgebraic, NoCoalescence, NoCrossing, TrackingAmbiguity
from robstab.linmodel import ReducedJacobian, TauAssignment, build_a, linearize

IM_TOL = 1e-6  # |Im| below this counts as real


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    abscissa: float

    @property
    def critical(self) -> complex:
        return complex(self.eigenvalues[0])


def spectrum(a) -> Spectrum:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("state matrix must be square")
    if a.size == 0:
        return Spectrum(np.zeros(0, dtype=complex), -math.inf)
    ev = np.linalg.eigvals(a)
    # exact conjugate symmetry for a real matrix
    ev = np.where(np.abs(ev.imag) < 1e-14 * max(1.0, np.max(np.abs(ev))), ev.real + 0j, ev)
    order = np.lexsort((-ev.imag, -ev.real))
    ev = ev[order]
    return Spectrum(ev, float(ev[0].real))


def abscissa(a) -> float:
    return spectrum(a).abscissa


@dataclass
class HopfPoint:
    parameter: float
    frequency: float
    crossing_pair_index: int = 0
    abscissa: float = math.nan


def _tau_with(fixed: TauAssignment, load: int, tau: float) -> TauAssignment:
    v = list(fixed.values)
    v[2 * load] = tau
    v[2 * load + 1] = tau
    return TauAssignment(tuple(v))


def _bisect(fun, lo, hi, f_lo, f_hi, xtol_rel=1e-6, ftol=1e-8, log=False, max_iter=200):
    """Bisection on a sign change of ``fun``; returns the end closest to the root."""
    for _ in range(max_iter):
        if log:
            mid = math.sqrt(lo * hi)
        else:
            mid = 0.5 * (lo + hi)
        f_mid = fun(mid)
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if abs(hi - lo) <= xtol_rel * max(abs(lo), abs(hi)) and min(abs(f_lo), abs(f_hi)) < ftol:
            break
        if abs(hi - lo) <= 1e-15 * max(abs(lo), abs(hi), 1.0):
            break
    return (lo, f_lo) if abs(f_lo) <= abs(f_hi) else (hi, f_hi)


def find_hopf_tau(j: ReducedJacobian, varying: int, fixed: TauAssignment, tau_range=(1e-3, 1e3), samples: int = 60) -> HopfPoint:
    """Time constant of load ``varying`` (both g and b) at which a complex pair crosses.

    The range is scanned on a log grid and the first sign change of the
    spectral abscissa is bisected in log space.
    """
    lo, hi = tau_range
    if not (0 < lo < hi):
        raise ValueError("tau range must satisfy 0 < lo < hi")
    grid = np.geomspace(lo, hi, samples)

    def f(t):
        return abscissa(build_a(j, _tau_with(fixed, varying, t)))

    vals = [f(t) for t in grid]
    for k in range(len(grid) - 1):
        if np.sign(vals[k]) != np.sign(vals[k + 1]) and vals[k] != 0:
            t, ft = _bisect(f, grid[k], grid[k + 1], vals[k], vals[k + 1], log=True)
            sp = spectrum(build_a(j, _tau_with(fixed, varying, t)))
            crit = sp.eigenvalues[0]
            if abs(crit.imag) <= IM_TOL:
                continue  # a real crossing is not a Hopf point
            return HopfPoint(float(t), float(abs(crit.imag)), 0, sp.abscissa)
    raise NoCrossing(f"no Hopf crossing for tau in [{lo:g}, {hi:g}]")


# ---------------------------------------------------------------------------
# load-parameter studies


@dataclass
class BranchSample:
    lam: float
    eigenvalues: np.ndarray
    equilibrium: object


def _branch_samples(case, scenario, tau, grid, calibration=None, k_exc=None):
    """Equilibria and spectra along a load grid, continued from the first point."""
    from robstab.linmodel import retune_exciter_gain
    from robstab.powerflow import calibrate, solve_powerflow

    if calibration is None and case.exciter_reference == "calibrated":
        calibration = calibrate(case)
    out = []
    warm = None
    for lam in grid:
        eq = solve_powerflow(case, scenario, float(lam), warm_start=warm, calibration=calibration)
        warm = eq
        e = retune_exciter_gain(eq, k_exc) if k_exc is not None else eq
        try:
            J = linearize(None, e)
        except NearSingularAlgebraic:
            continue
        ev = spectrum(build_a(J, tau)).eigenvalues
        out.append(BranchSample(float(lam), ev, eq))
    return out, calibration


def _upper_grid(case, scenario, lam_lo, lam_hi, n, calibration):
    from robstab.powerflow import trace_nose

    if lam_hi is None:
        nose = trace_nose(case, scenario, lam_lo, 0.1, calibration=calibration)
        lam_hi = nose.points[-1].lam
    return np.linspace(lam_lo, lam_hi, n)


def _complex_abscissa(ev):
    cplx = ev[np.abs(ev.imag) > IM_TOL]
    return float(np.max(cplx.real)) if cplx.size else -math.inf


def find_hopf_load(case, scenario, tau: TauAssignment, lam_range=(0.0, None), which: int = 1, n_grid: int = 200, calibration=None) -> HopfPoint:
    """Load level of the ``which``-th Hopf crossing (1 = first) along the upper branch.

    A crossing is a sign change of the largest real part among complex
    eigenvalues; real eigenvalues (saddle-node type) are ignored.
    """
    from robstab.powerflow import calibrate, solve_powerflow

    if calibration is None and case.exciter_reference == "calibrated":
        calibration = calibrate(case)
    lo, hi = lam_range
    grid = _upper_grid(case, scenario, lo, hi, n_grid, calibration)
    samples, _ = _branch_samples(case, scenario, tau, grid, calibration)
    vals = [_complex_abscissa(s.eigenvalues) for s in samples]
    found = 0
    for k in range(len(samples) - 1):
        a, b = vals[k], vals[k + 1]
        if not (np.isfinite(a) and np.isfinite(b)):
            continue
        if np.sign(a) == np.sign(b):
            continue
        found += 1
        if found < which:
            continue
        warm = samples[k].equilibrium

        def f(lam):
            eq = solve_powerflow(case, scenario, lam, warm_start=warm, calibration=calibration)
            ev = spectrum(build_a(linearize(None, eq), tau)).eigenvalues
            return _complex_abscissa(ev)

        lam, fl = _bisect(f, samples[k].lam, samples[k + 1].lam, a, b, xtol_rel=1e-8, ftol=1e-7)
        eq = solve_powerflow(case, scenario, lam, warm_start=warm, calibration=calibration)
        ev = spectrum(build_a(linearize(None, eq), tau)).eigenvalues
        cplx = ev[np.abs(ev.imag) > IM_TOL]
        crit = cplx[np.argmax(cplx.real)]
        return HopfPoint(float(lam), float(abs(crit.imag)), found - 1, float(crit.real))
    raise NoCrossing(f"found {found} Hopf crossing(s), wanted crossing #{which}")


@dataclass
class EigTrajectory:
    samples: list  # (lambda, eigenvalue, partner)
    events: list = field(default_factory=list)  # (name, lambda)

    @property
    def event_names(self):
        return [e[0] for e in self.events]

    def rows(self):
        ev_at = {}
        for name, lam in self.events:
            ev_at.setdefault(lam, name)
        out = []
        for lam, e1, e2 in self.samples:
            out.append((lam, e1.real, e1.imag, e2.real, e2.imag, max(e1.real, e2.real)))
        return out


def _match(prev, ev, tol_ratio=0.5):
    """Nearest eigenvalue to ``prev``; ambiguous if the runner-up is almost as close."""
    d = np.abs(ev - prev)
    order = np.argsort(d)
    k = order[0]
    if len(ev) > 1:
        d1, d2 = d[order[0]], d[order[1]]
        if d2 > 0 and d1 / d2 > tol_ratio and d2 < 1e-3 * max(1.0, abs(prev)) and abs(ev[order[0]] - np.conj(ev[order[1]])) > 1e-9:
            return None
    return k


def trace_critical_eigenvalues(case, scenario, tau: TauAssignment, grid, calibration=None, start: complex | None = None, max_refine: int = 6) -> EigTrajectory:
    """Follow the critical pair along ``grid`` and classify what happens to it.

    The tracked pair starts as the rightmost complex pair (or the eigenvalue
    nearest ``start``).  Between grid points the pair is matched by nearest
    neighbour, and each member is followed separately once it turns real.

    Events: ``FirstHopf``/``SecondHopf`` for sign changes of the pair's real
    part while complex, ``Coalescence`` where the pair meets the real axis, and
    ``SNBOriginTouch`` where any real eigenvalue reaches the origin.
    """
    from robstab.powerflow import calibrate, solve_powerflow

    if calibration is None and case.exciter_reference == "calibrated":
        calibration = calibrate(case)
    grid = [float(g) for g in grid]

    def eig_at(lam, warm):
        eq = solve_powerflow(case, scenario, lam, warm_start=warm, calibration=calibration)
        try:
            J = linearize(None, eq)
        except NearSingularAlgebraic:
            return None, eq
        return spectrum(build_a(J, tau)).eigenvalues, eq

    ev0, eq0 = eig_at(grid[0], None)
    if start is None:
        cplx = ev0[ev0.imag > IM_TOL]
        if cplx.size == 0:
            raise NoCrossing("no complex pair to track at the first grid point")
        p1 = cplx[np.argmax(cplx.real)]
    else:
        p1 = ev0[np.argmin(np.abs(ev0 - start))]
    p2 = np.conj(p1)
    samples = [(grid[0], complex(p1), complex(p2))]
    real_min_prev = float(np.min(np.abs(ev0.real[np.abs(ev0.imag) <= IM_TOL]))) if np.any(np.abs(ev0.imag) <= IM_TOL) else math.inf
    warm = eq0
    lam_prev = grid[0]
    for lam in grid[1:]:
        # refine the step when matching is ambiguous
        sub = [lam]
        for _ in range(max_refine + 1):
            ok = True
            q1, q2, w = p1, p2, warm
            pts = []
            lprev = lam_prev
            for l in sub:
                ev, eqn = eig_at(l, w)
                if ev is None:
                    ok = False
                    break
                k1 = _match(q1, ev)
                if k1 is None:
                    ok = False
                    break
                rest = np.delete(ev, k1)
                k2 = _match(q2, rest)
                if k2 is None:
                    ok = False
                    break
                q1, q2 = ev[k1], rest[k2]
                pts.append((l, complex(q1), complex(q2), ev))
                w = eqn
                lprev = l
            if ok:
                break
            n = len(sub) * 2
            sub = list(np.linspace(lam_prev, lam, n + 1)[1:])
        else:
            cands = [complex(c) for c in np.sort_complex(ev)[-4:]] if ev is not None else []
            raise TrackingAmbiguity(f"cannot follow the critical pair near lambda={lam:.6g}", cands)
        for l, q1, q2, ev in pts:
            samples.append((l, q1, q2))
        p1, p2, warm, lam_prev = pts[-1][1], pts[-1][2], w, lam
    traj = EigTrajectory(samples)
    traj.events = _classify_events(samples, case, scenario, tau, calibration)
    return traj


def _classify_events(samples, case, scenario, tau, calibration):
    events = []
    hopfs = 0
    coalesced = False
    for (l0, a1, a2), (l1, b1, b2) in zip(samples[:-1], samples[1:]):
        was_cplx = abs(a1.imag) > IM_TOL
        is_cplx = abs(b1.imag) > IM_TOL
        if was_cplx and is_cplx and np.sign(a1.real) != np.sign(b1.real):
            hopfs += 1
            name = "FirstHopf" if hopfs == 1 else "SecondHopf" if hopfs == 2 else f"Hopf{hopfs}"
            events.append((name, _lin_root(l0, l1, a1.real, b1.real)))
        if was_cplx and not is_cplx and not coalesced:
            coalesced = True
            events.append(("Coalescence", l1))
        if not is_cplx:
            for x0, x1 in ((a1, b1), (a2, b2)):
                if abs(x0.imag) <= IM_TOL and np.sign(x0.real) != np.sign(x1.real) and x0.real != 0:
                    events.append(("SNBOriginTouch", _lin_root(l0, l1, x0.real, x1.real)))
    # a real eigenvalue outside the tracked pair may also reach the origin
    if not any(e[0] == "SNBOriginTouch" for e in events):
        lam_touch = _origin_touch(samples, case, scenario, tau, calibration)
        if lam_touch is not None:
            events.append(("SNBOriginTouch", lam_touch))
    events.sort(key=lambda e: e[1])
    return events


def _lin_root(l0, l1, f0, f1):
    if f1 == f0:
        return l1
    return l0 + (l1 - l0) * (-f0) / (f1 - f0)


def _origin_touch(samples, case, scenario, tau, calibration):
    """Load level where the product of real eigenvalues changes sign (det J = 0)."""
    from robstab.powerflow import solve_powerflow

    warm = None
    prev = None
    for lam, _, _ in samples:
        try:
            eq = solve_powerflow(case, scenario, lam, warm_start=warm, calibration=calibration)
            J = linearize(None, eq)
        except Exception:
            break
        warm = eq
        s = np.sign(np.linalg.det(J.matrix))
        if prev is not None and s != prev[1]:
            return lam
        prev = (lam, s)
    return None


def coalescence_real_part(case, scenario, tau: TauAssignment, grid, calibration=None) -> float:
    """Real-axis value where the tracked critical pair merges."""
    traj = trace_critical_eigenvalues(case, scenario, tau, grid, calibration)
    samples = traj.samples
    for (l0, a1, a2), (l1, b1, b2) in zip(samples[:-1], samples[1:]):
        if abs(a1.imag) > IM_TOL and abs(b1.imag) <= IM_TOL:
            return _refine_coalescence(case, scenario, tau, l0, l1, a1, calibration)
    raise NoCoalescence("the critical pair never reaches the real axis")


def _refine_coalescence(case, scenario, tau, l0, l1, a1, calibration, iters=40):
    from robstab.powerflow import solve_powerflow

    warm = solve_powerflow(case, scenario, l0, calibration=calibration)
    prev = a1
    best = None
    for _ in range(iters):
        mid = 0.5 * (l0 + l1)
        eq = solve_powerflow(case, scenario, mid, warm_start=warm, calibration=calibration)
        ev = spectrum(build_a(linearize(None, eq), tau)).eigenvalues
        k = int(np.argmin(np.abs(ev - prev)))
        e = ev[k]
        if abs(e.imag) > IM_TOL:
            l0, prev, warm = mid, e, eq
            best = e.real
        else:
            l1 = mid
            best = e.real
        if l1 - l0 < 1e-9 * max(1.0, l1):
            break
    return float(prev.real if best is None else 0.5 * (prev.real + best))


__all__ = [
    "Spectrum",
    "HopfPoint",
    "EigTrajectory",
    "spectrum",
    "abscissa",
    "find_hopf_tau",
    "find_hopf_load",
    "trace_critical_eigenvalues",
    "coalescence_real_part",
]
