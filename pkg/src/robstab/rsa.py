"""Robust stability assessment pipeline, contingency screening and sweep tables."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from robstab.eigscan import abscissa, find_hopf_tau
from robstab.errors import CaseError, NearSingularAlgebraic, NoConvergence, NoCrossing, RobstabError, SingularJacobian
from robstab.linmodel import TauAssignment, build_a, linearize
from robstab.netmodel import contingency_case
from robstab.powerflow import Correlated, calibrate, solve_powerflow, trace_nose
from robstab.sdpcert import NRS, RS, Certificate, find_robust_boundary, margin_pct, solve_certificate
from robstab.tdsim import DEFAULT_PERTURBATION, UNSTABLE, Classification, classify, simulate

N_SAMPLES = 200
TAU_SAMPLE_RANGE = (1e-2, 1e2)
NEAR_BAND = 1e-3


@dataclass
class Fallback:
    worst_abscissa: float
    worst_tau: tuple
    n_samples: int
    unstable_samples: int
    hopf: dict = field(default_factory=dict)  # load index -> HopfPoint or message


@dataclass
class RsaReport:
    verdict: str
    security_indicator: float
    certificate: Certificate | None
    fallback: Fallback | None = None
    steps: list = field(default_factory=list)  # (step, outcome)
    equilibrium: object = None

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict,
            "security_indicator": self.security_indicator,
            "steps": [list(s) for s in self.steps],
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
        }
        if self.fallback is not None:
            fb = self.fallback
            out["fallback"] = {
                "worst_abscissa": fb.worst_abscissa,
                "worst_tau": list(fb.worst_tau),
                "n_samples": fb.n_samples,
                "unstable_samples": fb.unstable_samples,
                "hopf": {
                    str(k): (v if isinstance(v, str) else {"tau": v.parameter, "frequency": v.frequency})
                    for k, v in fb.hopf.items()
                },
            }
        return out


def sample_taus(n_states: int, n: int, seed: int = 0, tau_range=TAU_SAMPLE_RANGE) -> np.ndarray:
    """Log-uniform random diagonals, one row per draw."""
    rng = np.random.default_rng(seed)
    lo, hi = np.log(tau_range[0]), np.log(tau_range[1])
    return np.exp(rng.uniform(lo, hi, size=(n, n_states)))


def direct_analysis(j, n_samples: int = N_SAMPLES, seed: int = 0, tau_range=TAU_SAMPLE_RANGE) -> Fallback:
    """Sampled spectral abscissae plus one Hopf search per load."""
    draws = sample_taus(j.n_L, n_samples, seed, tau_range)
    absc = np.array([abscissa(build_a(j, TauAssignment(tuple(t)))) for t in draws])
    k = int(np.argmax(absc))
    hopf = {}
    fixed = TauAssignment((1.0,) * j.n_L)
    for load in range(j.n_L // 2):
        try:
            hopf[load] = find_hopf_tau(j, load, fixed)
        except NoCrossing as exc:
            hopf[load] = str(exc)
    return Fallback(float(absc[k]), tuple(draws[k]), n_samples, int(np.sum(absc >= 0)), hopf)


def rsa_assess(case, scenario=None, lam=None, eq=None, calibration=None, n_samples: int = N_SAMPLES, seed: int = 0) -> RsaReport:
    """Input, initialization, linearization, optimization and (if needed) direct analysis."""
    steps = []
    if eq is None:
        eq = solve_powerflow(case, scenario, lam, calibration=calibration)
    steps.append(("input", f"equilibrium residual {eq.residual:.1e}"))
    steps.append(("initialization", f"{2 * len(eq.case.generators)} machine states, {2 * len(eq.case.loads)} uncertain load states"))
    try:
        j = linearize(None, eq)
    except NearSingularAlgebraic as exc:
        steps.append(("linearization", f"failed: {exc}"))
        return RsaReport(NRS, -math.inf, None, None, steps, eq)
    steps.append(("linearization", f"J is {j.matrix.shape[0]}x{j.matrix.shape[1]}"))
    cert = solve_certificate(j)
    steps.append(("optimization", f"{cert.status}, rho={cert.rho:.6g}"))
    if cert.status == RS:
        return RsaReport(RS, cert.rho, cert, None, steps, eq)
    if cert.status != NRS:
        raise RobstabError(f"optimization step failed: {cert.status}")
    fb = direct_analysis(j, n_samples, seed)
    steps.append(("direct analysis", f"worst abscissa {fb.worst_abscissa:.4g} over {n_samples} draws"))
    return RsaReport(NRS, cert.rho, cert, fb, steps, eq)


# ---------------------------------------------------------------------------
# contingency screening


@dataclass
class ScreeningRow:
    trip: tuple
    rsa_verdict: str
    security_indicator: float
    outcomes: list  # Classification per tau case
    abscissae: list  # spectral abscissa per tau case (nan when no equilibrium)
    note: str = ""

    @property
    def labels(self):
        return [c.label for c in self.outcomes]

    def near_boundary(self, k: int) -> bool:
        a = self.abscissae[k]
        return bool(np.isfinite(a) and abs(a) < NEAR_BAND)


@dataclass
class ScreeningReport:
    rows: list
    cases: list  # TauAssignment per column
    seed: int = 0

    def soundness_violations(self):
        """Rows certified RS that still show a non-Stable simulation."""
        return [r.trip for r in self.rows if r.rsa_verdict == RS and any(lbl != "Stable" for lbl in r.labels)]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "cases": [list(c.values) for c in self.cases],
            "rows": [
                {
                    "trip": f"{r.trip[0]}-{r.trip[1]}",
                    "rsa_verdict": r.rsa_verdict,
                    "security_indicator": r.security_indicator,
                    "outcomes": [c.label for c in r.outcomes],
                    "reasons": [c.reason for c in r.outcomes],
                    "abscissae": r.abscissae,
                    "note": r.note,
                }
                for r in self.rows
            ],
        }

    def csv_rows(self):
        header = ["trip", "rsa_verdict", "security_indicator"]
        for k in range(len(self.cases)):
            header += [f"case{k + 1}_label", f"case{k + 1}_abscissa"]
        out = [header]
        for r in self.rows:
            line = [f"{r.trip[0]}-{r.trip[1]}", r.rsa_verdict, repr(float(r.security_indicator))]
            for c, a in zip(r.outcomes, r.abscissae):
                line += [c.label, repr(float(a))]
            out.append(line)
        return out


def post_contingency_equilibrium(case, trip, scenario=None, lam=None):
    """Power flow of the tripped network with machine voltages at their setpoints."""
    post, _ = contingency_case(case, *trip)
    if post.exciter_reference == "regulated":
        return solve_powerflow(post, scenario, lam)
    return calibrate(post, scenario, lam).base


def screen_contingencies(
    case,
    trips,
    tau_cases,
    scenario=None,
    lam=None,
    t_end: float = 200.0,
    perturbation=DEFAULT_PERTURBATION,
    n_samples: int = N_SAMPLES,
    seed: int = 0,
    jobs: int = 1,
) -> ScreeningReport:
    """RSA plus fixed-tau simulations for every trip.

    Each simulation starts at the post-contingency equilibrium and applies
    ``perturbation``.  A trip without a post-contingency equilibrium becomes
    an NRS row whose simulations are all recorded as collapse.
    """
    tau_cases = list(tau_cases)

    def one(trip):
        trip = tuple(trip)
        try:
            eq = post_contingency_equilibrium(case, trip, scenario, lam)
        except (NoConvergence, SingularJacobian) as exc:
            dead = [Classification(UNSTABLE, "collapse", {"note": "no post-contingency equilibrium"}) for _ in tau_cases]
            return ScreeningRow(trip, NRS, -math.inf, dead, [math.nan] * len(tau_cases), f"power flow failed: {exc}")
        rep = rsa_assess(None, eq=eq, n_samples=n_samples, seed=seed)
        try:
            j = linearize(None, eq)
            absc = [abscissa(build_a(j, tau)) for tau in tau_cases]
        except NearSingularAlgebraic:
            absc = [math.nan] * len(tau_cases)
        outcomes = [classify(simulate(None, tau, eq, perturbation, t_end=t_end)) for tau in tau_cases]
        return ScreeningRow(trip, rep.verdict, rep.security_indicator, outcomes, absc)

    trips = list(trips)
    for t in trips:
        # islanding of load buses is a usage error, reported before any work
        contingency_case(case, *t)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(one, trips))
    else:
        rows = [one(t) for t in trips]
    return ScreeningReport(rows, tau_cases, seed)


def rank_branches_by_flow(case, eq=None):
    """In-service branches ordered by the larger end apparent-power flow (MVA)."""
    if eq is None:
        eq = solve_powerflow(case)
    idx = eq.case.bus_index()
    vc = eq.v * np.exp(1j * eq.theta)
    out = []
    for br in eq.case.branches:
        if not br.in_service:
            continue
        i, k = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        t = br.tap
        i_from = (vc[i] / t - vc[k]) * ys / t + 1j * br.b_half * vc[i]
        i_to = (vc[k] - vc[i] / t) * ys + 1j * br.b_half * vc[k]
        s = max(abs(vc[i] * np.conj(i_from)), abs(vc[k] * np.conj(i_to))) * eq.case.s_base
        out.append(((br.from_bus, br.to_bus), float(s)))
    out.sort(key=lambda r: -r[1])
    return out


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepCell:
    value: object
    s_lambda: float
    snb_lambda: float
    margin_pct: float
    error: str = ""


@dataclass
class SweepTable:
    kind: str
    cells: list

    def rows(self):
        out = [["value", "S", "SNB", "margin_pct", "error"]]
        for c in self.cells:
            out.append([str(c.value), repr(float(c.s_lambda)), repr(float(c.snb_lambda)), repr(float(c.margin_pct)), c.error])
        return out


def _cell(value, fn):
    try:
        b = fn()
        return SweepCell(value, b.s_lambda, b.snb_lambda, b.margin_pct)
    except RobstabError as exc:
        return SweepCell(value, math.nan, math.nan, math.nan, f"{type(exc).__name__}: {exc}")


def robust_region_report(case, scenario, lam_start: float = 0.0, step: float = 0.1, jobs: int = 1):
    """Boundary of ``scenario`` on ``case`` (a thin wrapper kept for symmetry with the sweeps)."""
    return find_robust_boundary(case, scenario, lam_start=lam_start, step=step, jobs=jobs)


def sweep_kc(case, values, ref_bus: int = 8, pf: float = 0.9, lam_start: float = 0.1, step: float = 0.1, jobs: int = 1) -> SweepTable:
    def run(kc):
        return _cell(kc, lambda: find_robust_boundary(case, Correlated(ref_bus, float(kc), pf), lam_start=lam_start, step=step))

    return SweepTable("kc", _map(run, values, jobs))


def sweep_pf(case, values, ref_bus: int = 8, k_c: float = 1.0, lam_start: float = 0.1, step: float = 0.1, jobs: int = 1) -> SweepTable:
    """``values`` are ``(pf, lagging)`` pairs."""

    def run(v):
        pf, lag = v
        label = f"{pf:g}{'lag' if lag else 'lead'}" if pf < 1 else "1"
        return _cell(label, lambda: find_robust_boundary(case, Correlated(ref_bus, k_c, float(pf), bool(lag)), lam_start=lam_start, step=step))

    return SweepTable("pf", _map(run, values, jobs))


def sweep_gain(case, values, scenario=None, lam_start: float = 0.1, step: float = 0.1, jobs: int = 1) -> SweepTable:
    """Exciter-gain sweep on one fixed equilibrium path.

    The path is traced once at the stored gains; each gain only changes the
    linearization, with the exciter references re-derived so every point
    stays an equilibrium.  SNB is therefore common to all cells.
    """
    scenario = Correlated(8, 1.0, 0.9) if scenario is None else scenario
    cal = calibrate(case) if case.exciter_reference == "calibrated" else None
    nose = trace_nose(case, scenario, lam_start, step, calibration=cal)

    def run(k):
        return _cell(k, lambda: find_robust_boundary(case, scenario, nose=nose, calibration=cal, k_exc=float(k)))

    return SweepTable("gain", _map(run, values, jobs))


def _map(fn, values, jobs):
    values = list(values)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, values))
    return [fn(v) for v in values]


__all__ = [
    "RsaReport",
    "Fallback",
    "ScreeningRow",
    "ScreeningReport",
    "SweepCell",
    "SweepTable",
    "rsa_assess",
    "direct_analysis",
    "sample_taus",
    "screen_contingencies",
    "post_contingency_equilibrium",
    "rank_branches_by_flow",
    "robust_region_report",
    "sweep_kc",
    "sweep_pf",
    "sweep_gain",
    "margin_pct",
]
