"""Command-line front end.

Exit codes: 0 success (or RS), 2 usage error, 3 NRS, 4 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys

import numpy as np

from robstab.errors import CaseError, RobstabError
from robstab.linmodel import TauAssignment

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NRS = 3
EXIT_FAIL = 4


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing


def _parse_pf(tok: str):
    m = re.fullmatch(r"pf([0-9.]+)(lag|lead)?", tok)
    if not m:
        raise UsageError(f"bad power factor token {tok!r}")
    pf = float(m.group(1))
    return pf, (m.group(2) or "lag") == "lag"


def parse_scenario(spec: str, case):
    """Scenario from a compact string.

    ``base``; ``single:load1:pf0.98lag`` or ``single:bus8:pf0.894lag``;
    ``correlated:kc=1[:ref=8][:pf0.9lag]``; ``global[:dispatch=equal]``.
    """
    from robstab.powerflow import BaseLoading, Correlated, GlobalScale, SingleBus

    parts = spec.split(":")
    kind = parts[0]
    try:
        if kind == "base":
            return BaseLoading()
        if kind == "single":
            if len(parts) < 2:
                raise UsageError("single needs a load selector, e.g. single:load1")
            sel = parts[1]
            if sel.startswith("load"):
                k = int(sel[4:])
                if not 1 <= k <= len(case.loads):
                    raise UsageError(f"{sel}: case has {len(case.loads)} loads")
                bus = case.loads[k - 1].bus
            elif sel.startswith("bus"):
                bus = int(sel[3:])
                case.load_at(bus)
            else:
                raise UsageError(f"bad load selector {sel!r}")
            pf, lag = _parse_pf(parts[2]) if len(parts) > 2 else (1.0, True)
            return SingleBus(bus, pf, lag)
        if kind == "correlated":
            kc, ref, pf, lag = 1.0, case.loads[-1].bus, 0.9, True
            for tok in parts[1:]:
                if tok.startswith("kc="):
                    kc = float(tok[3:])
                elif tok.startswith("ref="):
                    ref = int(tok[4:])
                    case.load_at(ref)
                elif tok.startswith("pf"):
                    pf, lag = _parse_pf(tok)
                else:
                    raise UsageError(f"bad correlated option {tok!r}")
            return Correlated(ref, kc, pf, lag)
        if kind == "global":
            dispatch = "equal"
            for tok in parts[1:]:
                if tok.startswith("dispatch="):
                    dispatch = tok[9:]
                else:
                    raise UsageError(f"bad global option {tok!r}")
            if dispatch not in ("equal", "slack"):
                raise UsageError("dispatch must be equal or slack")
            return GlobalScale(dispatch)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad scenario {spec!r}: {exc}") from exc
    raise UsageError(f"unknown scenario kind {kind!r}")


def parse_tau(spec: str | None, case) -> TauAssignment | None:
    """``None``/``uncertain`` -> None; a number -> uniform; ``5=1,6=1,8=0.2`` -> per load bus."""
    if spec is None or spec == "uncertain":
        return None
    try:
        if "=" not in spec:
            return TauAssignment.uniform(len(case.loads), float(spec))
        vals = {}
        for item in spec.split(","):
            bus, val = item.split("=")
            vals[int(bus)] = float(val)
        buses = [ld.bus for ld in case.loads]
        if set(vals) != set(buses):
            raise UsageError(f"tau map must list exactly the load buses {buses}")
        return TauAssignment.from_pairs([vals[b] for b in buses])
    except ValueError as exc:
        raise UsageError(f"bad tau spec {spec!r}: {exc}") from exc


def parse_trip(spec: str):
    try:
        a, b = spec.split("-")
        return int(a), int(b)
    except ValueError as exc:
        raise UsageError(f"bad branch {spec!r}, expected e.g. 1-4") from exc


def parse_grid(spec: str):
    try:
        lo, hi, n = spec.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise UsageError(f"bad grid {spec!r}, expected lo:hi:n") from exc


# ---------------------------------------------------------------------------
# output


def _num(x):
    return repr(float(x))


def _write(args, text: str):
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)


def _csv_text(rows, seed=None):
    buf = io.StringIO()
    if seed is not None:
        buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _emit(args, rows, obj):
    if args.format == "json":
        _write(args, _json_text(obj))
    else:
        _write(args, _csv_text(rows, args.seed))


# ---------------------------------------------------------------------------
# commands


def _load(args):
    from robstab.netmodel import load_case

    try:
        return load_case(args.case)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read case {args.case!r}: {exc}") from exc


def _calibration(case):
    from robstab.powerflow import calibrate

    return calibrate(case) if case.exciter_reference == "calibrated" else None


def _equilibrium(case, args):
    from robstab.powerflow import solve_powerflow

    sc = parse_scenario(args.scenario, case)
    return solve_powerflow(case, sc, args.lam, calibration=_calibration(case))


def cmd_trace(args):
    from robstab.powerflow import trace_nose

    case = _load(args)
    sc = parse_scenario(args.scenario, case)
    nose = trace_nose(case, sc, args.lambda_start, args.step, calibration=_calibration(case))
    bus = nose.monitored_bus
    rows = [["lambda", f"v_bus{bus}", "converged"]]
    for p in nose.points:
        rows.append([_num(p.lam), _num(p.v_monitored), "1"])
    obj = {"snb_lambda": nose.snb_lambda, "monitored_bus": bus, "lambda": nose.lambdas.tolist(), "v": nose.voltages.tolist()}
    _emit(args, rows, obj)
    return EXIT_OK


def cmd_linearize(args):
    from robstab.linmodel import linearize

    case = _load(args)
    eq = _equilibrium(case, args)
    j = linearize(None, eq)
    if args.format == "csv":
        _write(args, _csv_text([[_num(v) for v in row] for row in j.matrix], args.seed))
    else:
        _write(args, _json_text(j.to_dict()))
    return EXIT_OK


def cmd_certify(args):
    from robstab.rsa import rsa_assess

    case = _load(args)
    eq = _equilibrium(case, args)
    rep = rsa_assess(None, eq=eq, n_samples=args.samples, seed=args.seed)
    obj = {"seed": args.seed, "lambda": args.lam, **rep.to_dict()}
    if args.dump_q and rep.certificate is not None:
        with open(args.dump_q, "w") as fh:
            fh.write(_json_text({"q_g": rep.certificate.q_g, "q_l": rep.certificate.q_l}))
    if args.format == "csv":
        rows = [["verdict", "rho", "lambda"], [rep.verdict, _num(rep.security_indicator), "" if args.lam is None else _num(args.lam)]]
        _write(args, _csv_text(rows, args.seed))
    else:
        _write(args, _json_text(obj))
    return EXIT_OK if rep.verdict == "RS" else EXIT_NRS


def _trajectory_rows(traj):
    rows = [["lambda", "re1", "im1", "re2", "im2", "abscissa", "event"]]
    ev = {}
    for name, lam in traj.events:
        # attach each event to the nearest sample
        k = int(np.argmin([abs(s[0] - lam) for s in traj.samples]))
        ev.setdefault(k, []).append(name)
    for k, (lam, e1, e2) in enumerate(traj.samples):
        rows.append([_num(lam), _num(e1.real), _num(e1.imag), _num(e2.real), _num(e2.imag), _num(max(e1.real, e2.real)), "+".join(ev.get(k, []))])
    return rows


def cmd_scan(args):
    from robstab.eigscan import trace_critical_eigenvalues

    case = _load(args)
    sc = parse_scenario(args.scenario, case)
    tau = parse_tau(args.tau_spec, case)
    if tau is None:
        raise UsageError("scan needs concrete time constants (--tau-spec)")
    cal = _calibration(case)
    if args.grid is None:
        from robstab.powerflow import trace_nose

        nose = trace_nose(case, sc, 0.0, 0.1, calibration=cal)
        grid = np.linspace(nose.points[0].lam, nose.points[-1].lam, 200)
    else:
        grid = parse_grid(args.grid)
    traj = trace_critical_eigenvalues(case, sc, tau, grid, calibration=cal)
    obj = {"events": [{"name": n, "lambda": l} for n, l in traj.events], "rows": _trajectory_rows(traj)[1:]}
    _emit(args, _trajectory_rows(traj), obj)
    return EXIT_OK


def _trace_rows(trace, cl):
    rows = [["t"] + [f"v_bus{b}" for b in trace.load_buses] + ["label"]]
    n = len(trace.t)
    for k in range(n):
        rows.append([_num(trace.t[k])] + [_num(v) for v in trace.v_loads[k]] + [cl.label if k == n - 1 else ""])
    return rows


def cmd_simulate(args):
    from robstab.tdsim import BranchTrip, classify, simulate

    case = _load(args)
    tau = parse_tau(args.tau_spec, case)
    if tau is None:
        raise UsageError("simulate needs concrete time constants (--tau-spec)")
    eq = _equilibrium(case, args)
    pert = BranchTrip(*parse_trip(args.trip)) if args.trip else None
    from robstab.tdsim import DEFAULT_PERTURBATION

    trace = simulate(None, tau, eq, pert if pert is not None else DEFAULT_PERTURBATION, t_end=args.t_end)
    cl = classify(trace)
    obj = {"label": cl.label, "reason": cl.reason, "metrics": cl.metrics, "t": trace.t.tolist(), "v_loads": trace.v_loads.tolist()}
    _emit(args, _trace_rows(trace, cl), obj)
    return EXIT_OK


def _screen_base(case, spec):
    """``8:1.8:0.5`` sets the load at bus 8 to 1.8 + j0.5."""
    from dataclasses import replace

    if not spec:
        return case
    try:
        bus, p, q = spec.split(":")
        bus, p, q = int(bus), float(p), float(q)
        k = case.load_at(bus)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad --set-load {spec!r}: {exc}") from exc
    loads = list(case.loads)
    loads[k] = replace(loads[k], p0=p, q0=q)
    return case.with_loads(loads)


def _screen(case, trips, taus, args):
    from robstab.rsa import screen_contingencies

    return screen_contingencies(case, trips, taus, t_end=args.t_end, seed=args.seed, jobs=args.jobs)


def cmd_screen(args):
    case = _screen_base(_load(args), args.set_load)
    trips = [parse_trip(t) for t in args.trips.split(",")]
    taus = [parse_tau(t, case) for t in args.tau_cases.split(",")]
    try:
        rep = _screen(case, trips, taus, args)
    except CaseError as exc:
        raise UsageError(str(exc)) from exc
    if args.format == "csv":
        _write(args, _csv_text(rep.csv_rows(), args.seed))
    else:
        _write(args, _json_text(rep.to_dict()))
    return EXIT_OK


def _sweep(kind, case, values, jobs):
    from robstab.rsa import sweep_gain, sweep_kc, sweep_pf

    if kind == "kc":
        return sweep_kc(case, values, jobs=jobs)
    if kind == "pf":
        return sweep_pf(case, values, jobs=jobs)
    return sweep_gain(case, values, jobs=jobs)


def _parse_pf_values(text):
    out = []
    for tok in text.split(","):
        if tok in ("1", "1.0"):
            out.append((1.0, True))
        else:
            out.append(_parse_pf("pf" + tok))
    return out


def cmd_sweep(args):
    case = _load(args)
    if args.kind == "pf":
        values = _parse_pf_values(args.values)
    else:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --values {args.values!r}") from exc
    table = _sweep(args.kind, case, values, args.jobs)
    obj = {"kind": table.kind, "cells": [c.__dict__ for c in table.cells]}
    _emit(args, table.rows(), obj)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduction targets

REPRO_TARGETS = ("fig3", "fig4", "fig5", "fig6", "fig9", "fig10", "fig14", "table1", "table2", "table3", "table4", "table5")

# Figures and tables quote load relaxation figures that act as rates; the
# library takes time constants, so the settings below are reciprocals.
HOPF_2BUS = 7.35
WSCC_TRAJ = (6.5, 5.9, 5.35)
TABLE1_CASES = (1.0, 5.0, 10.0)
TABLE1_TRIPS = ((1, 4), (2, 7), (7, 8), (9, 3))
TABLE4_GAINS = (5, 10, 20, 30, 40, 50)
TABLE5_PF = ((0.89, True), (0.98, True), (1.0, True), (0.98, False), (0.89, False))


def _boundary_rows(case, sc, jobs):
    from robstab.powerflow import trace_nose
    from robstab.sdpcert import certify_equilibrium, find_robust_boundary

    cal = _calibration(case)
    start = 0.0 if case.exciter_reference == "regulated" else 0.1
    nose = trace_nose(case, sc, start, 0.1, calibration=cal)
    b = find_robust_boundary(case, sc, nose=nose, calibration=cal, jobs=jobs)
    rows = [["lambda", f"v_bus{nose.monitored_bus}", "status", "rho"]]
    for p in nose.points:
        c = certify_equilibrium(p.equilibrium)
        rho = c.certificate.rho if c.certificate else math.nan
        rows.append([_num(p.lam), _num(p.v_monitored), c.status, _num(rho)])
    rows.append(["# S", _num(b.s_lambda), "SNB", _num(b.snb_lambda)])
    return rows


def _traj_rows(case, sc, tau, start=0.0):
    from robstab.eigscan import trace_critical_eigenvalues
    from robstab.powerflow import trace_nose

    cal = _calibration(case)
    nose = trace_nose(case, sc, start, 0.1, calibration=cal)
    grid = np.linspace(start, nose.points[-1].lam, 200)
    return _trajectory_rows(trace_critical_eigenvalues(case, sc, tau, grid, calibration=cal))


def repro(target: str, jobs: int = 1, seed: int = 0):
    """Rows of CSV data behind one figure or table."""
    from robstab.netmodel import load_case
    from robstab.powerflow import Correlated, SingleBus

    two = load_case("rudimentary2")
    w = load_case("wscc9")
    if target == "fig3":
        return _boundary_rows(two, SingleBus(2, 0.98), jobs)
    if target == "fig4":
        from robstab.eigscan import spectrum
        from robstab.linmodel import build_a, linearize
        from robstab.powerflow import solve_powerflow

        eq = solve_powerflow(two, SingleBus(2, 0.98), 2.6)
        sp = spectrum(build_a(linearize(None, eq), TauAssignment.uniform(1, 1.0 / HOPF_2BUS)))
        return [["re", "im"]] + [[_num(e.real), _num(e.imag)] for e in sp.eigenvalues]
    if target == "fig5":
        return _boundary_rows(w, SingleBus(8, 0.894), jobs)
    if target == "fig6":
        return _boundary_rows(w, Correlated(8, 1.0, 0.9), jobs)
    if target == "fig9":
        return _traj_rows(two, SingleBus(2, 0.98), TauAssignment.uniform(1, 1.0 / HOPF_2BUS))
    if target == "fig10":
        tau = TauAssignment.from_pairs([1.0 / t for t in WSCC_TRAJ])
        return _traj_rows(w, Correlated(8, 1.0, 0.9), tau, start=0.1)
    if target == "fig14":
        return _traj_rows(two, SingleBus(2, 0.98), TauAssignment.uniform(1, 1.0))
    if target == "table1":
        from robstab.rsa import screen_contingencies

        base = _screen_base(w, "8:1.8:0.5")
        taus = [TauAssignment.uniform(3, 1.0 / t) for t in TABLE1_CASES]
        return screen_contingencies(base, TABLE1_TRIPS, taus, seed=seed, jobs=jobs).csv_rows()
    if target == "table2":
        return _sweep("kc", w, [0.5, 1.0, 2.0, 4.0], jobs).rows()
    if target == "table3":
        return _sweep("pf", w, [(0.5, True), (0.9, True), (1.0, True), (0.9, False), (0.5, False)], jobs).rows()
    if target == "table4":
        return _sweep("gain", w, list(TABLE4_GAINS), jobs).rows()
    if target == "table5":
        from robstab.eigscan import coalescence_real_part
        from robstab.powerflow import trace_nose

        rows = [["power_factor", "re_at_coalescence", "error"]]
        tau = TauAssignment.uniform(1, 1.0 / HOPF_2BUS)
        for pf, lag in TABLE5_PF:
            sc = SingleBus(2, pf, lag)
            label = f"{pf:g}{'lag' if lag else 'lead'}" if pf < 1 else "1"
            nose = trace_nose(two, sc, 0.0, 0.1)
            grid = np.linspace(0.0, nose.points[-1].lam, 200)
            try:
                rows.append([label, _num(coalescence_real_part(two, sc, tau, grid)), ""])
            except RobstabError as exc:
                rows.append([label, "nan", type(exc).__name__])
        return rows
    raise UsageError(f"unknown repro target {target!r}; choose from {', '.join(REPRO_TARGETS)}")


def cmd_repro(args):
    rows = repro(args.target, args.jobs, args.seed)
    _write(args, _csv_text(rows, args.seed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parser


def _jobs_default():
    try:
        return max(1, int(os.environ.get("ROBSTAB_JOBS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robstab", description="Robust small-signal stability of power systems with uncertain load dynamics.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help, fmt="csv"):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--out", default=None, help="output file (default stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default=fmt)
        sp.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
        sp.add_argument("--jobs", type=int, default=_jobs_default(), help="worker threads (default $ROBSTAB_JOBS or 1)")
        return sp

    def with_case(sp, scenario=True, lam=True):
        sp.add_argument("--case", required=True, help="case file or embedded name")
        if scenario:
            sp.add_argument("--scenario", default="base")
        if lam:
            sp.add_argument("--lambda", dest="lam", type=float, default=None)

    sp = add("trace", "nose curve")
    with_case(sp, lam=False)
    sp.add_argument("--lambda-start", type=float, default=0.0)
    sp.add_argument("--step", type=float, default=0.1)
    sp.set_defaults(func=cmd_trace)

    sp = add("linearize", "reduced Jacobian at one point", "json")
    with_case(sp)
    sp.set_defaults(func=cmd_linearize)

    sp = add("certify", "robust stability certificate", "json")
    with_case(sp)
    sp.add_argument("--samples", type=int, default=200, help="random time-constant draws for the NRS fallback")
    sp.add_argument("--dump-q", default=None, help="write the Lyapunov blocks to this JSON file")
    sp.set_defaults(func=cmd_certify)

    sp = add("scan", "critical eigenvalue trajectory")
    with_case(sp, lam=False)
    sp.add_argument("--tau-spec", required=True)
    sp.add_argument("--grid", default=None, help="lo:hi:n")
    sp.set_defaults(func=cmd_scan)

    sp = add("simulate", "time-domain simulation")
    with_case(sp)
    sp.add_argument("--tau-spec", required=True)
    sp.add_argument("--trip", default=None, help="branch to trip at t=0, e.g. 7-8")
    sp.add_argument("--t-end", type=float, default=200.0)
    sp.set_defaults(func=cmd_simulate)

    sp = add("screen", "contingency screening")
    with_case(sp, scenario=False, lam=False)
    sp.add_argument("--trips", required=True, help="comma list, e.g. 1-4,2-7")
    sp.add_argument("--tau-cases", required=True, help="comma list of uniform time constants")
    sp.add_argument("--set-load", default=None, help="bus:P:Q override of one base load")
    sp.add_argument("--t-end", type=float, default=200.0)
    sp.set_defaults(func=cmd_screen)

    sp = add("sweep", "robust boundary sweeps")
    with_case(sp, scenario=False, lam=False)
    sp.add_argument("--kind", choices=("kc", "pf", "gain"), required=True)
    sp.add_argument("--values", required=True, help="comma list; pf values like 0.9lag,1,0.9lead")
    sp.set_defaults(func=cmd_sweep)

    sp = add("repro", "data behind a figure or table")
    sp.add_argument("target", choices=REPRO_TARGETS)
    sp.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.jobs < 1:
        parser.print_usage(sys.stderr)
        print("robstab: error: --jobs must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, CaseError) as exc:
        parser.print_usage(sys.stderr)
        print(f"robstab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RobstabError as exc:
        print(f"robstab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        print(f"robstab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
