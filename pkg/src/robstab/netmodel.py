"""Case schema, the generic first-order load model, and device-to-generic conversions.

Every load is described by an effective conductance ``g = P/V**2`` and
susceptance ``b = Q/V**2`` relaxing towards the static characteristic::

    tau_g * dg/dt = -(g V^2 - p0 V^a)
    tau_b * db/dt = -(b V^2 - q0 V^b)

The relaxation times are the uncertain part of the model; a load whose
dynamics are unknown carries the :data:`UNCERTAIN` marker instead of a number.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from robstab.errors import CaseError


class _Uncertain:
    """Marker for a relaxation time that is deliberately left unspecified."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNCERTAIN"

    def __reduce__(self):
        return (_Uncertain, ())


UNCERTAIN = _Uncertain()


def is_uncertain(value) -> bool:
    return value is UNCERTAIN


class BusKind(str, enum.Enum):
    SLACK = "Slack"
    PV = "PV"
    PQ = "PQ"


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    v_setpoint: float | None = None
    angle_ref: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_half: float = 0.0
    tap: float = 1.0
    in_service: bool = True

    @property
    def key(self) -> tuple[int, int]:
        return (self.from_bus, self.to_bus)


@dataclass(frozen=True)
class Generator:
    """Flux-decay machine behind transient reactance with a first-order exciter.

    ``p_set`` is the scheduled active output used for PV machines (ignored for
    the slack machine).  ``E_r`` is the exciter reference; ``None`` means it is
    back-solved from the base operating point.
    """

    bus: int
    x_d: float
    x_dp: float
    T_d0p: float
    T_exc: float
    K_exc: float
    p_set: float = 0.0
    E_r: float | None = None


@dataclass(frozen=True)
class DynamicLoad:
    bus: int
    p0: float
    q0: float
    exp_a: float = 0.0
    exp_b: float = 0.0
    tau_g: Any = UNCERTAIN
    tau_b: Any = UNCERTAIN

    def p_static(self, v):
        return self.p0 * v**self.exp_a

    def q_static(self, v):
        return self.q0 * v**self.exp_b

    def dp_static(self, v):
        if self.exp_a == 0:
            return 0.0 * v
        return self.exp_a * self.p0 * v ** (self.exp_a - 1)

    def dq_static(self, v):
        if self.exp_b == 0:
            return 0.0 * v
        return self.exp_b * self.q0 * v ** (self.exp_b - 1)


# How exciter references behave as the operating point moves:
#   "calibrated" - E_r solved once at the base case, then frozen;
#   "regulated"  - generator terminal voltages are held at their setpoints and
#                  E_r is re-derived at every operating point.
EXCITER_MODES = ("calibrated", "regulated")


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[DynamicLoad, ...]
    s_base: float = 100.0
    name: str = ""
    exciter_reference: str = "calibrated"

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "loads", tuple(self.loads))
        validate_case(self)

    # -- indexing -----------------------------------------------------------
    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack_bus(self) -> Bus:
        return next(b for b in self.buses if b.kind is BusKind.SLACK)

    @property
    def slack_generator(self) -> int:
        """Position of the generator sitting on the slack bus."""
        sid = self.slack_bus.id
        for k, g in enumerate(self.generators):
            if g.bus == sid:
                return k
        raise CaseError("no generator on the slack bus")

    def load_at(self, bus: int) -> int:
        for k, ld in enumerate(self.loads):
            if ld.bus == bus:
                return k
        raise KeyError(f"no load at bus {bus}")

    # -- derived network data ------------------------------------------------
    def ybus(self) -> np.ndarray:
        idx = self.bus_index()
        n = self.n_bus
        Y = np.zeros((n, n), dtype=complex)
        for br in self.branches:
            if not br.in_service:
                continue
            i, j = idx[br.from_bus], idx[br.to_bus]
            ys = 1.0 / complex(br.r, br.x)
            t = br.tap
            Y[i, i] += ys / t**2 + 1j * br.b_half
            Y[j, j] += ys + 1j * br.b_half
            Y[i, j] -= ys / t
            Y[j, i] -= ys / t
        return Y

    # -- functional updates ----------------------------------------------------
    def find_branch(self, a: int, b: int) -> int:
        for k, br in enumerate(self.branches):
            if {br.from_bus, br.to_bus} == {a, b}:
                return k
        raise KeyError(f"no branch between buses {a} and {b}")

    def with_branch_out(self, a: int, b: int) -> "NetworkCase":
        k = self.find_branch(a, b)
        branches = list(self.branches)
        branches[k] = replace(branches[k], in_service=False)
        return replace(self, branches=tuple(branches))

    def components(self) -> list[set[int]]:
        """Bus-id sets of the connected components over in-service branches."""
        adj = {b.id: set() for b in self.buses}
        for br in self.branches:
            if br.in_service:
                adj[br.from_bus].add(br.to_bus)
                adj[br.to_bus].add(br.from_bus)
        seen, comps = set(), []
        for b in self.buses:
            if b.id in seen:
                continue
            stack, comp = [b.id], set()
            while stack:
                u = stack.pop()
                if u in comp:
                    continue
                comp.add(u)
                stack.extend(adj[u] - comp)
            seen |= comp
            comps.append(comp)
        return comps

    def with_loads(self, loads: Iterable[DynamicLoad]) -> "NetworkCase":
        return replace(self, loads=tuple(loads))

    def with_generators(self, generators: Iterable[Generator]) -> "NetworkCase":
        return replace(self, generators=tuple(generators))

    def with_taus(self, taus) -> "NetworkCase":
        """Attach concrete relaxation times, one ``(tau_g, tau_b)`` pair per load."""
        taus = list(taus)
        if len(taus) != len(self.loads):
            raise CaseError("need one tau pair per load")
        loads = [replace(ld, tau_g=float(tg), tau_b=float(tb)) for ld, (tg, tb) in zip(self.loads, taus)]
        return self.with_loads(loads)


def contingency_case(case: NetworkCase, a: int, b: int) -> tuple[NetworkCase, tuple[int, ...]]:
    """Case after tripping branch ``a-b``.

    A trip that separates a generator-only bus (a machine behind its step-up
    transformer) is treated as the outage of that machine: the bus, its
    branches and its generator are dropped.  If the slack machine is lost the
    first remaining generator bus becomes the angle reference.  Any other
    split of the network raises :class:`CaseError`.

    Returns the post-event case and the ids of the dropped buses.
    """
    post = case.with_branch_out(a, b)
    comps = post.components()
    if len(comps) == 1:
        return post, ()
    load_buses = {ld.bus for ld in case.loads}
    main = [c for c in comps if c & load_buses]
    if len(main) != 1:
        raise CaseError(f"tripping {a}-{b} islands load buses")
    main = main[0]
    dropped = set().union(*(c for c in comps if c is not main))
    gen_buses = {g.bus for g in case.generators}
    if not dropped <= gen_buses:
        raise CaseError(f"tripping {a}-{b} islands buses without generation")
    gens = [g for g in case.generators if g.bus not in dropped]
    if not gens:
        raise CaseError(f"tripping {a}-{b} leaves no generator")
    buses = [bb for bb in case.buses if bb.id not in dropped]
    if case.slack_bus.id in dropped:
        new_ref = gens[0].bus
        buses = [replace(bb, kind=BusKind.SLACK, angle_ref=0.0) if bb.id == new_ref else bb for bb in buses]
    branches = [br for br in post.branches if br.from_bus not in dropped and br.to_bus not in dropped]
    out = replace(case, buses=tuple(buses), branches=tuple(branches), generators=tuple(gens))
    return out, tuple(sorted(dropped))


def validate_case(case: NetworkCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus ids")
    slack = [b for b in case.buses if b.kind is BusKind.SLACK]
    if len(slack) != 1:
        raise CaseError(f"exactly one Slack bus required, found {len(slack)}")
    for b in case.buses:
        if b.kind in (BusKind.SLACK, BusKind.PV):
            if b.v_setpoint is None or not b.v_setpoint > 0:
                raise CaseError(f"bus {b.id}: v_setpoint must be positive")
    known = set(ids)
    for br in case.branches:
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {br.from_bus}-{br.to_bus} is a self loop")
        if br.x == 0:
            raise CaseError(f"branch {br.from_bus}-{br.to_bus} has zero reactance")
        if not br.tap > 0:
            raise CaseError(f"branch {br.from_bus}-{br.to_bus} has non-positive tap")
    gen_buses = [g.bus for g in case.generators]
    if len(set(gen_buses)) != len(gen_buses):
        raise CaseError("at most one generator per bus")
    for g in case.generators:
        if g.bus not in known:
            raise CaseError(f"generator references unknown bus {g.bus}")
        if not (g.x_d > g.x_dp > 0):
            raise CaseError(f"generator at bus {g.bus}: need x_d > x_dp > 0")
        if not (g.T_d0p > 0 and g.T_exc > 0 and g.K_exc > 0):
            raise CaseError(f"generator at bus {g.bus}: time constants and gain must be positive")
    by_id = {b.id: b for b in case.buses}
    for g in case.generators:
        if by_id[g.bus].kind is BusKind.PQ:
            raise CaseError(f"generator at bus {g.bus} sits on a PQ bus")
    for b in case.buses:
        if b.kind is not BusKind.PQ and b.id not in gen_buses:
            raise CaseError(f"bus {b.id} is {b.kind.value} but has no generator")
    load_buses = [ld.bus for ld in case.loads]
    if len(set(load_buses)) != len(load_buses):
        raise CaseError("at most one dynamic load per bus")
    for ld in case.loads:
        if ld.bus not in known:
            raise CaseError(f"load references unknown bus {ld.bus}")
        if not (math.isfinite(ld.exp_a) and math.isfinite(ld.exp_b)):
            raise CaseError(f"load at bus {ld.bus}: exponents must be finite")
        for t in (ld.tau_g, ld.tau_b):
            if not is_uncertain(t) and not (isinstance(t, (int, float)) and t > 0):
                raise CaseError(f"load at bus {ld.bus}: tau must be positive or uncertain")
    if case.exciter_reference not in EXCITER_MODES:
        raise CaseError(f"exciter_reference must be one of {EXCITER_MODES}")
    if not case.s_base > 0:
        raise CaseError("s_base must be positive")


# ---------------------------------------------------------------------------
# load dynamics


def _concrete(tau, what):
    if is_uncertain(tau):
        raise ValueError(f"{what} requires concrete time constant")
    return float(tau)


def load_rhs(load: DynamicLoad, g, b, v):
    """Right-hand side ``(dg/dt, db/dt)`` of the generic load model."""
    tau_g = _concrete(load.tau_g, "load_rhs")
    tau_b = _concrete(load.tau_b, "load_rhs")
    if np.any(np.asarray(v) <= 0):
        raise ValueError("voltage must be positive")
    dg = -(g * v**2 - load.p_static(v)) / tau_g
    db = -(b * v**2 - load.q_static(v)) / tau_b
    return dg, db


def instantaneous_power_rate(load: DynamicLoad, g, v, dvdt):
    """Time derivative of the consumed power ``p = g v^2``.

    This is the exponential-recovery form of the same model:
    ``dp/dt = 2 (p/v) dv/dt - (p - P_s(v)) v^2 / tau_g``.
    """
    tau_g = _concrete(load.tau_g, "instantaneous_power_rate")
    if np.any(np.asarray(v) <= 0):
        raise ValueError("voltage must be positive")
    p = g * v**2
    return 2.0 * p / v * dvdt - (p - load.p_static(v)) * v**2 / tau_g


@dataclass(frozen=True)
class InductionMotorParams:
    R_m: float
    X_m: float
    P_m: float
    I_inertia: float
    omega0: float

    def __post_init__(self):
        for name in ("R_m", "X_m", "P_m", "I_inertia", "omega0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 / (self.I_inertia * self.omega0**2)

    @property
    def dh_ds(self) -> float:
        return self.R_m / (self.R_m**2 + self.X_m**2)

    def h(self, s):
        """Electrical conductance seen at the terminals for slip ``s``."""
        return self.dh_ds * s

    def slip(self, g):
        s = g / self.dh_ds
        if not (0.0 < s < 1.0):
            raise ValueError(f"slip recovery failed: g={g!r} maps to s={s!r} outside (0, 1)")
        return s

    def slip_rate(self, s, v):
        return self.alpha * (self.P_m / (1.0 - s) - self.h(s) * v**2)


def motor_as_generic(m: InductionMotorParams, g, v=1.0):
    """Conductance dynamics of an induction motor, with slip recovered from ``g``."""
    s = m.slip(g)
    return m.alpha * m.dh_ds * (m.P_m / (1.0 - s) - g * v**2)


def ultc_as_generic(g_load, K_ratio, v, v_set, T_tap):
    """Equivalent-conductance rate of a static load behind a tap changer."""
    if not (g_load > 0 and K_ratio > 0):
        raise ValueError("conductances must be positive")
    if not T_tap > 0:
        raise ValueError("T_tap must be positive")
    g_eq = g_load * K_ratio**2
    return -(2.0 / T_tap) * math.sqrt(g_load * g_eq) * (K_ratio * v - v_set)


def heating_as_generic(r_coef, T_thermal, P_loss, g, v):
    """Thermostatic heater with linear resistance ``R = r * theta``."""
    if not g > 0:
        raise ValueError("conductance must be positive")
    if not (r_coef > 0 and T_thermal > 0):
        raise ValueError("r_coef and T_thermal must be positive")
    return -(r_coef * g**2 / T_thermal) * (g * v**2 - P_loss)


# ---------------------------------------------------------------------------
# JSON case format

_TAU_KEYS = ("tau_g", "tau_b")


def _tau_from_json(value, where):
    if isinstance(value, str):
        if value.lower() == "uncertain":
            return UNCERTAIN
        raise CaseError(f"{where}: tau must be a number or 'uncertain'")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"{where}: tau must be a number or 'uncertain'")
    return float(value)


def _require(d: dict, keys, where):
    missing = [k for k in keys if k not in d]
    if missing:
        raise CaseError(f"{where}: missing keys {missing}")


def case_from_dict(data: dict) -> NetworkCase:
    if not isinstance(data, dict):
        raise CaseError("case must be a JSON object")
    _require(data, ("buses", "branches", "generators", "loads", "s_base"), "case")
    try:
        buses = []
        for k, b in enumerate(data["buses"]):
            _require(b, ("id", "kind"), f"bus #{k}")
            buses.append(
                Bus(
                    id=int(b["id"]),
                    kind=BusKind(b["kind"]),
                    v_setpoint=None if b.get("v_setpoint") is None else float(b["v_setpoint"]),
                    angle_ref=float(b.get("angle_ref", 0.0)),
                )
            )
        branches = []
        for k, br in enumerate(data["branches"]):
            _require(br, ("from", "to", "r", "x"), f"branch #{k}")
            in_service = br.get("in_service", True)
            if not isinstance(in_service, bool):
                raise CaseError(f"branch #{k}: in_service must be a boolean")
            branches.append(
                Branch(
                    from_bus=int(br["from"]),
                    to_bus=int(br["to"]),
                    r=float(br["r"]),
                    x=float(br["x"]),
                    b_half=float(br.get("b_half", 0.0)),
                    tap=float(br.get("tap", 1.0)),
                    in_service=in_service,
                )
            )
        gens = []
        for k, g in enumerate(data["generators"]):
            _require(g, ("bus", "x_d", "x_dp", "T_d0p", "T_exc", "K_exc"), f"generator #{k}")
            gens.append(
                Generator(
                    bus=int(g["bus"]),
                    x_d=float(g["x_d"]),
                    x_dp=float(g["x_dp"]),
                    T_d0p=float(g["T_d0p"]),
                    T_exc=float(g["T_exc"]),
                    K_exc=float(g["K_exc"]),
                    p_set=float(g.get("p_set", 0.0)),
                    E_r=None if g.get("E_r") is None else float(g["E_r"]),
                )
            )
        loads = []
        for k, ld in enumerate(data["loads"]):
            _require(ld, ("bus", "p0", "q0"), f"load #{k}")
            loads.append(
                DynamicLoad(
                    bus=int(ld["bus"]),
                    p0=float(ld["p0"]),
                    q0=float(ld["q0"]),
                    exp_a=float(ld.get("exp_a", 0.0)),
                    exp_b=float(ld.get("exp_b", 0.0)),
                    tau_g=_tau_from_json(ld.get("tau_g", "uncertain"), f"load #{k}"),
                    tau_b=_tau_from_json(ld.get("tau_b", "uncertain"), f"load #{k}"),
                )
            )
        return NetworkCase(
            buses=tuple(buses),
            branches=tuple(branches),
            generators=tuple(gens),
            loads=tuple(loads),
            s_base=float(data["s_base"]),
            name=str(data.get("name", "")),
            exciter_reference=str(data.get("exciter_reference", "calibrated")),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CaseError):
            raise
        raise CaseError(f"schema violation: {exc}") from exc


def case_to_dict(case: NetworkCase) -> dict:
    def tau(t):
        return "uncertain" if is_uncertain(t) else t

    return {
        "name": case.name,
        "s_base": case.s_base,
        "exciter_reference": case.exciter_reference,
        "buses": [
            {"id": b.id, "kind": b.kind.value, "v_setpoint": b.v_setpoint, "angle_ref": b.angle_ref}
            for b in case.buses
        ],
        "branches": [
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "r": br.r,
                "x": br.x,
                "b_half": br.b_half,
                "tap": br.tap,
                "in_service": br.in_service,
            }
            for br in case.branches
        ],
        "generators": [
            {
                "bus": g.bus,
                "x_d": g.x_d,
                "x_dp": g.x_dp,
                "T_d0p": g.T_d0p,
                "T_exc": g.T_exc,
                "K_exc": g.K_exc,
                "p_set": g.p_set,
                "E_r": g.E_r,
            }
            for g in case.generators
        ],
        "loads": [
            {
                "bus": ld.bus,
                "p0": ld.p0,
                "q0": ld.q0,
                "exp_a": ld.exp_a,
                "exp_b": ld.exp_b,
                "tau_g": tau(ld.tau_g),
                "tau_b": tau(ld.tau_b),
            }
            for ld in case.loads
        ],
    }


def serialize_case(case: NetworkCase) -> str:
    return json.dumps(case_to_dict(case), indent=2)


def parse_case(path) -> NetworkCase:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: invalid JSON ({exc})") from exc
    return case_from_dict(data)


EMBEDDED_CASES = ("rudimentary2", "wscc9")


def embedded_case_path(name: str):
    return resources.files("robstab.cases").joinpath(f"{name}.json")


def load_case(name_or_path) -> NetworkCase:
    """Load an embedded case by name, or any case file by path."""
    s = str(name_or_path)
    if s in EMBEDDED_CASES:
        return case_from_dict(json.loads(embedded_case_path(s).read_text()))
    stem = Path(s).stem
    if not Path(s).exists() and stem in EMBEDDED_CASES:
        return case_from_dict(json.loads(embedded_case_path(stem).read_text()))
    return parse_case(s)


__all__ = [
    "UNCERTAIN",
    "Bus",
    "BusKind",
    "Branch",
    "Generator",
    "DynamicLoad",
    "NetworkCase",
    "contingency_case",
    "InductionMotorParams",
    "load_rhs",
    "instantaneous_power_rate",
    "motor_as_generic",
    "ultc_as_generic",
    "heating_as_generic",
    "parse_case",
    "load_case",
    "case_from_dict",
    "case_to_dict",
    "serialize_case",
]
