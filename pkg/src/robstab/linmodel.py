"""Linearized DAE blocks, algebraic elimination and the state matrix ``A_T``."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from robstab.dae import DaeModel
from robstab.errors import NearSingularAlgebraic
from robstab.netmodel import NetworkCase, is_uncertain

COND_MAX = 1e12


@dataclass
class DaeBlocks:
    f_g_xg: np.ndarray
    f_g_xl: np.ndarray
    f_g_y: np.ndarray
    f_l_xg: np.ndarray
    f_l_xl: np.ndarray
    f_l_y: np.ndarray
    g_xg: np.ndarray
    g_xl: np.ndarray
    g_y: np.ndarray

    @property
    def n_G(self):
        return self.f_g_xg.shape[0]

    @property
    def n_L(self):
        return self.f_l_xl.shape[0]

    @property
    def m(self):
        return self.g_y.shape[0]

    def fx(self):
        return np.block([[self.f_g_xg, self.f_g_xl], [self.f_l_xg, self.f_l_xl]])

    def fy(self):
        return np.vstack([self.f_g_y, self.f_l_y])

    def gx(self):
        return np.hstack([self.g_xg, self.g_xl])


@dataclass
class ReducedJacobian:
    j_gg: np.ndarray
    j_gl: np.ndarray
    j_lg: np.ndarray
    j_ll: np.ndarray

    @property
    def n_G(self):
        return self.j_gg.shape[0]

    @property
    def n_L(self):
        return self.j_ll.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.j_gg, self.j_gl], [self.j_lg, self.j_ll]])

    @classmethod
    def from_matrix(cls, J, n_G: int) -> "ReducedJacobian":
        J = np.asarray(J, dtype=float)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ValueError("J must be square")
        if not 0 <= n_G <= J.shape[0]:
            raise ValueError("n_G out of range")
        return cls(J[:n_G, :n_G].copy(), J[:n_G, n_G:].copy(), J[n_G:, :n_G].copy(), J[n_G:, n_G:].copy())

    def to_dict(self) -> dict:
        return {
            "n_G": self.n_G,
            "n_L": self.n_L,
            "j_gg": self.j_gg.tolist(),
            "j_gl": self.j_gl.tolist(),
            "j_lg": self.j_lg.tolist(),
            "j_ll": self.j_ll.tolist(),
        }


@dataclass(frozen=True)
class TauAssignment:
    """Diagonal of the load time-constant matrix, ordered ``(tau_g1, tau_b1, tau_g2, ...)``."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if any(not (v > 0 and np.isfinite(v)) for v in vals):
            raise ValueError("time constants must be positive and finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, n_loads: int, tau: float) -> "TauAssignment":
        return cls((tau,) * (2 * n_loads))

    @classmethod
    def from_pairs(cls, pairs) -> "TauAssignment":
        out = []
        for p in pairs:
            if np.isscalar(p):
                out += [p, p]
            else:
                tg, tb = p
                out += [tg, tb]
        return cls(tuple(out))

    @classmethod
    def from_case(cls, case: NetworkCase) -> "TauAssignment":
        pairs = []
        for ld in case.loads:
            if is_uncertain(ld.tau_g) or is_uncertain(ld.tau_b):
                raise ValueError(f"load at bus {ld.bus}: requires concrete time constant")
            pairs.append((ld.tau_g, ld.tau_b))
        return cls.from_pairs(pairs)

    def __len__(self):
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values)

    def scaled(self, factor) -> "TauAssignment":
        return TauAssignment(tuple(np.asarray(self.values) * factor))

    def pairs(self):
        v = self.values
        return [(v[2 * i], v[2 * i + 1]) for i in range(len(v) // 2)]


def model_for(case: NetworkCase | None, eq) -> DaeModel:
    """DAE model at ``eq``; ``case`` may override network and machine data."""
    if case is None:
        return eq.model()
    c = case.with_loads(eq.case.loads)
    return DaeModel(c, eq.e_r, eq.p_m)


def assemble_blocks(case: NetworkCase | None, eq) -> DaeBlocks:
    """Analytic partials of the DAE at an equilibrium.

    Loads are always taken from ``eq`` (the scenario-applied case); ``case``
    supplies network and machine parameters when given.
    """
    m = model_for(case, eq)
    x, y = eq.x(), eq.y()
    P = m.partials(x, y)
    n = 2 * m.ng
    return DaeBlocks(
        f_g_xg=P.fx[:n, :n],
        f_g_xl=P.fx[:n, n:],
        f_g_y=P.fy[:n],
        f_l_xg=P.fx[n:, :n],
        f_l_xl=P.fx[n:, n:],
        f_l_y=P.fy[n:],
        g_xg=P.gx[:, :n],
        g_xl=P.gx[:, n:],
        g_y=P.gy,
    )


def reduce(blocks: DaeBlocks, cond_max: float = COND_MAX) -> ReducedJacobian:
    """Eliminate the algebraic variables: ``J = F_x - F_y G_y^{-1} G_x``."""
    gy = blocks.g_y
    cond = np.linalg.cond(gy) if gy.size else 1.0
    if not np.isfinite(cond) or cond > cond_max:
        raise NearSingularAlgebraic(f"algebraic Jacobian is near singular (cond={cond:.3e})", cond)
    fx, fy, gx = blocks.fx(), blocks.fy(), blocks.gx()
    J = fx - fy @ np.linalg.solve(gy, gx) if gy.size else fx
    return ReducedJacobian.from_matrix(J, blocks.n_G)


def build_a(j: ReducedJacobian, tau: TauAssignment) -> np.ndarray:
    """``A_T = blockdiag(I, T^{-1}) J``."""
    tau_arr = np.asarray(tau.values if isinstance(tau, TauAssignment) else tau, dtype=float)
    if tau_arr.shape != (j.n_L,):
        raise ValueError(f"dimension mismatch: {tau_arr.size} time constants for {j.n_L} load states")
    scale = np.concatenate([np.ones(j.n_G), 1.0 / tau_arr])
    return scale[:, None] * j.matrix


def linearize(case: NetworkCase | None, eq) -> ReducedJacobian:
    return reduce(assemble_blocks(case, eq))


def retune_exciter_gain(eq, k_exc: float):
    """Same operating point with every exciter gain set to ``k_exc``.

    The references are re-derived (``E_r = V + Efd / K``) so the point stays
    an equilibrium; only the linearization changes.
    """
    case = eq.case
    gens = [replace(g, K_exc=float(k_exc)) for g in case.generators]
    new_case = case.with_generators(gens)
    idx = case.bus_index()
    vk = np.array([eq.v[idx[g.bus]] for g in case.generators])
    er = vk + eq.e_fd / float(k_exc)
    return replace(eq, case=new_case, e_r=er)


__all__ = [
    "DaeBlocks",
    "ReducedJacobian",
    "TauAssignment",
    "assemble_blocks",
    "reduce",
    "build_a",
    "linearize",
    "retune_exciter_gain",
]
