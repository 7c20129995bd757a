"""Semi-explicit DAE of the voltage-dynamics model and its analytic partials.

Variable layout (fixed throughout the package)::

    x = [E'_1, Efd_1, ..., E'_ng, Efd_ng, g_1, b_1, ..., g_nl, b_nl]
    y = [V_1..V_n, theta of every non-slack bus, delta'_1..delta'_ng]

Generator rows of ``f`` carry their own time constants; load rows are the
numerators ``-(g V^2 - P^s(V))`` so the load time constants factor out.
Algebraic rows are the active and reactive balances of every bus followed by
the electrical-power constraint ``P_e = P_m`` of every non-slack machine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from robstab.netmodel import NetworkCase


@dataclass
class Partials:
    fx: np.ndarray
    fy: np.ndarray
    gx: np.ndarray
    gy: np.ndarray


class DaeModel:
    def __init__(self, case: NetworkCase, e_r, p_m):
        self.case = case
        idx = case.bus_index()
        self.nb = case.n_bus
        self.ng = len(case.generators)
        self.nl = len(case.loads)
        self.slack = idx[case.slack_bus.id]
        self.slack_gen = case.slack_generator
        self.gbus = np.array([idx[g.bus] for g in case.generators], dtype=int)
        self.lbus = np.array([idx[ld.bus] for ld in case.loads], dtype=int)
        self.xd = np.array([g.x_d for g in case.generators])
        self.xdp = np.array([g.x_dp for g in case.generators])
        self.td0 = np.array([g.T_d0p for g in case.generators])
        self.texc = np.array([g.T_exc for g in case.generators])
        self.kexc = np.array([g.K_exc for g in case.generators])
        self.p0 = np.array([ld.p0 for ld in case.loads])
        self.q0 = np.array([ld.q0 for ld in case.loads])
        self.ea = np.array([ld.exp_a for ld in case.loads])
        self.eb = np.array([ld.exp_b for ld in case.loads])
        self.e_r = np.asarray(e_r, dtype=float).copy()
        self.p_m = np.asarray(p_m, dtype=float).copy()
        self.Y = case.ybus()
        self.ang = np.array([i for i in range(self.nb) if i != self.slack], dtype=int)
        self.pm_gens = np.array([j for j in range(self.ng) if j != self.slack_gen], dtype=int)
        self.nx = 2 * self.ng + 2 * self.nl
        self.ny = self.nb + len(self.ang) + self.ng
        self.n_alg = 2 * self.nb + len(self.pm_gens)
        assert self.ny == self.n_alg

    # -- packing -------------------------------------------------------------
    @property
    def n_gen_states(self):
        return 2 * self.ng

    def split_x(self, x):
        xg = x[: 2 * self.ng]
        xl = x[2 * self.ng :]
        return xg[0::2], xg[1::2], xl[0::2], xl[1::2]

    def pack_x(self, e_prime, e_fd, g, b):
        x = np.empty(self.nx)
        x[0 : 2 * self.ng : 2] = e_prime
        x[1 : 2 * self.ng : 2] = e_fd
        x[2 * self.ng :: 2] = g
        x[2 * self.ng + 1 :: 2] = b
        return x

    def split_y(self, y):
        v = y[: self.nb]
        th = np.zeros(self.nb)
        th[self.ang] = y[self.nb : self.nb + len(self.ang)]
        dp = y[self.nb + len(self.ang) :]
        return v, th, dp

    def pack_y(self, v, theta, delta_p):
        return np.concatenate([v, np.asarray(theta)[self.ang], delta_p])

    # -- static load characteristic -----------------------------------------
    def p_static(self, vl):
        return self.p0 * vl**self.ea

    def q_static(self, vl):
        return self.q0 * vl**self.eb

    def dp_static(self, vl):
        return np.where(self.ea == 0, 0.0, self.ea * self.p0 * vl ** (self.ea - 1))

    def dq_static(self, vl):
        return np.where(self.eb == 0, 0.0, self.eb * self.q0 * vl ** (self.eb - 1))

    # -- residuals -------------------------------------------------------------
    def gen_injection(self, ep, v, th, dp):
        vk = v[self.gbus]
        d = th[self.gbus] - dp
        pg = -ep * vk * np.sin(d) / self.xdp
        qg = (ep * vk * np.cos(d) - vk**2) / self.xdp
        return pg, qg

    def f(self, x, y):
        ep, efd, g, b = self.split_x(x)
        v, th, dp = self.split_y(y)
        vk = v[self.gbus]
        c = np.cos(th[self.gbus] - dp)
        fe = (-(self.xd / self.xdp) * ep + (self.xd - self.xdp) / self.xdp * vk * c + efd) / self.td0
        ff = (-efd - self.kexc * (vk - self.e_r)) / self.texc
        vl = v[self.lbus]
        fg = -(g * vl**2 - self.p_static(vl))
        fb = -(b * vl**2 - self.q_static(vl))
        out = np.empty(self.nx)
        out[0 : 2 * self.ng : 2] = fe
        out[1 : 2 * self.ng : 2] = ff
        out[2 * self.ng :: 2] = fg
        out[2 * self.ng + 1 :: 2] = fb
        return out

    def g(self, x, y, Y=None):
        Y = self.Y if Y is None else Y
        ep, efd, gl, bl = self.split_x(x)
        v, th, dp = self.split_y(y)
        vc = v * np.exp(1j * th)
        s_net = vc * np.conj(Y @ vc)
        pg, qg = self.gen_injection(ep, v, th, dp)
        P = -s_net.real
        Q = -s_net.imag
        np.add.at(P, self.gbus, pg)
        np.add.at(Q, self.gbus, qg)
        vl = v[self.lbus]
        np.add.at(P, self.lbus, -gl * vl**2)
        np.add.at(Q, self.lbus, -bl * vl**2)
        pm_rows = pg[self.pm_gens] - self.p_m[self.pm_gens]
        return np.concatenate([P, Q, pm_rows])

    # -- analytic partials -----------------------------------------------------
    def partials(self, x, y, Y=None) -> Partials:
        Y = self.Y if Y is None else Y
        ng, nl, nb = self.ng, self.nl, self.nb
        ep, efd, gl, bl = self.split_x(x)
        v, th, dp = self.split_y(y)
        na = len(self.ang)
        iv = np.arange(nb)  # column of V_i
        ith = np.full(nb, -1)
        ith[self.ang] = nb + np.arange(na)
        idp = nb + na + np.arange(ng)

        fx = np.zeros((self.nx, self.nx))
        fy = np.zeros((self.nx, self.ny))
        gx = np.zeros((self.n_alg, self.nx))
        gy = np.zeros((self.n_alg, self.ny))

        k = self.gbus
        vk = v[k]
        d = th[k] - dp
        c, s = np.cos(d), np.sin(d)
        kx = (self.xd - self.xdp) / self.xdp
        for j in range(ng):
            re, rf = 2 * j, 2 * j + 1
            fx[re, re] = -(self.xd[j] / self.xdp[j]) / self.td0[j]
            fx[re, rf] = 1.0 / self.td0[j]
            fy[re, iv[k[j]]] += kx[j] * c[j] / self.td0[j]
            if ith[k[j]] >= 0:
                fy[re, ith[k[j]]] += -kx[j] * vk[j] * s[j] / self.td0[j]
            fy[re, idp[j]] += kx[j] * vk[j] * s[j] / self.td0[j]
            fx[rf, rf] = -1.0 / self.texc[j]
            fy[rf, iv[k[j]]] += -self.kexc[j] / self.texc[j]

        vl = v[self.lbus]
        for l in range(nl):
            rg, rb = 2 * ng + 2 * l, 2 * ng + 2 * l + 1
            fx[rg, rg] = -vl[l] ** 2
            fx[rb, rb] = -vl[l] ** 2
            col = iv[self.lbus[l]]
            fy[rg, col] += -2 * gl[l] * vl[l] + self.dp_static(vl)[l]
            fy[rb, col] += -2 * bl[l] * vl[l] + self.dq_static(vl)[l]

        # network part: S_i = V_i conj(sum_k Y_ik V_k)
        vc = v * np.exp(1j * th)
        ibus = Y @ vc
        dS_dth = 1j * np.diag(vc) @ np.conj(np.diag(ibus) - Y @ np.diag(vc))
        vn = np.exp(1j * th)
        dS_dv = np.diag(vc) @ np.conj(Y @ np.diag(vn)) + np.diag(np.conj(ibus) * vn)
        gy[:nb, :nb] -= dS_dv.real
        gy[nb : 2 * nb, :nb] -= dS_dv.imag
        gy[:nb, nb : nb + na] -= dS_dth.real[:, self.ang]
        gy[nb : 2 * nb, nb : nb + na] -= dS_dth.imag[:, self.ang]

        # generator injections
        dpg = {
            "ep": -vk * s / self.xdp,
            "v": -ep * s / self.xdp,
            "th": -ep * vk * c / self.xdp,
            "dp": ep * vk * c / self.xdp,
        }
        dqg = {
            "ep": vk * c / self.xdp,
            "v": (ep * c - 2 * vk) / self.xdp,
            "th": -ep * vk * s / self.xdp,
            "dp": ep * vk * s / self.xdp,
        }
        row_pm = {j: 2 * nb + r for r, j in enumerate(self.pm_gens)}
        for j in range(ng):
            rows = [(k[j], dpg), (nb + k[j], dqg)]
            if j in row_pm:
                rows.append((row_pm[j], dpg))
            for r, dd in rows:
                gx[r, 2 * j] += dd["ep"][j]
                gy[r, iv[k[j]]] += dd["v"][j]
                if ith[k[j]] >= 0:
                    gy[r, ith[k[j]]] += dd["th"][j]
                gy[r, idp[j]] += dd["dp"][j]

        for l in range(nl):
            bi = self.lbus[l]
            gx[bi, 2 * ng + 2 * l] += -vl[l] ** 2
            gx[nb + bi, 2 * ng + 2 * l + 1] += -vl[l] ** 2
            gy[bi, iv[bi]] += -2 * gl[l] * vl[l]
            gy[nb + bi, iv[bi]] += -2 * bl[l] * vl[l]
        return Partials(fx, fy, gx, gy)

    # -- equilibrium load states ------------------------------------------------
    def load_states(self, v):
        vl = v[self.lbus]
        return self.p_static(vl) / vl**2, self.q_static(vl) / vl**2

    def load_state_derivs(self, v):
        vl = v[self.lbus]
        ps, qs = self.p_static(vl), self.q_static(vl)
        dg = self.dp_static(vl) / vl**2 - 2 * ps / vl**3
        db = self.dq_static(vl) / vl**2 - 2 * qs / vl**3
        return dg, db


def fd_jacobian(fun, z, h=1e-6):
    """Central-difference Jacobian, used only as a test oracle."""
    z = np.asarray(z, dtype=float)
    f0 = np.asarray(fun(z))
    J = np.empty((f0.size, z.size))
    for i in range(z.size):
        step = h * max(1.0, abs(z[i]))
        zp = z.copy()
        zm = z.copy()
        zp[i] += step
        zm[i] -= step
        J[:, i] = (np.asarray(fun(zp)) - np.asarray(fun(zm))) / (2 * step)
    return J
