"""Small dense primal-dual interior-point SDP solver.

Solves the pair::

    (P)  min <C, X>   s.t. <A_i, X> = b_i,  X >= 0
    (D)  max b'y      s.t. Z = C - sum_i y_i A_i >= 0

over a product of symmetric blocks (``"s"``) and nonnegative orthants
(``"l"``, stored as vectors).  The search direction is HKM with a
Mehrotra predictor-corrector and an infeasible start.  Problem sizes in this
package are at most a few hundred constraints, so everything is dense.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Block:
    kind: str  # "s" or "l"
    C: np.ndarray  # (n, n) or (n,)
    A: np.ndarray  # (m, n, n) or (m, n)

    @property
    def dim(self):
        return self.C.shape[0]


@dataclass
class SdpResult:
    y: np.ndarray
    X: list
    Z: list
    primal_obj: float
    dual_obj: float
    gap: float
    pinf: float
    dinf: float
    iterations: int
    converged: bool


def _inner(blk: Block, U, V):
    if blk.kind == "s":
        return float(np.sum(U * V))
    return float(U @ V)


def _op(blk: Block, X):
    # A(X)_i = <A_i, X>
    if blk.kind == "s":
        return np.einsum("iab,ab->i", blk.A, X)
    return blk.A @ X


def _adj(blk: Block, y):
    if blk.kind == "s":
        return np.einsum("i,iab->ab", y, blk.A)
    return y @ blk.A


def _sym(M):
    return 0.5 * (M + M.T)


def _max_step(blk: Block, X, dX):
    """Largest alpha with X + alpha dX in the cone (inf if unbounded)."""
    if blk.kind == "l":
        neg = dX < 0
        if not np.any(neg):
            return np.inf
        return float(np.min(-X[neg] / dX[neg]))
    try:
        L = np.linalg.cholesky(X)
        Li = np.linalg.solve(L, np.eye(L.shape[0]))
    except np.linalg.LinAlgError:
        # rounding pushed X onto the boundary; use a clipped square root
        w, V = np.linalg.eigh(X)
        w = np.maximum(w, 1e-300 + 1e-15 * max(w[-1], 1e-300))
        Li = (V / np.sqrt(w)).T
    W = _sym(Li @ dX @ Li.T)
    lam_min = np.linalg.eigvalsh(W)[0]
    return np.inf if lam_min >= 0 else float(-1.0 / lam_min)


def solve_sdp(blocks: list[Block], b: np.ndarray, max_iter: int = 200, tol: float = 1e-9, step_frac: float = 0.95, accept: float = 1e-7, verbose: bool = False) -> SdpResult:
    b = np.asarray(b, dtype=float)
    m = b.size
    N = sum(blk.dim for blk in blocks)
    normA = max(1.0, max(np.max(np.abs(blk.A)) if blk.A.size else 0.0 for blk in blocks))
    normC = max(1.0, max(np.max(np.abs(blk.C)) if blk.C.size else 0.0 for blk in blocks))
    normb = max(1.0, float(np.max(np.abs(b))))

    X, Z = [], []
    for blk in blocks:
        n = blk.dim
        xi = max(10.0, np.sqrt(n), n * normb / normA)
        eta = max(10.0, np.sqrt(n), normA, normC)
        if blk.kind == "s":
            X.append(xi * np.eye(n))
            Z.append(eta * np.eye(n))
        else:
            X.append(xi * np.ones(n))
            Z.append(eta * np.ones(n))
    y = np.zeros(m)

    def residuals(X, y, Z):
        rp = b - sum(_op(blk, Xk) for blk, Xk in zip(blocks, X))
        Rd = [blk.C - Zk - _adj(blk, y) for blk, Zk in zip(blocks, Z)]
        return rp, Rd

    converged = False
    it = 0
    best = None  # (merit, iteration, X, y, Z)
    for it in range(1, max_iter + 1):
        rp, Rd = residuals(X, y, Z)
        pobj = sum(_inner(blk, blk.C, Xk) for blk, Xk in zip(blocks, X))
        dobj = float(b @ y)
        mu = sum(_inner(blk, Xk, Zk) for blk, Xk, Zk in zip(blocks, X, Z)) / N
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        pinf = np.linalg.norm(rp) / (1.0 + np.linalg.norm(b))
        dinf = max(np.linalg.norm(R) for R in Rd) / (1.0 + normC)
        if verbose:
            print(f"{it:3d} pobj={pobj:+.10e} dobj={dobj:+.10e} gap={gap:.2e} pinf={pinf:.2e} dinf={dinf:.2e}")
        merit = max(gap, pinf, dinf)
        if best is None or merit < best[0]:
            best = (merit, it, X, y, Z)
        if merit < tol:
            converged = True
            break
        if it - best[1] > 15:
            # ill-conditioning near a degenerate optimum: stop and keep the best iterate
            break

        Zinv = [np.linalg.inv(Zk) if blk.kind == "s" else 1.0 / Zk for blk, Zk in zip(blocks, Z)]
        # Schur complement M_ij = <A_i, X A_j Z^{-1}>
        M = np.zeros((m, m))
        for blk, Xk, Zi in zip(blocks, X, Zinv):
            if blk.kind == "s":
                T = np.matmul(np.matmul(Xk, blk.A), Zi)
                M += np.einsum("iab,jab->ij", blk.A, T)
            else:
                M += (blk.A * (Xk * Zi)) @ blk.A.T
        M = _sym(M)
        try:
            cho = np.linalg.cholesky(M)

            def msolve(r):
                return np.linalg.solve(cho.T, np.linalg.solve(cho, r))
        except np.linalg.LinAlgError:
            Mp = np.linalg.pinv(M)

            def msolve(r):
                return Mp @ r

        def direction(Rc):
            rhs = rp.copy()
            for blk, Xk, Zi, Rdk, Rck in zip(blocks, X, Zinv, Rd, Rc):
                if blk.kind == "s":
                    rhs += -_op(blk, Rck) + _op(blk, Xk @ Rdk @ Zi)
                else:
                    rhs += -_op(blk, Rck) + _op(blk, Xk * Rdk * Zi)
            dy = msolve(rhs)
            dX, dZ = [], []
            for blk, Xk, Zi, Rdk, Rck in zip(blocks, X, Zinv, Rd, Rc):
                dz = Rdk - _adj(blk, dy)
                if blk.kind == "s":
                    dx = Rck - _sym(Xk @ dz @ Zi)
                else:
                    dx = Rck - Xk * dz * Zi
                dX.append(dx)
                dZ.append(dz)
            return dX, dy, dZ

        def steps(dX, dZ):
            ap = min([1.0] + [step_frac * _max_step(blk, Xk, d) for blk, Xk, d in zip(blocks, X, dX)])
            ad = min([1.0] + [step_frac * _max_step(blk, Zk, d) for blk, Zk, d in zip(blocks, Z, dZ)])
            return ap, ad

        # predictor
        Rc = [-Xk for Xk in X]
        dXa, dya, dZa = direction(Rc)
        ap, ad = steps(dXa, dZa)
        mu_a = sum(_inner(blk, Xk + ap * dx, Zk + ad * dz) for blk, Xk, Zk, dx, dz in zip(blocks, X, Z, dXa, dZa)) / N
        sigma = min(1.0, (mu_a / mu) ** 3) if mu > 0 else 0.0
        # corrector
        Rc = []
        for blk, Xk, Zi, dx, dz in zip(blocks, X, Zinv, dXa, dZa):
            if blk.kind == "s":
                Rc.append(sigma * mu * Zi - Xk - _sym(dx @ dz @ Zi))
            else:
                Rc.append(sigma * mu * Zi - Xk - dx * dz * Zi)
        dX, dy, dZ = direction(Rc)
        ap, ad = steps(dX, dZ)
        X = [Xk + ap * d for Xk, d in zip(X, dX)]
        X = [_sym(Xk) if blk.kind == "s" else Xk for blk, Xk in zip(blocks, X)]
        y = y + ad * dy
        Z = [Zk + ad * d for Zk, d in zip(Z, dZ)]
        Z = [_sym(Zk) if blk.kind == "s" else Zk for blk, Zk in zip(blocks, Z)]
        if ap < 1e-10 and ad < 1e-10:
            break

    if best is not None:
        _, _, X, y, Z = best
    rp, Rd = residuals(X, y, Z)
    pobj = sum(_inner(blk, blk.C, Xk) for blk, Xk in zip(blocks, X))
    dobj = float(b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    pinf = float(np.linalg.norm(rp) / (1.0 + np.linalg.norm(b)))
    dinf = float(max(np.linalg.norm(R) for R in Rd) / (1.0 + normC))
    converged = converged or max(gap, pinf, dinf) < accept
    return SdpResult(y, X, Z, pobj, dobj, gap, pinf, dinf, it, converged)
