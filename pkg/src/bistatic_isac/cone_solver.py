"""Primal-dual interior-point solver for small mixed-cone programs.

Nesterov-Todd scaled path following with a Mehrotra predictor-corrector step
on the homogeneous self-dual embedding, so primal/dual infeasibility is
detected through embedding certificates rather than divergence heuristics.
Dense linear algebra throughout; second-order-cone blocks of equal dimension
are processed as numpy batches, and PSD blocks (side <= 4) via per-block
Cholesky/SVD scalings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cone_program import (NONNEG, PSD, SOC, Cone, ConeProgram, ConeSolution,
                           kkt_residuals, svec)

STEP_FRACTION = 0.99


class NumericalBreakdownError(ArithmeticError):
    """The Newton system became numerically singular."""


class _PsdOps:
    """svec <-> matrix index maps for one PSD block, vectorized over columns."""

    def __init__(self, side: int):
        self.side = side
        idx = [(i, j) for i in range(side) for j in range(i, side)]
        self.rows = np.array([i for i, _ in idx])
        self.cols = np.array([j for _, j in idx])
        self.off = self.rows != self.cols
        self.to_mat_scale = np.where(self.off, 1.0 / np.sqrt(2.0), 1.0)
        self.to_vec_scale = np.where(self.off, np.sqrt(2.0), 1.0)

    def mat(self, v: np.ndarray) -> np.ndarray:
        """(q,) or (q, m) svec data -> (p, p) or (p, p, m) symmetric matrices."""
        scaled = v * (self.to_mat_scale if v.ndim == 1 else self.to_mat_scale[:, None])
        shape = (self.side, self.side) + v.shape[1:]
        out = np.zeros(shape, dtype=v.dtype)
        out[self.rows, self.cols] = scaled
        out[self.cols, self.rows] = scaled
        return out

    def vec(self, m: np.ndarray) -> np.ndarray:
        v = m[self.rows, self.cols]
        return v * (self.to_vec_scale if v.ndim == 1 else self.to_vec_scale[:, None])

    def congruence(self, r_left: np.ndarray, v: np.ndarray) -> np.ndarray:
        """svec(r_left' U r_left) for each column U of v."""
        u = self.mat(v)
        if u.ndim == 2:
            return self.vec(r_left.T @ u @ r_left)
        out = np.einsum("ab,bcm,cd->adm", r_left.T, u, r_left)
        return self.vec(out)


@dataclass
class _Layout:
    """Index bookkeeping for the slack vector's cone blocks."""

    orth_idx: np.ndarray
    soc_groups: dict[int, np.ndarray]  # dim -> array of block start offsets
    psd_blocks: list[tuple[int, int]]  # (start, side)
    psd_ops: dict[int, _PsdOps]
    degree: int
    size: int

    @classmethod
    def from_cones(cls, cones: list[Cone]) -> "_Layout":
        orth = []
        soc: dict[int, list[int]] = {}
        psd = []
        degree = 0
        start = 0
        for cone in cones:
            if cone.kind == NONNEG:
                orth.extend(range(start, start + cone.dim))
                degree += cone.dim
            elif cone.kind == SOC:
                soc.setdefault(cone.dim, []).append(start)
                degree += 1
            else:
                psd.append((start, cone.dim))
                degree += cone.dim
            start += cone.size
        return cls(
            orth_idx=np.array(orth, dtype=int),
            soc_groups={d: np.array(s, dtype=int) for d, s in soc.items()},
            psd_blocks=psd,
            psd_ops={side: _PsdOps(side) for _, side in psd},
            degree=degree,
            size=start,
        )

    def soc_view(self, v: np.ndarray, dim: int) -> np.ndarray:
        """Gather all dim-sized SOC blocks of v as (n_blocks, dim[, m])."""
        starts = self.soc_groups[dim]
        idx = starts[:, None] + np.arange(dim)[None, :]
        return v[idx]

    def soc_scatter(self, out: np.ndarray, dim: int, blocks: np.ndarray) -> None:
        starts = self.soc_groups[dim]
        idx = starts[:, None] + np.arange(dim)[None, :]
        out[idx] = blocks

    def identity(self) -> np.ndarray:
        e = np.zeros(self.size)
        e[self.orth_idx] = 1.0
        for dim, starts in self.soc_groups.items():
            e[starts] = 1.0
        for start, side in self.psd_blocks:
            e[start:start + side * (side + 1) // 2] = svec(np.eye(side))
        return e

    def block_pattern(self) -> tuple[np.ndarray, np.ndarray]:
        """COO indices of a block-diagonal operator on the slack vector."""
        rows, cols = [list(self.orth_idx)], [list(self.orth_idx)]
        for dim, starts in self.soc_groups.items():
            for st in starts:
                idx = np.arange(st, st + dim)
                r, c = np.meshgrid(idx, idx, indexing="ij")
                rows.append(r.ravel())
                cols.append(c.ravel())
        for start, side in self.psd_blocks:
            q = side * (side + 1) // 2
            idx = np.arange(start, start + q)
            r, c = np.meshgrid(idx, idx, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
        return (np.concatenate([np.asarray(r, dtype=int) for r in rows]),
                np.concatenate([np.asarray(c, dtype=int) for c in cols]))


def _min_margin(layout: _Layout, v: np.ndarray) -> float:
    """Smallest cone 'eigenvalue' of v; positive iff v is strictly interior."""
    worst = np.inf
    if layout.orth_idx.size:
        worst = min(worst, float(v[layout.orth_idx].min()))
    for dim in layout.soc_groups:
        blk = layout.soc_view(v, dim)
        worst = min(worst, float((blk[:, 0] - np.linalg.norm(blk[:, 1:], axis=1)).min()))
    for start, side in layout.psd_blocks:
        ops = layout.psd_ops[side]
        eig = np.linalg.eigvalsh(ops.mat(v[start:start + ops.rows.size]))
        worst = min(worst, float(eig[0]))
    return worst


class _Scaling:
    """Nesterov-Todd scaling W with lambda = W z = W^-T s."""

    def __init__(self, layout: _Layout, s: np.ndarray, z: np.ndarray):
        self.layout = layout
        self.w_orth = np.sqrt(s[layout.orth_idx] / z[layout.orth_idx])
        self.soc = {}
        jmul = lambda u: np.concatenate([u[:, :1], -u[:, 1:]], axis=1)
        for dim in layout.soc_groups:
            sb = layout.soc_view(s, dim)
            zb = layout.soc_view(z, dim)
            det_s = sb[:, 0] ** 2 - np.sum(sb[:, 1:] ** 2, axis=1)
            det_z = zb[:, 0] ** 2 - np.sum(zb[:, 1:] ** 2, axis=1)
            if np.any(det_s <= 0) or np.any(det_z <= 0):
                raise NumericalBreakdownError("SOC iterate left the cone interior")
            sn = sb / np.sqrt(det_s)[:, None]
            zn = zb / np.sqrt(det_z)[:, None]
            gamma = np.sqrt((1.0 + np.sum(sn * zn, axis=1)) / 2.0)
            wbar = (sn + jmul(zn)) / (2.0 * gamma[:, None])
            eta = (det_s / det_z) ** 0.25
            self.soc[dim] = (wbar, eta)
        self.psd = {}
        for start, side in layout.psd_blocks:
            ops = layout.psd_ops[side]
            q = ops.rows.size
            s_mat = ops.mat(s[start:start + q])
            z_mat = ops.mat(z[start:start + q])
            try:
                l_s = np.linalg.cholesky(s_mat)
                l_z = np.linalg.cholesky(z_mat)
            except np.linalg.LinAlgError as exc:
                raise NumericalBreakdownError("PSD iterate left the cone interior") from exc
            u_svd, sv, vt = np.linalg.svd(l_z.T @ l_s)
            r = l_s @ vt.T @ np.diag(sv ** -0.5)
            r_inv = np.diag(sv ** -0.5) @ u_svd.T @ l_z.T
            self.psd[start] = (r, r_inv, sv)
        self.lam = self.apply(z)

    # -- W applications; u may be a vector (k,) or matrix (k, m) of columns ----

    def _soc_bar(self, wbar: np.ndarray, u: np.ndarray, sign: float) -> np.ndarray:
        """W-bar u (sign=+1) or W-bar^-1 u (sign=-1), batched over blocks.

        W-bar = [[w0, w1'], [w1, I + w1 w1'/(1 + w0)]] with w0^2 - |w1|^2 = 1;
        its inverse is J W-bar J, i.e. the same form with w1 negated.
        """
        w0 = wbar[:, 0]
        w1 = sign * wbar[:, 1:]
        if u.ndim == 2:
            dot = np.einsum("bi,bi->b", w1, u[:, 1:])
            top = w0 * u[:, 0] + dot
            rest = u[:, 1:] + (u[:, 0] + dot / (1.0 + w0))[:, None] * w1
            return np.concatenate([top[:, None], rest], axis=1)
        dot = np.einsum("bi,bim->bm", w1, u[:, 1:, :])
        top = w0[:, None] * u[:, 0, :] + dot
        coef = u[:, 0, :] + dot / (1.0 + w0)[:, None]
        rest = u[:, 1:, :] + w1[:, :, None] * coef[:, None, :]
        return np.concatenate([top[:, None, :], rest], axis=1)

    def _apply(self, u: np.ndarray, mode: str) -> np.ndarray:
        lay = self.layout
        out = np.array(u, dtype=float, copy=True)
        if lay.orth_idx.size:
            w = self.w_orth if u.ndim == 1 else self.w_orth[:, None]
            if mode in ("w", "wt"):
                out[lay.orth_idx] = u[lay.orth_idx] * w
            else:
                out[lay.orth_idx] = u[lay.orth_idx] / w
        for dim, (wbar, eta) in self.soc.items():
            blk = lay.soc_view(u, dim)
            e = eta[:, None] if blk.ndim == 2 else eta[:, None, None]
            if mode in ("w", "wt"):
                res = e * self._soc_bar(wbar, blk, +1.0)
            else:
                res = self._soc_bar(wbar, blk, -1.0) / e
            lay.soc_scatter(out, dim, res)
        for start, (r, r_inv, _) in self.psd.items():
            side = r.shape[0]
            ops = lay.psd_ops[side]
            q = ops.rows.size
            blk = u[start:start + q]
            if mode == "w":        # svec(R' U R)
                out[start:start + q] = ops.congruence(r, blk)
            elif mode == "wt":     # svec(R U R')
                out[start:start + q] = ops.congruence(r.T, blk)
            elif mode == "winv":   # svec(R^-T U R^-1)
                out[start:start + q] = ops.congruence(r_inv, blk)
            else:                  # svec(R^-1 U R^-T)
                out[start:start + q] = ops.congruence(r_inv.T, blk)
        return out

    def apply(self, u):
        return self._apply(u, "w")

    def apply_t(self, u):
        return self._apply(u, "wt")

    def apply_inv(self, u):
        return self._apply(u, "winv")

    def apply_t_inv(self, u):
        return self._apply(u, "wtinv")

    def apply_wtw_inv(self, u):
        """(W' W)^-1 u = W^-1 W^-T u."""
        return self.apply_inv(self.apply_t_inv(u))

    def apply_wtw(self, u):
        """W' W u in one fused pass (cheaper than apply_t(apply(u)))."""
        lay = self.layout
        out = np.array(u, dtype=float, copy=True)
        if lay.orth_idx.size:
            w = self.w_orth if u.ndim == 1 else self.w_orth[:, None]
            out[lay.orth_idx] = u[lay.orth_idx] * w * w
        for dim, (wbar, eta) in self.soc.items():
            blk = lay.soc_view(u, dim)
            e2 = (eta ** 2)[:, None] if blk.ndim == 2 else (eta ** 2)[:, None, None]
            # W-bar^2 = 2 wbar wbar' - J applied directly
            if blk.ndim == 2:
                dot = np.einsum("bi,bi->b", wbar, blk)
                res = 2.0 * dot[:, None] * wbar
                res[:, 0] -= blk[:, 0]
                res[:, 1:] += blk[:, 1:]
            else:
                dot = np.einsum("bi,bim->bm", wbar, blk)
                res = 2.0 * wbar[:, :, None] * dot[:, None, :]
                res[:, 0, :] -= blk[:, 0, :]
                res[:, 1:, :] += blk[:, 1:, :]
            lay.soc_scatter(out, dim, e2 * res)
        for start, (r, r_inv, _) in self.psd.items():
            side = r.shape[0]
            ops = lay.psd_ops[side]
            q = ops.rows.size
            p_mat = r @ r.T
            out[start:start + q] = ops.congruence(p_mat, u[start:start + q])
        return out

    def wtw_inv_sparse(self, pattern: tuple[np.ndarray, np.ndarray]) -> sp.csr_matrix:
        """(W' W)^-1 as a sparse block-diagonal matrix on the slack space.

        Orthant: diag(1/w^2).  SOC block: (2 (J wbar)(J wbar)' - J) / eta^2.
        PSD block: the svec-space matrix of U -> Q U Q with Q = R^-T R^-1.
        """
        lay = self.layout
        data = [1.0 / self.w_orth ** 2]
        for dim, (wbar, eta) in self.soc.items():
            v = wbar.copy()
            v[:, 1:] *= -1.0
            blocks = 2.0 * np.einsum("bi,bj->bij", v, v)
            jdiag = np.ones(dim)
            jdiag[1:] = -1.0
            blocks -= np.diag(jdiag)[None, :, :]
            blocks /= (eta ** 2)[:, None, None]
            data.append(blocks.ravel())
        for start, side in lay.psd_blocks:
            ops = lay.psd_ops[side]
            r_inv = self.psd[start][1]
            q_mat = r_inv.T @ r_inv
            op = ops.congruence(q_mat, np.eye(ops.rows.size))
            data.append(op.ravel())
        rows, cols = pattern
        vals = np.concatenate([np.asarray(d).ravel() for d in data])
        return sp.csr_matrix((vals, (rows, cols)), shape=(lay.size, lay.size))


class _Jordan:
    """Jordan-algebra products in the scaled frame."""

    def __init__(self, layout: _Layout):
        self.layout = layout

    def prod(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        lay = self.layout
        out = np.empty(lay.size)
        oi = lay.orth_idx
        if oi.size:
            out[oi] = a[oi] * b[oi]
        for dim in lay.soc_groups:
            ab = lay.soc_view(a, dim)
            bb = lay.soc_view(b, dim)
            top = np.sum(ab * bb, axis=1, keepdims=True)
            rest = ab[:, :1] * bb[:, 1:] + bb[:, :1] * ab[:, 1:]
            lay.soc_scatter(out, dim, np.concatenate([top, rest], axis=1))
        for start, side in lay.psd_blocks:
            ops = lay.psd_ops[side]
            q = ops.rows.size
            am = ops.mat(a[start:start + q])
            bm = ops.mat(b[start:start + q])
            out[start:start + q] = ops.vec(0.5 * (am @ bm + bm @ am))
        return out

    def solve(self, lam: np.ndarray, u: np.ndarray,
              scaling: "_Scaling") -> np.ndarray:
        """x with lam o x = u; lam is the NT scaled point (PSD blocks diagonal)."""
        lay = self.layout
        out = np.empty(lay.size)
        oi = lay.orth_idx
        if oi.size:
            out[oi] = u[oi] / lam[oi]
        for dim in lay.soc_groups:
            lb = lay.soc_view(lam, dim)
            ub = lay.soc_view(u, dim)
            l0 = np.maximum(lb[:, 0], 1e-300)
            det = np.maximum(l0 ** 2 - np.sum(lb[:, 1:] ** 2, axis=1), 1e-300)
            x0 = (l0 * ub[:, 0] - np.sum(lb[:, 1:] * ub[:, 1:], axis=1)) / det
            x1 = (ub[:, 1:] - x0[:, None] * lb[:, 1:]) / l0[:, None]
            lay.soc_scatter(out, dim, np.concatenate([x0[:, None], x1], axis=1))
        for start, side in lay.psd_blocks:
            ops = lay.psd_ops[side]
            q = ops.rows.size
            sv = scaling.psd[start][2]
            denom = 0.5 * (sv[:, None] + sv[None, :])
            out[start:start + q] = ops.vec(ops.mat(u[start:start + q]) / denom)
        return out


def _max_step(layout: _Layout, v: np.ndarray, dv: np.ndarray,
              psd_diag: dict | None = None) -> float:
    """Largest alpha >= 0 with v + alpha dv still in the cone (inf if unbounded).

    When v's PSD blocks are known to be diagonal (the NT scaled point), pass
    their diagonals via psd_diag to skip the Cholesky factorization.
    """
    alpha = np.inf
    oi = layout.orth_idx
    if oi.size:
        neg = dv[oi] < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-v[oi][neg] / dv[oi][neg])))
    for dim in layout.soc_groups:
        vb = layout.soc_view(v, dim)
        db = layout.soc_view(dv, dim)
        # boundary where det(v + a dv) = a^2 qa + a qb + qc hits zero (qc > 0
        # since v is interior); the head coordinate cannot cross zero earlier.
        qa = db[:, 0] ** 2 - np.sum(db[:, 1:] ** 2, axis=1)
        qb = 2.0 * (vb[:, 0] * db[:, 0] - np.sum(vb[:, 1:] * db[:, 1:], axis=1))
        qc = vb[:, 0] ** 2 - np.sum(vb[:, 1:] ** 2, axis=1)
        quad = qa != 0.0
        disc = np.maximum(qb ** 2 - 4.0 * qa * qc, 0.0)
        has_root = quad & (qb ** 2 - 4.0 * qa * qc >= 0.0)
        sq = np.sqrt(disc)
        den = np.where(quad, 2.0 * qa, 1.0)
        r1 = np.where(has_root & ((-qb - sq) / den > 0), (-qb - sq) / den, np.inf)
        r2 = np.where(has_root & ((-qb + sq) / den > 0), (-qb + sq) / den, np.inf)
        lin = (~quad) & (qb < 0)
        r3 = np.where(lin, -qc / np.where(qb != 0, qb, 1.0), np.inf)
        alpha = min(alpha, float(np.min(np.minimum(np.minimum(r1, r2), r3))))
    for start, side in layout.psd_blocks:
        ops = layout.psd_ops[side]
        q = ops.rows.size
        d_mat = ops.mat(dv[start:start + q])
        if psd_diag is not None:
            sv = psd_diag[start]
            t_mat = d_mat / np.sqrt(np.outer(sv, sv))
        else:
            v_mat = ops.mat(v[start:start + q])
            try:
                l = np.linalg.cholesky(v_mat)
            except np.linalg.LinAlgError:
                jitter = 1e-14 * max(float(np.trace(v_mat)) / side, 1e-300)
                try:
                    l = np.linalg.cholesky(v_mat + jitter * np.eye(side))
                except np.linalg.LinAlgError as exc:
                    raise NumericalBreakdownError(
                        "PSD iterate not interior in step rule") from exc
            l_inv = np.linalg.inv(l)
            t_mat = l_inv @ d_mat @ l_inv.T
        eig = np.linalg.eigvalsh(t_mat)
        if eig[0] < 0:
            alpha = min(alpha, -1.0 / float(eig[0]))
    return alpha


class _Kkt:
    """Factorization of [[G'(W'W)^-1 G, A'], [A, 0]] for one scaling."""

    def __init__(self, prog: ConeProgram, scaling: _Scaling,
                 g_csr: sp.csr_matrix, pattern: tuple[np.ndarray, np.ndarray]):
        self.prog = prog
        self.scaling = scaling
        self.g_csr = g_csr
        self.g_csr_t = g_csr.T.tocsr()
        self.q = scaling.wtw_inv_sparse(pattern)
        m = (self.g_csr_t @ (self.q @ g_csr)).toarray()
        m = 0.5 * (m + m.T)
        n_eq = prog.a_eq.shape[0]
        if n_eq == 0:
            self.mode = "chol"
            self.factor = self._chol(m)
        else:
            kkt = np.zeros((prog.n_vars + n_eq, prog.n_vars + n_eq))
            kkt[:prog.n_vars, :prog.n_vars] = m
            kkt[:prog.n_vars, prog.n_vars:] = prog.a_eq.T
            kkt[prog.n_vars:, :prog.n_vars] = prog.a_eq
            self.mode = "lu"
            try:
                self.factor = sla.lu_factor(kkt)
            except (ValueError, sla.LinAlgError) as exc:
                raise NumericalBreakdownError("KKT factorization failed") from exc

    @staticmethod
    def _chol(m: np.ndarray):
        # diagonally-scaled static regularization bounds the Newton directions
        # when the optimal face is degenerate; iterative refinement in solve3
        # measures residuals against the true (unregularized) system, so
        # accuracy is recovered where the factorization permits
        diag = np.diag(m).copy()
        floor = max(float(diag.max(initial=0.0)), 1e-300)
        reg = np.maximum(diag, 1e-10 * floor)
        jitter = 1e-12
        for _ in range(4):
            try:
                return sla.cho_factor(m + jitter * np.diag(reg), lower=True)
            except sla.LinAlgError:
                jitter *= 1e3
        raise NumericalBreakdownError("Newton system numerically singular")

    def _solve3_raw(self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray):
        prog = self.prog
        rhs_x = bx + self.g_csr_t @ (self.q @ bz)
        if self.mode == "chol":
            dx = sla.cho_solve(self.factor, rhs_x)
            dy = np.zeros(0)
        else:
            sol = sla.lu_solve(self.factor, np.concatenate([rhs_x, by]))
            dx, dy = sol[:prog.n_vars], sol[prog.n_vars:]
        dz = self.q @ (self.g_csr @ dx - bz)
        return dx, dy, dz

    def solve3(self, bx: np.ndarray, by: np.ndarray, bz: np.ndarray,
               refine: int = 3):
        """Solve A'dy + G'dz = bx, A dx = by, G dx - W'W dz = bz.

        Iterative-refinement rounds keep the directions accurate once the
        central-path parameter (and with it the conditioning of W'W) becomes
        extreme near convergence; refinement stops early when the correction
        is already negligible.
        """
        prog = self.prog

        def residuals(dx, dy, dz):
            wtw_dz = self.scaling.apply_wtw(dz)
            r1 = bx - (prog.a_eq.T @ dy + self.g_csr_t @ dz)
            r2 = by - prog.a_eq @ dx
            r3 = bz - (self.g_csr @ dx - wtw_dz)
            return r1, r2, r3

        dx, dy, dz = self._solve3_raw(bx, by, bz)
        best = (dx, dy, dz)
        best_norm = np.inf
        rhs_norm = max(float(np.linalg.norm(bx)), float(np.linalg.norm(bz)), 1e-300)
        for _ in range(refine + 1):
            r1, r2, r3 = residuals(dx, dy, dz)
            rn = max(float(np.linalg.norm(r1)), float(np.linalg.norm(r2)),
                     float(np.linalg.norm(r3)))
            if rn >= best_norm:
                break  # refinement diverging in a regularized null direction
            best, best_norm = (dx, dy, dz), rn
            if rn <= 1e-14 * rhs_norm:
                break
            ex, ey, ez = self._solve3_raw(r1, r2, r3)
            dx, dy, dz = dx + ex, dy + ey, dz + ez
        return best


def _identity_scaling(layout: _Layout) -> _Scaling:
    e = layout.identity()
    return _Scaling(layout, e, e)


def solve(prog: ConeProgram, tol_feas: float = 1e-8, tol_gap: float = 1e-8,
          max_iter: int = 200, thorough: bool = True,
          _restarts: int = 1) -> ConeSolution:
    """Solve a mixed-cone program to the requested relative tolerances.

    Returns status Optimal when KKT residuals and the relative duality gap
    meet the tolerances, Infeasible/Unbounded with the corresponding
    certificate ray, or MaxIterations.  Deterministic for identical inputs.
    Raises NumericalBreakdownError when the Newton system degenerates.

    A run that stalls just above tolerance is polished (least-squares dual
    repair) and, if still short, restarted once from its best candidate in a
    fresh embedding, which clears the accumulated round-off that blocks the
    final decade of accuracy.  ``thorough=False`` skips those rescue passes
    for callers that only need a moderately accurate step direction.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _solve_impl(prog, tol_feas, tol_gap, max_iter, thorough, _restarts)


def _solve_impl(prog: ConeProgram, tol_feas: float, tol_gap: float,
                max_iter: int, thorough: bool, _restarts: int) -> ConeSolution:
    layout = _Layout.from_cones(prog.cones)
    if layout.size != prog.n_slacks:
        raise ValueError("cone layout does not match slack dimension")
    c_min = -prog.c  # internal convention: minimize c_min' x
    a_eq, b_eq, g, h = prog.a_eq, prog.b_eq, prog.g, prog.h
    n = prog.n_vars
    jordan = _Jordan(layout)
    e_vec = layout.identity()
    degree = layout.degree + 1

    # -- initial point: least-squares primal/dual guesses pushed into the cone
    g_csr = sp.csr_matrix(prog.g)
    pattern = layout.block_pattern()
    scale0 = _identity_scaling(layout)
    kkt0 = _Kkt(prog, scale0, g_csr, pattern)
    x0, _, dz0 = kkt0.solve3(np.zeros(n), b_eq, h)
    s0 = -dz0  # equals h - G x0 in the W = I system
    if prog.warm_start is not None:
        x0 = np.asarray(prog.warm_start, dtype=float)
        s0 = h - g @ x0
    margin = _min_margin(layout, s0)
    if margin < 1e-8:
        s0 = s0 + (1.0 - margin) * e_vec
    x_t, y0, z0 = kkt0.solve3(-c_min, np.zeros(b_eq.shape[0]), np.zeros(layout.size))
    del x_t
    margin = _min_margin(layout, z0)
    if margin < 1e-8:
        z0 = z0 + (1.0 - margin) * e_vec

    x, y, z, s = x0, y0, z0, s0
    tau, kappa = 1.0, 1.0
    norm_b = 1.0 + float(np.linalg.norm(b_eq))
    norm_h = 1.0 + float(np.linalg.norm(h))
    norm_c = 1.0 + float(np.linalg.norm(c_min))

    best = None
    stall = 0
    mu0 = None
    for iteration in range(max_iter):
        res_x = a_eq.T @ y + g.T @ z + c_min * tau
        res_y = a_eq @ x - b_eq * tau
        res_z = g @ x + s - h * tau
        res_t = float(c_min @ x + b_eq @ y + h @ z + kappa)

        pcost = float(c_min @ x) / tau
        dcost = -float(b_eq @ y + h @ z) / tau
        gap_abs = float(s @ z) / tau ** 2
        pres = max(float(np.linalg.norm(res_y)) / (tau * norm_b),
                   float(np.linalg.norm(res_z)) / (tau * norm_h))
        dres = float(np.linalg.norm(res_x)) / (tau * norm_c)
        relgap = gap_abs / max(1.0, abs(pcost), abs(dcost))
        score = max(pres, dres, relgap)
        if best is None or score < best[0]:
            best = (score, x / tau, y / tau, z / tau, s / tau,
                    pres, dres, relgap, iteration)
            stall = 0
        else:
            stall += 1

        if pres <= 30 * tol_feas and dres <= 30 * tol_feas and relgap <= 30 * tol_gap:
            # the solver-independent residuals are the deciding certificate;
            # the internal proxies only gate when to evaluate them
            cand = _finish(prog, "Optimal", x / tau, y / tau, z / tau,
                           s / tau, pres, dres, relgap, iteration)
            ext = kkt_residuals(prog, cand)
            if ext[0] <= tol_feas and ext[1] <= tol_feas and ext[2] <= tol_gap:
                cand.primal_residual, cand.dual_residual, cand.gap = ext
                return cand
            if pres <= tol_feas and dres <= tol_feas and relgap <= tol_gap:
                stall += 1
        # when already near tolerance it pays to keep polishing a while longer
        stall_limit = 30 if thorough and best[0] <= 100.0 * max(tol_feas, tol_gap) else 10
        if stall >= stall_limit and tau > 1e-3 * max(1.0, kappa):
            break  # progress exhausted away from any infeasibility ray

        # infeasibility certificates are only trusted once the embedding has
        # collapsed (tau driven to zero relative to kappa); otherwise large
        # transient iterates can fake a recession ray
        if tau <= 1e-6 * max(1.0, kappa):
            by_hz = float(b_eq @ y + h @ z)
            cx = float(c_min @ x)
            if by_hz < 0:
                cert = float(np.linalg.norm(a_eq.T @ y + g.T @ z)) / (-by_hz)
                if cert <= 1e-6:
                    yn, zn = y / -by_hz, z / -by_hz
                    return ConeSolution("Infeasible", np.full(n, np.nan), yn, zn,
                                        np.full(layout.size, np.nan), np.nan,
                                        np.nan, np.nan, np.nan, iteration)
            if cx < 0:
                ray = max(float(np.linalg.norm(a_eq @ x)),
                          float(np.linalg.norm(g @ x + s))) / (-cx)
                if ray <= 1e-6:
                    return ConeSolution("Unbounded", x / -cx, np.full(b_eq.shape, np.nan),
                                        np.full(layout.size, np.nan), s / -cx, np.inf,
                                        np.nan, np.nan, np.nan, iteration)
            if tau <= 1e-10 * max(1.0, kappa):
                break  # fully collapsed without a clean certificate

        try:
            scaling = _Scaling(layout, s, z)
            kkt = _Kkt(prog, scaling, g_csr, pattern)
        except NumericalBreakdownError:
            if best is not None and best[0] < 1e-4:
                break  # already have a usable point; report it below
            raise
        lam = scaling.lam
        mu = (float(s @ z) + tau * kappa) / degree
        if mu0 is None:
            mu0 = mu
        if mu <= 1e-20 * max(1.0, mu0):
            break  # complementarity exhausted without meeting the tolerances
        vx, vy, vz = kkt.solve3(-c_min, b_eq, h)
        denom_v = float(c_min @ vx + b_eq @ vy + h @ vz) - kappa / tau

        def direction(dx_r, dy_r, dz_r, dt_r, ds_r, dk_r, refine=3):
            """Newton direction with the slack step kept in scaled form.

            Returns (dx, dy, dz, ds_sc, dz_sc, dtau, dkappa) where
            ds_sc = W^-T ds and dz_sc = W dz; forming ds itself would amplify
            round-off by the squared scaling and is never needed.
            """
            q = jordan.solve(lam, ds_r, scaling)
            wq = scaling.apply_t(q)
            ux, uy, uz = kkt.solve3(dx_r, dy_r, dz_r - wq, refine=refine)
            dtau = (dt_r - dk_r / tau - float(c_min @ ux + b_eq @ uy + h @ uz)) / denom_v
            dx = ux + dtau * vx
            dy = uy + dtau * vy
            dz = uz + dtau * vz
            dz_sc = scaling.apply(dz)
            ds_sc = q - dz_sc
            dkappa = (dk_r - kappa * dtau) / tau
            return dx, dy, dz, ds_sc, dz_sc, dtau, dkappa

        def degraded(direction_tuple):
            mags = [float(np.max(np.abs(d))) if np.ndim(d) and np.size(d)
                    else abs(float(d)) if not np.ndim(d) else 0.0
                    for d in direction_tuple]
            peak = max(mags) if mags else 0.0
            return not np.isfinite(peak) or peak > 1e40

        lam_sq = jordan.prod(lam, lam)
        try:
            aff = direction(-res_x, -res_y, -res_z, -res_t, -lam_sq,
                            -tau * kappa, refine=2)
        except ValueError:
            break  # non-finite direction data; report the best iterate
        if degraded(aff):
            break  # direction lost to round-off; report the best iterate
        psd_sv = {st: scaling.psd[st][2] for st in scaling.psd}
        a_step = min(_max_step(layout, lam, aff[3], psd_sv),
                     _max_step(layout, lam, aff[4], psd_sv),
                     _max_step(layout, z, aff[2]))
        if aff[5] < 0:
            a_step = min(a_step, -tau / aff[5])
        if aff[6] < 0:
            a_step = min(a_step, -kappa / aff[6])
        a_step = min(1.0, a_step)

        mu_aff = (float((lam + a_step * aff[3]) @ (lam + a_step * aff[4]))
                  + (tau + a_step * aff[5]) * (kappa + a_step * aff[6])) / degree
        sigma = min(1.0, max(0.0, (mu_aff / mu))) ** 3

        # a blocked predictor injects outsized second-order corrector terms;
        # damp them (only then) by the square of the attainable step
        damp = 1.0 if a_step >= 0.3 else (a_step / 0.3) ** 2
        corr = jordan.prod(aff[3], aff[4])
        ds_rhs = sigma * mu * e_vec - lam_sq - damp * corr
        dk_rhs = sigma * mu - tau * kappa - damp * aff[5] * aff[6]
        try:
            comb = direction(-(1 - sigma) * res_x, -(1 - sigma) * res_y,
                             -(1 - sigma) * res_z, -(1 - sigma) * res_t,
                             ds_rhs, dk_rhs)
        except ValueError:
            break
        if degraded(comb):
            break

        def boundary(direction_tuple):
            res = min(_max_step(layout, lam, direction_tuple[3], psd_sv),
                      _max_step(layout, lam, direction_tuple[4], psd_sv),
                      _max_step(layout, z, direction_tuple[2]))
            if direction_tuple[5] < 0:
                res = min(res, -tau / direction_tuple[5])
            if direction_tuple[6] < 0:
                res = min(res, -kappa / direction_tuple[6])
            return min(1.0, STEP_FRACTION * res)

        step = boundary(comb)
        if step < 0.05:
            # blocked by a de-centered block: fall back to a pure centering
            # step, which restores the central-path neighborhood
            try:
                center = direction(np.zeros(n), np.zeros(b_eq.shape[0]),
                                   np.zeros(layout.size), 0.0,
                                   mu * e_vec - lam_sq, mu - tau * kappa)
            except ValueError:
                center = None
            if center is not None and not degraded(center):
                c_step = boundary(center)
                if c_step > step:
                    comb, step, sigma = center, c_step, 1.0
        if step <= 1e-14:
            break

        x = x + step * comb[0]
        y = y + step * comb[1]
        z = z + step * comb[2]
        z_margin = _min_margin(layout, z)
        if z_margin <= 0:  # round-off past the 1% boundary backoff
            z = z + (1e-13 * (1.0 + float(np.linalg.norm(z))) - z_margin) * e_vec
        tau = tau + step * comb[5]
        kappa = kappa + step * comb[6]
        # rebuild s from the residual update law the Newton equations enforce,
        # G x + s - h tau = (1 - step (1 - sigma)) res_z: this avoids mapping
        # the slack step through W, whose norm grows like 1/sqrt(mu) and
        # otherwise floors the attainable primal accuracy
        res_z = (1.0 - step * (1.0 - sigma)) * res_z
        s = h * tau - g @ x + res_z
        s_margin = _min_margin(layout, s)
        if s_margin <= 0:  # round-off in the rebuild; nudge back inside
            s = s + (1e-13 * (1.0 + float(np.linalg.norm(s))) - s_margin) * e_vec

    _, xb, yb, zb, sb, pres_b, dres_b, gap_b, it_b = best
    cand = _finish(prog, "MaxIterations", xb, yb, zb, sb, pres_b, dres_b, gap_b, it_b)
    ext = kkt_residuals(prog, cand)
    if thorough and max(ext) > min(tol_feas, tol_gap) and np.all(np.isfinite(xb)):
        polished = _dual_polish(prog, cand, layout)
        ext_p = kkt_residuals(prog, polished)
        if max(ext_p) < max(ext):
            cand, ext = polished, ext_p
    if ext[0] <= tol_feas and ext[1] <= tol_feas and ext[2] <= tol_gap:
        cand.status = "Optimal"
        cand.primal_residual, cand.dual_residual, cand.gap = ext
    elif thorough and _restarts > 0 and max(ext) <= 1e4 * max(tol_feas, tol_gap) \
            and np.all(np.isfinite(xb)):
        retry = ConeProgram(c=prog.c, g=prog.g, h=prog.h, cones=prog.cones,
                            a_eq=prog.a_eq, b_eq=prog.b_eq, warm_start=xb)
        again = solve(retry, tol_feas, tol_gap, max_iter, thorough,
                      _restarts=_restarts - 1)
        if again.status == "Optimal" or max(ext) > max(
                again.primal_residual, again.dual_residual, again.gap):
            return again
    return cand


def _dual_polish(prog: ConeProgram, sol: ConeSolution,
                 layout: _Layout) -> ConeSolution:
    """Least-squares repair of dual stationarity and the duality gap.

    Solves for the smallest (dy, dz) with A'dy + G'dz = c - A'y - G'z and
    b'dy + h'dz = c'x - b'y - h'z, then backtracks so z + dz stays in the
    cone.  Leaves the primal point untouched.
    """
    n_eq = prog.a_eq.shape[0]
    lhs = np.zeros((prog.n_vars + 1, n_eq + prog.n_slacks))
    lhs[:prog.n_vars, :n_eq] = prog.a_eq.T
    lhs[:prog.n_vars, n_eq:] = prog.g.T
    lhs[prog.n_vars, :n_eq] = prog.b_eq
    lhs[prog.n_vars, n_eq:] = prog.h
    y, z = sol.y.copy(), sol.z.copy()
    margin = _min_margin(layout, z)
    if margin <= 0:  # candidate sits exactly on the boundary; nudge inward
        z = z + (1e-12 * (1.0 + float(np.linalg.norm(z))) - margin) * layout.identity()

    # freeze cone blocks whose boundary blocks the correction, re-solving the
    # least-squares repair on the free coordinates
    free = np.ones(n_eq + prog.n_slacks, dtype=bool)
    blocks = [(np.array([i]) + n_eq) for i in layout.orth_idx]
    for dim, starts in layout.soc_groups.items():
        blocks.extend(np.arange(st, st + dim) + n_eq for st in starts)
    blocks.extend(np.arange(st, st + side * (side + 1) // 2) + n_eq
                  for st, side in layout.psd_blocks)
    for _ in range(8):
        stat = prog.c - prog.a_eq.T @ y - prog.g.T @ z
        gap_xc = float(prog.c @ sol.x - prog.b_eq @ y - prog.h @ z)
        rhs = np.concatenate([stat, [gap_xc]])
        delta = np.zeros(n_eq + prog.n_slacks)
        delta[free], *_ = np.linalg.lstsq(lhs[:, free], rhs, rcond=None)
        dy, dz = delta[:n_eq], delta[n_eq:]
        alpha = min(1.0, 0.999 * _max_step(layout, z, dz))
        if alpha >= 0.9:
            y = y + alpha * dy
            z = z + alpha * dz
            break
        # freeze the block with the smallest individual step allowance
        worst_blk, worst_alpha = None, np.inf
        for blk in blocks:
            if not free[blk[0]]:
                continue
            dv = np.zeros(prog.n_slacks)
            dv[blk - n_eq] = dz[blk - n_eq]
            a_blk = _max_step(layout, z, dv)
            if a_blk < worst_alpha:
                worst_blk, worst_alpha = blk, a_blk
        if worst_blk is None or worst_alpha >= 0.9:
            if alpha > 0:
                y = y + alpha * dy
                z = z + alpha * dz
            break
        free[worst_blk] = False
    return ConeSolution(status=sol.status, x=sol.x, y=y, z=z, s=sol.s,
                        objective=sol.objective,
                        primal_residual=sol.primal_residual,
                        dual_residual=sol.dual_residual, gap=sol.gap,
                        iterations=sol.iterations)


def _finish(prog: ConeProgram, status: str, x, y, z, s, pres, dres, relgap,
            iteration) -> ConeSolution:
    return ConeSolution(
        status=status, x=x, y=y, z=z, s=s,
        objective=float(prog.c @ x),
        primal_residual=pres, dual_residual=dres, gap=relgap,
        iterations=iteration + 1,
    )
