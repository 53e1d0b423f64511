"""Joint power allocation via fractional programming and block descent.

The non-convex rate/sensing trade-off is solved by alternating closed-form
auxiliary-variable updates (Lagrangian-dual and quadratic transforms for the
rates, a quadratic transform for the sensing-SINR epigraphs) with a convex
conic subproblem.  The weighted CRLB constraint enters through an epigraph
matrix X bounded by the inverse Fisher matrix via a 4x4 Schur LMI, and the
bilinear reconstruction-mismatch term is replaced by a first-order surrogate
anchored at the previous iterate.

The communication-first and sensing-first baselines reuse the same machinery
with one stream pinned to zero.

Helper functions exposed here work in physical units; inside the subproblem
the variables are rescaled (powers in units of the average subcarrier power,
channel gains in noise units, Fisher axes normalized by the kernel constants)
so the interior-point solver sees well-conditioned data.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, OfdmGrid
from .cone_program import Cone, ConeProgram
from .cone_solver import NumericalBreakdownError, solve
from .receiver import (PowerAllocation, combining_gain, mismatch_power,
                       robust_stream_sinr, sensing_sinr,
                       sum_spectral_efficiency, supplementary_stream_sinr)
from .sensing import (FimKernels, SensingWeights, SingularFimError,
                      end_to_end_sigma, weighted_crlb)

LOG2E = float(np.log2(np.e))

RS = "rs"
NOMA_CF = "noma-cf"
NOMA_SF = "noma-sf"
SCHEMES = (RS, NOMA_CF, NOMA_SF)


class SensingInfeasibleError(RuntimeError):
    """The sensing accuracy target cannot be met at the power budget."""


class SolverFailureError(RuntimeError):
    """The conic subproblem solver failed mid-descent."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class InvalidReferenceError(ValueError):
    """A surrogate reference vector contains non-finite entries."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Budget, mask, sensing target, and loop controls for the descent."""

    p_tx: float
    p_min: float = 0.0
    p_max: float = np.inf
    gamma_sens: float | None = None
    max_iterations: int = 25
    tolerance: float = 1e-4
    solver_tol: float = 1e-7
    solver_max_iter: int = 50

    def __post_init__(self):
        if self.p_tx <= 0:
            raise ValueError("p_tx must be positive")
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError("power mask must satisfy 0 <= p_min <= p_max")

    @classmethod
    def table_defaults(cls, p_tx: float, n_sc: int,
                       gamma_sens: float | None = 200.0,
                       mask_pct: float = 5.0) -> "OptimizerConfig":
        """Mask at +-mask_pct percent around the average subcarrier power."""
        p_avg = p_tx / n_sc
        return cls(p_tx=p_tx, p_min=p_avg * (1 - mask_pct / 100.0),
                   p_max=p_avg * (1 + mask_pct / 100.0), gamma_sens=gamma_sens)


@dataclass
class FpAuxiliaries:
    """Closed-form fractional-programming auxiliaries for one iterate."""

    alpha_c1: np.ndarray
    alpha_c2: np.ndarray
    rho_c1: np.ndarray
    rho_c2: np.ndarray
    y: np.ndarray


@dataclass
class SurrogateState:
    """Reference data anchoring the convex surrogates at the current iterate."""

    x_mat: np.ndarray          # 2x2 inverse-FIM reference (physical units)
    z: np.ndarray              # sensing-SINR epigraph reference
    sigma_ref: np.ndarray      # exact reconstruction error variance
    t_ref: np.ndarray          # leakage-weighted energy at the reference (W)
    beta_amgm: float


@dataclass
class BcdTrace:
    """Per-iteration record of the descent (objectives in bps/Hz/subcarrier)."""

    objectives: list[float] = field(default_factory=list)
    crlbs: list[float] = field(default_factory=list)
    statuses: list[str] = field(default_factory=list)
    millis: list[float] = field(default_factory=list)

    CSV_HEADER = "iteration,objective,crlb,status,milliseconds"

    def append(self, objective: float, crlb: float, status: str, ms: float):
        self.objectives.append(objective)
        self.crlbs.append(crlb)
        self.statuses.append(status)
        self.millis.append(ms)

    def to_csv(self) -> str:
        lines = [self.CSV_HEADER]
        for i, (obj, crlb, status, ms) in enumerate(
                zip(self.objectives, self.crlbs, self.statuses, self.millis),
                start=1):
            lines.append(f"{i},{obj:.12g},{crlb:.12g},{status},{ms:.3f}")
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# closed-form auxiliary updates
# --------------------------------------------------------------------------

def update_alpha(gamma_c1: np.ndarray, gamma_c2: np.ndarray):
    """Dual-transform auxiliaries; the maximizer is the SINR itself."""
    return np.array(gamma_c1, dtype=float), np.array(gamma_c2, dtype=float)


def update_rho(alpha: np.ndarray, s: np.ndarray, i: np.ndarray,
               noise: float) -> np.ndarray:
    """Quadratic-transform auxiliaries rho = sqrt((1+alpha) S) / (S+I+noise)."""
    return np.sqrt((1.0 + np.asarray(alpha)) * np.asarray(s)) / (
        np.asarray(s) + np.asarray(i) + noise)


def update_y(s_r: np.ndarray, i_r: np.ndarray, noise: float) -> np.ndarray:
    """Sensing-epigraph auxiliaries y = sqrt(S_r) / (I_r + noise)."""
    return np.sqrt(np.asarray(s_r)) / (np.asarray(i_r) + noise)


def amgm_beta(grid: OfdmGrid) -> float:
    """Scale balancing the two terms of the off-diagonal covariance bound.

    beta = mean_n(|n| df) / mean_m(m T_sym) equalizes beta*C_tt against
    C_nn/beta, since the delay/Doppler variances scale inversely with the
    squared frequency/time apertures.  The time aperture is floored at
    1e-6 * T_sym so a single-symbol grid (all b_m = 0) keeps beta finite.
    """
    a_mean = float(np.mean(np.abs(grid.n_index))) * grid.delta_f
    b_mean = float(np.mean(np.arange(grid.m_symbols))) * grid.t_sym
    return a_mean / max(b_mean, 1e-6 * grid.t_sym)


def omega_surrogate(x_mat: np.ndarray, beta: float, n: int, m: int,
                    grid: OfdmGrid) -> float:
    """Affine upper bound on the sensitivity factor when X bounds the covariance.

    4 pi^2 (X11 a_n^2 + X22 b_m^2 + (beta X11 + X22 / beta) |a_n b_m|); the
    cross term majorizes 2 |C_tn| |a_n b_m| through the arithmetic-geometric
    mean bound on the covariance off-diagonal.
    """
    a = n * grid.delta_f
    b = m * grid.t_sym
    return float(4.0 * np.pi ** 2 * (
        x_mat[0, 0] * a ** 2 + x_mat[1, 1] * b ** 2
        + (beta * x_mat[0, 0] + x_mat[1, 1] / beta) * abs(a * b)))


def t_effective(p: PowerAllocation, xi: np.ndarray) -> np.ndarray:
    """Leakage-weighted energy t_n = sum_k xi[n,k](p_c1[k]+p_r[k]) + p_c2[n]."""
    return xi @ (p.p_c1 + p.p_r) + p.p_c2


def surrogate_sigma_sq(x_mat: np.ndarray, beta: float, grid: OfdmGrid,
                       alpha_r_sq: float) -> np.ndarray:
    """Symbol-averaged affine error-variance bound |alpha_R|^2 mean_m of the bound."""
    m_idx = np.arange(grid.m_symbols)
    return np.array([
        alpha_r_sq * np.mean([omega_surrogate(x_mat, beta, int(n), int(m), grid)
                              for m in m_idx])
        for n in grid.n_index])


def mismatch_surrogate(sigma_ref: np.ndarray, t_ref: np.ndarray,
                       p: PowerAllocation, x_mat: np.ndarray, beta: float,
                       grid: OfdmGrid, alpha_r_sq: float,
                       xi: np.ndarray) -> np.ndarray:
    """First-order surrogate of the bilinear mismatch sigma_e^2(X) t(p).

    sigma_ref * t(p) + t_ref * sigma^2(X) - sigma_ref * t_ref; exact at the
    reference point and affine in (p, X).
    """
    sigma_ref = np.asarray(sigma_ref, dtype=float)
    t_ref = np.asarray(t_ref, dtype=float)
    if not (np.all(np.isfinite(sigma_ref)) and np.all(np.isfinite(t_ref))):
        raise InvalidReferenceError("surrogate references must be finite")
    sigma_x = surrogate_sigma_sq(x_mat, beta, grid, alpha_r_sq)
    return sigma_ref * t_effective(p, xi) + t_ref * sigma_x - sigma_ref * t_ref


# --------------------------------------------------------------------------
# scaled subproblem data
# --------------------------------------------------------------------------

@dataclass
class _VarMap:
    """Variable layout of the scaled subproblem."""

    n_sc: int
    p1: slice | None
    p2: slice | None
    pr: slice
    x_idx: tuple[int, int, int] | None  # weight-normalized X entries
    z: slice | None
    n_vars: int
    p_ref: float
    dx_tau: float  # X11_phys = dx_tau^2 * X''11
    dx_nu: float

    def allocation(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = self.n_sc
        zero = np.zeros(n)
        p1 = x[self.p1] * self.p_ref if self.p1 is not None else zero.copy()
        p2 = x[self.p2] * self.p_ref if self.p2 is not None else zero.copy()
        pr = x[self.pr] * self.p_ref
        return p1, p2, pr

    def x_matrix(self, x: np.ndarray) -> np.ndarray | None:
        """Recover the CRLB epigraph matrix in physical units."""
        if self.x_idx is None:
            return None
        i11, i12, i22 = self.x_idx
        return np.array([
            [x[i11] * self.dx_tau ** 2, x[i12] * self.dx_tau * self.dx_nu],
            [x[i12] * self.dx_tau * self.dx_nu, x[i22] * self.dx_nu ** 2]])


class _ScaledChannel:
    """Channel data in solver units (noise = 1, powers in units of p_ref)."""

    def __init__(self, ch: ChannelRealization, cfg: OptimizerConfig):
        grid = ch.grid
        self.grid = grid
        self.noise = ch.noise_power
        self.p_ref = cfg.p_tx / grid.n_sc
        scale = self.p_ref / ch.noise_power
        self.gain_scale = scale
        self.g_dp = ch.h_dp_sq * scale
        self.g_ep = float(ch.echo.alpha_r_sq * scale)
        self.g_c2 = combining_gain(ch) * scale
        self.xi = ch.xi
        self.xi_diag = np.diag(ch.xi).copy()
        kernels = FimKernels.from_grid(grid)
        self.kernels = kernels
        self.rho_k = kernels.k_tn / np.sqrt(kernels.k_tt * kernels.k_nn)
        self.weights = SensingWeights.from_wavelength(grid.wavelength)
        self.beta = amgm_beta(grid)
        # mean_m of the physical affine sensitivity bound per unit X11 / X22
        n_abs = np.abs(grid.n_index.astype(float))[:, None] * grid.delta_f
        b = (np.arange(grid.m_symbols, dtype=float) * grid.t_sym)[None, :]
        pre = 4.0 * np.pi ** 2
        self.omega11 = pre * np.mean(n_abs ** 2 + self.beta * n_abs * b, axis=1)
        self.omega22 = pre * np.mean(b ** 2 + (n_abs * b) / self.beta, axis=1)
        # Fisher floor in kernel-normalized units
        self.delta_floor = 1e-8


def build_subproblem(sc: _ScaledChannel, aux: FpAuxiliaries,
                     refs: SurrogateState, cfg: OptimizerConfig,
                     scheme: str = RS,
                     feasibility_only: bool = False) -> tuple[ConeProgram, _VarMap]:
    """Assemble the convex conic subproblem for fixed auxiliaries/references.

    Square roots of affine power expressions are realized through helper
    variables inside dimension-3 second-order cones; the sensing target
    contributes the Fisher floor (2x2 PSD), the Schur LMI (4x4 PSD), the
    epigraph rows for the transformed sensing SINRs, and the trace budget.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    grid = sc.grid
    n = grid.n_sc
    n_idx = grid.n_index.astype(float)
    has1 = scheme != NOMA_SF
    has2 = scheme != NOMA_CF
    sense = cfg.gamma_sens is not None

    sig_hat = np.asarray(refs.sigma_ref, dtype=float) * sc.gain_scale
    t_hat = np.asarray(refs.t_ref, dtype=float) / sc.p_ref
    if not (np.all(np.isfinite(sig_hat)) and np.all(np.isfinite(t_hat))):
        raise InvalidReferenceError("surrogate references must be finite")
    if sense:
        # weight-normalized CRLB epigraph entries: the trace row becomes
        # X''11 + X''22 <= 1 and the Schur identity block turns into a
        # constant diagonal E
        dx_tau = float(np.sqrt(cfg.gamma_sens / sc.weights.w_tau))
        dx_nu = float(np.sqrt(cfg.gamma_sens / sc.weights.w_nu))
        w11 = sc.omega11 * dx_tau ** 2
        w22 = sc.omega22 * dx_nu ** 2
        e_tau = 1.0 / (dx_tau * np.sqrt(sc.kernels.k_tt))
        e_nu = 1.0 / (dx_nu * np.sqrt(sc.kernels.k_nn))
    else:
        dx_tau = dx_nu = 1.0

    # -- variable layout -----------------------------------------------------
    cur = 0
    p1_sl = p2_sl = z_sl = u1_sl = u2_sl = ur_sl = None
    if has1:
        p1_sl = slice(cur, cur + n); cur += n
    if has2:
        p2_sl = slice(cur, cur + n); cur += n
    pr_sl = slice(cur, cur + n); cur += n
    x_idx = None
    if sense:
        x_idx = (cur, cur + 1, cur + 2); cur += 3
        z_sl = slice(cur, cur + n); cur += n
    if has1:
        u1_sl = slice(cur, cur + n); cur += n
    if has2:
        u2_sl = slice(cur, cur + n); cur += n
    if sense:
        ur_sl = slice(cur, cur + n); cur += n
    n_vars = cur

    # -- affine interference maps (rows: subcarrier n, cols: variables) -------
    # C1[n] = S1 + I1 + 1: affine in p
    c1_rows = np.zeros((n, n_vars))
    if has1:
        xi_ep = sc.xi * sc.g_ep
        c1_rows[:, p1_sl] = xi_ep + np.diag(sc.g_dp)
        if has2:
            c1_rows[:, p2_sl] = xi_ep + np.diag(sc.g_dp)
        c1_rows[:, pr_sl] = xi_ep
    # C2[n] = S2 + I2 + 1 with I2 = mismatch surrogate + own-stream leakage
    c2_rows = np.zeros((n, n_vars))
    if has2:
        if has1:
            c2_rows[:, p1_sl] += sig_hat[:, None] * sc.xi
        c2_rows[:, pr_sl] += sig_hat[:, None] * sc.xi
        off_diag = sc.xi * sc.g_ep - np.diag(sc.xi_diag * sc.g_ep)
        c2_rows[:, p2_sl] += off_diag + np.diag(sig_hat) + np.diag(sc.g_c2)
        if sense:
            c2_rows[:, x_idx[0]] += t_hat * sc.g_ep * w11
            c2_rows[:, x_idx[2]] += t_hat * sc.g_ep * w22
    # sensing interference I_r[n]: affine in p
    ir_rows = np.zeros((n, n_vars))
    if sense:
        xi_ep = sc.xi * sc.g_ep
        if has1:
            ir_rows[:, p1_sl] = xi_ep
        if has2:
            ir_rows[:, p2_sl] = xi_ep + np.diag(sc.g_dp)
        ir_rows[:, pr_sl] = xi_ep - np.diag(sc.xi_diag * sc.g_ep)

    # -- objective (maximize): sum_n (2 rho u - rho^2 C) log2 e ---------------
    c_obj = np.zeros(n_vars)
    if not feasibility_only:
        if has1:
            c_obj[u1_sl] += 2.0 * LOG2E * aux.rho_c1
            c_obj -= LOG2E * (aux.rho_c1 ** 2) @ c1_rows
        if has2:
            c_obj[u2_sl] += 2.0 * LOG2E * aux.rho_c2
            c_obj -= LOG2E * (aux.rho_c2 ** 2) @ c2_rows
    if sense:
        # tiny pull toward a small CRLB epigraph: breaks the otherwise
        # objective-free (degenerate) face in X and z without materially
        # biasing the rate optimum
        pull = 1e-6 * (1.0 + float(np.abs(c_obj).max()))
        c_obj[x_idx[0]] -= pull
        c_obj[x_idx[2]] -= pull

    # -- linear (orthant) rows: G x <= h -------------------------------------
    g_rows: list[np.ndarray] = []
    h_vals: list[float] = []

    def add_row(row: np.ndarray, rhs: float):
        g_rows.append(row)
        h_vals.append(rhs)

    eye = np.eye(n_vars)
    # sqrt helpers need no sign rows: their cones bound them and the
    # objective never rewards a negative helper
    for sl in (p1_sl, p2_sl, pr_sl, z_sl):
        if sl is not None:
            for i in range(sl.start, sl.stop):
                add_row(-eye[i], 0.0)

    total_row = np.zeros(n_vars)
    for sl in (p1_sl, p2_sl, pr_sl):
        if sl is not None:
            total_row[sl] += 1.0
    add_row(total_row.copy(), cfg.p_tx / sc.p_ref)
    p_lo = cfg.p_min / sc.p_ref
    p_hi = cfg.p_max / sc.p_ref
    for i in range(n):
        row = np.zeros(n_vars)
        for sl in (p1_sl, p2_sl, pr_sl):
            if sl is not None:
                row[sl.start + i] = 1.0
        if np.isfinite(p_hi):
            add_row(row.copy(), p_hi)
        if p_lo > 0:
            add_row(-row, -p_lo)

    if sense:
        trace_row = np.zeros(n_vars)
        trace_row[x_idx[0]] = 1.0
        trace_row[x_idx[2]] = 1.0
        add_row(trace_row, 1.0)
        # z_n + y^2 (I_r[n] + 1) - 2 y u_r[n] <= 0
        for i in range(n):
            row = aux.y[i] ** 2 * ir_rows[i].copy()
            row[z_sl.start + i] += 1.0
            row[ur_sl.start + i] -= 2.0 * aux.y[i]
            add_row(row, -float(aux.y[i] ** 2))

    cones = [Cone("nonneg", len(g_rows))]

    # -- SOC blocks: u^2 <= L(p) as (L+1, 2u, L-1) in a 3-dim cone ------------
    def add_sqrt_helper(u_pos: int, lin_row: np.ndarray):
        g_rows.append(-lin_row)           # slack0 = L + 1
        h_vals.append(1.0)
        row_u = np.zeros(n_vars)
        row_u[u_pos] = -2.0               # slack1 = 2 u
        g_rows.append(row_u)
        h_vals.append(0.0)
        g_rows.append(-lin_row)           # slack2 = L - 1
        h_vals.append(-1.0)
        cones.append(Cone("soc", 3))

    if has1:
        for i in range(n):
            row = np.zeros(n_vars)
            row[p1_sl.start + i] = (1.0 + aux.alpha_c1[i]) * sc.g_dp[i]
            add_sqrt_helper(u1_sl.start + i, row)
    if has2:
        for i in range(n):
            row = np.zeros(n_vars)
            row[p2_sl.start + i] = (1.0 + aux.alpha_c2[i]) * sc.g_c2[i]
            add_sqrt_helper(u2_sl.start + i, row)
    if sense:
        for i in range(n):
            row = np.zeros(n_vars)
            row[pr_sl.start + i] = sc.xi_diag[i] * sc.g_ep
            add_sqrt_helper(ur_sl.start + i, row)

    # -- PSD blocks -----------------------------------------------------------
    if sense:
        # Fisher floor: J'(z) - delta I >= 0, svec order [11, sqrt2*12, 22]
        sqrt2 = np.sqrt(2.0)
        for comp, rhs in (((n_idx ** 2), -sc.delta_floor),
                          (sqrt2 * sc.rho_k * n_idx, 0.0),
                          (np.ones(n), -sc.delta_floor)):
            row = np.zeros(n_vars)
            row[z_sl] = -comp
            add_row_psd = (row, rhs)
            g_rows.append(add_row_psd[0])
            h_vals.append(add_row_psd[1])
        cones.append(Cone("psd", 2))
        # Schur block [[X', I2], [I2, J'(z)]] >= 0, svec dim 10
        # upper-triangle order: (0,0)(0,1)(0,2)(0,3)(1,1)(1,2)(1,3)(2,2)(2,3)(3,3)
        pairs = [(0, 0), (0, 1), (0, 2), (0, 3), (1, 1),
                 (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)]
        m0 = np.zeros((4, 4))
        m0[0, 2] = m0[2, 0] = e_tau
        m0[1, 3] = m0[3, 1] = e_nu
        for (i, j) in pairs:
            row = np.zeros(n_vars)
            scale_off = sqrt2 if i != j else 1.0
            if (i, j) == (0, 0):
                row[x_idx[0]] = -1.0
            elif (i, j) == (0, 1):
                row[x_idx[1]] = -scale_off
            elif (i, j) == (1, 1):
                row[x_idx[2]] = -1.0
            elif (i, j) == (2, 2):
                row[z_sl] = -(n_idx ** 2)
            elif (i, j) == (2, 3):
                row[z_sl] = -scale_off * sc.rho_k * n_idx
            elif (i, j) == (3, 3):
                row[z_sl] = -np.ones(n)
            g_rows.append(row)
            h_vals.append(float(m0[i, j] * scale_off))
        cones.append(Cone("psd", 4))

    prog = ConeProgram(c=c_obj, g=np.array(g_rows), h=np.array(h_vals),
                       cones=cones)
    vmap = _VarMap(n_sc=n, p1=p1_sl, p2=p2_sl, pr=pr_sl, x_idx=x_idx, z=z_sl,
                   n_vars=n_vars, p_ref=sc.p_ref, dx_tau=dx_tau, dx_nu=dx_nu)
    return prog, vmap


# --------------------------------------------------------------------------
# exact evaluation and the BCD loop
# --------------------------------------------------------------------------

@dataclass
class _ExactState:
    """Exact pipeline snapshot at one allocation."""

    p: PowerAllocation
    s1: np.ndarray
    i1: np.ndarray
    g1: np.ndarray
    sr: np.ndarray
    ir: np.ndarray
    gr: np.ndarray
    sigma_e_sq: np.ndarray
    s2: np.ndarray
    i2: np.ndarray
    g2: np.ndarray
    crlb: float
    c_mat: np.ndarray
    objective: float  # bps/Hz per subcarrier


def _exact_state(p: PowerAllocation, ch: ChannelRealization,
                 weights: SensingWeights) -> _ExactState:
    s1, i1, g1 = robust_stream_sinr(p, ch)
    sr, ir, gr = sensing_sinr(p, ch)
    fs, sigma_e_sq = end_to_end_sigma(p, ch)
    p_mis = mismatch_power(p, ch, sigma_e_sq)
    xi_diag = np.diag(ch.xi)
    self_ici = ch.xi @ (ch.h_ep_sq * p.p_c2) - xi_diag * ch.h_ep_sq * p.p_c2
    s2 = combining_gain(ch) * p.p_c2
    i2 = p_mis + self_ici
    g2 = s2 / (i2 + ch.noise_power)
    r_sum, per_sc = sum_spectral_efficiency(g1, g2)
    c_mat = np.array([[fs.c_tt, fs.c_tn], [fs.c_tn, fs.c_nn]])
    return _ExactState(p=p, s1=s1, i1=i1, g1=g1, sr=sr, ir=ir, gr=gr,
                       sigma_e_sq=sigma_e_sq, s2=s2, i2=i2, g2=g2,
                       crlb=weighted_crlb(fs, weights), c_mat=c_mat,
                       objective=per_sc)


def _project_allocation(p1: np.ndarray, p2: np.ndarray, pr: np.ndarray,
                        cfg: OptimizerConfig) -> PowerAllocation:
    """Restore exact feasibility of budget and mask after solver round-off."""
    p1 = np.maximum(p1, 0.0)
    p2 = np.maximum(p2, 0.0)
    pr = np.maximum(pr, 0.0)
    total = p1 + p2 + pr
    target = np.clip(total, cfg.p_min if cfg.p_min > 0 else 0.0,
                     cfg.p_max if np.isfinite(cfg.p_max) else np.inf)
    excess = target.sum() - cfg.p_tx
    if excess > 0:
        headroom = target - cfg.p_min
        pool = headroom.sum()
        if pool <= excess:
            target = target * (cfg.p_tx / target.sum())
        else:
            target = target - excess * headroom / pool
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(total > 0, target / np.where(total > 0, total, 1.0), 0.0)
    return PowerAllocation(p_c1=p1 * ratio, p_c2=p2 * ratio, p_r=pr * ratio)


def _initial_allocation(grid: OfdmGrid, cfg: OptimizerConfig,
                        scheme: str) -> PowerAllocation:
    """Equal split of the average subcarrier power over the active components."""
    p_avg = cfg.p_tx / grid.n_sc
    has1 = scheme != NOMA_SF
    has2 = scheme != NOMA_CF
    n_active = 1 + int(has1) + int(has2)
    share = np.full(grid.n_sc, p_avg / n_active)
    zero = np.zeros(grid.n_sc)
    return PowerAllocation(p_c1=share.copy() if has1 else zero.copy(),
                           p_c2=share.copy() if has2 else zero.copy(),
                           p_r=share.copy())


def _auxiliaries(state: _ExactState, noise: float) -> FpAuxiliaries:
    """Closed-form updates, expressed in noise units to match the subproblem."""
    a1, a2 = update_alpha(state.g1, state.g2)
    return FpAuxiliaries(
        alpha_c1=a1, alpha_c2=a2,
        rho_c1=update_rho(a1, state.s1 / noise, state.i1 / noise, 1.0),
        rho_c2=update_rho(a2, state.s2 / noise, state.i2 / noise, 1.0),
        y=update_y(state.sr / noise, state.ir / noise, 1.0),
    )


def _references(state: _ExactState, ch: ChannelRealization,
                beta: float) -> SurrogateState:
    return SurrogateState(
        x_mat=state.c_mat, z=state.gr.copy(),
        sigma_ref=state.sigma_e_sq.copy(),
        t_ref=t_effective(state.p, ch.xi), beta_amgm=beta)


def _feasibility_phase(sc: _ScaledChannel, ch: ChannelRealization,
                       cfg: OptimizerConfig, scheme: str) -> PowerAllocation:
    """Probe the sensing target and return a target-satisfying allocation.

    The probe anchors the sensing quadratic transform at the all-radar point
    (the most sensing-favorable allocation within the mask) and solves the
    subproblem with a zero objective.  Surrogate conservatism guarantees that
    the extracted point satisfies the exact weighted-CRLB constraint, so it
    doubles as a feasible starting iterate when the nominal start violates
    the target.
    """
    grid = ch.grid
    p_avg = cfg.p_tx / grid.n_sc
    zero = np.zeros(grid.n_sc)
    p_sens = PowerAllocation(p_c1=zero.copy(), p_c2=zero.copy(),
                             p_r=np.full(grid.n_sc, min(p_avg, cfg.p_max)))
    try:
        state = _exact_state(p_sens, ch, sc.weights)
    except SingularFimError as exc:
        raise SensingInfeasibleError(
            "Fisher information is singular even with all power on radar") from exc
    aux = _auxiliaries(state, ch.noise_power)
    refs = _references(state, ch, sc.beta)
    prog, vmap = build_subproblem(sc, aux, refs, cfg, scheme=scheme,
                                  feasibility_only=True)
    sol = solve(prog, tol_feas=cfg.solver_tol, tol_gap=cfg.solver_tol,
                max_iter=cfg.solver_max_iter, thorough=False)
    if sol.status == "Infeasible":
        raise SensingInfeasibleError(
            f"weighted CRLB target {cfg.gamma_sens} unattainable at the power budget")
    if sol.status != "Optimal":
        raise SolverFailureError(f"feasibility probe ended with {sol.status}", 0)
    return _project_allocation(*vmap.allocation(sol.x), cfg)


def bcd_solve(ch: ChannelRealization, cfg: OptimizerConfig, scheme: str = RS,
              warm_start: PowerAllocation | None = None
              ) -> tuple[PowerAllocation, BcdTrace]:
    """Run the block-coordinate descent and return the best exact iterate.

    Alternates (i) exact SINR/error-variance evaluation, (ii) closed-form
    auxiliary updates, (iii) surrogate-reference refresh, (iv) the conic
    subproblem; a candidate is accepted only if it improves the exact
    objective, so the recorded trace is nondecreasing.  Stops at the
    iteration cap or when the per-subcarrier improvement falls below the
    configured tolerance.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    sc = _ScaledChannel(ch, cfg)

    def meets_target(st: _ExactState) -> bool:
        return cfg.gamma_sens is None or st.crlb <= cfg.gamma_sens * 1.01

    p_cur = warm_start if warm_start is not None \
        else _initial_allocation(ch.grid, cfg, scheme)
    state = _exact_state(p_cur, ch, sc.weights)
    if cfg.gamma_sens is not None:
        p_feas = _feasibility_phase(sc, ch, cfg, scheme)
        if not meets_target(state):
            # the nominal start cannot anchor a feasible subproblem (the
            # sensing transform is tight only near its anchor), so descend
            # from the restoration point instead
            state = _exact_state(p_feas, ch, sc.weights)

    best_state = state if meets_target(state) else None
    trace = BcdTrace()
    prev_x = None

    for it in range(cfg.max_iterations):
        t0 = time.perf_counter()
        aux = _auxiliaries(state, ch.noise_power)
        refs = _references(state, ch, sc.beta)
        prog, vmap = build_subproblem(sc, aux, refs, cfg, scheme=scheme)
        if prev_x is not None and prev_x.shape == (prog.n_vars,):
            prog.warm_start = prev_x
        try:
            sol = solve(prog, tol_feas=cfg.solver_tol, tol_gap=cfg.solver_tol,
                        max_iter=cfg.solver_max_iter, thorough=False)
        except NumericalBreakdownError as exc:
            if trace.objectives or best_state is not None:
                break  # keep the progress (or the feasible start) we have
            raise SolverFailureError(str(exc), it) from exc
        if sol.status == "Infeasible":
            # phase 1 already certified attainability, so a mid-descent
            # infeasible status is numerical; keep any usable iterate
            if trace.objectives or best_state is not None:
                break
            raise SensingInfeasibleError(
                f"subproblem infeasible at iteration {it}")
        if sol.status != "Optimal" and max(sol.primal_residual,
                                           sol.dual_residual, sol.gap) > 1e-2:
            # low-quality candidates are filtered by the exact-objective
            # acceptance below; a truly failed subproblem cannot poison
            # earlier progress, so fail hard only with nothing to return
            if trace.objectives or best_state is not None:
                break
            raise SolverFailureError(f"subproblem status {sol.status}", it)

        prev_x = sol.x if np.all(np.isfinite(sol.x)) else None
        p_new = _project_allocation(*vmap.allocation(sol.x), cfg)
        new_state = _exact_state(p_new, ch, sc.weights)
        ms = (time.perf_counter() - t0) * 1e3

        # a sensing-infeasible anchor (e.g. the uniform start) is always
        # replaced; among target-satisfying iterates only improvements are kept
        anchored = meets_target(state)
        improvement = new_state.objective - state.objective
        if anchored and improvement < 0:
            break
        state = new_state
        if meets_target(state) and (best_state is None
                                    or state.objective > best_state.objective):
            best_state = state
        trace.append(state.objective, state.crlb, sol.status, ms)
        if anchored and improvement < cfg.tolerance:
            break

    if best_state is None:
        raise SolverFailureError(
            "no iterate satisfied the sensing target within tolerance",
            len(trace.objectives))
    return best_state.p, trace


def noma_cf_solve(ch: ChannelRealization, cfg: OptimizerConfig,
                  warm_start: PowerAllocation | None = None):
    """Communication-first baseline: supplementary stream pinned to zero."""
    return bcd_solve(ch, cfg, scheme=NOMA_CF, warm_start=warm_start)


def noma_sf_solve(ch: ChannelRealization, cfg: OptimizerConfig,
                  warm_start: PowerAllocation | None = None):
    """Sensing-first baseline: robust stream pinned to zero."""
    return bcd_solve(ch, cfg, scheme=NOMA_SF, warm_start=warm_start)
