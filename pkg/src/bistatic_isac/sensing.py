"""Fisher information, weighted CRLB, and echo-reconstruction error variance.

The delay/Doppler Fisher information matrix is affine in the per-subcarrier
sensing SINR; its inverse drives both the sensing-accuracy constraint
(weighted A-optimal criterion Tr(W J^-1)) and the echo-channel reconstruction
error variance that feeds back into supplementary-stream decoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import C_LIGHT, ChannelRealization, OfdmGrid
from .receiver import (PowerAllocation, SinrBreakdown, mismatch_power,
                       robust_stream_sinr, sensing_sinr,
                       sum_spectral_efficiency, supplementary_stream_sinr)


class SingularFimError(ArithmeticError):
    """The Fisher information matrix is numerically singular."""


@dataclass(frozen=True)
class FimKernels:
    """Subcarrier-independent FIM kernel constants of the OFDM waveform.

    k_tt = 8 pi^2 df^2 M,  k_nn = 8 pi^2 T_sym^2 sum m^2,
    k_tn = 8 pi^2 df T_sym sum m,  with m = 0..M-1.
    """

    k_tt: float
    k_nn: float
    k_tn: float

    @classmethod
    def from_grid(cls, grid: OfdmGrid) -> "FimKernels":
        m = np.arange(grid.m_symbols)
        scale = 8.0 * np.pi ** 2
        return cls(
            k_tt=scale * grid.delta_f ** 2 * grid.m_symbols,
            k_nn=scale * grid.t_sym ** 2 * float(np.sum(m ** 2)),
            k_tn=scale * grid.delta_f * grid.t_sym * float(np.sum(m)),
        )


@dataclass(frozen=True)
class FisherState:
    """A 2x2 FIM together with the entries of its inverse."""

    j: np.ndarray
    c_tt: float
    c_nn: float
    c_tn: float
    kernels: FimKernels


@dataclass(frozen=True)
class SensingWeights:
    """Weights mapping delay/Doppler variances to range^2 and speed^2 units."""

    w_tau: float
    w_nu: float
    gamma_sens: float | None = None

    @classmethod
    def from_wavelength(cls, wavelength: float,
                        gamma_sens: float | None = None) -> "SensingWeights":
        return cls(w_tau=(C_LIGHT / 2.0) ** 2, w_nu=(wavelength / 2.0) ** 2,
                   gamma_sens=gamma_sens)


def fim_from_sinr(gamma_r: np.ndarray, kernels: FimKernels,
                  n_index: np.ndarray) -> np.ndarray:
    """Assemble J from the sensing SINR over the symmetric subcarrier set.

    Note sum(n) = -n_sc/2 over {-n_sc/2, ..., n_sc/2 - 1}, so the off-diagonal
    is nonzero even for a uniform SINR profile.
    """
    gamma_r = np.asarray(gamma_r, dtype=float)
    if np.any(gamma_r < 0):
        raise ValueError("gamma_r must be nonnegative")
    s0 = float(np.sum(gamma_r))
    s1 = float(np.sum(n_index * gamma_r))
    s2 = float(np.sum(n_index ** 2 * gamma_r))
    return np.array([[kernels.k_tt * s2, kernels.k_tn * s1],
                     [kernels.k_tn * s1, kernels.k_nn * s0]])


def fisher_state(j: np.ndarray, kernels: FimKernels) -> FisherState:
    """Invert a 2x2 FIM with a scale-aware singularity floor.

    The two axes of J differ by many orders of magnitude (s^-2 vs Hz^-2), so
    the eigenvalue floor is applied to the kernel-normalized matrix
    D^-1 J D^-1 with D = diag(sqrt(k_tt), sqrt(k_nn)), whose entries are
    commensurate; the relative floor constant is 1e-8.
    """
    d = np.array([np.sqrt(kernels.k_tt), np.sqrt(kernels.k_nn)])
    jn = j / np.outer(d, d)
    eig = np.linalg.eigvalsh(jn)
    floor = 1e-8 * max(jn[0, 0], jn[1, 1], 0.0)
    if eig[0] <= floor or floor == 0.0:
        raise SingularFimError(
            f"FIM min normalized eigenvalue {eig[0]:.3e} below floor {floor:.3e}")
    det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
    return FisherState(j=j, c_tt=j[1, 1] / det, c_nn=j[0, 0] / det,
                       c_tn=-j[0, 1] / det, kernels=kernels)


def weighted_crlb(fs: FisherState, w: SensingWeights) -> float:
    """Weighted A-optimal CRLB: w_tau * C_tautau + w_nu * C_nunu."""
    return w.w_tau * fs.c_tt + w.w_nu * fs.c_nn


def omega(n: int | np.ndarray, m: int | np.ndarray, c_tt: float, c_nn: float,
          c_tn: float, grid: OfdmGrid) -> np.ndarray | float:
    """Normalized frequency-time sensitivity factor of the echo reconstruction.

    Omega[n, m] = 4 pi^2 (C_tt (n df)^2 + C_nn (m T)^2 - 2 C_tn (n df)(m T)).
    """
    a = np.asarray(n, dtype=float) * grid.delta_f
    b = np.asarray(m, dtype=float) * grid.t_sym
    val = 4.0 * np.pi ** 2 * (c_tt * a ** 2 + c_nn * b ** 2 - 2.0 * c_tn * a * b)
    return float(val) if np.isscalar(n) and np.isscalar(m) else val


def reconstruction_error_variance(alpha_r_sq: float, c_tt: float, c_nn: float,
                                  c_tn: float, grid: OfdmGrid) -> np.ndarray:
    """Symbol-averaged echo reconstruction error variance per subcarrier.

    sigma_e[n]^2 = |alpha_R|^2 * mean_m Omega[n, m].
    """
    n = grid.n_index[:, None]
    m = np.arange(grid.m_symbols)[None, :]
    return alpha_r_sq * np.mean(omega(n, m, c_tt, c_nn, c_tn, grid), axis=1)


def end_to_end_sigma(p: PowerAllocation, ch: ChannelRealization):
    """Exact sensing-to-communication coupling for one allocation.

    Computes the sensing SINR, the FIM and its inverse, and the resulting
    reconstruction error variance.  Raises SingularFimError when the sensing
    power cannot support delay/Doppler estimation.
    """
    kernels = FimKernels.from_grid(ch.grid)
    _, _, gamma_r = sensing_sinr(p, ch)
    j = fim_from_sinr(gamma_r, kernels, ch.grid.n_index)
    fs = fisher_state(j, kernels)
    sigma_e_sq = reconstruction_error_variance(
        ch.echo.alpha_r_sq, fs.c_tt, fs.c_nn, fs.c_tn, ch.grid)
    return fs, sigma_e_sq


def evaluate_chain(p: PowerAllocation, ch: ChannelRealization) -> SinrBreakdown:
    """Run the full exact receiver chain for one allocation and channel draw."""
    s1, i1, g1 = robust_stream_sinr(p, ch)
    sr, ir, gr = sensing_sinr(p, ch)
    _, sigma_e_sq = end_to_end_sigma(p, ch)
    p_mis = mismatch_power(p, ch, sigma_e_sq)
    g2 = supplementary_stream_sinr(p, ch, sigma_e_sq)
    r_sum, _ = sum_spectral_efficiency(g1, g2)
    return SinrBreakdown(s_c1=s1, i_c1=i1, gamma_c1=g1, s_r=sr, i_r=ir,
                         gamma_r=gr, p_mismatch=p_mis, gamma_c2=g2, r_sum=r_sum)
