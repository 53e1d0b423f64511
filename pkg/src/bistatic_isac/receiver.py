"""Staged-receiver SINR chain for the superposed communication/radar waveform.

Processing order: the known direct-path radar replica is cancelled, the robust
stream is decoded and removed, target parameters are estimated from the radar
residual, and the supplementary stream is decoded after echo reconstruction
with maximum-ratio combining of the direct and reconstructed echo paths.
Every stage returns its signal and interference power components so SINRs can
be reconstructed and audited exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization


class DimensionMismatchError(ValueError):
    """Power vectors do not match the channel's subcarrier grid."""


@dataclass(frozen=True)
class PowerAllocation:
    """Per-subcarrier transmit powers of the three superposed components (W)."""

    p_c1: np.ndarray
    p_c2: np.ndarray
    p_r: np.ndarray

    def __post_init__(self):
        n = len(self.p_c1)
        if len(self.p_c2) != n or len(self.p_r) != n:
            raise DimensionMismatchError("power vectors must share one length")
        if min(self.p_c1.min(), self.p_c2.min(), self.p_r.min()) < 0:
            raise ValueError("powers must be nonnegative")
        for v in (self.p_c1, self.p_c2, self.p_r):
            v.flags.writeable = False

    @property
    def n_sc(self) -> int:
        return len(self.p_c1)

    @property
    def per_subcarrier_total(self) -> np.ndarray:
        return self.p_c1 + self.p_c2 + self.p_r

    @property
    def total(self) -> float:
        return float(self.per_subcarrier_total.sum())

    def validate(self, p_tx: float, p_min: float | None = None,
                 p_max: float | None = None, rtol: float = 0.0) -> bool:
        """Check the power budget and, when given, the per-subcarrier mask."""
        tot = self.per_subcarrier_total
        ok = self.total <= p_tx * (1.0 + rtol)
        if p_min is not None:
            ok = ok and bool(np.all(tot >= p_min * (1.0 - rtol) - 1e-300))
        if p_max is not None:
            ok = ok and bool(np.all(tot <= p_max * (1.0 + rtol)))
        return ok


@dataclass(frozen=True)
class SinrBreakdown:
    """Per-subcarrier SINR components of the full receiver chain.

    gamma = S / (I + noise) reconstructs exactly from the stored components;
    r_sum = sum_n log2((1 + gamma_c1[n]) (1 + gamma_c2[n])).
    """

    s_c1: np.ndarray
    i_c1: np.ndarray
    gamma_c1: np.ndarray
    s_r: np.ndarray
    i_r: np.ndarray
    gamma_r: np.ndarray
    p_mismatch: np.ndarray
    gamma_c2: np.ndarray
    r_sum: float

    @property
    def r_per_subcarrier(self) -> float:
        return self.r_sum / len(self.gamma_c1)


def _check(p: PowerAllocation, ch: ChannelRealization) -> None:
    if p.n_sc != ch.grid.n_sc:
        raise DimensionMismatchError(
            f"allocation has {p.n_sc} subcarriers, channel {ch.grid.n_sc}")


def robust_stream_sinr(p: PowerAllocation, ch: ChannelRealization):
    """Stage-2 SINR of the robust stream under a direct-path matched detector.

    The supplementary stream interferes on the direct path; the entire echo
    (all three components, including Doppler leakage) is still uncancelled.
    """
    _check(p, ch)
    s = ch.h_dp_sq * p.p_c1
    echo_load = ch.h_ep_sq * (p.p_c1 + p.p_c2 + p.p_r)
    i = ch.h_dp_sq * p.p_c2 + ch.xi @ echo_load
    return s, i, s / (i + ch.noise_power)


def sensing_sinr(p: PowerAllocation, ch: ChannelRealization):
    """Stage-3 per-subcarrier radar SINR after robust-stream cancellation.

    The robust stream's direct-path part is gone, but its echo replica, the
    undetected supplementary stream, and radar self-leakage all remain.
    """
    _check(p, ch)
    xi_diag = np.diag(ch.xi)
    s = xi_diag * ch.h_ep_sq * p.p_r
    comm_load = ch.h_ep_sq * (p.p_c1 + p.p_c2)
    radar_load = ch.h_ep_sq * p.p_r
    i = ch.h_dp_sq * p.p_c2 + ch.xi @ comm_load \
        + (ch.xi @ radar_load - xi_diag * radar_load)
    return s, i, s / (i + ch.noise_power)


def mismatch_power(p: PowerAllocation, ch: ChannelRealization,
                   sigma_e_sq: np.ndarray) -> np.ndarray:
    """Residual interference from imperfect echo reconstruction.

    P_mismatch[n] = sigma_e_sq[n] * (sum_k xi[n,k] (p_c1[k] + p_r[k]) + p_c2[n]).
    """
    _check(p, ch)
    sigma_e_sq = np.asarray(sigma_e_sq, dtype=float)
    if np.any(sigma_e_sq < 0):
        raise ValueError("sigma_e_sq must be nonnegative")
    return sigma_e_sq * (ch.xi @ (p.p_c1 + p.p_r) + p.p_c2)


def combining_gain(ch: ChannelRealization) -> np.ndarray:
    """Symbol-averaged power gain of coherent DP + reconstructed-EP combining.

    g[n] = mean_m |H_DP[n] + H_EP[n, m]|^2 with the echo coefficient at the
    true delay/Doppler; estimation error enters only through the mismatch term.
    """
    grid = ch.grid
    n_idx = grid.n_index
    m_idx = np.arange(grid.m_symbols)
    phase = (-2.0 * np.pi * grid.delta_f * ch.echo.tau_tar) * n_idx[:, None] \
        + (2.0 * np.pi * grid.t_sym * ch.echo.nu_tar) * m_idx[None, :]
    h_ep = ch.echo.alpha_r * np.exp(1j * phase)
    return np.mean(np.abs(ch.h_dp[:, None] + h_ep) ** 2, axis=1)


def supplementary_stream_sinr(p: PowerAllocation, ch: ChannelRealization,
                              sigma_e_sq: np.ndarray) -> np.ndarray:
    """Stage-4 SINR of the supplementary stream after echo cancellation.

    Interference: reconstruction mismatch, the stream's own unreconstructable
    echo leakage from other subcarriers, and noise.
    """
    _check(p, ch)
    p_mis = mismatch_power(p, ch, sigma_e_sq)
    xi_diag = np.diag(ch.xi)
    self_ici = ch.xi @ (ch.h_ep_sq * p.p_c2) - xi_diag * ch.h_ep_sq * p.p_c2
    s = combining_gain(ch) * p.p_c2
    return s / (p_mis + self_ici + ch.noise_power)


def sum_spectral_efficiency(gamma_c1: np.ndarray, gamma_c2: np.ndarray):
    """Aggregate spectral efficiency and its per-subcarrier average (bps/Hz)."""
    gamma_c1 = np.asarray(gamma_c1, dtype=float)
    gamma_c2 = np.asarray(gamma_c2, dtype=float)
    if gamma_c1.shape != gamma_c2.shape:
        raise DimensionMismatchError("SINR vectors must share one length")
    if np.any(gamma_c1 < 0) or np.any(gamma_c2 < 0):
        raise ValueError("SINRs must be nonnegative")
    r_sum = float(np.sum(np.log2((1.0 + gamma_c1) * (1.0 + gamma_c2))))
    return r_sum, r_sum / len(gamma_c1)
