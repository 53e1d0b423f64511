import numpy as np
import pytest

from bistatic_isac.channel import (ChannelRealization, EchoPath, OfdmGrid,
                                   leakage_matrix)
from bistatic_isac.receiver import (DimensionMismatchError, PowerAllocation,
                                    combining_gain, mismatch_power,
                                    robust_stream_sinr, sensing_sinr,
                                    sum_spectral_efficiency,
                                    supplementary_stream_sinr)

GRID2 = OfdmGrid(n_sc=2, n_cp=1, delta_f=15e3, m_symbols=4, f_c=28e9)
GRID = OfdmGrid(n_sc=32, n_cp=8, delta_f=15e3, m_symbols=16, f_c=28e9)


def make_channel(grid, h_dp, alpha_sq, nu=0.0, tau=0.0, phase=0.0, noise=1.0):
    echo = EchoPath(alpha_r_sq=alpha_sq, tau_tar=tau, nu_tar=nu,
                    alpha_r_phase=phase)
    return ChannelRealization(grid=grid, h_dp=np.asarray(h_dp, dtype=complex),
                              echo=echo, xi=leakage_matrix(grid, nu),
                              noise_power=noise)


def toy_channel():
    """Two-subcarrier channel with hand-set gains and fractional Doppler."""
    return make_channel(GRID2, [2.0, 1.0 + 1.0j], alpha_sq=0.25,
                        nu=0.3 * GRID2.delta_f, noise=0.5)


def alloc(*vectors):
    return PowerAllocation(*(np.asarray(v, dtype=float) for v in vectors))


class TestRobustStream:
    def test_zero_power_zero_sinr(self):
        ch = toy_channel()
        _, _, g = robust_stream_sinr(alloc([0, 0], [1, 2], [3, 1]), ch)
        np.testing.assert_array_equal(g, 0.0)

    def test_pure_awgn_limit(self):
        ch = make_channel(GRID2, [2.0, 1.0j], alpha_sq=0.0, noise=0.5)
        p = alloc([1.0, 2.0], [0.0, 0.0], [0.5, 0.5])
        _, _, g = robust_stream_sinr(p, ch)
        np.testing.assert_allclose(g, np.abs(ch.h_dp) ** 2 * p.p_c1 / 0.5)

    def test_two_subcarrier_scalar_oracle(self):
        ch = toy_channel()
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        s, i, g = robust_stream_sinr(p, ch)
        xi = ch.xi
        for n in range(2):
            s_ref = abs(ch.h_dp[n]) ** 2 * p.p_c1[n]
            i_ref = abs(ch.h_dp[n]) ** 2 * p.p_c2[n]
            for k in range(2):
                i_ref += xi[n, k] * 0.25 * (p.p_c1[k] + p.p_c2[k] + p.p_r[k])
            assert s[n] == pytest.approx(s_ref, rel=1e-12)
            assert i[n] == pytest.approx(i_ref, rel=1e-12)
            assert g[n] == pytest.approx(s_ref / (i_ref + 0.5), rel=1e-12)

    def test_bookkeeping_reconstructs_sinr(self):
        ch = toy_channel()
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        s, i, g = robust_stream_sinr(p, ch)
        np.testing.assert_array_equal(g, s / (i + ch.noise_power))

    def test_monotonicity(self):
        ch = toy_channel()
        base = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        _, _, g0 = robust_stream_sinr(base, ch)
        up = alloc([1.5, 2.0], [0.5, 0.25], [0.75, 1.25])
        _, _, g1 = robust_stream_sinr(up, ch)
        assert g1[0] > g0[0]
        more_radar = alloc([1.0, 2.0], [0.5, 0.25], [2.0, 1.25])
        _, _, g2 = robust_stream_sinr(more_radar, ch)
        assert np.all(g2 <= g0 + 1e-15)

    def test_dimension_mismatch(self):
        ch = toy_channel()
        with pytest.raises(DimensionMismatchError):
            robust_stream_sinr(alloc([1.0] * 3, [0.0] * 3, [0.0] * 3), ch)


class TestSensingSinr:
    def test_no_ici_no_comm(self):
        ch = make_channel(GRID2, [2.0, 1.0], alpha_sq=0.25, nu=0.0, noise=0.5)
        p = alloc([0.0, 0.0], [0.0, 0.0], [1.0, 2.0])
        _, _, g = sensing_sinr(p, ch)
        np.testing.assert_allclose(g, 0.25 * p.p_r / 0.5)

    def test_zero_radar_power(self):
        ch = toy_channel()
        _, _, g = sensing_sinr(alloc([1, 1], [1, 1], [0, 0]), ch)
        np.testing.assert_array_equal(g, 0.0)

    def test_two_subcarrier_scalar_oracle(self):
        ch = toy_channel()
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        s, i, g = sensing_sinr(p, ch)
        xi = ch.xi
        for n in range(2):
            s_ref = xi[n, n] * 0.25 * p.p_r[n]
            i_ref = abs(ch.h_dp[n]) ** 2 * p.p_c2[n]
            for k in range(2):
                i_ref += xi[n, k] * 0.25 * (p.p_c1[k] + p.p_c2[k])
                if k != n:
                    i_ref += xi[n, k] * 0.25 * p.p_r[k]
            assert s[n] == pytest.approx(s_ref, rel=1e-12)
            assert i[n] == pytest.approx(i_ref, rel=1e-12)
            assert g[n] == pytest.approx(s_ref / (i_ref + 0.5), rel=1e-12)


class TestMismatchPower:
    def test_zero_error_variance(self):
        ch = toy_channel()
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        np.testing.assert_array_equal(mismatch_power(p, ch, np.zeros(2)), 0.0)

    def test_diagonal_collapse_at_zero_doppler(self):
        ch = make_channel(GRID2, [2.0, 1.0], alpha_sq=0.25, nu=0.0)
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        sig = np.array([0.1, 0.2])
        expected = sig * (p.p_c1 + p.p_r + p.p_c2)
        np.testing.assert_allclose(mismatch_power(p, ch, sig), expected, rtol=1e-12)

    def test_two_subcarrier_scalar_oracle(self):
        ch = toy_channel()
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        sig = np.array([0.1, 0.2])
        got = mismatch_power(p, ch, sig)
        for n in range(2):
            ref = sig[n] * (sum(ch.xi[n, k] * (p.p_c1[k] + p.p_r[k])
                                for k in range(2)) + p.p_c2[n])
            assert got[n] == pytest.approx(ref, rel=1e-12)


class TestSupplementaryStream:
    def test_zero_power(self):
        ch = toy_channel()
        g = supplementary_stream_sinr(alloc([1, 1], [0, 0], [1, 1]), ch,
                                      np.array([0.1, 0.1]))
        np.testing.assert_array_equal(g, 0.0)

    def test_dp_only_combining_without_echo(self):
        ch = make_channel(GRID2, [2.0, 1.0j], alpha_sq=0.0, noise=0.5)
        p = alloc([0.0, 0.0], [1.0, 2.0], [0.5, 0.5])
        g = supplementary_stream_sinr(p, ch, np.zeros(2))
        np.testing.assert_allclose(g, np.abs(ch.h_dp) ** 2 * p.p_c2 / 0.5)

    def test_two_subcarrier_scalar_oracle(self):
        ch = toy_channel()
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        sig = np.array([0.07, 0.04])
        got = supplementary_stream_sinr(p, ch, sig)
        p_mis = mismatch_power(p, ch, sig)
        comb = combining_gain(ch)
        for n in range(2):
            self_ici = sum(ch.xi[n, k] * 0.25 * p.p_c2[k]
                           for k in range(2) if k != n)
            ref = comb[n] * p.p_c2[n] / (p_mis[n] + self_ici + 0.5)
            assert got[n] == pytest.approx(ref, rel=1e-12)

    def test_zero_doppler_denominator_structure(self):
        ch = make_channel(GRID2, [2.0, 1.0], alpha_sq=0.25, nu=0.0, noise=0.5)
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        sig = np.array([0.1, 0.2])
        got = supplementary_stream_sinr(p, ch, sig)
        p_mis = mismatch_power(p, ch, sig)
        comb = combining_gain(ch)
        np.testing.assert_allclose(got, comb * p.p_c2 / (p_mis + 0.5), rtol=1e-12)


class TestCombiningGain:
    def test_static_coherent_sum(self):
        ch = make_channel(GRID2, [2.0, 1.0], alpha_sq=0.25, nu=0.0, phase=0.0)
        got = combining_gain(ch)
        np.testing.assert_allclose(got, np.abs(ch.h_dp + 0.5) ** 2, rtol=1e-12)

    def test_symbol_average_with_doppler(self):
        ch = make_channel(GRID2, [2.0, 1.0], alpha_sq=0.25,
                          nu=0.2 * GRID2.delta_f, tau=1e-7)
        got = combining_gain(ch)
        expected = np.zeros(2)
        for j, n in enumerate(GRID2.n_index):
            acc = 0.0
            for m in range(GRID2.m_symbols):
                h_ep = 0.5 * np.exp(1j * (-2 * np.pi * n * GRID2.delta_f * 1e-7
                                          + 2 * np.pi * m * GRID2.t_sym * ch.echo.nu_tar))
                acc += abs(ch.h_dp[j] + h_ep) ** 2
            expected[j] = acc / GRID2.m_symbols
        np.testing.assert_allclose(got, expected, rtol=1e-12)


class TestSumSpectralEfficiency:
    def test_zero(self):
        assert sum_spectral_efficiency(np.zeros(4), np.zeros(4)) == (0.0, 0.0)

    def test_unit_sinr(self):
        total, per = sum_spectral_efficiency(np.ones(32), np.zeros(32))
        assert total == pytest.approx(32.0)
        assert per == pytest.approx(1.0)

    def test_stream_product(self):
        g1 = np.array([1.0, 3.0])
        g2 = np.array([0.5, 0.0])
        total, _ = sum_spectral_efficiency(g1, g2)
        assert total == pytest.approx(np.sum(np.log2((1 + g1) * (1 + g2))))


class TestPipelineScaleInvariance:
    def test_scaling_all_powers_and_noise(self):
        ch = toy_channel()
        p = alloc([1.0, 2.0], [0.5, 0.25], [0.75, 1.25])
        sig = np.array([0.07, 0.04])
        scale = 3.7
        ch2 = make_channel(GRID2, np.asarray(ch.h_dp), alpha_sq=0.25,
                           nu=0.3 * GRID2.delta_f, noise=0.5 * scale)
        p2 = alloc(p.p_c1 * scale, p.p_c2 * scale, p.p_r * scale)
        for fn in (robust_stream_sinr, sensing_sinr):
            _, _, a = fn(p, ch)
            _, _, b = fn(p2, ch2)
            np.testing.assert_allclose(a, b, rtol=1e-12)
        a = supplementary_stream_sinr(p, ch, sig)
        b = supplementary_stream_sinr(p2, ch2, sig)
        np.testing.assert_allclose(a, b, rtol=1e-12)
