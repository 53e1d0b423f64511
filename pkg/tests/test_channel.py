import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bistatic_isac.channel import (C_LIGHT, ChannelRealization, EchoPath,
                                   OfdmGrid, ScenarioGeometry, ZeroRangeError,
                                   DelayExceedsCpError, bistatic_delay,
                                   bistatic_echo_gain, dirichlet_leakage,
                                   dp_channel_realization, dp_response_from_taps,
                                   ep_coefficient, fd_effective_channel_oracle,
                                   leakage_matrix, make_echo, residual_doppler)

GRID = OfdmGrid(n_sc=32, n_cp=8, delta_f=15e3, m_symbols=16, f_c=28e9)
TABLE_GEOMETRY = ScenarioGeometry(bs_pos=(0.0, 0.0), ue_pos=(300.0, 0.0),
                                  tar_pos=(250.0, 50.0))


class TestDirichletLeakage:
    def test_zero_doppler_diagonal(self):
        assert dirichlet_leakage(GRID, 0.0, 5, 5) == 1.0

    def test_zero_doppler_orthogonal(self):
        assert dirichlet_leakage(GRID, 0.0, 5, 7) == 0.0

    def test_half_subcarrier_offset_diagonal(self):
        # independent high-precision evaluation of the closed form at d=0
        expected = (np.sin(np.pi * 0.5) / (32.0 * np.sin(np.pi * 0.5 / 32.0))) ** 2
        got = dirichlet_leakage(GRID, 0.5 * GRID.delta_f, 3, 3)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(0.4056, abs=5e-5)

    def test_cyclic_symmetry(self):
        nu = 0.37 * GRID.delta_f
        xi = leakage_matrix(GRID, nu)
        # value depends on (n, k) only through the cyclic index difference
        for n, k in ((0, 5), (10, 15), (27, 0)):
            d = (k - n) % GRID.n_sc
            assert xi[n, k] == pytest.approx(xi[0, d], rel=1e-12)

    def test_zero_doppler_identity_matrix(self):
        assert np.array_equal(leakage_matrix(GRID, 0.0), np.eye(32))

    def test_row_sums_half_offset(self):
        xi = leakage_matrix(GRID, 0.5 * GRID.delta_f)
        np.testing.assert_allclose(xi.sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(np.diag(xi), 0.4056104123358413, rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(min_value=-3.0, max_value=3.0,
                     allow_nan=False, allow_infinity=False))
    def test_row_sums_are_one_for_any_doppler(self, frac):
        xi = leakage_matrix(GRID, frac * GRID.delta_f)
        np.testing.assert_allclose(xi.sum(axis=1), 1.0, atol=1e-9)
        assert xi.min() >= 0.0 and xi.max() <= 1.0 + 1e-12


class TestBistaticGeometry:
    def test_table_geometry_echo_gain(self):
        lam = C_LIGHT / 28e9
        got = bistatic_echo_gain(TABLE_GEOMETRY, lam, rcs=10.0,
                                 gain_product=10.0 ** 3.8)
        r_ut = np.hypot(50.0, 50.0)
        r_tb = np.hypot(250.0, 50.0)
        expected = 10 ** 3.8 * lam ** 2 * 10.0 / ((4 * np.pi) ** 3 * r_ut ** 2 * r_tb ** 2)
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(1.12e-11, rel=5e-3)

    def test_zero_rcs(self):
        assert bistatic_echo_gain(TABLE_GEOMETRY, 0.01, 0.0, 1.0) == 0.0

    def test_range_scaling(self):
        lam = C_LIGHT / 28e9
        near = bistatic_echo_gain(TABLE_GEOMETRY, lam, 10.0, 1.0)
        far_geom = ScenarioGeometry(bs_pos=(0.0, 0.0), ue_pos=(600.0, 0.0),
                                    tar_pos=(500.0, 100.0))
        far = bistatic_echo_gain(far_geom, lam, 10.0, 1.0)
        assert far == pytest.approx(near / 16.0, rel=1e-12)

    def test_zero_range_rejected(self):
        with pytest.raises((ZeroRangeError, ValueError)):
            geom = ScenarioGeometry(ue_pos=(250.0, 50.0), tar_pos=(250.0, 50.0))
            bistatic_echo_gain(geom, 0.01, 1.0, 1.0)

    def test_table_delay(self):
        expected = (np.hypot(50, 50) + np.hypot(250, 50)) / C_LIGHT
        assert bistatic_delay(TABLE_GEOMETRY) == pytest.approx(expected, rel=1e-12)
        assert bistatic_delay(TABLE_GEOMETRY) == pytest.approx(1.086e-6, rel=1e-3)

    def test_equal_range_delay(self):
        geom = ScenarioGeometry(bs_pos=(0.0, 0.0), ue_pos=(0.0, 300.0),
                                tar_pos=(0.0, 150.0))
        assert bistatic_delay(geom) == pytest.approx(300.0 / C_LIGHT, rel=1e-12)

    def test_static_doppler_is_zero(self):
        assert residual_doppler(TABLE_GEOMETRY, 0.0107) == 0.0

    def test_aligned_paths_cancel(self):
        # target on the UE-BS segment: illumination and direct path coincide,
        # so the UE motion contributes identically to both Doppler terms
        geom = ScenarioGeometry(bs_pos=(0.0, 0.0), ue_pos=(300.0, 0.0),
                                tar_pos=(150.0, 0.0), v_ue=(-20.0, 7.0))
        assert residual_doppler(geom, 0.0107) == pytest.approx(0.0, abs=1e-9)

    def test_severe_mobility_matches_scalar_oracle(self):
        lam = C_LIGHT / 28e9
        v_ue = (-80 / 3.6, 0.0)
        v_tar = (0.0, 120 / 3.6)
        geom = ScenarioGeometry(bs_pos=(0.0, 0.0), ue_pos=(300.0, 0.0),
                                tar_pos=(250.0, 50.0), v_ue=v_ue, v_tar=v_tar)
        # term-by-term re-evaluation of the three-equation Doppler chain
        ue, tar, bs = map(np.array, ((300.0, 0.0), (250.0, 50.0), (0.0, 0.0)))
        ill = (tar - ue) / np.linalg.norm(tar - ue)
        dp = (bs - ue) / np.linalg.norm(bs - ue)
        ang = lambda v: np.arctan2(v[1], v[0])
        d_tx = ang(np.array(v_ue)) - ang(ill)
        th_t = ang(ill) - ang(dp)
        t2u = (ue - tar) / np.linalg.norm(ue - tar)
        t2b = (bs - tar) / np.linalg.norm(bs - tar)
        beta = np.arccos(np.clip(t2u @ t2b, -1, 1))
        bis = (t2u + t2b) / np.linalg.norm(t2u + t2b)
        phi = np.arccos(np.clip(np.array(v_tar) @ bis / np.linalg.norm(v_tar), -1, 1))
        nu_abs = np.linalg.norm(v_ue) / lam * np.cos(d_tx) \
            + 2 * np.linalg.norm(v_tar) / lam * np.cos(phi) * np.cos(beta / 2)
        nu_dp = np.linalg.norm(v_ue) / lam * np.cos(d_tx + th_t)
        assert residual_doppler(geom, lam) == pytest.approx(nu_abs - nu_dp, rel=1e-12)


class TestDpChannel:
    def test_single_tap_is_flat(self):
        h = dp_response_from_taps(GRID, np.array([1.0 + 0j]), np.array([0.0]))
        np.testing.assert_allclose(h, np.ones(32), atol=1e-14)

    def test_two_taps_against_dft_oracle(self):
        tau1 = (GRID.n_sc / 2) / (GRID.n_sc * GRID.delta_f)
        gains = np.array([1.0 + 0j, 1.0 + 0j]) / np.sqrt(2)
        h = dp_response_from_taps(GRID, gains, np.array([0.0, tau1]))
        expected = gains[0] + gains[1] * np.exp(-2j * np.pi * GRID.n_index
                                                * GRID.delta_f * tau1)
        np.testing.assert_allclose(h, expected, atol=1e-12)
        # the half-window tap alternates between coherent sum and cancellation
        np.testing.assert_allclose(np.abs(h[::2]) ** 2, 4 * np.abs(gains[0]) ** 2,
                                   rtol=1e-10)
        np.testing.assert_allclose(np.abs(h[1::2]) ** 2, 0.0, atol=1e-12)

    def test_seeded_determinism(self):
        a = dp_channel_realization(GRID, 1e-6, 12345)
        b = dp_channel_realization(GRID, 1e-6, 12345)
        assert np.array_equal(a, b)

    def test_ensemble_power_is_normalized(self):
        total = 0.0
        n = 400
        for seed in range(n):
            h = dp_channel_realization(GRID, 1e-6, seed)
            total += np.mean(np.abs(h) ** 2)
        assert total / n == pytest.approx(1.0, rel=0.15)


class TestEpCoefficient:
    ECHO = EchoPath(alpha_r_sq=4.0, tau_tar=0.0, nu_tar=0.0, alpha_r_phase=0.0)

    def test_zero_delay_zero_doppler(self):
        for n, m in ((0, 0), (5, 3), (-7, 11)):
            assert ep_coefficient(self.ECHO, GRID, n, m) == pytest.approx(2.0)

    def test_unit_modulus(self):
        echo = EchoPath(alpha_r_sq=2.0, tau_tar=3.1e-7, nu_tar=812.0,
                        alpha_r_phase=1.2)
        for n, m in ((0, 0), (15, 4), (-16, 15)):
            assert abs(ep_coefficient(echo, GRID, n, m)) == pytest.approx(
                np.sqrt(2.0), rel=1e-12)

    def test_one_sample_delay_phase(self):
        echo = EchoPath(alpha_r_sq=1.0, tau_tar=1.0 / (GRID.n_sc * GRID.delta_f),
                        nu_tar=0.0)
        got = ep_coefficient(echo, GRID, 1, 0)
        assert np.angle(got) == pytest.approx(-2 * np.pi / GRID.n_sc, rel=1e-12)


class TestFdOracle:
    def test_identity_for_trivial_path(self):
        mat = fd_effective_channel_oracle([(1.0, 0, 0.0)], GRID)
        np.testing.assert_allclose(mat, np.eye(32), atol=1e-12)

    def test_integer_delay_shift_theorem(self):
        d = 3
        mat = fd_effective_channel_oracle([(1.0, d, 0.0)], GRID)
        expected = np.exp(-2j * np.pi * GRID.n_index * d / GRID.n_sc)
        np.testing.assert_allclose(np.diag(mat), expected, atol=1e-12)
        off = mat - np.diag(np.diag(mat))
        assert np.abs(off).max() < 1e-12

    @pytest.mark.parametrize("frac", [0.1, 0.3, 0.5])
    @pytest.mark.parametrize("delay", [0, 2, 7])
    def test_leakage_agreement(self, frac, delay):
        nu = frac * GRID.delta_f
        gain = 0.7 - 0.2j
        mat = fd_effective_channel_oracle([(gain, delay, nu)], GRID)
        xi = leakage_matrix(GRID, nu) * abs(gain) ** 2
        mask = xi > 1e-6 * abs(gain) ** 2
        rel = np.abs(np.abs(mat) ** 2 - xi)[mask] / xi[mask]
        assert rel.max() < 0.02

    def test_delay_outside_cp_rejected(self):
        with pytest.raises(DelayExceedsCpError):
            fd_effective_channel_oracle([(1.0, GRID.n_cp, 0.0)], GRID)


class TestChannelRealization:
    def test_row_sum_validation(self):
        xi = leakage_matrix(GRID, 0.2 * GRID.delta_f)
        echo = make_echo(TABLE_GEOMETRY, GRID, 10.0, 10 ** 3.8)
        ch = ChannelRealization(grid=GRID, h_dp=np.ones(32, dtype=complex),
                                echo=echo, xi=xi, noise_power=1e-13)
        np.testing.assert_allclose(ch.h_ep_sq, echo.alpha_r_sq)
        bad = xi.copy()
        bad[0, 0] += 1e-3
        with pytest.raises(ValueError):
            ChannelRealization(grid=GRID, h_dp=np.ones(32, dtype=complex),
                               echo=echo, xi=bad, noise_power=1e-13)

    def test_zero_noise_rejected(self):
        echo = make_echo(TABLE_GEOMETRY, GRID, 10.0, 10 ** 3.8)
        with pytest.raises(ValueError):
            ChannelRealization(grid=GRID, h_dp=np.ones(32, dtype=complex),
                               echo=echo, xi=np.eye(32), noise_power=0.0)
