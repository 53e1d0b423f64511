import os

import numpy as np
import pytest

from bistatic_isac.harness import (ExperimentConfig, MOBILITY_PROFILES,
                                   ResultRow, aggregate_point,
                                   emit_plot_data, emit_rows, load_config,
                                   parse_config, realize_channel, run_point,
                                   run_point_all)

FAST = dict(runs=2, workers=1, n_sc=16, n_cp=4, max_iterations=6,
            echo_snr_ref_db=-4.0, gamma_sens=1500.0)


class TestConfigParsing:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        assert cfg.grid.n_sc == 32
        assert cfg.p_tx == pytest.approx(1e-3 * 10 ** 2.3)
        assert cfg.noise_power == pytest.approx(1e-3 * 10 ** -9.5)

    def test_parse_units(self):
        cfg = parse_config("""
            grid.delta_f_khz = 30
            grid.f_c_ghz = 3.5
            link.p_tx_dbm = 20
            link.delay_spread_ns = 300
            mobility.profile = severe
            sweep.delta_g_db = 10, 20, 30
            run.schemes = rs, noma-cf
        """)
        assert cfg.grid.delta_f == pytest.approx(30e3)
        assert cfg.grid.f_c == pytest.approx(3.5e9)
        assert cfg.p_tx == pytest.approx(0.1)
        assert cfg.speeds_ms == pytest.approx((80 / 3.6, 120 / 3.6))
        assert cfg.sweep_delta_g_db == (10.0, 20.0, 30.0)
        assert cfg.schemes == ("rs", "noma-cf")

    def test_unknown_key_is_hard_error(self):
        with pytest.raises(ValueError, match="unknown configuration key"):
            parse_config("grid.n_subcarriers = 32")

    def test_malformed_line(self):
        with pytest.raises(ValueError, match="expected"):
            parse_config("grid.n_sc 32")

    def test_gamma_none(self):
        cfg = parse_config("sensing.gamma_sens = none")
        assert cfg.gamma_sens is None

    def test_file_loading(self, tmp_path):
        path = tmp_path / "scenario.cfg"
        path.write_text("run.seed = 7\nrun.runs = 3\n")
        cfg = load_config(str(path))
        assert cfg.seed == 7 and cfg.runs == 3

    def test_invalid_scheme_rejected(self):
        with pytest.raises(ValueError):
            ExperimentConfig(schemes=("rsma",))

    def test_mobility_profiles(self):
        assert MOBILITY_PROFILES["moderate"] == (40.0, 60.0)
        cfg = ExperimentConfig(mobility="moderate")
        assert cfg.speeds_ms == pytest.approx((40 / 3.6, 60 / 3.6))


class TestChannelRealization:
    def test_seeded_determinism(self):
        cfg = ExperimentConfig(**FAST)
        a = realize_channel(cfg, 22.0, 3)
        b = realize_channel(cfg, 22.0, 3)
        assert np.array_equal(a.h_dp, b.h_dp)
        assert a.echo.alpha_r_phase == b.echo.alpha_r_phase

    def test_sweep_scales_dp_budget_with_echo_fixed(self):
        cfg = ExperimentConfig(**FAST)
        a = realize_channel(cfg, 15.0, 0)
        b = realize_channel(cfg, 25.0, 0)
        # fading shape and echo identical; the DP budget carries the sweep
        np.testing.assert_allclose(np.abs(b.h_dp) ** 2,
                                   10.0 * np.abs(a.h_dp) ** 2, rtol=1e-12)
        assert a.echo.tau_tar == b.echo.tau_tar
        assert a.echo.nu_tar == b.echo.nu_tar
        assert a.echo.alpha_r_sq == pytest.approx(b.echo.alpha_r_sq)

    def test_reference_snr_calibration(self):
        cfg = ExperimentConfig(**FAST)
        p_avg = cfg.p_tx / cfg.n_sc
        assert cfg.echo_gain * p_avg / cfg.noise_power == pytest.approx(
            10 ** (cfg.echo_snr_ref_db / 10))
        assert cfg.dp_gain_for(20.0) == pytest.approx(cfg.echo_gain * 100.0)

    def test_static_and_zero_speed_custom_match(self):
        base = ExperimentConfig(**FAST)
        custom = ExperimentConfig(**{**FAST, "mobility": "severe",
                                     "v_ue_kmh": 0.0, "v_tar_kmh": 0.0})
        a = realize_channel(base, 20.0, 1)
        b = realize_channel(custom, 20.0, 1)
        assert a.echo.nu_tar == b.echo.nu_tar == 0.0
        assert np.array_equal(a.xi, b.xi)
        assert np.array_equal(a.xi, np.eye(base.n_sc))


class TestRunPoint:
    def test_rows_and_dominance(self):
        cfg = ExperimentConfig(**FAST)
        rows = run_point_all(cfg, 22.0)
        assert set(rows) == set(cfg.schemes)
        for scheme, lst in rows.items():
            assert len(lst) == cfg.runs
            for r in lst:
                assert r.scheme == scheme
                assert r.se_bps_hz >= 0.0
                if r.feasible:
                    assert r.crlb <= cfg.gamma_sens * 1.01
        for i in range(cfg.runs):
            rs = rows["rs"][i].se_bps_hz
            base = max(rows["noma-cf"][i].se_bps_hz, rows["noma-sf"][i].se_bps_hz)
            assert rs >= base - 1e-6

    def test_single_scheme_run_point(self):
        cfg = ExperimentConfig(**{**FAST, "schemes": ("noma-cf",)})
        rows = run_point(cfg, 14.0, "noma-cf")
        assert len(rows) == cfg.runs
        assert all(r.feasible for r in rows)
        for r in rows:
            assert np.all(r.allocation.p_c2 == 0.0)

    def test_csv_determinism(self, tmp_path):
        cfg = ExperimentConfig(**{**FAST, "schemes": ("noma-cf",), "runs": 1})
        rows1 = run_point(cfg, 22.0, "noma-cf")
        rows2 = run_point(cfg, 22.0, "noma-cf")
        p1 = emit_rows(rows1, str(tmp_path / "a.csv"))
        p2 = emit_rows(rows2, str(tmp_path / "b.csv"))
        assert open(p1, "rb").read() == open(p2, "rb").read()


class TestAggregation:
    @staticmethod
    def fake_rows(scheme, values):
        return [ResultRow(scheme=scheme, delta_g_db=20.0, mobility="static",
                          gamma_sens=200.0, realization=i, se_bps_hz=v,
                          crlb=150.0, iterations=5, feasible=True)
                for i, v in enumerate(values)]

    def test_gains(self):
        rows = {"rs": self.fake_rows("rs", [4.0, 4.4]),
                "noma-cf": self.fake_rows("noma-cf", [4.0, 4.0]),
                "noma-sf": self.fake_rows("noma-sf", [3.0, 3.4])}
        pt = aggregate_point(20.0, rows)
        assert pt.mean_se["rs"] == pytest.approx(4.2)
        assert pt.gain_over_cf_pct == pytest.approx(5.0)
        assert pt.gain_over_sf_pct == pytest.approx(100 * (4.2 - 3.2) / 3.2)
        assert pt.gain_over_envelope_pct == pytest.approx(5.0)

    def test_ci_shrinks_with_spread(self):
        tight = aggregate_point(20.0, {"rs": self.fake_rows("rs", [4.0, 4.01])})
        wide = aggregate_point(20.0, {"rs": self.fake_rows("rs", [3.0, 5.0])})
        assert tight.ci95["rs"] < wide.ci95["rs"]


class TestEmission:
    def test_empty_results_error(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot_data([], "sweep", str(tmp_path))

    def test_unknown_kind(self, tmp_path):
        with pytest.raises(ValueError):
            emit_plot_data([1], "heatmap", str(tmp_path))

    def test_sweep_schema(self, tmp_path):
        rows = {"rs": TestAggregation.fake_rows("rs", [4.0]),
                "noma-cf": TestAggregation.fake_rows("noma-cf", [3.5]),
                "noma-sf": TestAggregation.fake_rows("noma-sf", [3.0])}
        pt = aggregate_point(20.0, rows)
        paths = emit_plot_data([pt], "sweep", str(tmp_path))
        header = open(paths[0]).readline().strip()
        assert header == "delta_g_db,scheme,mean_se,ci95"
        header2 = open(paths[1]).readline().strip()
        assert header2 == "delta_g_db,gain_over_cf_pct,gain_over_sf_pct,gain_over_envelope_pct"

    def test_convergence_schema(self, tmp_path):
        traces = {"static": np.array([2.0, 2.5, 2.7])}
        paths = emit_plot_data(traces, "convergence", str(tmp_path))
        lines = open(paths[0]).read().splitlines()
        assert lines[0] == "iteration,profile,mean_se"
        assert lines[1] == "1,static,2"

    def test_reemission_identical_bytes(self, tmp_path):
        traces = {"static": np.array([2.0, 2.5])}
        p1 = emit_plot_data(traces, "convergence", str(tmp_path / "a"))[0]
        p2 = emit_plot_data(traces, "convergence", str(tmp_path / "b"))[0]
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_row_csv_roundtrip_fields(self, tmp_path):
        row = ResultRow(scheme="rs", delta_g_db=22.5, mobility="static",
                        gamma_sens=200.0, realization=3, se_bps_hz=4.125,
                        crlb=180.25, iterations=12, feasible=True)
        path = emit_rows([row], str(tmp_path / "rows.csv"))
        lines = open(path).read().splitlines()
        assert lines[0] == ResultRow.CSV_HEADER
        assert lines[1] == "rs,22.5,static,200,3,4.125,180.25,12,1"


class TestSweepSinglePoint:
    def test_length_one_sweep_matches_run_point_means(self):
        from dataclasses import replace
        from bistatic_isac.harness import sweep_delta_g
        cfg = ExperimentConfig(**{**FAST, "sweep_delta_g_db": (16.0,)})
        points = sweep_delta_g(cfg)
        assert len(points) == 1
        again = aggregate_point(16.0, run_point_all(cfg, 16.0))
        for scheme, mean in points[0].mean_se.items():
            assert mean == pytest.approx(again.mean_se[scheme], rel=1e-12)


class TestTightnessSlackTarget:
    def test_huge_target_leaves_constraint_inactive(self):
        from bistatic_isac.harness import sensing_tightness_study
        cfg = ExperimentConfig(**{**FAST, "runs": 1})
        table = sensing_tightness_study(cfg, delta_g_points=(16.0,),
                                        gamma_values=(1e9,))
        cell = table[0]
        assert np.isfinite(cell["mean_crlb"])
        assert cell["mean_crlb"] < 1e-2 * cell["gamma_sens"]
