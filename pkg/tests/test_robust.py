import numpy as np
import pytest
from scipy.linalg import expm

from oracles import ltv_from_functions, random_ltv, svd_oracle, transition
from stsrobust.cli import REPORTED_WEIGHTS
from stsrobust.lqr import GainSchedule, design_gain
from stsrobust.model import table_one_box
from stsrobust.numerics import DivergenceError
from stsrobust.robust import (
    DEFAULT_BANDWIDTH,
    GainReport,
    assemble_extended_ltv,
    build_parameter_filter,
    controllability_gramian,
    evaluate_gain_schedule,
    induced_gains,
    l2_to_euclidean_gain,
    robust_metric,
)


class TestFilter:
    def test_matrices(self):
        box = table_one_box()
        f = build_parameter_filter(box)
        assert f.a == DEFAULT_BANDWIDTH
        assert np.array_equal(f.A_d, -DEFAULT_BANDWIDTH * np.eye(12))
        assert np.array_equal(f.B_d, np.eye(12))
        assert f.C_d[0, 0] == pytest.approx(100 * np.pi * 0.1, rel=1e-14)
        assert np.count_nonzero(f.C_d - np.diag(np.diag(f.C_d))) == 0

    def test_dc_gain_is_half_width(self):
        box = table_one_box()
        f = build_parameter_filter(box, a=37.0)
        assert np.allclose(f.dc_gain, np.diag(box.half_widths), atol=1e-15)

    @pytest.mark.parametrize("a", [10.0, 100 * np.pi, 2000.0])
    def test_step_settles_within_five_time_constants(self, a):
        box = table_one_box()
        f = build_parameter_filter(box, a)
        t = 5.0 / a
        # Step response C_d A_d^-1 (e^{A_d t} - I) B_d.
        step = f.C_d @ np.linalg.solve(f.A_d, (expm(f.A_d * t) - np.eye(12)) @ f.B_d)
        hw = np.diag(box.half_widths)
        assert np.all(np.abs(step - hw) <= 0.01 * np.abs(hw) + 1e-15)

    def test_bandwidth_validation(self):
        with pytest.raises(ValueError):
            build_parameter_filter(table_one_box(), a=0.0)


class TestAssembly:
    def test_block_structure(self, ltvs, param_filter):
        ltv = ltvs["STS1"]
        gains = design_gain(ltv, REPORTED_WEIGHTS["STS1"])
        ext = assemble_extended_ltv(ltv, gains, param_filter)
        assert ext.Abar.shape == (len(ltv.times), 18, 18)
        assert np.all(ext.Abar[:, 6:, :6] == 0)
        assert np.all(ext.Bbar[:, :6] == 0)
        assert np.array_equal(ext.Abar[:, :6, :6], ltv.A - ltv.B2 @ gains.K)
        assert np.array_equal(ext.Abar[:, :6, 6:], ltv.B1 @ param_filter.C_d)
        assert np.array_equal(ext.Abar[:, 6:, 6:], np.repeat(param_filter.A_d[None], len(ltv.times), 0))

    def test_zero_gain_zero_coupling_decouples(self, ltvs, box):
        ltv = ltvs["STS2"]
        flat = build_parameter_filter(type(box)(box.nominal, (0.0,) * 12))
        ext = assemble_extended_ltv(ltv, GainSchedule.zeros(ltv.times), flat)
        assert np.array_equal(ext.Abar[:, :6, :6], ltv.A)
        assert np.all(ext.Abar[:, :6, 6:] == 0)

    def test_output_weights_scale_rows(self, ltvs, param_filter):
        ltv = ltvs["STS1"]
        K = GainSchedule.zeros(ltv.times)
        weighted = assemble_extended_ltv(ltv, K, param_filter)
        plain = assemble_extended_ltv(ltv, K, param_filter, W_e=(1,) * 6)
        assert np.array_equal(weighted.Cbar[:, :3], plain.Cbar[:, :3])
        assert np.allclose(weighted.Cbar[:, 3:], 10 * plain.Cbar[:, 3:], rtol=1e-15, atol=0)

    def test_grid_mismatch(self, ltvs, param_filter):
        ltv = ltvs["STS1"]
        with pytest.raises(ValueError):
            assemble_extended_ltv(ltv, GainSchedule.zeros(ltv.times[:-1]), param_filter)


class TestGain:
    def test_scalar_lag_closed_form(self):
        ext = ltv_from_functions(lambda t: -np.eye(1), lambda t: np.eye(1), [[1.0]])
        assert l2_to_euclidean_gain(ext, 1.0) == pytest.approx(np.sqrt((1 - np.exp(-2)) / 2), abs=1e-6)

    @pytest.mark.parametrize("seed,n", [(0, 2), (1, 3), (2, 3), (3, 4), (4, 4), (5, 1)])
    def test_matches_discretised_operator(self, seed, n):
        ext = random_ltv(seed, n)
        gamma = l2_to_euclidean_gain(ext, 1.0)
        assert gamma == pytest.approx(svd_oracle(ext, 1.0), rel=0.01)

    def test_zero_output_and_zero_input(self):
        ext = random_ltv(7, 3)
        ext.Cbar = np.zeros_like(ext.Cbar)
        assert l2_to_euclidean_gain(ext, 1.0) == 0.0
        ext = random_ltv(7, 3)
        ext.Bbar = np.zeros_like(ext.Bbar)
        assert l2_to_euclidean_gain(ext, 1.0) == 0.0

    def test_output_scaling_is_exact(self):
        base = l2_to_euclidean_gain(random_ltv(8, 3), 1.0)
        ext = random_ltv(8, 3)
        ext.Cbar = 3.0 * ext.Cbar
        assert l2_to_euclidean_gain(ext, 1.0) == pytest.approx(3.0 * base, rel=1e-12)

    def test_gramian_psd(self):
        ext = random_ltv(9, 4)
        W = controllability_gramian(ext, 1.0)
        for k in range(1, len(W)):
            assert np.linalg.eigvalsh(W[k])[0] >= -1e-9 * np.trace(W[k])

    def test_gramian_nested_time_invariant(self):
        rng = np.random.default_rng(12)
        A0, B0 = rng.normal(size=(4, 4)) - 2 * np.eye(4), rng.normal(size=(4, 2))
        ext = ltv_from_functions(lambda t: A0, lambda t: B0, np.eye(4))
        W = controllability_gramian(ext, 1.0)
        for k in range(1, len(W)):
            assert np.linalg.eigvalsh(W[k] - W[k - 1])[0] >= -1e-9 * np.trace(W[k])

    def test_gramian_nested_time_varying(self):
        # With time-varying A the earlier Gramian is carried along by the transition matrix.
        ext = random_ltv(9, 4)
        W = controllability_gramian(ext, 1.0)
        for k1, k2 in [(20, 60), (60, 61), (100, 200)]:
            Phi = transition(ext, ext.times[k1], ext.times[k2])
            gap = W[k2] - Phi @ W[k1] @ Phi.T
            assert np.linalg.eigvalsh(gap)[0] >= -1e-9 * np.trace(W[k2])

    def test_several_horizons_in_one_pass(self):
        ext = random_ltv(10, 2)
        both = induced_gains(ext, [0.4, 1.0])
        assert both == [l2_to_euclidean_gain(ext, 0.4), l2_to_euclidean_gain(ext, 1.0)]

    def test_horizon_outside_grid(self):
        ext = random_ltv(11, 2)
        with pytest.raises(ValueError):
            l2_to_euclidean_gain(ext, 1.5)
        with pytest.raises(ValueError):
            l2_to_euclidean_gain(ext, 0.0)

    def test_divergence(self):
        ext = ltv_from_functions(lambda t: 60 * np.eye(1), lambda t: np.eye(1), [[1.0]])
        with pytest.raises(DivergenceError):
            l2_to_euclidean_gain(ext, 1.0)


class TestMetric:
    def test_combinations(self):
        assert robust_metric(2.0, 1.0, 1.0) == 1.0
        assert robust_metric(2.0, 1.0, 0.0) == 2.0
        assert robust_metric(2.0, 1.0, 0.7) == pytest.approx(1.3, abs=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            robust_metric(1.0, 1.0, 1.5)
        with pytest.raises(ValueError):
            robust_metric(-1.0, 1.0, 0.5)

    @pytest.mark.parametrize("name", ["STS1", "STS2"])
    def test_report_on_maneuver(self, ltvs, param_filter, name):
        ltv = ltvs[name]
        rep = evaluate_gain_schedule(ltv, design_gain(ltv, REPORTED_WEIGHTS[name]), param_filter)
        assert rep.J_RP == pytest.approx(0.3 * rep.gamma_tm + 0.7 * rep.gamma_tf, rel=1e-15)
        assert 0 < rep.J_RP < 1.0
        assert GainReport.from_dict(rep.to_dict()) == rep

    def test_t_m_hits_grid_point(self, ltvs, param_filter):
        ltv = ltvs["STS1"]
        ext = assemble_extended_ltv(ltv, GainSchedule.zeros(ltv.times), param_filter)
        assert ext.times[ext.index_of(2.0)] == pytest.approx(2.0, abs=1e-12)
