"""Tests for the DC optimization of the pilot quantization spectrum."""

import numpy as np
import pytest
from scipy.optimize import brentq

from frontsync.config import SystemConfig
from frontsync.metrics import InvPsdGrid, coeffs_from_crb, crb, data_rate, effective_snr, pilot_rate
from frontsync.psd_optimizer import (
    DcCoefficients,
    charnes_cooper,
    charnes_cooper_inverse,
    data_phase_noise_variance,
    dc_coefficients,
    dc_linearize,
    dc_objective,
    optimize_psd,
    solve_convex_subproblem,
    white_psd_baseline,
    white_psd_closed_form,
)


class TestCharnesCooper:
    def test_examples(self):
        cfg = SystemConfig(oversampling=1, noise_psd=1.0)
        assert charnes_cooper(0.0, cfg) == 1.0
        assert charnes_cooper(1.0, cfg) == 0.5
        assert charnes_cooper(np.inf, cfg) == 0.0
        assert 0 < charnes_cooper(1e12, cfg) < 1e-11

    def test_round_trip(self):
        cfg = SystemConfig()
        u = np.geomspace(1e-3, 1e6, 50)
        np.testing.assert_allclose(charnes_cooper_inverse(charnes_cooper(u, cfg), cfg), u, rtol=1e-9)

    @pytest.mark.parametrize("v", [0.0, -0.1, 1.0001])
    def test_inverse_rejects(self, v):
        with pytest.raises(ValueError):
            charnes_cooper_inverse(v, SystemConfig())

    def test_rejects_negative_u(self):
        with pytest.raises(ValueError):
            charnes_cooper(-1.0, SystemConfig())


class TestObjective:
    @pytest.fixture
    def setup(self):
        cfg = SystemConfig.from_snr_db(10.0, oversampling=2)
        return cfg, dc_coefficients(cfg)

    def test_coefficient_relation(self, setup):
        cfg, co = setup
        kc = cfg.centered_freqs()
        expected = (2 * np.pi / (cfg.pilot_len * cfg.symbol_period)) ** 2 * kc**2 * co.b
        np.testing.assert_allclose(co.a, expected, rtol=1e-14)
        assert np.all(co.b > 0)

    def test_no_information_is_infinite(self, setup):
        cfg, co = setup
        assert dc_objective(np.ones(cfg.grid_shape), co, cfg) == np.inf

    def test_unquantized_limit_matches_crb(self, setup):
        cfg, co = setup
        c = crb(cfg, InvPsdGrid.uniform(cfg, np.inf))
        ae = cfg.amplitude**2 * cfg.data_energy
        expected = ae * c.crb_theta + ae * co.a_bar / cfg.symbol_period**2 * c.crb_tau
        assert dc_objective(np.zeros(cfg.grid_shape), co, cfg) == pytest.approx(expected, rel=1e-12)

    def test_matches_crb_at_random_grid(self, setup):
        # b feeds the phase bound and a the timing bound
        cfg, co = setup
        u = np.random.default_rng(3).uniform(0.1, 50.0, cfg.grid_shape)
        c = crb(cfg, InvPsdGrid(u))
        ae = cfg.amplitude**2 * cfg.data_energy
        expected = ae * c.crb_theta + ae * co.a_bar * c.crb_tau
        assert dc_objective(charnes_cooper(u, cfg), co, cfg) == pytest.approx(expected, rel=1e-10)

    def test_convex_on_segments(self, setup):
        cfg, co = setup
        rng = np.random.default_rng(7)
        for _ in range(50):
            v1, v2 = rng.uniform(0.01, 0.99, (2, *cfg.grid_shape))
            mid = dc_objective((v1 + v2) / 2, co, cfg)
            assert mid <= (dc_objective(v1, co, cfg) + dc_objective(v2, co, cfg)) / 2 + 1e-15


class TestLinearize:
    def _unit(self):
        # only N0/T_s enters; the grid shape comes from the coefficients
        cfg = SystemConfig(oversampling=1, noise_psd=1.0)
        co = DcCoefficients(a=np.zeros((1, 1)), b=np.ones((1, 1)), a_bar=1.0, signal_power=1.0)
        return cfg, co

    def test_plug_in(self):
        cfg, co = self._unit()
        e, f = dc_linearize(np.ones((1, 1)), co, cfg)
        assert e[0, 0] == pytest.approx(-1.442695, abs=1e-6)
        assert f[0, 0] == pytest.approx(1.442695, abs=1e-6)

    def test_tangent_upper_bound(self):
        cfg = SystemConfig.from_snr_db(5.0)
        co = dc_coefficients(cfg)
        rng = np.random.default_rng(11)
        v0 = rng.uniform(0.05, 1.0, cfg.grid_shape)
        e, f = dc_linearize(v0, co, cfg)
        concave = lambda v: np.log2(co.b * (1 - v) + cfg.pilot_noise)  # noqa: E731
        np.testing.assert_allclose(e * v0 + f, concave(v0), rtol=1e-13)
        for _ in range(20):
            v = rng.uniform(1e-6, 1.0, cfg.grid_shape)
            assert np.all(e * v + f >= concave(v) - 1e-12)


def linearized_rate(v, e, f, cfg):
    return float(np.sum(e * v + f - np.log2(cfg.pilot_noise * v)))


class TestSubproblem:
    def test_single_bin_spends_budget(self):
        # one k_c = 0 bin with an N_p C = 2 bit budget; the timing term is absent
        cfg = SystemConfig(oversampling=1, pilot_len=4, noise_psd=0.1, capacity=0.5)
        co = DcCoefficients(a=np.zeros((1, 1)), b=np.full((1, 1), 0.49), a_bar=2.0, signal_power=0.49)
        e, f = dc_linearize(np.ones((1, 1)), co, cfg)
        v = solve_convex_subproblem(co, e, f, cfg)
        budget = cfg.pilot_len * cfg.capacity
        oracle = brentq(lambda x: linearized_rate(x, e, f, cfg) - budget, 1e-12, 1.0, xtol=1e-15)
        assert v[0, 0] == pytest.approx(oracle, rel=1e-8)

    def test_symmetric_bins_equal(self):
        cfg = SystemConfig(oversampling=1, pilot_len=4, noise_psd=0.1, capacity=1.0)
        co = DcCoefficients(a=np.full((1, 2), 0.3), b=np.full((1, 2), 0.5), a_bar=2.6, signal_power=0.49)
        e, f = dc_linearize(np.full((1, 2), 0.7), co, cfg)
        v = solve_convex_subproblem(co, e, f, cfg)
        assert v[0, 0] == pytest.approx(v[0, 1], rel=1e-9)
        assert linearized_rate(v, e, f, cfg) == pytest.approx(cfg.pilot_len * cfg.capacity, abs=1e-8)

    def test_start_independence(self):
        cfg = SystemConfig.from_snr_db(12.0, oversampling=2)
        co = dc_coefficients(cfg)
        e, f = dc_linearize(np.full(cfg.grid_shape, 0.6), co, cfg)
        rng = np.random.default_rng(5)
        v1 = solve_convex_subproblem(co, e, f, cfg, start=np.full(cfg.grid_shape, 0.99))
        v2 = solve_convex_subproblem(co, e, f, cfg, start=rng.uniform(0.9, 1.0, cfg.grid_shape))
        np.testing.assert_allclose(v1, v2, atol=1e-6)


OPT_GRID = [(snr, c, f) for snr in (0.0, 10.0, 20.0, 30.0) for c in (1.0, 3.0) for f in (1, 2)]


@pytest.fixture(scope="module")
def optimized():
    out = {}
    for snr, c, f in OPT_GRID:
        cfg = SystemConfig.from_snr_db(snr, capacity=c, oversampling=f)
        out[(snr, c, f)] = (cfg, *optimize_psd(cfg))
    return out


class TestOptimizePsd:
    @pytest.mark.parametrize("key", OPT_GRID)
    def test_trace_monotone_and_feasible(self, optimized, key):
        _, _, trace = optimized[key]
        assert trace.converged and trace.warning is None
        obj = trace.objectives
        assert np.all(np.diff(obj) <= 1e-12)
        assert np.all(trace.slacks >= -1e-6)

    @pytest.mark.parametrize("key", OPT_GRID)
    def test_budget_saturated(self, optimized, key):
        cfg, grid, _ = optimized[key]
        assert pilot_rate(cfg, grid) == pytest.approx(cfg.pilot_len * cfg.capacity, abs=1e-3)

    @pytest.mark.parametrize("key", OPT_GRID)
    def test_dominates_white(self, optimized, key):
        cfg, grid, _ = optimized[key]
        white = white_psd_baseline(cfg)
        coeffs = coeffs_from_crb(crb(cfg, white), cfg)
        s2 = grid.sigma2_qd
        assert effective_snr(cfg, crb(cfg, grid), coeffs, s2) >= effective_snr(cfg, crb(cfg, white), coeffs, s2)

    @pytest.mark.parametrize("snr", [20.0, 30.0])
    def test_high_frequencies_favoured(self, optimized, snr):
        cfg, grid, _ = optimized[(snr, 3.0, 2)]
        absk = np.abs(cfg.centered_freqs())
        order = np.argsort(absk, kind="stable")
        for row in grid.u:
            # ties between +k and -k are unordered; compare per |k| maxima and minima
            levels = sorted(set(absk))
            lo = [row[absk == m].min() for m in levels]
            hi = [row[absk == m].max() for m in levels]
            assert all(hi[i] <= lo[i + 1] * (1 + 1e-9) for i in range(len(levels) - 1))
            assert row[order[0]] == 0.0 and row[order[1]] == 0.0

    def test_iterates_feasible_under_exact_rate(self, optimized):
        cfg, _, trace = optimized[(10.0, 3.0, 2)]
        for st in trace.states:
            u = charnes_cooper_inverse(st.v, cfg)
            assert pilot_rate(cfg, InvPsdGrid(u)) <= cfg.pilot_len * cfg.capacity + 1e-6

    def test_nonconvergence_flagged(self):
        cfg = SystemConfig.from_snr_db(20.0, capacity=3.0, oversampling=2)
        with pytest.warns(UserWarning):
            _, trace = optimize_psd(cfg, max_iters=2)
        assert not trace.converged and trace.warning
        assert len(trace) == 2

    def test_requires_noise(self):
        with pytest.raises(ValueError):
            optimize_psd(SystemConfig(noise_psd=0.0))


class TestClosedForms:
    def test_data_variance_example(self):
        cfg = SystemConfig(amplitude=0.7, noise_psd=0.1, capacity=3.0)
        s2 = data_phase_noise_variance(cfg)
        assert s2 == pytest.approx(0.59 / 7, rel=1e-10)
        assert s2 == pytest.approx(0.0842857, abs=1e-7)
        assert data_rate(cfg, s2) == pytest.approx(cfg.data_len * cfg.capacity, rel=1e-9)

    def test_data_variance_vanishes(self):
        assert data_phase_noise_variance(SystemConfig(capacity=40.0)) < 1e-10

    def test_white_f1(self):
        cfg = SystemConfig(amplitude=0.7, noise_psd=0.1, oversampling=1, capacity=1.0)
        g = white_psd_baseline(cfg)
        assert g.u[0, 0] == pytest.approx(1.694915, abs=1e-6)
        assert white_psd_closed_form(cfg) == pytest.approx(1 / 0.59, rel=1e-12)
        assert pilot_rate(cfg, g) == pytest.approx(cfg.pilot_len * cfg.capacity, rel=1e-9)

    def test_white_f2(self):
        cfg = SystemConfig(amplitude=0.7, noise_psd=0.05, oversampling=2, capacity=3.0)
        g = white_psd_baseline(cfg)
        assert 1 / g.u[0, 0] == pytest.approx(0.59 / (2**1.5 - 1), rel=1e-9)
        assert 1 / g.u[0, 0] == pytest.approx(0.322682, abs=1e-6)
        assert pilot_rate(cfg, g) == pytest.approx(cfg.pilot_len * cfg.capacity, rel=1e-9)
