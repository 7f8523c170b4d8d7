"""Tests for frame synthesis, the pulse and the polyphase responses."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontsync.config import SystemConfig, centered_index
from frontsync.signal_model import (
    delay_phase,
    fractional_delay,
    pilot_observations,
    polyphase_response,
    pulse_value,
    synthesize_data_frame,
    synthesize_pilot_frame,
    truncated_sinc_delay,
)


@pytest.fixture
def noiseless():
    return SystemConfig(noise_psd=0.0)


class TestSystemConfig:
    def test_rejects_invalid(self):
        for bad in ({"amplitude": 0.0}, {"oversampling": 0}, {"pilot_len": 3}, {"data_len": 0},
                    {"pilot_energy": -1.0}, {"noise_psd": -0.1}, {"capacity": 0.0}, {"pulse_truncation": 3}):
            with pytest.raises(ValueError):
                SystemConfig(**bad)

    def test_snr_definitions(self):
        cfg = SystemConfig.from_snr_db(20.0, 10.0, oversampling=2)
        assert cfg.snr_p == pytest.approx(100.0)
        assert cfg.snr_d == pytest.approx(10.0)
        assert cfg.pilot_noise == pytest.approx(cfg.noise_psd * 2 / cfg.symbol_period)

    def test_centered_index(self):
        assert centered_index(16)[8] == -8
        assert sorted(centered_index(16)) == list(range(-8, 8))
        assert sorted(centered_index(5)) == list(range(-2, 3))


class TestPulse:
    def test_values(self):
        cfg = SystemConfig()
        assert pulse_value(0.0, cfg) == 1.0
        assert pulse_value(cfg.symbol_period, cfg) == pytest.approx(0.0, abs=1e-16)
        assert pulse_value(0.5 * cfg.symbol_period, cfg) == pytest.approx(0.63662, abs=1e-5)

    def test_scales_with_period(self):
        cfg = SystemConfig(symbol_period=2.0)
        assert pulse_value(1.0, cfg) == pytest.approx(2 / np.pi)


class TestPolyphaseResponse:
    def test_branch_zero_is_one(self):
        g = polyphase_response(SystemConfig(oversampling=4))
        np.testing.assert_allclose(g[0], 1.0)
        np.testing.assert_allclose(np.abs(g), 1.0)

    def test_nyquist_bin_second_branch(self):
        cfg = SystemConfig(oversampling=2, pilot_len=16)
        k = int(np.flatnonzero(cfg.centered_freqs() == -8)[0])
        assert polyphase_response(cfg)[1, k] == pytest.approx(-1j)

    def test_single_branch_flat(self):
        np.testing.assert_array_equal(polyphase_response(SystemConfig(oversampling=1)), 1.0)

    def test_matches_sampled_delay(self):
        # branch n samples the waveform advanced by n T/F
        cfg = SystemConfig(oversampling=4)
        for n in range(4):
            expected = delay_phase(cfg.pilot_len, -n / cfg.oversampling)
            np.testing.assert_allclose(polyphase_response(cfg)[n], expected, atol=1e-14)


class TestPilotFrame:
    def test_noiseless_identity(self, noiseless):
        f = synthesize_pilot_frame(noiseless, 0.0, 0.0, rng_seed=1)
        expected = noiseless.amplitude * np.fft.fft(f.pilots) * polyphase_response(noiseless)
        np.testing.assert_allclose(f.observations, expected, atol=1e-12)

    def test_dc_bin_has_no_delay_phase(self, noiseless):
        f = synthesize_pilot_frame(noiseless, 0.1, 0.0, rng_seed=2)
        np.testing.assert_allclose(f.observations[:, 0], noiseless.amplitude * f.pilot_spectrum[0], atol=1e-12)

    def test_phase_example(self):
        cfg = SystemConfig(noise_psd=0.0, oversampling=1)
        f = synthesize_pilot_frame(cfg, 0.1, 0.3, rng_seed=3)
        k = int(np.flatnonzero(cfg.centered_freqs() == 4)[0])
        ratio = f.observations[0, k] / (cfg.amplitude * f.pilot_spectrum[k])
        assert np.angle(ratio) == pytest.approx(0.3 - 2 * np.pi * 4 * 0.1 / 16, abs=1e-12)
        assert np.angle(ratio) == pytest.approx(0.14292, abs=1e-5)

    def test_rejects_large_offset(self):
        cfg = SystemConfig()
        with pytest.raises(ValueError, match="T/2"):
            synthesize_pilot_frame(cfg, 0.5, 0.0)
        with pytest.raises(ValueError):
            synthesize_pilot_frame(cfg, -0.7, 0.0)

    def test_seed_reproducible(self):
        cfg = SystemConfig()
        a = synthesize_pilot_frame(cfg, 0.1, 0.2, rng_seed=7)
        b = synthesize_pilot_frame(cfg, 0.1, 0.2, rng_seed=7)
        np.testing.assert_array_equal(a.observations, b.observations)

    def test_pilot_power(self):
        cfg = SystemConfig(pilot_energy=2.0, pilot_len=64)
        p = np.concatenate([synthesize_pilot_frame(cfg, 0, 0, rng_seed=s).pilots for s in range(200)])
        assert np.mean(np.abs(p) ** 2) == pytest.approx(2.0, rel=0.03)

    def test_noise_calibration(self):
        cfg = SystemConfig(noise_psd=0.05, oversampling=2)
        rng = np.random.default_rng(11)
        zeros = np.zeros((10_000, cfg.pilot_len))
        z = pilot_observations(cfg, zeros, 0.0, 0.0, rng)
        var = np.mean(np.abs(z) ** 2, axis=0)
        np.testing.assert_allclose(var, cfg.pilot_len * cfg.pilot_noise, rtol=0.03)

    def test_delay_composition(self, noiseless):
        rng = np.random.default_rng(5)
        spec = np.fft.fft(rng.standard_normal(16) + 1j * rng.standard_normal(16))
        once = pilot_observations(noiseless, spec, 0.1, 0.2)
        twice = once * delay_phase(16, 0.15)
        np.testing.assert_allclose(twice, pilot_observations(noiseless, spec, 0.25, 0.2), atol=1e-10)


class TestDft:
    @settings(max_examples=30, deadline=None)
    @given(n=st.sampled_from([4, 8, 16, 84, 100]), seed=st.integers(0, 2**31))
    def test_round_trip_and_parseval(self, n, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        X = np.fft.fft(x)
        np.testing.assert_allclose(np.fft.ifft(X), x, atol=1e-12)
        assert np.sum(np.abs(X) ** 2) == pytest.approx(n * np.sum(np.abs(x) ** 2), rel=1e-12)

    def test_integer_delay_is_roll(self):
        x = np.arange(8.0) + 0j
        np.testing.assert_allclose(fractional_delay(x, 3), np.roll(x, 3), atol=1e-12)


class TestDataFrame:
    def test_noiseless_identity(self, noiseless):
        d = synthesize_data_frame(noiseless, 0.0, 0.0, "qpsk", rng_seed=1)
        np.testing.assert_allclose(d.observations, noiseless.amplitude * d.symbols, atol=1e-12)

    def test_sign_flip(self, noiseless):
        d = synthesize_data_frame(noiseless, 0.0, np.pi, "bpsk", rng_seed=2)
        np.testing.assert_allclose(d.observations, -noiseless.amplitude * d.symbols, atol=1e-12)

    def test_symbol_power(self):
        cfg = SystemConfig(data_len=5000, data_energy=3.0)
        for c in ("bpsk", "qpsk"):
            d = synthesize_data_frame(cfg, 0.0, 0.0, c, rng_seed=3)
            assert np.mean(np.abs(d.symbols) ** 2) == pytest.approx(3.0)
            assert abs(np.mean(d.symbols)) < 0.1

    def test_rejects_constellation(self):
        with pytest.raises(ValueError, match="constellation"):
            synthesize_data_frame(SystemConfig(), 0.0, 0.0, "16qam")

    def test_leakage_matches_truncated_sinc(self):
        # the circular kernel approaches the sinc as O(1/N); 256 symbols keep it below 1e-3
        cfg = SystemConfig(noise_psd=0.0, data_len=256)
        d = synthesize_data_frame(cfg, 0.2, 0.0, "qpsk", rng_seed=4)
        taps = np.fft.ifft(np.fft.fft(d.observations / cfg.amplitude) / np.fft.fft(d.symbols))
        impulse = np.zeros(cfg.data_len)
        impulse[0] = 1.0
        ref = truncated_sinc_delay(impulse, 0.2, cfg.pulse_truncation)
        near = [j % cfg.data_len for j in range(-cfg.pulse_truncation, cfg.pulse_truncation + 1) if j != 0]
        leak, leak_ref = np.sum(np.abs(taps[near]) ** 2), np.sum(np.abs(ref[near]) ** 2)
        assert leak == pytest.approx(leak_ref, rel=1e-3)

    def test_noise_variance(self):
        cfg = SystemConfig(noise_psd=0.1, data_len=20_000)
        zero = SystemConfig(noise_psd=0.0, data_len=20_000)
        a = synthesize_data_frame(cfg, 0.1, 0.2, "qpsk", rng_seed=9)
        b = synthesize_data_frame(zero, 0.1, 0.2, "qpsk", rng_seed=9)
        np.testing.assert_array_equal(a.symbols, b.symbols)
        assert np.var(a.observations - b.observations) == pytest.approx(cfg.data_noise, rel=0.03)
