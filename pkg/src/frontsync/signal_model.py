"""Pilot/data frame synthesis and polyphase channel responses.

All DFTs are unnormalized (``numpy.fft`` convention): the forward transform
multiplies per-bin variances by the frame length, and a circulant matrix has
the PSD values as its eigenvalues.  Grids are ``[F, N_p]`` arrays in FFT bin
order; :meth:`SystemConfig.centered_freqs` gives the signed index of each bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig, centered_index

CONSTELLATIONS = {
    "bpsk": np.array([1.0 + 0j, -1.0 + 0j]),
    "qpsk": np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2),
}


@dataclass(frozen=True)
class PilotFrame:
    """Known pilots and the frequency-domain branch observations ``Y^n[k]``."""

    pilots: np.ndarray
    observations: np.ndarray
    true_tau: float
    true_theta: float

    @property
    def pilot_spectrum(self) -> np.ndarray:
        return np.fft.fft(self.pilots)


@dataclass(frozen=True)
class DataFrame:
    """Transmitted data symbols and their baud-rate observations."""

    symbols: np.ndarray
    observations: np.ndarray
    true_tau: float
    true_theta: float


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def complex_gaussian(rng: np.random.Generator, shape, variance) -> np.ndarray:
    """Circular complex Gaussian samples; ``variance`` may broadcast against ``shape``."""
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def constellation_points(name: str) -> np.ndarray:
    try:
        return CONSTELLATIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unsupported constellation {name!r}; expected one of {sorted(CONSTELLATIONS)}") from None


def pulse_value(t, cfg: SystemConfig):
    """Zero-excess-bandwidth raised cosine, ``sin(pi t/T) / (pi t/T)``."""
    return np.sinc(np.asarray(t, dtype=float) / cfg.symbol_period)


def polyphase_response(cfg: SystemConfig) -> np.ndarray:
    """``G^n[k] = exp(+j 2 pi k_c n / (N_p F))`` as an ``[F, N_p]`` grid."""
    n = np.arange(cfg.oversampling)[:, None]
    kc = cfg.centered_freqs()[None, :]
    return np.exp(2j * np.pi * kc * n / (cfg.pilot_len * cfg.oversampling))


def delay_phase(n_bins: int, delay):
    """Per-bin factor ``exp(-j 2 pi k_c d / n_bins)`` for a delay ``d`` in symbol periods.

    ``delay`` may be an array; the bin axis is appended last.
    """
    kc = centered_index(n_bins)
    d = np.asarray(delay, dtype=float)[..., None]
    return np.exp(-2j * np.pi * kc * d / n_bins)


def fractional_delay(x: np.ndarray, delay) -> np.ndarray:
    """Circular band-limited delay of ``x`` (last axis) by ``delay`` symbol periods."""
    x = np.asarray(x)
    return np.fft.ifft(np.fft.fft(x, axis=-1) * delay_phase(x.shape[-1], delay), axis=-1)


def _check_offset(tau: float, cfg: SystemConfig):
    if not abs(tau) < cfg.symbol_period / 2:
        raise ValueError(f"|tau| must be < T/2 (residual offset regime), got tau={tau}")


def pilot_observations(cfg: SystemConfig, spectrum, tau, theta, rng: np.random.Generator | None = None):
    """Frequency-domain branch observations for a batch of pilot spectra.

    ``spectrum`` has shape ``[..., N_p]``; ``tau`` and ``theta`` broadcast over
    the leading axes.  Noise is omitted when ``rng`` is None or ``N0 == 0``.
    """
    spectrum = np.asarray(spectrum)
    tau = np.asarray(tau, dtype=float)
    theta = np.asarray(theta, dtype=float)
    rot = np.exp(1j * theta)[..., None, None] * delay_phase(cfg.pilot_len, tau / cfg.symbol_period)[..., None, :]
    y = cfg.amplitude * spectrum[..., None, :] * polyphase_response(cfg) * rot
    if rng is not None and cfg.noise_psd > 0:
        y = y + complex_gaussian(rng, y.shape, cfg.pilot_len * cfg.pilot_noise)
    return y


def synthesize_pilot_frame(cfg: SystemConfig, tau: float, theta: float, rng_seed=None) -> PilotFrame:
    """Draw Gaussian pilots and their noisy polyphase observations.

    Synthesis is exact in the frequency domain (circular model under the
    cyclic prefix).  Branch noise bins are i.i.d. with variance
    ``N_p * N0 / T_s``.
    """
    _check_offset(tau, cfg)
    rng = as_generator(rng_seed)
    pilots = complex_gaussian(rng, cfg.pilot_len, cfg.pilot_energy)
    obs = pilot_observations(cfg, np.fft.fft(pilots), tau, theta, rng)
    return PilotFrame(pilots=pilots, observations=obs, true_tau=float(tau), true_theta=float(theta))


def draw_symbols(rng: np.random.Generator, constellation: str, size, energy: float) -> np.ndarray:
    points = constellation_points(constellation)
    return np.sqrt(energy) * points[rng.integers(len(points), size=size)]


def data_observations(cfg: SystemConfig, symbols, tau, theta, rng: np.random.Generator | None = None):
    """Baud-rate observations ``A e^{j theta} (x delayed by tau) + z`` for a batch of symbol rows."""
    symbols = np.asarray(symbols)
    theta = np.asarray(theta, dtype=float)
    y = cfg.amplitude * np.exp(1j * theta)[..., None] * fractional_delay(
        symbols, np.asarray(tau, dtype=float) / cfg.symbol_period
    )
    if rng is not None and cfg.noise_psd > 0:
        y = y + complex_gaussian(rng, y.shape, cfg.data_noise)
    return y


def synthesize_data_frame(cfg: SystemConfig, tau: float, theta: float, constellation: str = "qpsk", rng_seed=None) -> DataFrame:
    """Draw data symbols and their noisy, offset baud-rate observations."""
    constellation_points(constellation)
    _check_offset(tau, cfg)
    rng = as_generator(rng_seed)
    symbols = draw_symbols(rng, constellation, cfg.data_len, cfg.data_energy)
    obs = data_observations(cfg, symbols, tau, theta, rng)
    return DataFrame(symbols=symbols, observations=obs, true_tau=float(tau), true_theta=float(theta))


def truncated_sinc_delay(x: np.ndarray, delay: float, sidelobes: int) -> np.ndarray:
    """Circular convolution of ``x`` with ``sinc(m - delay)`` for ``|m| <= sidelobes``.

    Time-domain counterpart of :func:`fractional_delay`, used as a check.
    """
    x = np.asarray(x)
    out = np.zeros_like(x, dtype=complex)
    for m in range(-sidelobes, sidelobes + 1):
        out += np.sinc(m - delay) * np.roll(x, m)
    return out
