"""System parameters shared by every stage of the link."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SystemConfig:
    """Physical and frame parameters of the single-cell uplink.

    Parameters
    ----------
    amplitude : float
        Channel amplitude ``A`` (known at the central unit).
    symbol_period : float
        Baud period ``T`` in seconds.
    oversampling : int
        Oversampling factor ``F``; the sampling period is ``T / F``.
    pilot_len : int
        Number of pilot symbols ``N_p``.
    data_len : int
        Number of data symbols ``N_d``.
    pilot_energy, data_energy : float
        Per-symbol powers ``E_xp`` and ``E_xd``.
    noise_psd : float
        Two-sided noise PSD ``N0``.
    capacity : float
        Fronthaul capacity ``C`` in bits per symbol period.
    pulse_truncation : int
        Sidelobes kept when the pulse is evaluated in the time domain.
    """

    amplitude: float = 0.7
    symbol_period: float = 1.0
    oversampling: int = 2
    pilot_len: int = 16
    data_len: int = 84
    pilot_energy: float = 1.0
    data_energy: float = 1.0
    noise_psd: float = 0.05
    capacity: float = 3.0
    pulse_truncation: int = 8

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be positive, got {self.amplitude}")
        if not self.symbol_period > 0:
            raise ValueError("symbol_period must be positive")
        if int(self.oversampling) != self.oversampling or self.oversampling < 1:
            raise ValueError(f"oversampling must be an integer >= 1, got {self.oversampling}")
        if self.pilot_len < 4:
            raise ValueError(f"pilot_len must be >= 4, got {self.pilot_len}")
        if self.data_len < 1:
            raise ValueError(f"data_len must be >= 1, got {self.data_len}")
        if not (self.pilot_energy > 0 and self.data_energy > 0):
            raise ValueError("pilot_energy and data_energy must be positive")
        if self.noise_psd < 0:
            raise ValueError("noise_psd must be nonnegative")
        if not self.capacity > 0:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if self.pulse_truncation < 4:
            raise ValueError("pulse_truncation must be >= 4")

    @classmethod
    def from_snr_db(cls, snr_p_db: float, snr_d_db: float | None = None, **kwargs) -> "SystemConfig":
        """Build a config from pilot/data SNRs in dB.

        ``SNR_p = E_xp / (N0 / T_s)`` and ``SNR_d = E_xd / (N0 / T)``.  The
        pilot energy is kept at its (default or given) value and ``N0`` and
        ``E_xd`` are solved for.
        """
        if snr_d_db is None:
            snr_d_db = snr_p_db
        base = cls(**kwargs)
        noise_psd = base.sample_period * base.pilot_energy / 10 ** (snr_p_db / 10)
        data_energy = 10 ** (snr_d_db / 10) * noise_psd / base.symbol_period
        return replace(base, noise_psd=noise_psd, data_energy=data_energy)

    def with_(self, **changes) -> "SystemConfig":
        return replace(self, **changes)

    @property
    def sample_period(self) -> float:
        return self.symbol_period / self.oversampling

    @property
    def frame_len(self) -> int:
        return self.pilot_len + self.data_len

    @property
    def pilot_noise(self) -> float:
        """Per-sample noise power ``N0 / T_s`` of each polyphase branch."""
        return self.noise_psd / self.sample_period

    @property
    def data_noise(self) -> float:
        """Per-sample noise power ``N0 / T`` of the baud-rate data field."""
        return self.noise_psd / self.symbol_period

    @property
    def snr_p(self) -> float:
        return self.pilot_energy / self.pilot_noise if self.pilot_noise > 0 else np.inf

    @property
    def snr_d(self) -> float:
        return self.data_energy / self.data_noise if self.data_noise > 0 else np.inf

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (self.oversampling, self.pilot_len)

    def centered_freqs(self) -> np.ndarray:
        """Signed frequency index ``k_c`` for each DFT bin, in FFT order."""
        return centered_index(self.pilot_len)


def centered_index(n: int) -> np.ndarray:
    # fftfreq order: 0..ceil(n/2)-1, then -floor(n/2)..-1
    return np.fft.fftfreq(n, d=1.0 / n)
