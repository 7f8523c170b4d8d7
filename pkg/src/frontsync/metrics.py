"""Closed-form link metrics.

Fronthaul rates, Cramer-Rao bounds for the timing and phase offsets, the
piecewise-linear pulse model with its error-term powers, and the effective
SNR that the PSD optimizer maximizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .config import SystemConfig
from .signal_model import polyphase_response, pulse_value


@dataclass(frozen=True)
class InvPsdGrid:
    """Inverse quantization-noise PSD ``u[n][k] = 1 / S_Q^n[k]``.

    ``u == 0`` marks a dropped bin (nothing sent); ``u == inf`` means the bin
    is forwarded without quantization noise.  ``sigma2_qd`` is the variance
    of the white data-phase quantization noise.
    """

    u: np.ndarray
    sigma2_qd: float = 0.0

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2:
            raise ValueError(f"u must be a 2-D [F, N_p] grid, got shape {u.shape}")
        if np.any(np.isnan(u)) or np.any(u < 0):
            raise ValueError("u must be nonnegative")
        if self.sigma2_qd < 0:
            raise ValueError("sigma2_qd must be nonnegative")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def uniform(cls, cfg: SystemConfig, value: float, sigma2_qd: float = 0.0) -> "InvPsdGrid":
        return cls(np.full(cfg.grid_shape, float(value)), sigma2_qd)

    @property
    def mask(self) -> np.ndarray:
        """Transmitted bins."""
        return self.u > 0

    @property
    def psd(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.u


class CrbPair(NamedTuple):
    crb_tau: float
    crb_theta: float


class ErrorTermPowers(NamedTuple):
    p_signal: float
    p_phase_noise: float
    p_isi: float


@dataclass(frozen=True)
class LinearApproxCoeffs:
    """Piecewise-linear sinc model around the sampling instants."""

    delta_tau_max: float
    delta_theta_max: float
    eta: float
    c: tuple = field(default=(1.0, 1.0, 0.5, 0.5, 1.0 / 3.0))

    @property
    def a_plus(self) -> np.ndarray:
        c1, c2, c3, c4, c5 = self.c
        # neighbours l = m-3, m-2, m-1, m+1, m+2, m+3
        return np.array([0.0, c4, -c2, c1, -c3, c5])

    @property
    def a_minus(self) -> np.ndarray:
        c1, c2, c3, c4, c5 = self.c
        return np.array([-c5, c3, -c1, c2, -c4, 0.0])

    @property
    def a_bar(self) -> float:
        return float(np.sum(self.a_plus**2))


def _check_grid(cfg: SystemConfig, grid: InvPsdGrid):
    if grid.u.shape != cfg.grid_shape:
        raise ValueError(f"grid shape {grid.u.shape} does not match config {cfg.grid_shape}")


def pilot_signal_power(cfg: SystemConfig) -> np.ndarray:
    """Per-bin received power ``E_xp A^2 |G^n[k]|^2 + N0/T_s`` (time-domain units)."""
    g2 = np.abs(polyphase_response(cfg)) ** 2
    return cfg.pilot_energy * cfg.amplitude**2 * g2 + cfg.pilot_noise


def pilot_rate(cfg: SystemConfig, grid: InvPsdGrid) -> float:
    """Fronthaul bits needed for the pilot field, summed over all branches and bins."""
    _check_grid(cfg, grid)
    return float(np.sum(np.log2(1.0 + pilot_signal_power(cfg) * grid.u)))


def pilot_rate_logdet(cfg: SystemConfig, grid: InvPsdGrid) -> float:
    """Pilot rate as ``log2 |K_y + K_q| / |K_q|`` from explicit circulant covariances.

    Independent of :func:`pilot_rate`; both must agree for circulant noise.
    """
    _check_grid(cfg, grid)
    if np.any(grid.u <= 0) or np.any(~np.isfinite(grid.u)):
        raise ValueError("log-det rate needs finite, strictly positive PSDs (no dropped or noiseless bins)")
    g2 = np.abs(polyphase_response(cfg)) ** 2
    total = 0.0
    for n in range(cfg.oversampling):
        eig_y = cfg.pilot_energy * cfg.amplitude**2 * g2[n] + cfg.pilot_noise
        eig_q = 1.0 / grid.u[n]
        k_y = scipy.linalg.circulant(np.fft.ifft(eig_y))
        k_q = scipy.linalg.circulant(np.fft.ifft(eig_q))
        _, ld_num = np.linalg.slogdet(k_y + k_q)
        _, ld_den = np.linalg.slogdet(k_q)
        total += (ld_num - ld_den) / np.log(2.0)
    return float(np.real(total))


def data_rate(cfg: SystemConfig, sigma2_qd: float) -> float:
    """Fronthaul bits needed for the data field at quantization variance ``sigma2_qd``."""
    if not sigma2_qd > 0:
        raise ValueError(f"sigma2_qd must be positive, got {sigma2_qd}")
    if np.isinf(sigma2_qd):
        return 0.0
    power = cfg.data_energy * cfg.amplitude**2 + cfg.data_noise
    return float(cfg.data_len * np.log2(1.0 + power / sigma2_qd))


def fisher_weights(cfg: SystemConfig, grid: InvPsdGrid) -> np.ndarray:
    """``1 / (N0/T_s + S_Q)`` per bin; 0 on dropped bins."""
    with np.errstate(divide="ignore"):
        return 1.0 / (cfg.pilot_noise + grid.psd)


def timing_slope(cfg: SystemConfig) -> float:
    """Phase slope (rad per second of delay, per unit ``k_c``)."""
    return 2.0 * np.pi / (cfg.pilot_len * cfg.symbol_period)


def crb(cfg: SystemConfig, grid: InvPsdGrid) -> CrbPair:
    """CRBs of the timing (s^2) and phase (rad^2) offsets under the additive quantization model."""
    _check_grid(cfg, grid)
    w = fisher_weights(cfg, grid)
    b = cfg.pilot_energy * cfg.amplitude**2 * np.abs(polyphase_response(cfg)) ** 2
    kc2 = cfg.centered_freqs()[None, :] ** 2
    info_theta = float(np.sum(b * w))
    info_tau = float(timing_slope(cfg) ** 2 * np.sum(b * kc2 * w))
    if not info_theta > 0:
        raise ValueError("all bins dropped: phase CRB is infinite")
    if not info_tau > 0:
        raise ValueError("no transmitted bin with k_c != 0: timing CRB is infinite")
    return CrbPair(crb_tau=1.0 / info_tau, crb_theta=1.0 / info_theta)


def linear_approx_coeffs(delta_tau_max: float, delta_theta_max: float, cfg: SystemConfig) -> LinearApproxCoeffs:
    """Slopes of the piecewise-linear sinc model for timing errors up to ``delta_tau_max``.

    ``delta_tau_max == 0`` returns the small-error limit.
    """
    T = cfg.symbol_period
    if not 0 <= delta_tau_max < T:
        raise ValueError(f"delta_tau_max must lie in [0, T), got {delta_tau_max}")
    if delta_tau_max == 0:
        return LinearApproxCoeffs(0.0, float(delta_theta_max), 0.0)
    h = delta_tau_max / (2 * T)
    scale = 1.0 / h
    g = lambda x: float(pulse_value(x * T, cfg))  # noqa: E731
    eta = scale * (1.0 - g(h))
    c = (
        scale * g(1 - h),
        scale * abs(g(1 + h)),
        scale * abs(g(2 - h)),
        scale * g(2 + h),
        scale * g(3 - h),
    )
    return LinearApproxCoeffs(float(delta_tau_max), float(delta_theta_max), float(eta), c)


def coeffs_from_crb(crbs: CrbPair, cfg: SystemConfig) -> LinearApproxCoeffs:
    """Coefficients at ``delta_max = sqrt(12 CRB)`` (uniform error matching the CRB)."""
    dtau = min(np.sqrt(12.0 * crbs.crb_tau), 0.999 * cfg.symbol_period)
    return linear_approx_coeffs(dtau, np.sqrt(12.0 * crbs.crb_theta), cfg)


def error_term_powers(cfg: SystemConfig, crbs: CrbPair, coeffs: LinearApproxCoeffs) -> ErrorTermPowers:
    """Approximate powers of the desired signal, phase-error noise and ISI."""
    ae = cfg.amplitude**2 * cfg.data_energy
    T = cfg.symbol_period
    shrink = 1.0 - coeffs.eta / (2 * T) * np.sqrt(12.0 * crbs.crb_tau)
    return ErrorTermPowers(
        p_signal=float(ae * shrink),
        p_phase_noise=float(ae * crbs.crb_theta * shrink),
        p_isi=float(ae * coeffs.a_bar / T**2 * crbs.crb_tau),
    )


def effective_snr(
    cfg: SystemConfig,
    crbs: CrbPair,
    coeffs: LinearApproxCoeffs,
    sigma2_qd: float,
    simplified: bool = True,
) -> float:
    """Post-compensation SINR with residual synchronization errors as extra noise.

    With ``simplified`` (the optimizer's objective) the signal-shrink factor
    ``1 - eta sqrt(12 CRB_tau) / 2T`` is taken as 1.
    """
    if sigma2_qd < 0:
        raise ValueError("sigma2_qd must be nonnegative")
    p = error_term_powers(cfg, crbs, coeffs)
    if simplified:
        ae = cfg.amplitude**2 * cfg.data_energy
        signal, phase = ae, ae * crbs.crb_theta
    else:
        signal, phase = p.p_signal, p.p_phase_noise
    return float(signal / (phase + p.p_isi + cfg.data_noise + sigma2_qd))
