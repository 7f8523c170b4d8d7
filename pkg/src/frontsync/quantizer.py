"""Fronthaul compression of pilot and data fields.

Two pilot models are provided: the additive Gaussian quantization-noise model
used by the optimizer, and a per-frequency scalar uniform (midrise) quantizer
whose step sizes follow ``S = step**2 / 12``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .config import SystemConfig
from .metrics import InvPsdGrid, pilot_signal_power
from .signal_model import DataFrame, PilotFrame, as_generator, complex_gaussian

GAUSSIAN = "gaussian"
SCALAR_UNIFORM = "scalar_uniform"
CLIP_SIGMAS = 4.0


@dataclass(frozen=True)
class CompressedPilotFrame:
    """Pilot observations as delivered to the central unit.

    Attributes
    ----------
    observations : ndarray, shape (F, N_p)
        Frequency-domain samples; zero on bins that were not sent.
    transmitted_mask : ndarray of bool
        Bins forwarded over the fronthaul.
    model : str
        ``"gaussian"`` or ``"scalar_uniform"``.
    quant_psd : ndarray
        Nominal quantization-noise PSD per bin (``inf`` on dropped bins).
    """

    observations: np.ndarray
    transmitted_mask: np.ndarray
    model: str
    quant_psd: np.ndarray


@dataclass(frozen=True)
class ScalarQuantizerSpec:
    """Per-bin step and clip of the scalar quantizer.

    ``step`` is expressed for bins scaled by ``1/scale`` with
    ``scale = sqrt(N_p / 2)``, so a per-component error variance of
    ``step**2 / 12`` gives a raw complex error variance of ``N_p * step**2 / 12``
    (the same per-bin variance the Gaussian model adds).  ``clip_radius`` is in
    raw DFT units.  Dropped bins have ``step = nan``.
    """

    step: np.ndarray
    clip_radius: np.ndarray
    scale: float

    @property
    def mask(self) -> np.ndarray:
        return np.isfinite(self.step)

    def levels_per_component(self) -> np.ndarray:
        """Reconstruction levels per real component (0 on dropped bins); diagnostic only."""
        with np.errstate(invalid="ignore"):
            n = np.ceil(2 * self.clip_radius / self.scale / self.step)
        return np.where(self.mask, n, 0.0)

    def bits(self) -> float:
        """Fixed-length bits for one frame at ``2 log2(levels)`` per bin."""
        lv = self.levels_per_component()
        return float(np.sum(2 * np.log2(lv[lv > 0])))


def _check_shape(obs: np.ndarray, shape):
    if obs.shape[-2:] != tuple(shape):
        raise ValueError(f"frame grid {obs.shape[-2:]} does not match {tuple(shape)}")


def apply_gaussian_model(frame: PilotFrame, grid: InvPsdGrid, rng_seed=None) -> CompressedPilotFrame:
    """Add independent complex Gaussian noise of variance ``N_p * S`` to every transmitted bin.

    Leading batch axes on ``frame.observations`` are supported.
    """
    obs = np.asarray(frame.observations)
    _check_shape(obs, grid.u.shape)
    rng = as_generator(rng_seed)
    n_p = obs.shape[-1]
    psd = grid.psd
    mask = grid.mask
    var = np.where(mask, n_p * psd, 0.0)
    out = obs + complex_gaussian(rng, obs.shape, var)
    out = np.where(mask, out, 0.0)
    return CompressedPilotFrame(out, mask.copy(), GAUSSIAN, psd)


def design_scalar_quantizer(grid: InvPsdGrid, cfg: SystemConfig) -> ScalarQuantizerSpec:
    """Steps ``sqrt(12/u)`` and a 4-sigma clip on each bin's signal-plus-noise amplitude."""
    if grid.u.shape != cfg.grid_shape:
        raise ValueError(f"grid shape {grid.u.shape} does not match config {cfg.grid_shape}")
    with np.errstate(divide="ignore"):
        step = np.where(grid.mask, np.sqrt(12.0 / np.where(grid.mask, grid.u, 1.0)), np.nan)
    clip = CLIP_SIGMAS * np.sqrt(cfg.pilot_len * pilot_signal_power(cfg))
    return ScalarQuantizerSpec(step=step, clip_radius=clip, scale=float(np.sqrt(cfg.pilot_len / 2.0)))


def midrise(x, step, clip=np.inf):
    """Clip ``x`` to ``[-clip, clip]`` and map it to ``step * (floor(x/step) + 1/2)``.

    A step of 0 passes ``x`` through unchanged.
    """
    x = np.clip(np.asarray(x, dtype=float), -clip, clip)
    step = np.asarray(step, dtype=float)
    safe = np.where(step > 0, step, 1.0)
    q = safe * (np.floor(x / safe) + 0.5)
    return np.where(step > 0, q, x)


def apply_scalar_quantizer(frame: PilotFrame, spec: ScalarQuantizerSpec) -> CompressedPilotFrame:
    """Quantize real and imaginary parts of each transmitted bin independently."""
    obs = np.asarray(frame.observations)
    _check_shape(obs, spec.step.shape)
    mask = spec.mask
    step = np.where(mask, spec.step, 0.0)
    clip = spec.clip_radius / spec.scale
    x = obs / spec.scale
    q = midrise(x.real, step, clip) + 1j * midrise(x.imag, step, clip)
    out = np.where(mask, q * spec.scale, 0.0)
    psd = np.where(mask, step**2 / 12.0, np.inf)
    return CompressedPilotFrame(out, mask.copy(), SCALAR_UNIFORM, psd)


def apply_data_quantizer(frame: DataFrame, sigma2_qd: float, rng_seed=None) -> DataFrame:
    """Add white complex Gaussian noise of variance ``sigma2_qd`` per data sample."""
    if sigma2_qd < 0:
        raise ValueError(f"sigma2_qd must be nonnegative, got {sigma2_qd}")
    if sigma2_qd == 0:
        return frame
    rng = as_generator(rng_seed)
    obs = frame.observations + complex_gaussian(rng, np.shape(frame.observations), sigma2_qd)
    return replace(frame, observations=obs)
