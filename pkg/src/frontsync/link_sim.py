"""Monte Carlo link simulation: pilot-based offset estimation, compensation and detection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numba
import numpy as np

from .config import SystemConfig
from .metrics import ErrorTermPowers, InvPsdGrid
from .quantizer import (
    GAUSSIAN,
    SCALAR_UNIFORM,
    CompressedPilotFrame,
    ScalarQuantizerSpec,
    apply_data_quantizer,
    apply_gaussian_model,
    apply_scalar_quantizer,
    design_scalar_quantizer,
)
from .signal_model import (
    DataFrame,
    constellation_points,
    draw_symbols,
    fractional_delay,
    synthesize_data_frame,
    synthesize_pilot_frame,
)

GRID_POINTS = 64
REFINE_ROUNDS = 2
WEIGHTINGS = ("fisher", "uniform")


class EstimationImpossibleError(ValueError):
    """The transmitted bins cannot separate the timing and phase offsets."""


@dataclass(frozen=True)
class EstimationResult:
    tau_hat: float
    theta_hat: float
    objective: float


@dataclass(frozen=True)
class TrialStats:
    """Monte Carlo aggregates with standard errors.

    ``ser`` is nan for experiments without a data phase.
    """

    mse_tau: float
    mse_theta: float
    ser: float
    n_trials: int
    seed: int
    se_tau: float = float("nan")
    se_theta: float = float("nan")
    se_ser: float = float("nan")
    n_symbols: int = 0
    n_errors: int = 0


def wrap_cycles(x):
    """Map to ``[-1/2, 1/2)``."""
    return x - np.floor(x + 0.5)


def wrap_angle(x):
    """Map to ``[-pi, pi)``."""
    return x - 2 * np.pi * np.floor((x + np.pi) / (2 * np.pi))


def trial_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for trial ``index`` of an experiment seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def _bin_layout(cfg: SystemConfig, mask: np.ndarray):
    """Signed index and known branch phase (cycles) of each transmitted bin."""
    kc = np.broadcast_to(cfg.centered_freqs()[None, :], cfg.grid_shape)
    n = np.broadcast_to(np.arange(cfg.oversampling)[:, None], cfg.grid_shape)
    branch = kc * n / (cfg.pilot_len * cfg.oversampling)
    return kc[mask], branch[mask]


def _check_identifiable(kc_used: np.ndarray):
    if np.unique(kc_used).size < 2:
        raise EstimationImpossibleError(
            f"need transmitted bins with at least 2 distinct frequency indices, got {np.unique(kc_used).tolist()}"
        )


def _bin_weights(compressed: CompressedPilotFrame, pilot_spec: np.ndarray, cfg: SystemConfig, weighting: str):
    """Per-bin LS weights on transmitted bins, shape ``[..., M]``."""
    mask = compressed.transmitted_mask
    if weighting == "uniform":
        return np.ones(pilot_spec.shape[:-1] + (int(mask.sum()),))
    if weighting != "fisher":
        raise ValueError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    # inverse phase-noise variance: |X|^2 / (N0/T_s + S)
    noise = cfg.pilot_noise + compressed.quant_psd[mask]
    x2 = np.abs(pilot_spec[..., None, :]) ** 2 * np.ones(cfg.grid_shape)
    w = x2[..., mask] / np.maximum(noise, 1e-300)
    return w / np.max(w, axis=-1, keepdims=True)


@numba.njit(cache=True, nogil=True)
def _grid_kernel(base, w, slope, taus, thetas):
    b_total, m = base.shape
    out = np.empty((b_total, 2))
    for b in range(b_total):
        best = np.inf
        for i in range(taus.size):
            for j in range(thetas.size):
                c = thetas[j] / (2 * np.pi)
                cost = 0.0
                for k in range(m):
                    e = base[b, k] - c + slope[k] * taus[i]
                    e -= np.floor(e + 0.5)
                    cost += w[b, k] * e * e
                if cost < best:
                    best = cost
                    out[b, 0] = taus[i]
                    out[b, 1] = thetas[j]
    return out


def _grid_search(r, w, kc, branch, cfg: SystemConfig):
    """Coarse minimizer of the wrapped LS cost over the 64 x 64 grid; ``r`` is ``[B, M]``."""
    taus = np.linspace(-0.5, 0.5, GRID_POINTS, endpoint=False) * cfg.symbol_period
    thetas = np.linspace(-np.pi, np.pi, GRID_POINTS, endpoint=False)
    # model(theta, tau) = theta/2pi - kc tau/(N_p T) + branch
    slope = kc / (cfg.pilot_len * cfg.symbol_period)
    base = np.ascontiguousarray(r - branch, dtype=float)
    return _grid_kernel(base, np.ascontiguousarray(w, dtype=float), slope.astype(float), taus, thetas)


def _refine(r, w, kc, branch, start, cfg: SystemConfig):
    """Weighted Gauss-Newton on wrapped residuals (exact LS once wraps are fixed)."""
    T = cfg.symbol_period
    tau, theta = start[:, 0].copy(), start[:, 1].copy()
    jac = np.stack([np.ones_like(kc, dtype=float), -kc / cfg.pilot_len], axis=-1)  # d/d(theta/2pi), d/d(tau/T)
    normal = np.einsum("bm,mi,mj->bij", w, jac, jac)
    for _ in range(REFINE_ROUNDS):
        model = theta[:, None] / (2 * np.pi) - kc[None, :] * tau[:, None] / (cfg.pilot_len * T) + branch
        e = wrap_cycles(r - model)
        rhs = np.einsum("bm,mi,bm->bi", w, jac, e)
        step = np.linalg.solve(normal, rhs[..., None])[..., 0]
        theta = theta + 2 * np.pi * step[:, 0]
        tau = tau + T * step[:, 1]
    model = theta[:, None] / (2 * np.pi) - kc[None, :] * tau[:, None] / (cfg.pilot_len * T) + branch
    obj = np.sum(w * wrap_cycles(r - model) ** 2, axis=-1)
    tau = np.clip(tau, -T / 2, T / 2)
    return tau, wrap_angle(theta), obj


def estimate_offsets_batch(
    compressed: CompressedPilotFrame, pilots: np.ndarray, cfg: SystemConfig, weighting: str = "uniform"
):
    """Vectorized :func:`estimate_offsets` over leading batch axes of observations and pilots.

    Returns arrays ``(tau_hat, theta_hat, objective)`` with the batch shape.
    """
    mask = np.asarray(compressed.transmitted_mask, dtype=bool)
    kc, branch = _bin_layout(cfg, mask)
    _check_identifiable(kc)
    obs = np.asarray(compressed.observations)
    pilots = np.asarray(pilots)
    batch = obs.shape[:-2]
    spec = np.fft.fft(pilots, axis=-1)
    prod = obs * np.conj(spec)[..., None, :]
    r = (np.angle(prod[..., mask]) / (2 * np.pi)).reshape(-1, kc.size)
    w = _bin_weights(compressed, spec, cfg, weighting)
    w = np.broadcast_to(w, batch + (kc.size,)).reshape(-1, kc.size)
    start = _grid_search(r, w, kc, branch, cfg)
    tau, theta, obj = _refine(r, w, kc, branch, start, cfg)
    return tau.reshape(batch), theta.reshape(batch), obj.reshape(batch)


def estimate_offsets(
    compressed: CompressedPilotFrame, pilots: np.ndarray, cfg: SystemConfig, weighting: str = "uniform"
) -> EstimationResult:
    """Joint LS timing/phase estimate from the per-bin pilot phases.

    Minimizes ``sum w * wrap(r - model(theta, tau))**2`` with
    ``r = arg(Y X*) / 2 pi`` over the transmitted bins.  ``"uniform"``
    weighting gives every transmitted bin weight 1; ``"fisher"`` weights each
    bin by its inverse phase-noise variance ``|X|^2 / (N0/T_s + S)``.

    Raises
    ------
    EstimationImpossibleError
        If fewer than two distinct frequency indices are transmitted.
    """
    if np.ndim(compressed.observations) != 2:
        raise ValueError("estimate_offsets takes a single frame; use estimate_offsets_batch")
    tau, theta, obj = estimate_offsets_batch(compressed, pilots, cfg, weighting)
    return EstimationResult(float(tau), float(theta), float(obj))


def compensate(observations, tau_hat, theta_hat, cfg: SystemConfig):
    """Undo the estimated rotation and advance the data by ``tau_hat``."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    y = np.asarray(observations) * np.exp(-1j * theta_hat)[..., None]
    return fractional_delay(y, -np.asarray(tau_hat, dtype=float) / cfg.symbol_period)


def detect(samples, cfg: SystemConfig, constellation: str):
    """Nearest-neighbour decisions against the ``A``-scaled constellation; returns symbols."""
    points = np.sqrt(cfg.data_energy) * constellation_points(constellation)
    idx = np.argmin(np.abs(np.asarray(samples)[..., None] - cfg.amplitude * points), axis=-1)
    return points[idx]


def compensate_and_detect(data: DataFrame, est: EstimationResult, cfg: SystemConfig, constellation: str = "qpsk"):
    """Compensate the data observations with ``est`` and detect symbol by symbol."""
    return detect(compensate(data.observations, est.tau_hat, est.theta_hat, cfg), cfg, constellation)


def _compressor(cfg: SystemConfig, grid: InvPsdGrid, model: str, spec: ScalarQuantizerSpec | None):
    if model == GAUSSIAN:
        return lambda frame, rng: apply_gaussian_model(frame, grid, rng)
    if model == SCALAR_UNIFORM:
        spec = spec if spec is not None else design_scalar_quantizer(grid, cfg)
        return lambda frame, rng: apply_scalar_quantizer(frame, spec)
    raise ValueError(f"model must be {GAUSSIAN!r} or {SCALAR_UNIFORM!r}, got {model!r}")


def _draw_offsets(rng: np.random.Generator, cfg: SystemConfig):
    tau = rng.uniform(-0.25, 0.25) * cfg.symbol_period
    theta = rng.uniform(-np.pi / 2, np.pi / 2)
    return tau, theta


def _mean_se(values: np.ndarray):
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return mean, float("nan")
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def _pilot_pipeline(cfg, compress, n_trials, seed, weighting, chunk, with_data: Callable | None = None):
    """Run pilot estimation for all trials, in chunks; returns per-trial arrays."""
    tau_err = np.empty(n_trials)
    theta_err = np.empty(n_trials)
    extra = []
    for s in range(0, n_trials, chunk):
        idx = range(s, min(n_trials, s + chunk))
        rngs = [trial_rng(seed, i) for i in idx]
        offsets = np.array([_draw_offsets(rng, cfg) for rng in rngs])
        frames = [synthesize_pilot_frame(cfg, t, th, rng) for (t, th), rng in zip(offsets, rngs)]
        comp = [compress(f, rng) for f, rng in zip(frames, rngs)]
        stacked = CompressedPilotFrame(
            np.stack([c.observations for c in comp]), comp[0].transmitted_mask, comp[0].model, comp[0].quant_psd
        )
        if with_data is not None and with_data.perfect:
            tau_hat, theta_hat = offsets[:, 0], offsets[:, 1]
        else:
            pilots = np.stack([f.pilots for f in frames])
            tau_hat, theta_hat, _ = estimate_offsets_batch(stacked, pilots, cfg, weighting)
        tau_err[s : s + len(idx)] = tau_hat - offsets[:, 0]
        theta_err[s : s + len(idx)] = wrap_angle(theta_hat - offsets[:, 1])
        if with_data is not None:
            extra.append(with_data(rngs, offsets, tau_hat, theta_hat))
    return tau_err, theta_err, extra


def run_mse_experiment(
    cfg: SystemConfig,
    grid: InvPsdGrid,
    model: str = GAUSSIAN,
    n_trials: int = 10_000,
    seed: int = 0,
    weighting: str = "uniform",
    quantizer: ScalarQuantizerSpec | None = None,
    chunk: int = 512,
) -> TrialStats:
    """Timing and phase MSE of the LS estimator over random offsets, pilots and noise.

    Parameters
    ----------
    model : {"gaussian", "scalar_uniform"}
        Pilot compression model.  For the scalar quantizer, ``quantizer``
        overrides the spec designed from ``grid``.
    """
    if n_trials < 100:
        raise ValueError(f"n_trials must be >= 100, got {n_trials}")
    compress = _compressor(cfg, grid, model, quantizer)
    kc, _ = _bin_layout(cfg, grid.mask)
    _check_identifiable(kc)
    tau_err, theta_err, _ = _pilot_pipeline(cfg, compress, n_trials, seed, weighting, chunk)
    mse_tau, se_tau = _mean_se(tau_err**2)
    mse_theta, se_theta = _mean_se(theta_err**2)
    return TrialStats(mse_tau, mse_theta, float("nan"), n_trials, int(seed), se_tau, se_theta)


def run_ser_experiment(
    cfg: SystemConfig,
    grid: InvPsdGrid,
    sigma2_qd: float,
    constellation: str = "qpsk",
    n_trials: int = 1_000,
    seed: int = 0,
    model: str = GAUSSIAN,
    perfect_sync: bool = False,
    weighting: str = "uniform",
    target_ser: float | None = None,
    chunk: int = 512,
) -> TrialStats:
    """Uncoded SER of the full pipeline: estimate on the pilots, compensate and detect the data.

    With ``perfect_sync`` the estimator is bypassed and the true offsets are
    used for compensation (the genie reference).
    """
    constellation_points(constellation)
    if target_ser is not None and n_trials * cfg.data_len < 10.0 / target_ser:
        raise ValueError(f"{n_trials} trials x {cfg.data_len} symbols too few for SER {target_ser}")
    compress = _compressor(cfg, grid, model, None)
    if not perfect_sync:
        kc, _ = _bin_layout(cfg, grid.mask)
        _check_identifiable(kc)

    def data_phase(rngs, offsets, tau_hat, theta_hat):
        obs = []
        symbols = []
        for rng, (tau, theta) in zip(rngs, offsets):
            frame = synthesize_data_frame(cfg, tau, theta, constellation, rng)
            frame = apply_data_quantizer(frame, sigma2_qd, rng)
            obs.append(frame.observations)
            symbols.append(frame.symbols)
        symbols = np.stack(symbols)
        det = detect(compensate(np.stack(obs), tau_hat, theta_hat, cfg), cfg, constellation)
        return np.count_nonzero(~np.isclose(det, symbols), axis=-1)

    data_phase.perfect = perfect_sync
    _, _, parts = _pilot_pipeline(cfg, compress, n_trials, seed, weighting, chunk, data_phase)
    errors = np.concatenate(parts)
    per_trial = errors / cfg.data_len
    ser, se_ser = _mean_se(per_trial)
    n_err = int(errors.sum())
    return TrialStats(float("nan"), float("nan"), ser, n_trials, int(seed), se_ser=se_ser,
                      n_symbols=n_trials * cfg.data_len, n_errors=n_err)


def measure_error_term_powers(
    cfg: SystemConfig,
    delta_tau_max: float,
    delta_theta_max: float,
    n_trials: int = 100_000,
    seed: int = 0,
    constellation: str = "qpsk",
) -> ErrorTermPowers:
    """Empirical powers of the desired signal, phase-error noise and ISI with the exact sinc.

    Errors are uniform on ``[-max/2, max/2]``; ISI keeps three neighbours on each side.
    """
    T = cfg.symbol_period
    if not 0 <= delta_tau_max < 0.5 * T:
        raise ValueError(f"delta_tau_max must lie in [0, T/2), got {delta_tau_max}")
    rng = np.random.default_rng(seed)
    dtau = rng.uniform(-0.5, 0.5, n_trials) * delta_tau_max
    dtheta = rng.uniform(-0.5, 0.5, n_trials) * delta_theta_max
    x = draw_symbols(rng, constellation, (n_trials, 7), cfg.data_energy)
    lags = np.array([-3, -2, -1, 1, 2, 3])
    g0 = np.sinc(dtau / T)
    s_d = cfg.amplitude * x[:, 3] * g0
    z_s = s_d * (np.exp(1j * dtheta) - 1.0)
    # sin(pi (l + d)) = (-1)^l sin(pi d): exact zeros when d = 0
    d = dtau[:, None] / T
    taps = (-1.0) ** lags * np.sin(np.pi * d) / (np.pi * (lags + d))
    z_isi = cfg.amplitude * np.exp(1j * dtheta) * np.sum(x[:, lags + 3] * taps, axis=1)
    power = lambda z: math.fsum(np.abs(z) ** 2) / n_trials  # noqa: E731
    return ErrorTermPowers(power(s_d), power(z_s), power(z_isi))
