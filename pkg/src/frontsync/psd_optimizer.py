"""Quantization-noise PSD design for the pilot field.

The CRB-weighted objective is linear-fractional in the inverse PSD ``u``; the
Charnes-Cooper substitution ``v = 1 / (1 + (N0/T_s) u)`` makes it convex in
``v`` while the fronthaul-rate constraint becomes a difference of convex
functions.  :func:`optimize_psd` runs the DC (convex-concave) outer loop,
solving each convexified problem with a log-barrier Newton method.

Internally the solver works with ``s = 1 - v``: dropped bins sit at ``s -> 0``
where floating point keeps full relative precision.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .config import SystemConfig
from .metrics import InvPsdGrid, coeffs_from_crb, crb, data_rate, pilot_signal_power, timing_slope
from .signal_model import polyphase_response

logger = logging.getLogger(__name__)

LN2 = np.log(2.0)
DROP_THRESHOLD = 1e-9


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DcCoefficients:
    """Fisher weights of the two CRBs and the objective weights.

    ``a`` feeds the timing bound, ``b`` the phase bound;
    ``a = (2 pi / (N_p T))^2 k_c^2 b``.
    """

    a: np.ndarray
    b: np.ndarray
    a_bar: float
    signal_power: float
    symbol_period: float = 1.0

    @property
    def theta_weight(self) -> float:
        return self.signal_power

    @property
    def tau_weight(self) -> float:
        return self.signal_power * self.a_bar / self.symbol_period**2


@dataclass(frozen=True)
class DcState:
    v: np.ndarray
    iteration: int
    objective: float
    constraint_slack: float


@dataclass
class DcTrace:
    states: list = field(default_factory=list)
    converged: bool = False
    warning: str | None = None

    @property
    def objectives(self) -> np.ndarray:
        return np.array([st.objective for st in self.states])

    @property
    def slacks(self) -> np.ndarray:
        return np.array([st.constraint_slack for st in self.states])

    def __len__(self):
        return len(self.states)


# -- Charnes-Cooper substitution -------------------------------------------


def charnes_cooper(u, cfg: SystemConfig):
    """``v = 1 / (1 + (N0/T_s) u)``; ``u = inf`` maps to 0."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("u must be nonnegative")
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + cfg.pilot_noise * u)


def charnes_cooper_inverse(v, cfg: SystemConfig):
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0) or np.any(v > 1):
        raise ValueError("v must lie in (0, 1]")
    return (1.0 / v - 1.0) / cfg.pilot_noise


def _u_from_s(s, noise):
    return s / ((1.0 - s) * noise)


# -- objective ---------------------------------------------------------------


def dc_coefficients(cfg: SystemConfig, a_bar: float | None = None) -> DcCoefficients:
    """Fisher weight grids for ``cfg``; ``a_bar`` defaults to :func:`nominal_a_bar`."""
    if a_bar is None:
        a_bar = nominal_a_bar(cfg)
    b = cfg.pilot_energy * cfg.amplitude**2 * np.abs(polyphase_response(cfg)) ** 2
    a = timing_slope(cfg) ** 2 * cfg.centered_freqs()[None, :] ** 2 * b
    return DcCoefficients(a=a, b=b, a_bar=float(a_bar), signal_power=cfg.amplitude**2 * cfg.data_energy,
                          symbol_period=cfg.symbol_period)


def nominal_a_bar(cfg: SystemConfig) -> float:
    """ISI weight evaluated at the timing-error spread of the white-PSD design."""
    return coeffs_from_crb(crb(cfg, white_psd_baseline(cfg)), cfg).a_bar


class _Objective:
    """``w_theta / <b', s> + w_tau / <a', s>`` over flattened ``s = 1 - v``."""

    def __init__(self, coeffs: DcCoefficients, noise: float):
        self.b = np.ravel(coeffs.b) / noise
        self.a = np.ravel(coeffs.a) / noise
        self.terms = [(coeffs.theta_weight, self.b)]
        if np.any(self.a > 0):
            self.terms.append((coeffs.tau_weight, self.a))

    def value(self, s):
        total = 0.0
        for w, c in self.terms:
            p = c @ s
            if not p > 0:
                return np.inf
            total += w / p
        return total

    def derivatives(self, s):
        n = s.size
        g = np.zeros(n)
        H = np.zeros((n, n))
        for w, c in self.terms:
            p = c @ s
            g -= w * c / p**2
            H += (2.0 * w / p**3) * np.outer(c, c)
        return g, H


def dc_objective(v, coeffs: DcCoefficients, cfg: SystemConfig) -> float:
    """Weighted CRB sum in the Charnes-Cooper variables; ``inf`` when no Fisher information."""
    s = 1.0 - np.ravel(np.asarray(v, dtype=float))
    return _Objective(coeffs, cfg.pilot_noise).value(s)


# -- DC linearization ----------------------------------------------------------


def dc_linearize(v, coeffs: DcCoefficients, cfg: SystemConfig):
    """Tangent ``e v + f`` of the concave term ``log2(b (1 - v) + N0/T_s)`` at ``v``."""
    v = np.asarray(v, dtype=float)
    b = coeffs.b
    inner = b * (1.0 - v) + cfg.pilot_noise
    e = -b / (LN2 * inner)
    f = np.log2(inner) - e * v
    return e, f


def _linearize_s(s, b, noise):
    """Tangent in ``s``: returns (slope, const) with rate_k(s) ~ const + slope*s - log2(1-s)."""
    slope = b / (LN2 * (noise + b * s))
    const = np.log1p(b * s / noise) / LN2 - slope * s
    return slope, const


def rate_in_s(s, b, noise) -> float:
    """Exact pilot rate ``sum log2(1 + b s / N0Ts) - log2(1 - s)``."""
    return float(np.sum(np.log1p(b * s / noise) - np.log1p(-s)) / LN2)


# -- convex subproblem ---------------------------------------------------------


@dataclass
class SubproblemResult:
    s: np.ndarray
    objective: float
    kkt_residual: float
    newton_steps: int


def _psd_solve(H, g):
    # the low-rank objective/budget terms can swamp the diagonal barrier terms
    try:
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=1e-14)[0]


def _barrier_solve(obj: _Objective, slope, const, budget, s0, gap_tol=1e-12, max_newton=500, t0=None):
    """Log-barrier Newton method for min obj(s) s.t. lin_rate(s) <= budget, 0 < s < 1."""
    n = s0.size
    m = 2 * n + 1

    def h_of(s):
        return float(np.sum(const + slope * s - np.log1p(-s) / LN2)) - budget

    s = s0.copy()
    phi = obj.value(s)
    t = t0 if t0 is not None else m / max(phi, 1e-300)
    steps = 0
    while True:
        # centering
        for _ in range(max_newton):
            h = h_of(s)
            g_phi, H_phi = obj.derivatives(s)
            one_m = 1.0 - s
            dh = slope + 1.0 / (one_m * LN2)
            grad = t * g_phi + dh / (-h) - 1.0 / s + 1.0 / one_m
            H = t * H_phi + np.outer(dh, dh) / h**2
            H[np.diag_indices(n)] += 1.0 / (one_m**2 * LN2) / (-h) + 1.0 / s**2 + 1.0 / one_m**2
            d = 1.0 / np.sqrt(np.diag(H))
            step = -d * _psd_solve(H * np.outer(d, d), d * grad)
            dec2 = -grad @ step
            steps += 1
            if dec2 / 2.0 <= 1e-10:
                break
            # largest step keeping 0 < s < 1, then backtrack on feasibility and Armijo
            alpha = 1.0
            neg, pos = step < 0, step > 0
            if np.any(neg):
                alpha = min(alpha, 0.99 * np.min(-s[neg] / step[neg]))
            if np.any(pos):
                alpha = min(alpha, 0.99 * np.min(one_m[pos] / step[pos]))
            f0 = t * obj.value(s) - np.log(-h) - np.sum(np.log(s)) - np.sum(np.log1p(-s))
            while alpha > 1e-20:
                trial = s + alpha * step
                ht = h_of(trial)
                if ht < 0:
                    ft = t * obj.value(trial) - np.log(-ht) - np.sum(np.log(trial)) - np.sum(np.log1p(-trial))
                    if ft <= f0 - 0.25 * alpha * dec2:
                        break
                alpha *= 0.5
            else:
                break
            s = trial
        phi = obj.value(s)
        if m / t <= gap_tol * phi:
            break
        t *= 20.0
    g_phi, _ = obj.derivatives(s)
    h = h_of(s)
    dh = slope + 1.0 / ((1.0 - s) * LN2)
    lam_lo, lam_hi, mu = 1.0 / (t * s), 1.0 / (t * (1.0 - s)), 1.0 / (t * -h)
    stationarity = g_phi - lam_lo + lam_hi + mu * dh
    scale = np.max(np.abs(g_phi)) + 1e-300
    kkt = max(np.max(np.abs(stationarity)) / scale, m / t / phi)
    return SubproblemResult(s=s, objective=phi, kkt_residual=float(kkt), newton_steps=steps), t


def _kkt_polish(obj: _Objective, slope, const, budget, s_ipm, t):
    """Solve the subproblem's KKT system exactly, warm-started from barrier duals.

    For multipliers ``p = alpha/mu`` and ratio ``r = beta/alpha`` (``alpha``,
    ``beta`` the objective sensitivities to the two Fisher sums, ``mu`` the
    budget multiplier) each bin solves in closed form::

        s_k = max(0, 1 - 1 / (ln2 (p (b_k + r a_k) - slope_k)))

    ``p`` is fixed by making the budget active and ``r`` by consistency with
    the two Fisher sums.  Returns None if no bracket is found.
    """
    b = obj.b
    a = obj.a if len(obj.terms) > 1 else np.zeros_like(obj.b)

    def s_of(p, r):
        d = p * (b + r * a) - slope
        with np.errstate(divide="ignore"):
            return np.where(d * LN2 > 1.0, 1.0 - 1.0 / (LN2 * d), 0.0)

    def h_of(s):
        return float(np.sum(const + slope * s - np.log1p(-s) / LN2)) - budget

    def solve_p(r):
        f = lambda lp: h_of(s_of(np.exp(lp), r))  # noqa: E731
        lo, hi = np.log(p_guess) - 1.0, np.log(p_guess) + 1.0
        for _ in range(60):
            if f(lo) < 0:
                break
            lo -= 2.0
        for _ in range(60):
            if f(hi) > 0:
                break
            hi += 2.0
        lp = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
        # stay on the feasible side of the budget
        while f(lp) > 0:
            lp -= 1e-15 * max(1.0, abs(lp))
        return np.exp(lp)

    h = h_of(s_ipm)
    mu = 1.0 / (t * -h)
    tw = obj.terms[0][0]
    alpha = tw / (b @ s_ipm) ** 2
    p_guess = alpha / mu
    if len(obj.terms) == 1:
        try:
            return s_of(solve_p(0.0), 0.0)
        except ValueError:
            return None
    ww = obj.terms[1][0]
    r_guess = (ww / (a @ s_ipm) ** 2) / alpha

    def consistency(lr):
        r = np.exp(lr)
        s = s_of(solve_p(r), r)
        pb, pa = b @ s, a @ s
        if not (pb > 0 and pa > 0):
            return -np.inf if pa <= 0 else np.inf
        return lr - np.log(ww / tw) - 2.0 * np.log(pb / pa)

    try:
        lo, hi = np.log(r_guess) - 0.05, np.log(r_guess) + 0.05
        for _ in range(40):
            if consistency(lo) < 0:
                break
            lo -= 0.5
        for _ in range(40):
            if consistency(hi) > 0:
                break
            hi += 0.5
        lr = brentq(consistency, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=200)
    except ValueError:
        return None
    r = np.exp(lr)
    return s_of(solve_p(r), r)


def _interior_start(slope, const, budget, s_hint):
    def h_of(s):
        return float(np.sum(const + slope * s - np.log1p(-s) / LN2)) - budget

    s = np.clip(s_hint, 0.0, 1.0 - 1e-12)
    for shrink in (1.0, 0.9, 0.5, 0.1):
        trial = shrink * s + (1.0 - shrink) * 1e-3 + 1e-12
        if h_of(trial) < 0:
            return trial
    delta = 1e-3
    while delta > 1e-300:
        trial = np.full_like(s, delta)
        if h_of(trial) < 0:
            return trial
        delta *= 0.1
    raise ValueError("linearized rate budget is infeasible")


def solve_convex_subproblem(coeffs: DcCoefficients, e, f, cfg: SystemConfig, tol: float = 1e-10, start=None):
    """Minimize :func:`dc_objective` under the linearized rate budget ``N_p C``.

    ``e``, ``f`` are tangent grids from :func:`dc_linearize`.  Returns the
    optimal ``v`` grid.
    """
    res = _solve_subproblem_s(coeffs, e, f, cfg, tol, start)
    return (1.0 - res.s).reshape(np.shape(coeffs.b))


def _solve_subproblem_s(coeffs, e, f, cfg, tol=1e-10, start=None):
    noise = cfg.pilot_noise
    budget = cfg.pilot_len * cfg.capacity
    if not budget > 0:
        raise ValueError("rate budget must be positive")
    e = np.ravel(e)
    f = np.ravel(f)
    slope = -e
    const = e + f - np.log2(noise)
    hint = np.zeros(e.size) if start is None else 1.0 - np.ravel(start)
    res, _ = _solve_linearized(_Objective(coeffs, noise), slope, const, budget, hint, tol=tol)
    return res


def _solve_linearized(obj, slope, const, budget, hint, tol=1e-10, t0=None):
    """Barrier solve to a moderate gap, then exact KKT polish."""
    s0 = _interior_start(slope, const, budget, hint)
    res, t = _barrier_solve(obj, slope, const, budget, s0, gap_tol=1e-6, t0=t0)
    polished = _kkt_polish(obj, slope, const, budget, res.s, t)
    if polished is not None:
        phi = obj.value(polished)
        h = float(np.sum(const + slope * polished - np.log1p(-polished) / LN2)) - budget
        if h <= 1e-9 and phi <= res.objective * (1.0 + 1e-12):
            kkt = _kkt_residual(obj, slope, const, budget, polished)
            res = SubproblemResult(s=polished, objective=phi, kkt_residual=kkt, newton_steps=res.newton_steps)
    if res.kkt_residual > tol:
        logger.debug("subproblem KKT residual %.3g above tolerance %.3g", res.kkt_residual, tol)
    return res, t


def _kkt_residual(obj, slope, const, budget, s):
    """Relative KKT residual with multipliers fitted from the active bins."""
    g, _ = obj.derivatives(s)
    dh = slope + 1.0 / ((1.0 - s) * LN2)
    active = s > 0
    if not np.any(active):
        return np.inf
    mu = -np.sum(g[active] * dh[active]) / np.sum(dh[active] ** 2)
    resid = np.where(active, g + mu * dh, np.minimum(g + mu * dh, 0.0))
    h = float(np.sum(const + slope * s - np.log1p(-s) / LN2)) - budget
    scale = np.max(np.abs(g))
    return float(max(np.max(np.abs(resid)) / scale, abs(mu * h) / (scale * np.max(s) + 1e-300), max(h, 0.0)))


# -- DC outer loop -------------------------------------------------------------


def optimize_psd(
    cfg: SystemConfig,
    max_iters: int = 200,
    tol: float = 1e-8,
    a_bar: float | None = None,
    drop_threshold: float = DROP_THRESHOLD,
):
    """Optimize the pilot quantization-noise PSD for the effective SNR.

    Starts from ``v = 1`` (nothing transmitted) and iterates convexified
    problems until the relative objective change drops below ``tol``.

    Returns
    -------
    grid : InvPsdGrid
        Optimized inverse PSD (bins below ``drop_threshold * max(u)`` zeroed)
        together with the data-phase quantization variance.
    trace : DcTrace
        Every accepted iterate with objective and original-constraint slack.
    """
    if not cfg.noise_psd > 0:
        raise ValueError("PSD optimization needs N0 > 0")
    coeffs = dc_coefficients(cfg, a_bar)
    noise = cfg.pilot_noise
    budget = cfg.pilot_len * cfg.capacity
    obj = _Objective(coeffs, noise)
    b = np.ravel(coeffs.b)

    trace = DcTrace()
    s = np.zeros(b.size)
    prev = np.inf
    t_prev = None
    for it in range(1, max_iters + 1):
        slope, const = _linearize_s(s, b, noise)
        res, t_last = _solve_linearized(obj, slope, const, budget, s,
                                        t0=None if t_prev is None else t_prev / 1e4)
        t_prev = t_last
        if res.objective > prev:
            # the previous iterate is feasible for this subproblem; no further descent available
            trace.converged = True
            break
        s = res.s
        slack = budget - rate_in_s(s, b, noise)
        trace.states.append(DcState(v=(1.0 - s).reshape(cfg.grid_shape), iteration=it,
                                    objective=res.objective, constraint_slack=slack))
        change = abs(prev - res.objective) / res.objective if np.isfinite(prev) else np.inf
        prev = res.objective
        if change < tol:
            trace.converged = True
            break
    if not trace.converged:
        trace.warning = f"DC iterations did not converge within {max_iters} iterations"
        warnings.warn(trace.warning, ConvergenceWarning, stacklevel=2)
    logger.debug("optimize_psd: %d iterations, objective %.6g", len(trace), prev)

    u = _u_from_s(s, noise).reshape(cfg.grid_shape)
    u[u < drop_threshold * u.max()] = 0.0
    return InvPsdGrid(u, data_phase_noise_variance(cfg)), trace


# -- closed-form designs -------------------------------------------------------


def data_phase_noise_variance(cfg: SystemConfig) -> float:
    """Data-field quantization variance that exactly spends ``N_d C`` bits."""
    target = cfg.data_len * cfg.capacity

    def excess(log_s2):
        return data_rate(cfg, float(np.exp(log_s2))) - target

    power = cfg.data_energy * cfg.amplitude**2 + cfg.data_noise
    guess = np.log(power) - cfg.capacity * LN2
    lo, hi = guess - 10.0, guess + 10.0
    log_s2 = brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    return float(np.exp(log_s2))


def white_psd_baseline(cfg: SystemConfig) -> InvPsdGrid:
    """Flat inverse PSD that exactly spends the ``N_p C`` pilot budget."""
    target = cfg.pilot_len * cfg.capacity
    power = pilot_signal_power(cfg)

    def excess(log_u):
        return float(np.sum(np.log2(1.0 + power * np.exp(log_u)))) - target

    guess = np.log(2 ** (cfg.capacity / cfg.oversampling) - 1.0) - np.log(power.mean())
    log_u = brentq(excess, guess - 10.0, guess + 10.0, xtol=1e-14, rtol=1e-15, maxiter=500)
    return InvPsdGrid.uniform(cfg, float(np.exp(log_u)))


def white_psd_closed_form(cfg: SystemConfig) -> float:
    """Flat-response inverse PSD ``(2^{C/F} - 1) / (E_xp A^2 + N0/T_s)``."""
    return (2 ** (cfg.capacity / cfg.oversampling) - 1.0) / (cfg.pilot_energy * cfg.amplitude**2 + cfg.pilot_noise)
