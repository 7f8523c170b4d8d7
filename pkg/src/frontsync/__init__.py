"""Fronthaul quantization design for timing and phase synchronization in uplink C-RAN.

The central unit estimates a residual timing offset and carrier phase from
compressed pilot observations.  This package shapes the pilot quantization
noise spectrum to minimize the resulting synchronization loss, and simulates
the full link to measure MSE and symbol error rate.
"""

from .config import SystemConfig
from .link_sim import (
    EstimationImpossibleError,
    EstimationResult,
    TrialStats,
    compensate_and_detect,
    estimate_offsets,
    measure_error_term_powers,
    run_mse_experiment,
    run_ser_experiment,
)
from .metrics import (
    CrbPair,
    ErrorTermPowers,
    InvPsdGrid,
    LinearApproxCoeffs,
    crb,
    data_rate,
    effective_snr,
    error_term_powers,
    linear_approx_coeffs,
    pilot_rate,
    pilot_rate_logdet,
)
from .psd_optimizer import (
    ConvergenceWarning,
    DcTrace,
    data_phase_noise_variance,
    optimize_psd,
    white_psd_baseline,
)
from .quantizer import (
    CompressedPilotFrame,
    ScalarQuantizerSpec,
    apply_data_quantizer,
    apply_gaussian_model,
    apply_scalar_quantizer,
    design_scalar_quantizer,
)
from .signal_model import (
    DataFrame,
    PilotFrame,
    polyphase_response,
    pulse_value,
    synthesize_data_frame,
    synthesize_pilot_frame,
)

__version__ = "0.1.0"
