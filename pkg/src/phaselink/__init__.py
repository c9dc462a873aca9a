"""Phase-noise simulation of a twin-field QKD link with active fiber-noise cancellation."""

from .analysis import (
    QBER_THRESHOLDS, Psd, QberEstimate, SigmaCurve, qber_integral, qber_small_phase, sigma_curve,
    sigma_for_qber, sigma_from_psd, sigma_time_domain, welch_psd,
)
from .control import (
    LaserLockConfig, LaserSet, LoopConfig, LoopInstabilityError, LoopResult, LoopState, closed_loop,
    closed_loop_run, loop_step, qkd_laser_lock, simulate_noise,
)
from .detect import (
    BackgroundModel, CountRecord, InsufficientStatisticsError, PhotodiodeConfig, SpdConfig,
    background_budget, photodiode_acquire, qber_from_counts, spd_detect,
)
from .interference import CalibrationError, InterferencePattern, attenuate, intensity, port_fluxes, retrieve_phase
from .link import FiberSpan, LinkTopology, WavelengthPlan, loss_budget, sensed_phase, timing_skew, torino_topology
from .noise import (
    InsufficientDataError, NoiseSpec, PhaseTrace, Tone, TransientModel, calibrate_fiber_spec,
    delayed_self, drift_metric, gen_power_law, laser_spec,
)
from .scenario import RunReport, Scenario, ScenarioError, compare_runs, load_scenario, run_scenario

__version__ = "0.1.0"
