"""Feedback loops of the link: fiber-noise cancellation via AOMa and the QKD laser locks.

The fiber loop compares the two sensing-laser round trips and writes a phase
correction through AOMa, an actuator driven in frequency: the controller
output sets a per-sample phase increment that the actuator accumulates.
With the gain mapping used here the unity-gain crossover sits at
``bandwidth``::

    kp = 2*pi*bandwidth / f_s / prescale       (per sample)
    ki = kp * 2*pi*integral_corner*bandwidth / f_s
    kd = kp * f_s / (2*pi*derivative_corner*bandwidth)    (PID only)

``prescale`` is the divide-by-10 of the RF beat notes; it scales the error
before the controller and the gains compensate for it.

The QKD laser locks are modeled as exact first-order high-pass filters
(closed-loop error of an integrating PLL) applied in the frequency domain.
"""

from __future__ import annotations

import math
import warnings
import zlib
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .constants import FIBER_LOOP_BW, QKD_PLL_BW, REFERENCE_LINEWIDTH
from .link import LinkTopology, residual_after_correction, sensed_phase
from .noise import PhaseTrace, delayed_self, gen_power_law, laser_spec

KINDS = ("PI", "PID")


class LoopInstabilityError(RuntimeError):
    """The closed loop oscillates: its error exceeds the open-loop disturbance."""


@dataclass(frozen=True)
class LoopConfig:
    bandwidth: float = FIBER_LOOP_BW
    f_s: float = 5e6
    kind: str = "PI"
    latency: float = 0.0  # electronics delay on top of base_delay samples, s
    base_delay: int = 2
    prescale: float = 0.1
    integral_corner: float = 0.1  # fraction of bandwidth; 0 gives a first-order loop
    derivative_corner: float = 3.0  # multiple of bandwidth
    gain_scale: float = 1.0
    slew_limit: float | None = None  # rad/s
    range_limit: float | None = None  # rad
    enabled: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"loop kind must be one of {KINDS}")
        if not self.f_s > 0 or not self.bandwidth > 0:
            raise ValueError("sample rate and bandwidth must be > 0")
        if self.bandwidth >= self.f_s / 10:
            raise ValueError(
                f"loop bandwidth {self.bandwidth:g} Hz must be below f_s/10 = {self.f_s / 10:g} Hz"
            )
        if self.latency < 0 or self.base_delay < 0:
            raise ValueError("latency must be >= 0")
        if self.prescale <= 0 or self.integral_corner < 0 or self.derivative_corner <= 0:
            raise ValueError("prescale and derivative corner must be > 0, integral corner >= 0")

    @property
    def delay_samples(self) -> int:
        return self.base_delay + int(round(self.latency * self.f_s))

    @property
    def total_latency(self) -> float:
        return self.delay_samples / self.f_s

    @property
    def gains(self) -> tuple[float, float, float]:
        kp = 2 * math.pi * self.bandwidth / self.f_s / self.prescale * self.gain_scale
        ki = kp * 2 * math.pi * self.integral_corner * self.bandwidth / self.f_s
        kd = kp * self.f_s / (2 * math.pi * self.derivative_corner * self.bandwidth) if self.kind == "PID" else 0.0
        return kp, ki, kd

    @property
    def has_limits(self) -> bool:
        return self.slew_limit is not None or self.range_limit is not None

    def open_loop_gain(self, f) -> np.ndarray:
        """Continuous-time loop gain ``G(f)`` including the latency."""
        f = np.asarray(f, dtype=float)
        jf = 1j * f
        bw = self.bandwidth * self.gain_scale
        shape = 1 + self.integral_corner * self.bandwidth / jf
        if self.kind == "PID":
            shape = shape + jf / (self.derivative_corner * self.bandwidth)
        return bw / jf * shape * np.exp(-2j * np.pi * f * self.total_latency)

    def suppression(self, f) -> np.ndarray:
        """``|1 / (1 + G)|``: how much of a disturbance at ``f`` survives in the error."""
        return np.abs(1.0 / (1.0 + self.open_loop_gain(f)))


@dataclass
class LoopState:
    integrator: float = 0.0
    previous_input: float = 0.0
    actuator: float = 0.0  # accumulated AOM phase
    pending: deque = field(default_factory=deque)
    last_output: float = 0.0

    @classmethod
    def initial(cls, config: LoopConfig, hold: float = 0.0) -> "LoopState":
        """Fresh state; a nonzero ``hold`` starts in lock on a constant error of that value."""
        d = config.delay_samples
        if d < 1:
            raise ValueError("sample-by-sample stepping needs at least one sample of latency")
        return cls(actuator=hold, pending=deque([-hold] * d), last_output=-hold)


def loop_step(state: LoopState, error: float, config: LoopConfig) -> float:
    """Feed the error measured at this sample; return the correction for the next sample.

    The correction lags the actuator by the configured latency.
    """
    if not math.isfinite(error):
        raise ValueError(f"non-finite loop error {error!r}")
    kp, ki, kd = config.gains
    e_in = config.prescale * error
    state.integrator += e_in
    u = kp * e_in + ki * state.integrator + kd * (e_in - state.previous_input)
    state.previous_input = e_in
    if config.slew_limit is not None:
        lim = config.slew_limit / config.f_s
        u = min(max(u, -lim), lim)
    a = state.actuator + u
    if config.range_limit is not None:
        a = min(max(a, -config.range_limit), config.range_limit)
    state.actuator = a
    state.pending.append(-a)
    state.pending.popleft()
    state.last_output = state.pending[0]
    return state.last_output


def _closed_loop_coefficients(config: LoopConfig) -> tuple[np.ndarray, np.ndarray]:
    kp, ki, kd = config.gains
    p = config.prescale
    d = config.delay_samples
    q2 = np.array([1.0, -2.0, 1.0])
    ctrl = p * (kp * np.array([1.0, -1.0, 0.0]) + ki * np.array([1.0, 0.0, 0.0]) + kd * q2)
    den = np.zeros(d + 3)
    den[:3] += q2
    den[d : d + 3] += ctrl
    return q2, den


def closed_loop(disturbance: np.ndarray, config: LoopConfig) -> tuple[np.ndarray, np.ndarray]:
    """Run the loop against ``disturbance``; return ``(error, correction)`` arrays.

    Without actuator limits the loop is linear and is evaluated exactly as
    the IIR filter ``1 / (1 + K(z) z^-d)``; with limits it is stepped
    sample by sample through :func:`loop_step`.
    """
    d = np.asarray(disturbance, dtype=float)
    if not config.enabled:
        return d.copy(), np.zeros_like(d)
    if config.has_limits:
        return _closed_loop_sequential(d, config)
    b, a = _closed_loop_coefficients(config)
    # lfiltic expects a monic denominator; a[0] != 1 only without latency
    b, a = b / a[0], a / a[0]
    # the loop is already in lock when the record starts: past input is the
    # initial value extended backwards, past error zero
    zi = signal.lfiltic(b, a, y=np.zeros(a.size), x=np.full(b.size, d[0]))
    with np.errstate(over="ignore", invalid="ignore"):
        e, _ = signal.lfilter(b, a, d, zi=zi)
        return e, e - d


def _closed_loop_sequential(d: np.ndarray, config: LoopConfig) -> tuple[np.ndarray, np.ndarray]:
    state = LoopState.initial(config, hold=d[0])
    e = np.empty_like(d)
    c = np.empty_like(d)
    corr = state.pending[0]
    for k in range(d.size):
        c[k] = corr
        e[k] = d[k] + corr
        if not math.isfinite(e[k]):
            e[k:] = np.inf
            c[k:] = np.inf
            break
        corr = loop_step(state, e[k], config)
    return e, c


def _rms(x: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sqrt(np.mean(np.square(x))))


def is_unstable(error: np.ndarray, disturbance: np.ndarray) -> bool:
    e_rms = _rms(error)
    return not math.isfinite(e_rms) or e_rms > _rms(disturbance)


@dataclass(frozen=True)
class LaserLockConfig:
    """Optical PLL of a QKD laser to the incoming reference.

    The lock is applied as an exact high-pass, so unlike :class:`LoopConfig`
    the bandwidth only has to stay below Nyquist.
    """

    bandwidth: float = QKD_PLL_BW
    kind: str = "PID"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"lock kind must be one of {KINDS}")
        if not self.bandwidth > 0:
            raise ValueError("lock bandwidth must be > 0")


def qkd_laser_lock(laser_noise: PhaseTrace, config: LaserLockConfig) -> PhaseTrace:
    """Residual laser phase after locking to a noiseless reference.

    Applies ``H(f) = (jf/B) / (1 + jf/B)`` in the frequency domain.  The
    straight line joining the end points is removed first so the FFT sees a
    periodic signal; its exact high-pass response (a constant
    ``slope / (2 pi B)``) is added back.
    """
    f_s = laser_noise.f_s
    if config.bandwidth >= f_s / 2:
        raise ValueError(f"lock bandwidth {config.bandwidth:g} Hz is not below Nyquist ({f_s / 2:g} Hz)")
    x = laser_noise.samples
    n = x.size
    slope = (x[-1] - x[0]) / (n - 1)
    line = x[0] + slope * np.arange(n)
    spec = np.fft.rfft(x - line)
    del line
    jf = 1j * np.fft.rfftfreq(n, 1.0 / f_s) / config.bandwidth
    spec *= jf / (1.0 + jf)
    del jf
    out = np.fft.irfft(spec, n)
    out += slope * f_s / (2 * math.pi * config.bandwidth)
    return laser_noise.with_samples(out, "locked laser")


@dataclass(frozen=True)
class LaserSet:
    reference_linewidth: float = REFERENCE_LINEWIDTH
    sensing_linewidth: float = REFERENCE_LINEWIDTH
    qkd_linewidth: float = 20e3
    # sensing laser phase-coherent with the reference (comb offset lock)
    offset_locked: bool = True


def derive_seed(seed: int, label: str) -> int:
    """Independent per-source seed from the run seed and a source label."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(label.encode())])
    lo, hi = (int(v) for v in ss.generate_state(2, np.uint64))
    return lo | (hi << 64)


def _next_pow2(n: int) -> int:
    return 1 << max(1, (n - 1).bit_length())


@dataclass
class LinkNoise:
    """Open-loop noise of one run, every array ``n`` samples long at ``f_s``.

    ``fiber_diff`` is the Alice-minus-Bob round-trip fiber phase at the
    sensing wavelength.  ``reference_self`` is the delayed-self reference
    term over the arm unbalance as it reaches the QKD interference;
    ``sensing_self`` is the matching term in the loop error, ``None`` when
    the sensing laser is offset locked (it is then the reference term scaled
    by ``nu_S / nu_R``).  ``uncommon`` is ``None`` without uncommon-path noise.
    """

    f_s: float
    fiber_diff: np.ndarray
    reference_self: np.ndarray
    laser_residual: np.ndarray
    sensing_self: np.ndarray | None = None
    uncommon: np.ndarray | None = None
    sensing_ratio: float = 1.0

    @property
    def n(self) -> int:
        return self.fiber_diff.size

    def loop_disturbance(self) -> np.ndarray:
        if self.sensing_self is None:
            return self.fiber_diff + self.sensing_ratio * self.reference_self
        return self.fiber_diff + self.sensing_self


def _gen(spec, f_s, n_fft, n, seed, label) -> PhaseTrace:
    if spec is None or spec.is_zero():
        return PhaseTrace(np.zeros(n), f_s, 0.0, label)
    full = gen_power_law(spec, f_s, n_fft, derive_seed(seed, label))
    return PhaseTrace(full.samples[:n].copy(), f_s, 0.0, label)


def _delayed_self_term(linewidth, f_s, n_fft, n, m, seed, label) -> np.ndarray:
    if linewidth == 0:
        return np.zeros(n)
    free = gen_power_law(laser_spec(linewidth), f_s, n_fft, derive_seed(seed, label))
    return delayed_self(free, m / f_s).samples[:n].copy()


def simulate_noise(
    topology: LinkTopology,
    lasers: LaserSet,
    laser_lock: LaserLockConfig,
    f_s: float,
    n: int,
    seed: int,
) -> LinkNoise:
    """Generate every open-loop noise source of the link for one run."""
    m = int(round(topology.differential_delay * f_s))
    n_fft = _next_pow2(n + m)
    g = {name: _gen(span.noise, f_s, n_fft, n, seed, name) for name, span in topology.spans().items()}
    fiber_diff = sensed_phase(
        topology, (g["service_alice"], g["service_bob"]), (g["qkd_alice"], g["qkd_bob"])
    ).error.samples
    del g

    # the longer arm carries the older copy of the reference
    sign = -1.0 if topology.arm_length("alice") >= topology.arm_length("bob") else 1.0
    reference_self = sign * _delayed_self_term(lasers.reference_linewidth, f_s, n_fft, n, m, seed, "reference")
    sensing_self = None
    if not lasers.offset_locked:
        sensing_self = sign * _delayed_self_term(lasers.sensing_linewidth, f_s, n_fft, n, m, seed, "sensing")

    laser_residual = np.zeros(n)
    for label, sgn in (("laser_alice", 1.0), ("laser_bob", -1.0)):
        if lasers.qkd_linewidth == 0:
            break
        free = gen_power_law(laser_spec(lasers.qkd_linewidth), f_s, n_fft, derive_seed(seed, label))
        laser_residual += sgn * qkd_laser_lock(free, laser_lock).samples[:n]
        del free

    uncommon = None
    if topology.uncommon_alice is not None or topology.uncommon_bob is not None:
        uncommon = _gen(topology.uncommon_alice, f_s, n_fft, n, seed, "uncommon_alice").samples
        uncommon -= _gen(topology.uncommon_bob, f_s, n_fft, n, seed, "uncommon_bob").samples
    return LinkNoise(f_s, fiber_diff, reference_self, laser_residual, sensing_self, uncommon,
                     topology.plan.nu_s / topology.plan.nu_r)


@dataclass
class LoopResult:
    stabilized_phase: PhaseTrace
    error_signal: PhaseTrace
    correction: PhaseTrace
    open_loop_rms: float
    unstable: bool = False


def closed_loop_run(
    topology: LinkTopology,
    fiber_loop: LoopConfig,
    lasers: LaserSet = LaserSet(),
    laser_lock: LaserLockConfig = LaserLockConfig(),
    duration: float = 4.0,
    seed: int = 0,
    *,
    nu_mismatch: bool = True,
    noise: LinkNoise | None = None,
    strict: bool = False,
) -> LoopResult:
    """Simulate the stabilized link and return the QKD differential phase at Charlie.

    Chain: fiber noise -> sensing observable -> loop error -> AOMa
    correction on Alice's arm (shared by sensing and QKD light) -> QKD phase
    including the locked-laser residuals, the delayed-self reference term,
    uncommon-path noise and, if ``nu_mismatch``, the wavelength-ratio
    residual of the fiber noise.  Pass ``noise`` to reuse one noise
    realization for several loop settings.
    """
    f_s = fiber_loop.f_s
    if noise is None:
        noise = simulate_noise(topology, lasers, laser_lock, f_s, int(round(duration * f_s)), seed)
    elif noise.f_s != f_s:
        raise ValueError(f"noise sampled at {noise.f_s} Hz but loop runs at {f_s} Hz")

    disturbance = noise.loop_disturbance()
    error, correction = closed_loop(disturbance, fiber_loop)
    open_rms = _rms(disturbance)
    unstable = fiber_loop.enabled and is_unstable(error, disturbance)
    del disturbance

    phase = noise.fiber_diff + noise.reference_self
    phase += noise.laser_residual
    if noise.uncommon is not None:
        phase += noise.uncommon
    if nu_mismatch:
        phase += residual_after_correction(PhaseTrace(noise.fiber_diff, f_s), topology.plan).samples
    phase += correction
    if unstable:
        msg = (f"fiber loop unstable: bandwidth*latency = "
               f"{fiber_loop.bandwidth * fiber_loop.total_latency:.3f}, error RMS exceeds open loop")
        if strict:
            raise LoopInstabilityError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    tr = lambda x, tag: PhaseTrace(x, f_s, 0.0, tag)
    return LoopResult(
        tr(phase, "qkd differential phase"),
        tr(error, "loop error"),
        tr(correction, "AOMa correction"),
        open_rms,
        unstable,
    )


def disabled(config: LoopConfig) -> LoopConfig:
    return replace(config, enabled=False)
