"""Seeded colored phase-noise synthesis.

Noise is described by a :class:`NoiseSpec`: a sum of power-law terms
``h_alpha * f**alpha`` (one-sided, rad^2/Hz) for integer ``alpha`` in
``[-4, 0]``, optional deterministic tones and an optional train of transient
phase excursions.  Traces are synthesized in the frequency domain (shaped
complex Gaussian spectrum followed by an inverse real FFT), so the expected
periodogram matches the target PSD exactly on the FFT grid.

All randomness comes from ``numpy.random.Philox`` seeded with the caller's
integer seed, which keeps traces bit-identical across runs and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

ALLOWED_EXPONENTS = range(-4, 1)


class InsufficientDataError(ValueError):
    """Raised when a trace is too short for the requested operation."""


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide generator: Philox counter-based bit generator."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class Tone:
    frequency: float  # Hz
    amplitude: float  # rad


@dataclass(frozen=True)
class TransientModel:
    """Poisson train of smooth phase steps.

    Each event is a raised-cosine step of ``amplitude`` rad (random sign)
    lasting ``duration`` seconds; events arrive at ``rate`` per second.
    """

    rate: float
    amplitude: float
    duration: float

    def __post_init__(self):
        if self.rate < 0 or self.amplitude < 0 or self.duration <= 0:
            raise ValueError("transient rate/amplitude must be >= 0 and duration > 0")


@dataclass(frozen=True)
class NoiseSpec:
    coefficients: Mapping[int, float] = field(default_factory=dict)
    tones: tuple[Tone, ...] = ()
    transients: TransientModel | None = None

    def __post_init__(self):
        coeffs = {int(a): float(h) for a, h in dict(self.coefficients).items()}
        for alpha, h in coeffs.items():
            if alpha not in ALLOWED_EXPONENTS:
                raise ValueError(f"exponent {alpha} outside [-4, 0]")
            if not h >= 0:
                raise ValueError(f"coefficient h_{alpha} must be >= 0, got {h}")
        object.__setattr__(self, "coefficients", coeffs)
        tones = tuple(t if isinstance(t, Tone) else Tone(*t) for t in self.tones)
        for t in tones:
            if t.frequency <= 0:
                raise ValueError("tone frequencies must be > 0")
        object.__setattr__(self, "tones", tones)

    def is_zero(self) -> bool:
        return (
            all(h == 0 for h in self.coefficients.values())
            and all(t.amplitude == 0 for t in self.tones)
            and (self.transients is None or self.transients.amplitude == 0 or self.transients.rate == 0)
        )

    def psd(self, f) -> np.ndarray:
        """Analytic one-sided PSD of the power-law part (rad^2/Hz)."""
        f = np.asarray(f, dtype=float)
        out = np.zeros_like(f)
        for alpha, h in self.coefficients.items():
            if h:
                out = out + h * f**alpha
        return out

    def scaled(self, c: float) -> "NoiseSpec":
        """Spec whose traces are ``c`` times those of ``self`` (same seed)."""
        return NoiseSpec(
            {a: h * c * c for a, h in self.coefficients.items()},
            tuple(Tone(t.frequency, t.amplitude * c) for t in self.tones),
            None if self.transients is None else replace(self.transients, amplitude=self.transients.amplitude * c),
        )

    def to_dict(self) -> dict:
        d: dict = {"coefficients": {str(a): h for a, h in sorted(self.coefficients.items())}}
        if self.tones:
            d["tones"] = [[t.frequency, t.amplitude] for t in self.tones]
        if self.transients is not None:
            tr = self.transients
            d["transients"] = {"rate": tr.rate, "amplitude": tr.amplitude, "duration": tr.duration}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseSpec":
        tr = d.get("transients")
        return cls(
            {int(a): float(h) for a, h in d.get("coefficients", {}).items()},
            tuple(Tone(float(f), float(a)) for f, a in d.get("tones", [])),
            None if tr is None else TransientModel(**tr),
        )


@dataclass
class PhaseTrace:
    """Uniformly sampled series (rad unless stated otherwise)."""

    samples: np.ndarray
    f_s: float
    t0: float = 0.0
    tag: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not self.f_s > 0:
            raise ValueError("sample rate must be > 0")
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("a trace needs at least 2 samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.f_s

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.f_s

    def with_samples(self, samples, tag: str | None = None) -> "PhaseTrace":
        return PhaseTrace(samples, self.f_s, self.t0, self.tag if tag is None else tag)

    def head(self, n: int) -> "PhaseTrace":
        return PhaseTrace(self.samples[:n], self.f_s, self.t0, self.tag)


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def _transient_train(tr: TransientModel, f_s: float, n: int, rng: np.random.Generator) -> np.ndarray:
    duration = n / f_s
    n_events = rng.poisson(tr.rate * duration)
    starts = np.sort(rng.uniform(0.0, duration, n_events))
    signs = rng.choice([-1.0, 1.0], n_events)
    length = max(1, round(tr.duration * f_s))
    # per-sample increments of a raised-cosine step, summed over events
    grid = np.arange(length + 1) / length
    step = 0.5 * (1.0 - np.cos(np.pi * grid))
    pulse = tr.amplitude * np.diff(step)
    inc = np.zeros(n)
    for t, s in zip(starts, signs):
        k = int(t * f_s)
        m = min(length, n - k)
        inc[k : k + m] += s * pulse[:m]
    return np.cumsum(inc)


def gen_power_law(spec: NoiseSpec, f_s: float, n: int, seed: int) -> PhaseTrace:
    """Synthesize ``n`` samples of phase noise with one-sided PSD ``spec.psd``.

    Parameters
    ----------
    spec : NoiseSpec
        Power-law coefficients, tones and transients.
    f_s : float
        Sample rate in Hz.
    n : int
        Number of samples, a power of two.
    seed : int
        Philox seed.  Identical ``(spec, f_s, n, seed)`` give identical output.

    Returns
    -------
    PhaseTrace
        The synthesized trace, zero mean over its power-law part.
    """
    if not _is_pow2(n):
        raise ValueError(f"n must be a power of two >= 2, got {n}")
    if not f_s > 0:
        raise ValueError("sample rate must be > 0")
    for t in spec.tones:
        if t.frequency >= f_s / 2:
            raise ValueError(f"tone at {t.frequency} Hz is above Nyquist for f_s={f_s}")

    rng = make_rng(seed)
    half = n // 2
    out = np.zeros(n)

    if any(h > 0 for h in spec.coefficients.values()):
        f = np.arange(1, half + 1) * (f_s / n)
        # E|X_k|^2 = S(f_k) f_s n / 2 for interior bins, S f_s n at Nyquist
        amp = np.sqrt(spec.psd(f) * f_s * n / 2.0)
        spectrum = np.zeros(half + 1, dtype=complex)
        spectrum[1:] = amp * (rng.standard_normal(half) + 1j * rng.standard_normal(half)) / math.sqrt(2.0)
        spectrum[-1] = amp[-1] * math.sqrt(2.0) * rng.standard_normal()
        out += np.fft.irfft(spectrum, n)
        del spectrum

    if spec.tones:
        t = np.arange(n) / f_s
        phases = rng.uniform(0.0, 2 * np.pi, len(spec.tones))
        for tone, ph in zip(spec.tones, phases):
            out += tone.amplitude * np.sin(2 * np.pi * tone.frequency * t + ph)

    if spec.transients is not None and spec.transients.rate > 0:
        out += _transient_train(spec.transients, f_s, n, rng)

    return PhaseTrace(out, f_s, 0.0, f"power-law seed={seed}")


def delayed_self(trace: PhaseTrace, delay: float) -> PhaseTrace:
    """``phi(t) - phi(t - delay)``; the output starts ``delay`` later.

    Output sample ``i`` corresponds to input sample ``i + m`` with
    ``m = round(delay * f_s)``, so the result is ``m`` samples shorter.
    """
    if delay < 0:
        raise ValueError("delay must be >= 0")
    m = int(round(delay * trace.f_s))
    if m > len(trace) - 2:
        raise InsufficientDataError(
            f"delay of {m} samples leaves fewer than 2 of {len(trace)} samples"
        )
    x = trace.samples
    out = x[m:] - x[: x.size - m]
    return PhaseTrace(out, trace.f_s, trace.t0 + m / trace.f_s, trace.tag)


def laser_spec(linewidth: float) -> NoiseSpec:
    """White-frequency-noise phase spec for a Lorentzian FWHM ``linewidth`` (Hz).

    Uses ``h_-2 = linewidth / pi``: a one-sided frequency-noise level ``h``
    (Hz^2/Hz) gives a Lorentzian field spectrum of FWHM ``pi * h``.
    """
    if not linewidth > 0:
        raise ValueError("linewidth must be > 0")
    return NoiseSpec({-2: linewidth / math.pi})


def drift_metric(trace: PhaseTrace, window: float = 1e-3, percentile: float = 95.0) -> float:
    """Percentile of ``|phi(t + window) - phi(t)|`` divided by ``window`` in ms (rad/ms)."""
    return _drift_samples_percentile([trace], window, percentile) / (window * 1e3)


def _drift_samples_percentile(traces: Sequence[PhaseTrace], window: float, percentile: float) -> float:
    deltas = []
    for tr in traces:
        m = int(round(window * tr.f_s))
        if m < 1 or m >= len(tr):
            raise InsufficientDataError("trace shorter than the drift window")
        deltas.append(np.abs(tr.samples[m:] - tr.samples[:-m]))
    return float(np.percentile(np.concatenate(deltas), percentile))


CALIBRATION_SEEDS = (9001, 9002, 9003, 9004)


def calibrate_scale(
    target_drift: float,
    shapes: Iterable[NoiseSpec],
    f_s: float = 1e6,
    n: int = 2**22,
    seeds: Sequence[int] = CALIBRATION_SEEDS,
    window: float = 1e-3,
    percentile: float = 95.0,
) -> float:
    """Scale factor making the summed traces of ``shapes`` drift by ``target_drift`` rad/ms.

    Every spec is generated with its own seed per calibration run and the
    traces are summed, which is how independent fibers add up in a link.
    Because traces scale linearly with ``NoiseSpec.scaled`` under a fixed
    seed, one evaluation gives the exact factor on the calibration seeds.
    """
    if not target_drift > 0:
        raise ValueError("target drift must be > 0")
    shapes = list(shapes)
    if all(s.is_zero() for s in shapes):
        raise ValueError("base shape is identically zero; nothing to scale")
    traces = []
    for run, seed in enumerate(seeds):
        total = np.zeros(n)
        for j, s in enumerate(shapes):
            total += gen_power_law(s, f_s, n, seed * 1000 + j).samples
        traces.append(PhaseTrace(total, f_s))
    measured = _drift_samples_percentile(traces, window, percentile) / (window * 1e3)
    return target_drift / measured


def default_fiber_shape() -> NoiseSpec:
    """Uncalibrated shape of the summed link fiber noise.

    A thermal-drift ``f^-3`` term plus random-sign phase steps of 2.5 ms
    (40 per second), which give the slow wander and the bursts seen in
    deployed fibers.  Only the shape matters: the scale comes from
    :func:`calibrate_fiber_spec`.
    """
    return NoiseSpec({-3: 3e4}, transients=TransientModel(40.0, 50.0, 2.5e-3))


def calibrate_fiber_spec(target_drift: float, base_shape: NoiseSpec, **kwargs) -> NoiseSpec:
    """Rescale ``base_shape`` so its 95th-percentile drift over 1 ms is ``target_drift`` rad/ms."""
    return base_shape.scaled(calibrate_scale(target_drift, [base_shape], **kwargs))
