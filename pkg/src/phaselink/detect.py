"""Acquisition chain: photodiode sampling and free-running single-photon detection."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .analysis import QberEstimate, _csv
from .constants import TIMING_GRID
from .interference import InterferencePattern
from .noise import PhaseTrace, make_rng


class InsufficientStatisticsError(ValueError):
    """No counts to estimate from."""


@dataclass(frozen=True)
class PhotodiodeConfig:
    bandwidth: float = math.inf  # Hz, first-order analog response
    sample_rate: float | None = None  # Hz; None keeps the input rate
    noise_rms: float = 0.0  # normalized-intensity units

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("photodiode bandwidth must be > 0")
        if self.sample_rate is not None and not self.sample_rate > 0:
            raise ValueError("photodiode sample rate must be > 0")
        if self.noise_rms < 0:
            raise ValueError("noise RMS must be >= 0")


def photodiode_acquire(pattern: InterferencePattern, config: PhotodiodeConfig, seed: int = 0) -> InterferencePattern:
    """Low-pass, resample and add white measurement noise to a pattern."""
    rate = pattern.f_s if config.sample_rate is None else config.sample_rate
    # an ideal detector read at the native rate passes samples through untouched
    if rate < 2 * config.bandwidth and not (math.isinf(config.bandwidth) and config.sample_rate is None):
        warnings.warn(
            f"sampling at {rate:g} Hz undersamples a {config.bandwidth:g} Hz detector bandwidth",
            stacklevel=2,
        )
    x = pattern.samples
    if math.isfinite(config.bandwidth):
        # impulse-invariant one-pole filter, started in steady state on the first sample
        a = math.exp(-2 * math.pi * config.bandwidth / pattern.f_s)
        x, _ = signal.lfilter([1 - a], [1, -a], x, zi=[a * x[0]])
    if rate != pattern.f_s:
        t_in = np.arange(x.size) / pattern.f_s
        t_out = np.arange(0.0, t_in[-1], 1.0 / rate)
        x = np.interp(t_out, t_in, x)
    if config.noise_rms:
        x = x + config.noise_rms * make_rng(seed).standard_normal(x.size)
    return InterferencePattern(x, rate, pattern.phi0, pattern.t0, pattern.visibility)


@dataclass(frozen=True)
class SpdConfig:
    efficiency: float = 0.10
    dead_time: float = 25e-6  # s
    dark_rate: float = 4.52  # 1/s
    jitter: float = 0.0  # s, Gaussian sigma

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must be in [0, 1]")
        if self.dead_time < 0 or self.dark_rate < 0 or self.jitter < 0:
            raise ValueError("dead time, dark rate and jitter must be >= 0")

    @classmethod
    def adjustable_ingaas(cls, dead_time: float = 25e-6, **kw) -> "SpdConfig":
        """Free-running InGaAs/InP profile whose dead time is adjustable from 2 to 100 us."""
        if not 2e-6 <= dead_time <= 100e-6:
            raise ValueError("dead time must be within [2 us, 100 us] for this detector")
        return cls(dead_time=dead_time, **kw)


@dataclass(frozen=True)
class BackgroundModel:
    """Detected background count rates (1/s) that do not depend on the QKD signal."""

    raman: float = 0.33  # sensing-laser Raman in the QKD fiber
    rayleigh: float = 0.0  # reference-laser Rayleigh coupled from the service fiber
    external: float = 0.24  # neighbouring fibers, environment

    def __post_init__(self):
        if min(self.raman, self.rayleigh, self.external) < 0:
            raise ValueError("background rates must be >= 0")

    @property
    def total(self) -> float:
        return self.raman + self.rayleigh + self.external


@dataclass
class CountRecord:
    timestamps: np.ndarray
    detectors: np.ndarray
    duration: float

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.detectors = np.asarray(self.detectors, dtype=np.int8)
        if self.detectors.shape != self.timestamps.shape:
            raise ValueError("one detector tag per timestamp")

    def __len__(self) -> int:
        return self.timestamps.size

    @property
    def rate(self) -> float:
        return self.timestamps.size / self.duration

    def count(self, detector: int | None = None) -> int:
        if detector is None:
            return int(self.timestamps.size)
        return int(np.count_nonzero(self.detectors == detector))

    def binned(self, width: float) -> np.ndarray:
        edges = np.arange(0.0, self.duration + 0.5 * width, width)
        return np.histogram(self.timestamps, edges)[0]

    def merged(self, other: "CountRecord") -> "CountRecord":
        t = np.concatenate((self.timestamps, other.timestamps))
        d = np.concatenate((self.detectors, other.detectors))
        order = np.argsort(t, kind="stable")
        return CountRecord(t[order], d[order], max(self.duration, other.duration))

    def to_csv(self, meta: dict | None = None) -> str:
        ticks = np.round(self.timestamps / TIMING_GRID).astype(np.int64)
        meta = dict(meta or {}, timing_grid_s=TIMING_GRID, duration_s=self.duration)
        return _csv(meta, ("tick", "time_s", "detector"), (ticks, ticks * TIMING_GRID, self.detectors))


def apply_dead_time(timestamps: np.ndarray, dead_time: float) -> np.ndarray:
    """Non-paralyzable dead time: drop events within ``dead_time`` of the last kept one."""
    t = np.asarray(timestamps, dtype=float)
    if dead_time <= 0 or t.size == 0:
        return t
    keep = []
    i = 0
    n = t.size
    while i < n:
        keep.append(i)
        # max() guards dead times below the float spacing of t[i]
        i = max(i + 1, int(np.searchsorted(t, t[i] + dead_time, side="left")))
    return t[keep]


def spd_detect(
    photon_rate,
    spd: SpdConfig,
    bg: BackgroundModel = BackgroundModel(),
    seed: int = 0,
    *,
    duration: float | None = None,
    detector: int = 0,
) -> CountRecord:
    """Click times of one free-running detector.

    ``photon_rate`` is the incident photon flux (1/s): either a constant or
    a :class:`PhaseTrace` of flux samples, taken as piecewise constant over
    each sample.  Clicks are drawn as an inhomogeneous Poisson process at
    ``efficiency * flux + background + dark``, blurred by the
    timing jitter and thinned by the non-paralyzable dead time.
    """
    rng = make_rng(seed)
    if isinstance(photon_rate, PhaseTrace):
        r = photon_rate.samples
        dt = 1.0 / photon_rate.f_s
        total_duration = photon_rate.duration
    else:
        if duration is None or not duration > 0:
            raise ValueError("a constant photon rate needs a positive duration")
        r = np.array([float(photon_rate)])
        dt = total_duration = float(duration)
    if np.any(r < 0):
        raise ValueError("photon rate must be non-negative")

    lam = spd.efficiency * r + bg.total + spd.dark_rate
    counts = rng.poisson(lam * dt)
    starts = np.repeat(np.arange(r.size) * dt, counts)
    t = starts + rng.uniform(0.0, dt, starts.size)
    if spd.jitter > 0:
        t = t + rng.normal(0.0, spd.jitter, t.size)
    # the dead time acts on the registered (jittered) click times
    t = apply_dead_time(np.sort(t), spd.dead_time)
    return CountRecord(t, np.full(t.size, detector, dtype=np.int8), total_duration)


@dataclass(frozen=True)
class BudgetLine:
    source: str
    rate: float
    uncertainty: float


def background_budget(bg: BackgroundModel, spd: SpdConfig, duration: float) -> list[BudgetLine]:
    """Expected count rate per background source with its Poisson uncertainty over ``duration``."""
    if not duration > 0:
        raise ValueError("duration must be > 0")

    def line(name, rate):
        return BudgetLine(name, rate, math.sqrt(rate * duration) / duration)

    rows = [
        line("dark", spd.dark_rate),
        line("external", bg.external),
        line("rayleigh", bg.rayleigh),
        line("raman", bg.raman),
        line("lasers off", spd.dark_rate + bg.external),
        line("total", spd.dark_rate + bg.total),
    ]
    return rows


def wilson_interval(k: int, n: int, z: float = 1.0) -> tuple[float, float]:
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, centre - half), min(1.0, centre + half)


def qber_from_counts(record_d0: CountRecord, record_d1: CountRecord, bright: str = "d0") -> QberEstimate:
    """Fraction of clicks on the detector that should stay dark at the operating point."""
    if not math.isclose(record_d0.duration, record_d1.duration, rel_tol=1e-9):
        raise ValueError("records cover different durations")
    n0, n1 = len(record_d0), len(record_d1)
    if bright not in ("d0", "d1"):
        raise ValueError("bright must be 'd0' or 'd1'")
    right, wrong = (n0, n1) if bright == "d0" else (n1, n0)
    n = right + wrong
    if n == 0:
        raise InsufficientStatisticsError("no counts on either detector")
    lo, hi = wilson_interval(wrong, n)
    e = wrong / n
    return QberEstimate(min(e, 0.5), "counts", None, 0.5 * (hi - lo), (lo, hi))
