"""Phase statistics: Welch PSD, phase deviation per frame duration, QBER."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, signal

from .noise import InsufficientDataError, PhaseTrace

# QBER levels shaded in the sigma-vs-frame plots, and the sigma where e = sigma^2/4 reaches them
QBER_THRESHOLDS = (0.005, 0.01, 0.03)


def sigma_for_qber(e: float) -> float:
    return 2.0 * math.sqrt(e)


@dataclass
class Psd:
    f: np.ndarray
    s: np.ndarray
    window: str = "hann"
    overlap: float = 0.5
    segment_length: int = 0
    n_segments: int = 0
    f_s: float = 0.0

    def band_mean(self, f_lo: float, f_hi: float) -> float:
        sel = (self.f >= f_lo) & (self.f <= f_hi)
        if not sel.any():
            raise ValueError(f"no PSD bins in [{f_lo}, {f_hi}] Hz")
        return float(np.mean(self.s[sel]))

    def integral(self, f_lo: float = 0.0, f_hi: float = math.inf) -> float:
        sel = (self.f >= f_lo) & (self.f <= f_hi)
        return float(integrate.trapezoid(self.s[sel], self.f[sel]))

    def log_binned(self, per_decade: int = 50) -> "Psd":
        """Average the PSD in logarithmically spaced frequency bins, for compact export."""
        edges = 10.0 ** (np.arange(math.floor(math.log10(self.f[0]) * per_decade),
                                   math.ceil(math.log10(self.f[-1]) * per_decade) + 2) / per_decade)
        idx = np.digitize(self.f, edges)
        counts = np.bincount(idx)
        keep = counts > 0
        f = np.bincount(idx, self.f)[keep] / counts[keep]
        s = np.bincount(idx, self.s)[keep] / counts[keep]
        return Psd(f, s, self.window, self.overlap, self.segment_length, self.n_segments, self.f_s)

    def to_csv(self, meta: dict | None = None) -> str:
        meta = dict(meta or {})
        meta.update(window=self.window, overlap=self.overlap, segment_length=self.segment_length,
                    n_segments=self.n_segments, f_s=self.f_s)
        return _csv(meta, ("frequency_hz", "psd_rad2_per_hz"), (self.f, self.s))


def _is_pow2(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


def default_segment(n: int) -> int:
    """Largest power of two not above n/8."""
    return 1 << max(1, int(math.floor(math.log2(max(n // 8, 2)))))


def welch_psd(trace: PhaseTrace, segment_length: int | None = None, overlap: float = 0.5) -> Psd:
    """One-sided Welch periodogram with a Hann window.

    The DC bin is dropped, so the grid is strictly inside ``(0, f_s/2]``.
    """
    n = len(trace)
    seg = default_segment(n) if segment_length is None else int(segment_length)
    if not _is_pow2(seg):
        raise ValueError(f"segment length must be a power of two, got {seg}")
    if seg > n:
        raise InsufficientDataError(f"segment of {seg} samples is longer than the trace ({n})")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must be in [0, 1)")
    noverlap = int(seg * overlap)
    f, s = signal.welch(trace.samples, fs=trace.f_s, window="hann", nperseg=seg,
                        noverlap=noverlap, detrend="constant", return_onesided=True,
                        scaling="density")
    n_seg = 1 + (n - seg) // (seg - noverlap)
    return Psd(f[1:], s[1:], "hann", overlap, seg, n_seg, trace.f_s)


def sigma_from_psd(psd: Psd, t_a: float, f_s: float | None = None) -> float:
    """Phase deviation over frames of ``t_a`` seconds: sqrt of the PSD integral from 1/t_a to f_s/2."""
    f_s = psd.f_s if f_s is None else f_s
    f_lo = 1.0 / t_a
    if t_a <= 2.0 / f_s:
        raise ValueError(f"t_a={t_a} s is not longer than two samples")
    if f_lo < psd.f[0] * (1 - 1e-9):
        raise ValueError(f"1/t_a={f_lo} Hz is below the lowest PSD frequency {psd.f[0]} Hz")
    f_hi = f_s / 2
    inside = (psd.f > f_lo) & (psd.f < f_hi)
    f = np.concatenate(([f_lo], psd.f[inside], [f_hi]))
    s = np.interp(f, psd.f, psd.s)
    return math.sqrt(max(integrate.trapezoid(s, f), 0.0))


def _subset_variances(x: np.ndarray, n: int) -> np.ndarray:
    i = x.size // n
    frames = x[: i * n].reshape(i, n)
    # shifting by the first sample keeps constant frames at exactly zero
    return np.var(frames - frames[:, :1], axis=1, ddof=1)


def sigma_time_domain(trace: PhaseTrace, t_a: float) -> tuple[float, int]:
    """Deviation averaged in quadrature over consecutive frames of ``t_a`` seconds.

    Frames hold ``n = round(t_a * f_s)`` samples, each with its own mean
    removed.  When ``n`` does not divide the trace, the partition aligned to
    the start and the one aligned to the end are both used and averaged, so
    the result does not depend on the direction of time.

    Returns ``(sigma, i)`` with ``i`` the number of frames in one partition.
    """
    n = int(round(t_a * trace.f_s))
    if n < 2:
        raise ValueError(f"t_a={t_a} s holds fewer than 2 samples")
    x = trace.samples
    i = x.size // n
    if i < 1:
        raise InsufficientDataError(f"t_a={t_a} s is longer than the trace ({trace.duration} s)")
    v = _subset_variances(x, n)
    if x.size % n:
        v = np.concatenate((v, _subset_variances(x[::-1], n)))
    return math.sqrt(float(np.mean(v))), i


@dataclass
class QberEstimate:
    e: float
    method: str  # small-phase | integral | counts
    sigma: float | None = None
    uncertainty: float = 0.0
    interval: tuple[float, float] | None = None

    def __post_init__(self):
        if not -1e-12 <= self.e <= 0.5 + 1e-12:
            raise ValueError(f"QBER {self.e} outside [0, 0.5]")


def qber_small_phase(sigma: float) -> QberEstimate:
    """``e = sigma^2 / 4``, valid near phi = 0."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma > 0.5:
        warnings.warn(f"sigma={sigma:.3g} rad: the sigma^2/4 approximation degrades above 0.5 rad",
                      stacklevel=2)
    return QberEstimate(min(sigma * sigma / 4.0, 0.5), "small-phase", sigma)


def qber_integral(distribution=None, *, sigma: float | None = None) -> QberEstimate:
    """Expectation of ``sin^2(phi/2)`` over a phase distribution.

    Pass either an array of phase samples or ``sigma=`` for a zero-mean
    Gaussian, which is integrated numerically.
    """
    if sigma is not None:
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        if sigma == 0:
            return QberEstimate(0.0, "integral", 0.0)
        lim = 12.0 * sigma
        pdf = lambda p: math.exp(-0.5 * (p / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
        val, err = integrate.quad(lambda p: math.sin(p / 2) ** 2 * pdf(p), -lim, lim,
                                  points=[0.0], limit=200, epsabs=1e-13, epsrel=1e-10)
        return QberEstimate(val, "integral", sigma, err)
    x = np.asarray(distribution, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("empty phase sample set")
    w = np.sin(x / 2) ** 2
    unc = float(w.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return QberEstimate(float(w.mean()), "integral", float(x.std()), unc)


@dataclass
class SigmaCurve:
    t_a: np.ndarray
    sigma: np.ndarray
    subsets: np.ndarray
    crossings: dict = field(default_factory=dict)

    @property
    def low_confidence(self) -> np.ndarray:
        return self.subsets < 4

    def at(self, t_a: float) -> float:
        k = int(np.argmin(np.abs(np.log(self.t_a / t_a))))
        return float(self.sigma[k])

    def first_crossing(self, level: float) -> float | None:
        return _first_crossing(self.t_a, self.sigma, level)

    def to_csv(self, meta: dict | None = None) -> str:
        return _csv(meta or {}, ("t_a_s", "sigma_rad", "subsets", "low_confidence"),
                    (self.t_a, self.sigma, self.subsets, self.low_confidence.astype(int)))


def _first_crossing(t: np.ndarray, y: np.ndarray, level: float) -> float | None:
    above = np.nonzero(y >= level)[0]
    if above.size == 0:
        return None
    k = int(above[0])
    if k == 0:
        return float(t[0])
    # log-log interpolation between the bracketing grid points
    y0, y1 = y[k - 1], y[k]
    if y0 <= 0:
        return float(t[k])
    frac = math.log(level / y0) / math.log(y1 / y0)
    return float(math.exp(math.log(t[k - 1]) + frac * math.log(t[k] / t[k - 1])))


def default_ta_grid(f_s: float, duration: float, per_decade: int = 5, min_subsets: int = 1) -> np.ndarray:
    lo = math.log10(2.0 / f_s)
    hi = math.log10(duration / min_subsets)
    exps = np.arange(math.ceil(lo * per_decade), math.floor(hi * per_decade) + 1) / per_decade
    return 10.0**exps


def sigma_curve(trace: PhaseTrace, t_a_grid: Sequence[float] | None = None) -> SigmaCurve:
    grid = default_ta_grid(trace.f_s, trace.duration) if t_a_grid is None else np.asarray(t_a_grid, float)
    grid = np.sort(grid)
    sig, cnt = zip(*(sigma_time_domain(trace, t) for t in grid))
    sig, cnt = np.array(sig), np.array(cnt)
    crossings = {e: _first_crossing(grid, sig, sigma_for_qber(e)) for e in QBER_THRESHOLDS}
    return SigmaCurve(grid, sig, cnt, crossings)


def _csv(meta: dict, header: Sequence[str], columns: Sequence[np.ndarray]) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    buf.write(",".join(header) + "\n")
    cols = [np.asarray(c) for c in columns]
    for row in zip(*cols):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return f"{float(v):.10g}"
