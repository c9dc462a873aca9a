"""Normalized two-beam interference and its inversion back to phase.

The normalized pattern is ``I = (1 + V cos(phi + phi0)) / 2``, which for unit
contrast is ``cos^2((phi + phi0)/2)``.  Inverting it only recovers the phase
folded into ``[0, pi]``; nothing here unwraps it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import PhaseTrace

CLAMP_TOLERANCE = 1e-3


class CalibrationError(ValueError):
    """Normalized intensity too far outside [0, 1] to be a clamping artifact."""


@dataclass
class InterferencePattern:
    samples: np.ndarray
    f_s: float
    phi0: float = 0.0
    t0: float = 0.0
    visibility: float = 1.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not self.f_s > 0:
            raise ValueError("sample rate must be > 0")

    def __len__(self):
        return self.samples.size

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.f_s

    def to_csv(self, meta: dict | None = None, decimate: int = 1, limit: int | None = None) -> str:
        from .analysis import _csv

        sl = slice(0, limit, decimate)
        return _csv(meta or {}, ("time_s", "intensity"), (self.times()[sl], self.samples[sl]))


def intensity(phase: PhaseTrace, phi0: float = 0.0, visibility: float = 1.0) -> InterferencePattern:
    """Normalized pattern for a differential-phase trace at operating point ``phi0``.

    ``phi0 = 0`` puts the bright fringe on D0 (dark-port operation);
    ``phi0 = pi/2`` is the quadrature point where phase maps linearly to intensity.
    """
    if not 0 < visibility <= 1:
        raise ValueError("visibility must be in (0, 1]")
    x = phase.samples + phi0
    if visibility == 1.0:
        s = np.cos(0.5 * x) ** 2
    else:
        s = 0.5 * (1.0 + visibility * np.cos(x))
    return InterferencePattern(s, phase.f_s, phi0, phase.t0, visibility)


def retrieve_phase(pattern: InterferencePattern) -> PhaseTrace:
    """Phase in ``[0, pi]`` from the normalized pattern: ``2 arccos(sqrt(I))`` at unit contrast."""
    s = pattern.samples
    lo, hi = s.min(initial=0.0), s.max(initial=1.0)
    if lo < -CLAMP_TOLERANCE or hi > 1 + CLAMP_TOLERANCE:
        raise CalibrationError(f"normalized intensity spans [{lo:.4g}, {hi:.4g}], beyond the clamp tolerance")
    c = (2.0 * np.clip(s, 0.0, 1.0) - 1.0) / pattern.visibility
    phi = 2.0 * np.arccos(np.sqrt(0.5 * (1.0 + np.clip(c, -1.0, 1.0))))
    return PhaseTrace(phi, pattern.f_s, pattern.t0, "retrieved")


def attenuate(rate, db: float):
    """Photon rate after ``db`` decibels of attenuation (scalars or arrays)."""
    if db < 0:
        raise ValueError("attenuation must be >= 0 dB")
    factor = 10.0 ** (-db / 10.0)
    if np.ndim(rate):
        return np.asarray(rate, dtype=float) * factor
    return float(rate) * factor


def port_fluxes(pattern: InterferencePattern, source_rate: float, db: float = 0.0) -> tuple[PhaseTrace, PhaseTrace]:
    """Photon flux (1/s) on D0 and D1 for a combined source rate ``source_rate`` before attenuation."""
    r = attenuate(source_rate, db)
    d0 = PhaseTrace(r * pattern.samples, pattern.f_s, pattern.t0, "flux D0")
    d1 = PhaseTrace(r * (1.0 - pattern.samples), pattern.f_s, pattern.t0, "flux D1")
    return d0, d1
