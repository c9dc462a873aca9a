import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles as O
from phaselink.analysis import sigma_time_domain
from phaselink.detect import (
    BackgroundModel, CountRecord, InsufficientStatisticsError, PhotodiodeConfig, SpdConfig,
    apply_dead_time, background_budget, photodiode_acquire, qber_from_counts, spd_detect,
)
from phaselink.interference import InterferencePattern, intensity, port_fluxes, retrieve_phase
from phaselink.noise import NoiseSpec, PhaseTrace, gen_power_law

NO_BG = BackgroundModel(0.0, 0.0, 0.0)
# seeds for the statistical checks, fixed so the suite is reproducible
POISSON_SEEDS = (101, 102, 103)


# photodiode


def test_photodiode_identity():
    pat = intensity(gen_power_law(NoiseSpec({0: 1e-6}), 1e6, 1024, 1), math.pi / 2)
    out = photodiode_acquire(pat, PhotodiodeConfig())
    np.testing.assert_array_equal(out.samples, pat.samples)


def test_photodiode_passes_dc():
    pat = InterferencePattern(np.full(4096, 0.37), 1e6)
    out = photodiode_acquire(pat, PhotodiodeConfig(bandwidth=1e4))
    assert np.mean(out.samples) == pytest.approx(0.37, abs=1e-12)


def test_slow_photodiode_underestimates_sigma():
    f_s = 5e6
    x = gen_power_law(NoiseSpec({0: 0.1**2 / 1e6}), f_s, 2**20, 2).samples
    # keep the noise below 1 MHz
    spec = np.fft.rfft(x)
    spec[np.fft.rfftfreq(x.size, 1 / f_s) > 1e6] = 0
    phase = PhaseTrace(np.fft.irfft(spec, x.size), f_s)
    pat = intensity(phase, math.pi / 2)
    fast = retrieve_phase(pat)
    slow = retrieve_phase(photodiode_acquire(pat, PhotodiodeConfig(bandwidth=1e5)))
    s_fast, _ = sigma_time_domain(fast, 1e-3)
    s_slow, _ = sigma_time_domain(slow, 1e-3)
    assert s_slow < 0.7 * s_fast


def test_photodiode_resample_and_noise():
    pat = InterferencePattern(np.full(1000, 0.5), 1e6)
    out = photodiode_acquire(pat, PhotodiodeConfig(bandwidth=1e5, sample_rate=2.5e5, noise_rms=0.01), seed=3)
    assert out.f_s == 2.5e5 and len(out) == 250
    assert np.std(out.samples) == pytest.approx(0.01, rel=0.2)


def test_photodiode_config_checks():
    with pytest.raises(ValueError):
        PhotodiodeConfig(sample_rate=0.0)
    with pytest.warns(UserWarning):
        photodiode_acquire(InterferencePattern(np.full(100, 0.5), 1e6),
                           PhotodiodeConfig(bandwidth=2e6, sample_rate=1e6))


# single-photon detectors


def test_empty_without_light():
    rec = spd_detect(0.0, SpdConfig(dark_rate=0.0), NO_BG, seed=1, duration=100.0)
    assert len(rec) == 0


def test_dead_time_formula():
    r, tau = 1e4, 25e-6
    rec = spd_detect(r, SpdConfig(efficiency=1.0, dead_time=tau, dark_rate=0.0), NO_BG, seed=2, duration=100.0)
    assert rec.rate == pytest.approx(O.DEAD_TIME_RATE, rel=0.02)
    assert rec.rate == pytest.approx(r / (1 + r * tau), rel=0.02)


def test_lasers_off_background_24h():
    rec = spd_detect(0.0, SpdConfig(), BackgroundModel(raman=0.0), seed=3, duration=86400.0)
    assert rec.rate == pytest.approx(O.BACKGROUND_LASERS_OFF, abs=0.1)


@pytest.mark.parametrize("seed", POISSON_SEEDS)
def test_counts_are_poisson(seed):
    rec = spd_detect(20.0, SpdConfig(efficiency=1.0, dark_rate=0.0), NO_BG, seed=seed, duration=1000.0)
    counts = rec.binned(1.0)
    assert counts.size == 1000
    lam = counts.mean()
    ks = np.arange(counts.max() + 1)
    expected = stats.poisson.pmf(ks, lam) * counts.size
    observed = np.bincount(counts, minlength=ks.size).astype(float)
    # pool sparse tails so every expected cell holds at least 5
    keep = expected >= 5
    lo, hi = np.argmax(keep), len(keep) - np.argmax(keep[::-1]) - 1
    obs = np.r_[observed[:lo].sum() + observed[lo], observed[lo + 1 : hi], observed[hi:].sum()]
    exp = np.r_[expected[:lo].sum() + expected[lo], expected[lo + 1 : hi],
                counts.size - expected[: hi].sum()]
    _, p = stats.chisquare(obs, exp, ddof=1)
    assert p > 0.01


def test_rate_monotone_in_true_rate_and_dead_time():
    spd = SpdConfig(efficiency=1.0, dark_rate=0.0)
    rates = [spd_detect(r, spd, NO_BG, 5, duration=2.0).rate for r in (1e3, 1e4, 1e5, 1e6)]
    assert rates == sorted(rates)
    by_tau = [spd_detect(1e5, SpdConfig(efficiency=1.0, dead_time=t, dark_rate=0.0), NO_BG, 5, duration=2.0).rate
              for t in (2e-6, 10e-6, 25e-6, 100e-6)]
    assert by_tau == sorted(by_tau, reverse=True)


def test_efficiency_linear_at_low_rate():
    # R tau stays below 3e-3 so dead-time losses do not bend the ratio
    a = spd_detect(1e3, SpdConfig(efficiency=0.05, dark_rate=0.0), NO_BG, 6, duration=4000.0).rate
    b = spd_detect(1e3, SpdConfig(efficiency=0.10, dark_rate=0.0), NO_BG, 6, duration=4000.0).rate
    assert b / a == pytest.approx(2.0, rel=0.01)


def test_deterministic_per_seed():
    flux = PhaseTrace(np.linspace(0, 1e4, 1000), 1e3)
    a = spd_detect(flux, SpdConfig(jitter=1e-9), seed=7)
    b = spd_detect(flux, SpdConfig(jitter=1e-9), seed=7)
    assert a.timestamps.tobytes() == b.timestamps.tobytes()


@given(st.floats(1.0, 1e5), st.floats(0.0, 1e-4), st.floats(0.0, 1e-6), st.integers(0, 1000))
def test_record_invariants(rate, tau, jitter, seed):
    rec = spd_detect(rate, SpdConfig(efficiency=1.0, dead_time=tau, jitter=jitter), seed=seed, duration=0.05)
    t = rec.timestamps
    assert np.all(np.diff(t) >= 0)
    if tau > 0 and t.size > 1:
        assert np.diff(t).min() >= tau * (1 - 1e-12)


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        spd_detect(PhaseTrace(np.array([1.0, -1.0]), 1.0), SpdConfig())
    with pytest.raises(ValueError):
        spd_detect(5.0, SpdConfig())  # constant rate needs a duration


def test_device_profile_dead_time_range():
    assert SpdConfig.adjustable_ingaas(2e-6).dead_time == 2e-6
    with pytest.raises(ValueError):
        SpdConfig.adjustable_ingaas(1e-6)
    with pytest.raises(ValueError):
        SpdConfig.adjustable_ingaas(200e-6)
    SpdConfig(dead_time=1e-3)  # the generic config is unrestricted


def test_apply_dead_time_below_float_spacing():
    t = np.array([1.0, 1.0, 2.0])
    np.testing.assert_array_equal(apply_dead_time(t, 1e-300), t)


def test_apply_dead_time_non_paralyzable():
    t = np.array([0.0, 0.5, 0.9, 1.1, 1.2, 2.0])
    np.testing.assert_array_equal(apply_dead_time(t, 1.0), [0.0, 1.1])


def test_csv_on_timing_grid():
    rec = CountRecord(np.array([1e-9, 2.5e-6]), np.array([0, 1]), 1.0)
    lines = rec.to_csv({"seed": 4}).splitlines()
    assert lines[-2].startswith("7,") and lines[-1].startswith("16667,")
    assert "timing_grid_s: 1.5e-10" in "\n".join(lines)


# budgets and QBER


def test_background_budget_24h():
    rows = {r.source: r for r in background_budget(BackgroundModel(), SpdConfig(), 86400.0)}
    assert rows["total"].rate == pytest.approx(O.BACKGROUND_TOTAL, abs=1e-12)
    assert rows["total"].uncertainty == pytest.approx(O.BACKGROUND_TOTAL_UNC_24H, rel=1e-9)
    assert rows["lasers off"].rate == pytest.approx(O.BACKGROUND_LASERS_OFF, abs=1e-12)


def test_background_budget_raman_additive():
    a = {r.source: r.rate for r in background_budget(BackgroundModel(), SpdConfig(), 10.0)}
    b = {r.source: r.rate for r in background_budget(BackgroundModel(raman=0.66), SpdConfig(), 10.0)}
    assert b["total"] - a["total"] == pytest.approx(0.33, abs=1e-12)


def test_background_budget_rejects_zero_duration():
    with pytest.raises(ValueError):
        background_budget(BackgroundModel(), SpdConfig(), 0.0)


def _rec(n, det):
    return CountRecord(np.linspace(0, 1, n, endpoint=False), np.full(n, det), 1.0)


def test_qber_from_counts_ratio():
    assert qber_from_counts(_rec(1000, 0), _rec(0, 1)).e == 0.0
    q = qber_from_counts(_rec(990, 0), _rec(10, 1))
    assert q.e == pytest.approx(0.01)
    assert q.interval[0] < 0.01 < q.interval[1]
    assert qber_from_counts(_rec(10, 0), _rec(990, 1), bright="d1").e == pytest.approx(0.01)


def test_qber_from_counts_errors():
    with pytest.raises(InsufficientStatisticsError):
        qber_from_counts(_rec(0, 0), _rec(0, 1))
    with pytest.raises(ValueError):
        qber_from_counts(_rec(5, 0), CountRecord(np.zeros(1), np.ones(1), 2.0))


def test_qber_from_simulated_counts_gaussian_013():
    rng = np.random.default_rng(8)
    f_s = 1e5
    phase = PhaseTrace(rng.normal(0.0, 0.13, int(12 * f_s)), f_s)
    d0, d1 = port_fluxes(intensity(phase, 0.0), 1e5)
    spd = SpdConfig(efficiency=0.1, dead_time=2e-6, dark_rate=0.0)
    r0 = spd_detect(d0, spd, NO_BG, seed=9, detector=0)
    r1 = spd_detect(d1, spd, NO_BG, seed=10, detector=1)
    assert len(r0) + len(r1) >= 1e5
    q = qber_from_counts(r0, r1)
    assert q.e == pytest.approx(O.GAUSSIAN_QBER[0.13], abs=0.001)
