"""Scenario files: schema, defaults, hashing and the end-to-end runner.

A scenario is one JSON document.  Missing sections take the defaults in
:data:`DEFAULTS`, and the merged document is what gets validated, hashed and
run, so spelling out a default value leaves the hash unchanged.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from .analysis import (
    default_ta_grid, qber_integral, qber_small_phase, sigma_curve, welch_psd,
)
from .control import (
    LaserLockConfig, LaserSet, LoopConfig, closed_loop_run, derive_seed, simulate_noise,
)
from .detect import (
    BackgroundModel, PhotodiodeConfig, SpdConfig, background_budget, qber_from_counts, spd_detect,
)
from .interference import intensity, port_fluxes, retrieve_phase
from .link import FiberSpan, LinkTopology, WavelengthPlan, loss_budget, timing_skew
from .noise import NoiseSpec, PhaseTrace, calibrate_scale

SPAN_NAMES = ("service_alice", "qkd_alice", "service_bob", "qkd_bob")


class ScenarioError(ValueError):
    """The scenario file is unreadable, fails the schema or describes an invalid link."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_NOISE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "coefficients": {
            "type": "object",
            "patternProperties": {r"^-?[0-4]$": _NONNEG},
            "additionalProperties": False,
        },
        "tones": {"type": "array", "items": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}},
        "transients": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["rate", "amplitude", "duration"],
            "properties": {"rate": _NONNEG, "amplitude": _NUM, "duration": _POS},
        },
    },
}
_SPAN = {
    "type": "object",
    "additionalProperties": False,
    "required": ["length", "loss"],
    "properties": {"length": _NONNEG, "loss": _NONNEG, "noise": _NOISE},
}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "additionalProperties": False, "properties": props, "required": list(required)}


SCHEMA = _obj({
    "name": {"type": "string"},
    "description": {"type": "string"},
    "seed": {"type": "integer", "minimum": 0},
    "sample_rate": _POS,
    "duration": _POS,
    "topology": _obj({
        "spans": _obj({k: _SPAN for k in SPAN_NAMES}, SPAN_NAMES),
        "wavelengths": _obj({"nu_r": _POS, "nu_s": _POS}),
        "uncommon": _obj({"alice": {"oneOf": [_NOISE, {"type": "null"}]},
                          "bob": {"oneOf": [_NOISE, {"type": "null"}]}}),
    }, ["spans"]),
    "fiber_noise": _obj({
        "drift_target": {"oneOf": [_POS, {"type": "null"}]},
        "window": _POS,
        "calibration_rate": _POS,
        "calibration_samples": {"type": "integer", "minimum": 2},
    }),
    "lasers": _obj({
        "reference_linewidth": _NONNEG, "sensing_linewidth": _NONNEG,
        "qkd_linewidth": _NONNEG, "offset_locked": {"type": "boolean"},
    }),
    "loops": _obj({
        "fiber": _obj({
            "enabled": {"type": "boolean"}, "bandwidth": _POS, "kind": {"enum": ["PI", "PID"]},
            "latency": _NONNEG, "base_delay": {"type": "integer", "minimum": 1}, "prescale": _POS,
            "integral_corner": _NONNEG, "derivative_corner": _POS, "gain_scale": _POS,
            "slew_limit": {"oneOf": [_POS, {"type": "null"}]},
            "range_limit": {"oneOf": [_POS, {"type": "null"}]},
        }),
        "laser_lock": _obj({"bandwidth": _POS, "kind": {"enum": ["PI", "PID"]}}),
    }),
    "nu_mismatch": {"type": "boolean"},
    "interference": _obj({"phi0": _NUM, "visibility": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}),
    "photodiode": _obj({
        "bandwidth": {"oneOf": [_POS, {"type": "null"}]},
        "sample_rate": {"oneOf": [_POS, {"type": "null"}]},
        "noise_rms": _NONNEG,
    }),
    "photon_counting": _obj({
        "enabled": {"type": "boolean"}, "source_rate": _NONNEG,
        "attenuation_db": _NONNEG, "bright": {"enum": ["d0", "d1"]},
    }),
    "detector": _obj({"efficiency": {"type": "number", "minimum": 0, "maximum": 1},
                      "dead_time": _NONNEG, "dark_rate": _NONNEG, "jitter": _NONNEG}),
    "background": _obj({"raman": _NONNEG, "rayleigh": _NONNEG, "external": _NONNEG}),
    "analysis": _obj({
        "ta_grid": {"oneOf": [{"type": "array", "items": _POS, "minItems": 1}, {"type": "null"}]},
        "per_decade": {"type": "integer", "minimum": 1},
        "key_ta": {"type": "array", "items": _POS},
        "qber_ta": _POS,
        "welch_segment": {"oneOf": [{"type": "integer", "minimum": 2}, {"type": "null"}]},
        "psd_bands": {"type": "array", "items": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2}},
        "suppression_band": {"type": "array", "items": _NONNEG, "minItems": 2, "maxItems": 2},
    }),
    "outputs": _obj({
        "pattern_window": _NONNEG,
        "decimated_rate": _POS,
        "phase_trace": {"type": "boolean"},
        "psd_per_decade": {"type": "integer", "minimum": 1},
    }),
}, ["topology"])

DEFAULTS: dict = {
    "seed": 0,
    "sample_rate": 5e6,
    "duration": 4.0,
    "topology": {
        "wavelengths": {"nu_r": 194.4e12, "nu_s": 194.25e12},
        "uncommon": {"alice": None, "bob": None},
    },
    "fiber_noise": {"drift_target": None, "window": 1e-3, "calibration_rate": 1e6, "calibration_samples": 2**22},
    "lasers": {"reference_linewidth": 1.0, "sensing_linewidth": 1.0, "qkd_linewidth": 20e3, "offset_locked": True},
    "loops": {
        "fiber": {"enabled": True, "bandwidth": 50e3, "kind": "PI", "latency": 0.0, "base_delay": 2,
                  "prescale": 0.1, "integral_corner": 0.1, "derivative_corner": 3.0, "gain_scale": 1.0,
                  "slew_limit": None, "range_limit": None},
        "laser_lock": {"bandwidth": 0.9e6, "kind": "PID"},
    },
    "nu_mismatch": True,
    "interference": {"phi0": math.pi / 2, "visibility": 1.0},
    "photodiode": {"bandwidth": None, "sample_rate": None, "noise_rms": 0.0},
    "photon_counting": {"enabled": False, "source_rate": 1e9, "attenuation_db": 65.0, "bright": "d0"},
    "detector": {"efficiency": 0.10, "dead_time": 25e-6, "dark_rate": 4.52, "jitter": 0.0},
    "background": {"raman": 0.33, "rayleigh": 0.0, "external": 0.24},
    "analysis": {
        "ta_grid": None, "per_decade": 5,
        "key_ta": [1e-4, 1e-3, 1e-2, 1e-1, 1.0],
        "qber_ta": 1e-2,
        "welch_segment": None,
        "psd_bands": [[1, 10], [10, 100], [100, 1e3], [1e3, 5e3], [5e3, 5e4], [5e4, 5e5]],
        "suppression_band": [0, 5e3],
    },
    "outputs": {"pattern_window": 2e-3, "decimated_rate": 1e4, "phase_trace": True, "psd_per_decade": 50},
}

# excluded from the hash: labels that do not change any output value
_UNHASHED = ("name", "description")


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict) and k not in ("coefficients",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def apply_overrides(doc: dict, overrides: Mapping[str, Any] | None) -> dict:
    """Set dotted-path keys, e.g. ``{"loops.fiber.enabled": False, "seed": 3}``."""
    doc = copy.deepcopy(doc)
    for path, value in (overrides or {}).items():
        node = doc
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"{path}: '{k}' is not a section")
        node[keys[-1]] = value
    return doc


def _canonical(x):
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, float):
        return int(x) if x.is_integer() and abs(x) < 2**53 else x
    if isinstance(x, int):
        return x
    if isinstance(x, Mapping):
        return {str(k): _canonical(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_canonical(v) for v in x]
    raise TypeError(f"unsupported value {x!r}")


def scenario_hash(doc: Mapping) -> str:
    """sha256 of the merged scenario in canonical JSON, labels excluded."""
    body = {k: v for k, v in doc.items() if k not in _UNHASHED}
    text = json.dumps(_canonical(body), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _path(err: jsonschema.ValidationError) -> str:
    # dotted, the same form --set takes
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


@dataclass
class Scenario:
    doc: dict
    name: str
    hash: str
    seed: int
    f_s: float
    duration: float
    topology: LinkTopology
    drift_target: float | None
    lasers: LaserSet
    fiber_loop: LoopConfig
    laser_lock: LaserLockConfig
    photodiode: PhotodiodeConfig
    spd: SpdConfig
    background: BackgroundModel
    source: str = ""

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.f_s))


def _noise(d) -> NoiseSpec | None:
    return None if d is None else NoiseSpec.from_dict(d)


def parse_scenario(raw: Mapping, overrides: Mapping[str, Any] | None = None, source: str = "") -> Scenario:
    """Merge defaults, apply overrides, validate and build the module configs."""
    doc = apply_overrides(_merge(DEFAULTS, raw), overrides)
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ScenarioError("; ".join(f"{_path(e)}: {e.message}" for e in errors))
    try:
        return _build(doc, source)
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(str(exc)) from exc


def _build(doc: dict, source: str) -> Scenario:
    f_s = float(doc["sample_rate"])
    topo_d = doc["topology"]
    spans = {}
    for name in SPAN_NAMES:
        s = topo_d["spans"][name]
        role, arm = name.split("_")
        spans[name] = FiberSpan(float(s["length"]), float(s["loss"]), _noise(s.get("noise")) or NoiseSpec(), role, arm)
    topology = LinkTopology(
        **spans,
        plan=WavelengthPlan(**topo_d["wavelengths"]),
        uncommon_alice=_noise(topo_d["uncommon"]["alice"]),
        uncommon_bob=_noise(topo_d["uncommon"]["bob"]),
    )
    pd = doc["photodiode"]
    photodiode = PhotodiodeConfig(
        math.inf if pd["bandwidth"] is None else pd["bandwidth"], pd["sample_rate"], pd["noise_rms"]
    )
    # measurement bandwidth: every noise feature must be resolvable at f_s
    tones = [t.frequency for sp in topology.spans().values() for t in sp.noise.tones]
    for u in (topology.uncommon_alice, topology.uncommon_bob):
        if u is not None:
            tones += [t.frequency for t in u.tones]
    widest = max(tones + ([photodiode.bandwidth] if math.isfinite(photodiode.bandwidth) else []), default=0.0)
    if f_s < 2 * widest:
        raise ScenarioError(f"sample_rate: {f_s:g} Hz is below twice the widest noise feature ({widest:g} Hz)")
    if int(round(doc["duration"] * f_s)) < 16:
        raise ScenarioError("duration: fewer than 16 samples")

    fl = doc["loops"]["fiber"]
    fiber_loop = LoopConfig(f_s=f_s, **fl)
    laser_lock = LaserLockConfig(**doc["loops"]["laser_lock"])
    if laser_lock.bandwidth >= f_s / 2:
        raise ScenarioError(f"loops/laser_lock/bandwidth: {laser_lock.bandwidth:g} Hz is not below Nyquist")
    return Scenario(
        doc=doc,
        name=doc.get("name", Path(source).stem if source else "scenario"),
        hash=scenario_hash(doc),
        seed=int(doc["seed"]),
        f_s=f_s,
        duration=float(doc["duration"]),
        topology=topology,
        drift_target=doc["fiber_noise"]["drift_target"],
        lasers=LaserSet(**doc["lasers"]),
        fiber_loop=fiber_loop,
        laser_lock=laser_lock,
        photodiode=photodiode,
        spd=SpdConfig(**doc["detector"]),
        background=BackgroundModel(**doc["background"]),
        source=source,
    )


def load_scenario(path, overrides: Mapping[str, Any] | None = None) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    return parse_scenario(raw, overrides, str(path))


def shipped_scenario(name: str) -> Path:
    """Path of a scenario bundled with the package, e.g. ``"paper-stabilized"``."""
    p = Path(str(resources.files("phaselink") / "scenarios" / f"{name}.scenario"))
    if not p.exists():
        raise ScenarioError(f"no shipped scenario named {name!r}")
    return p


def shipped_scenarios() -> list[str]:
    d = Path(str(resources.files("phaselink") / "scenarios"))
    return sorted(p.stem for p in d.glob("*.scenario"))


def calibrated_topology(sc: Scenario) -> tuple[LinkTopology, float]:
    """Scale every span's noise so the summed fiber noise drifts at the target rate."""
    if sc.drift_target is None:
        return sc.topology, 1.0
    fn = sc.doc["fiber_noise"]
    specs = [sp.noise for sp in sc.topology.spans().values()]
    c = calibrate_scale(sc.drift_target, specs, f_s=fn["calibration_rate"],
                        n=fn["calibration_samples"], window=fn["window"])
    spans = {k: FiberSpan(sp.length, sp.loss, sp.noise.scaled(c), sp.role, sp.arm)
             for k, sp in sc.topology.spans().items()}
    t = sc.topology
    return LinkTopology(**spans, plan=t.plan, uncommon_alice=t.uncommon_alice, uncommon_bob=t.uncommon_bob), c


@dataclass
class RunReport:
    data: dict
    files: dict = field(default_factory=dict)  # name -> csv text

    @property
    def unstable(self) -> bool:
        return bool(self.data["loop"]["unstable"])

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        manifest = {}
        for name in sorted(self.files):
            blob = self.files[name].encode()
            (out / name).write_bytes(blob)
            manifest[name] = hashlib.sha256(blob).hexdigest()
        self.data["manifest"] = manifest
        (out / "report.json").write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        return out


def _db(ratio: float) -> float:
    if ratio <= 0:
        return -math.inf
    return 10.0 * math.log10(ratio)


def _finite(x):
    """JSON-safe float: None for NaN/inf."""
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _rms(x: np.ndarray) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.sqrt(np.mean(np.square(x))))


def _sigma_at(curve, t_a: float):
    # only report key frame durations that the grid actually covers
    if t_a < curve.t_a[0] * 0.99 or t_a > curve.t_a[-1] * 1.01:
        return None
    return curve.at(t_a)


def _decimate(trace_samples: np.ndarray, f_s: float, rate: float) -> tuple[np.ndarray, np.ndarray]:
    k = max(1, int(round(f_s / rate)))
    x = trace_samples[::k]
    return np.arange(x.size) * (k / f_s), x


def run_scenario(scenario, overrides: Mapping[str, Any] | None = None, *, keep_traces: bool = False) -> RunReport:
    """Run the full chain for one scenario and collect metrics and CSV outputs.

    noise -> link -> fiber loop -> interference -> photodiode -> phase
    retrieval -> statistics, plus photon counting when enabled.  Nothing
    is written; call :meth:`RunReport.write`.  With ``keep_traces`` the
    report also carries the in-memory traces under ``report.traces``.
    """
    from .analysis import _csv

    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario, overrides)
    if isinstance(scenario, Scenario) and overrides:
        sc = parse_scenario(scenario.doc, overrides, scenario.source)
    doc = sc.doc
    meta = {"scenario": sc.name, "scenario_hash": sc.hash, "seed": sc.seed, "f_s": sc.f_s}

    topology, scale = calibrated_topology(sc)
    noise = simulate_noise(topology, sc.lasers, sc.laser_lock, sc.f_s, sc.n_samples, sc.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        run = closed_loop_run(topology, sc.fiber_loop, sc.lasers, sc.laser_lock, sc.duration, sc.seed,
                              nu_mismatch=doc["nu_mismatch"], noise=noise)
    del noise
    header = {
        "scenario": sc.name,
        "scenario_hash": sc.hash,
        "seed": sc.seed,
        "sample_rate": sc.f_s,
        "duration": sc.duration,
        "calibration_scale": scale,
    }
    loop = {
        "enabled": sc.fiber_loop.enabled,
        "unstable": bool(run.unstable),
        "bandwidth_latency_product": sc.fiber_loop.bandwidth * sc.fiber_loop.total_latency,
        "open_loop_rms": _finite(run.open_loop_rms),
        "error_rms": _finite(_rms(run.error_signal.samples)),
    }
    if run.unstable:
        # an oscillating loop has no meaningful statistics; report the loop only
        return RunReport(dict(header, loop=loop))
    phase = run.stabilized_phase

    # acquisition and phase retrieval, exactly as from the measured pattern
    ip = doc["interference"]
    pattern = intensity(phase, ip["phi0"], ip["visibility"])
    acquired = pattern
    pd = sc.photodiode
    if math.isfinite(pd.bandwidth) or pd.sample_rate is not None or pd.noise_rms:
        acquired = photodiode_acquire_clipped(pattern, pd, derive_seed(sc.seed, "photodiode"))
    retrieved = retrieve_phase(acquired)

    an = doc["analysis"]
    grid = an["ta_grid"]
    if grid is None:
        grid = default_ta_grid(retrieved.f_s, retrieved.duration, an["per_decade"])
    curve = sigma_curve(retrieved, grid)

    psd = welch_psd(phase, an["welch_segment"])
    open_loop = PhaseTrace(phase.samples - run.correction.samples, phase.f_s)
    psd_open = welch_psd(open_loop, an["welch_segment"])
    del open_loop
    lo, hi = an["suppression_band"]
    lo = float(max(lo, psd.f[0]))
    closed_mean = psd.band_mean(lo, hi)
    suppression = _db(psd_open.band_mean(lo, hi) / closed_mean) if closed_mean > 0 else None
    bands = []
    # the loop band first, so two runs of equal length compare it directly
    for f_lo, f_hi in [[lo, hi]] + an["psd_bands"]:
        sel = (psd.f >= f_lo) & (psd.f <= f_hi)
        bands.append({"f_lo": f_lo, "f_hi": f_hi,
                      "mean": float(psd.s[sel].mean()) if sel.any() else None})

    sig_q = _sigma_at(curve, an["qber_ta"])
    q_small = q_int = None
    if sig_q is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            q_small = qber_small_phase(sig_q).e
        q_int = qber_integral(sigma=sig_q).e

    files = {
        "sigma_curve.csv": curve.to_csv(meta),
        "psd.csv": psd.log_binned(doc["outputs"]["psd_per_decade"]).to_csv(meta),
    }
    out = doc["outputs"]
    n_win = int(round(out["pattern_window"] * acquired.f_s))
    if n_win > 0:
        files["pattern_window.csv"] = acquired.to_csv(meta, 1, n_win)
    k = max(1, int(round(acquired.f_s / out["decimated_rate"])))
    files["pattern_decimated.csv"] = acquired.to_csv(dict(meta, decimation=k), k)
    if out["phase_trace"]:
        t, x = _decimate(phase.samples, phase.f_s, out["decimated_rate"])
        files["phase_decimated.csv"] = _csv(dict(meta, decimation=max(1, int(round(phase.f_s / out["decimated_rate"])))),
                                            ("time_s", "phase_rad"), (t, x))

    counting = None
    pc = doc["photon_counting"]
    if pc["enabled"]:
        f0, f1 = port_fluxes(pattern, pc["source_rate"], pc["attenuation_db"])
        r0 = spd_detect(f0, sc.spd, sc.background, derive_seed(sc.seed, "spd0"), detector=0)
        r1 = spd_detect(f1, sc.spd, sc.background, derive_seed(sc.seed, "spd1"), detector=1)
        files["counts.csv"] = r0.merged(r1).to_csv(meta)
        try:
            q = qber_from_counts(r0, r1, pc["bright"])
            q_counts = {"e": q.e, "uncertainty": q.uncertainty, "interval": list(q.interval)}
        except ValueError:
            q_counts = None
        counting = {"d0_rate": r0.rate, "d1_rate": r1.rate, "d0_counts": len(r0), "d1_counts": len(r1),
                    "qber": q_counts}

    lb = loss_budget(topology)
    loop.update(suppression_db=_finite(suppression), suppression_band=[float(lo), float(hi)])
    data = dict(header, loop=loop)
    data.update({
        "sigma": {"t_a": [float(t) for t in curve.t_a], "values": [_finite(s) for s in curve.sigma],
                  "subsets": [int(i) for i in curve.subsets]},
        "sigma_at": {f"{t:g}": _finite(_sigma_at(curve, t)) for t in an["key_ta"]},
        "crossings": {f"{e:g}": _finite(v) for e, v in curve.crossings.items()},
        "qber": {"t_a": an["qber_ta"], "sigma": _finite(sig_q),
                 "small_phase": _finite(q_small), "integral": _finite(q_int)},
        "psd_bands": bands,
        "loss": {"total_db": lb.total_db, "total_km": lb.total_km},
        "counting": counting,
    })
    rep = RunReport(data, files)
    if keep_traces:
        rep.traces = {"phase": phase, "retrieved": retrieved, "correction": run.correction,
                      "psd": psd, "psd_open": psd_open, "curve": curve}
    return rep


def photodiode_acquire_clipped(pattern, config, seed):
    """Acquire, then renormalize into [0, 1] as an intensity calibration would."""
    from .detect import photodiode_acquire

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        acq = photodiode_acquire(pattern, config, seed)
    acq.samples = np.clip(acq.samples, 0.0, 1.0)
    return acq


class GridMismatchError(ValueError):
    """The two reports use different frame-duration grids."""


def _load_report(r) -> dict:
    if isinstance(r, RunReport):
        return r.data
    if isinstance(r, Mapping):
        return dict(r)
    p = Path(r)
    if p.is_dir():
        p = p / "report.json"
    return json.loads(p.read_text())


def compare_runs(report_a, report_b) -> dict:
    """Ratios ``a / b`` of sigma values, PSD band means and summary metrics, plus the same in dB.

    PSD ratios are in power, so their dB is ``10 log10``; sigma ratios are in
    amplitude, so their dB is ``20 log10``.
    """
    a, b = _load_report(report_a), _load_report(report_b)
    ta_a, ta_b = a["sigma"]["t_a"], b["sigma"]["t_a"]
    if len(ta_a) != len(ta_b) or not np.allclose(ta_a, ta_b, rtol=1e-9, atol=0):
        raise GridMismatchError("reports use different t_a grids")

    def ratio(x, y):
        if x is None or y is None:
            return None
        if y == 0:
            return 1.0 if x == 0 else None
        return x / y

    rows = []
    for t, sa, sb in zip(ta_a, a["sigma"]["values"], b["sigma"]["values"]):
        r = ratio(sa, sb)
        rows.append({"metric": f"sigma@{t:.6g}", "a": sa, "b": sb, "ratio": r,
                     "db": None if not r else _finite(20 * math.log10(r))})
    bands_b = {(x["f_lo"], x["f_hi"]): x["mean"] for x in b.get("psd_bands", [])}
    for band in a.get("psd_bands", []):
        key = (band["f_lo"], band["f_hi"])
        if key not in bands_b:
            continue
        r = ratio(band["mean"], bands_b[key])
        rows.append({"metric": f"psd[{key[0]:g},{key[1]:g}]", "a": band["mean"], "b": bands_b[key],
                     "ratio": r, "db": None if not r else _finite(10 * math.log10(r))})
    for name in ("small_phase", "integral"):
        qa, qb = a["qber"][name], b["qber"][name]
        r = ratio(qa, qb)
        rows.append({"metric": f"qber_{name}", "a": qa, "b": qb, "ratio": r,
                     "db": None if not r else _finite(10 * math.log10(r))})
    return {"a": a["scenario"], "b": b["scenario"], "rows": rows}


def budget_tables(sc: Scenario, duration: float = 86400.0) -> dict:
    """Loss, delay and background-count tables of a scenario."""
    lb = loss_budget(sc.topology)
    ts = timing_skew(sc.topology)
    bg = background_budget(sc.background, sc.spd, duration)
    return {
        "loss": lb.__dict__,
        "delays": {"spans": ts.span_delays, "alice_qkd": ts.alice_qkd, "bob_qkd": ts.bob_qkd,
                   "skew": ts.skew, "round_trip_skew": ts.round_trip_skew,
                   "unbalance_km": sc.topology.unbalance, "differential_delay": sc.topology.differential_delay},
        "background": {"duration": duration,
                       "lines": [{"source": x.source, "rate": x.rate, "uncertainty": x.uncertainty} for x in bg]},
    }
