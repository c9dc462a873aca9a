"""Command-line entry point: ``phaselink simulate | analyze | compare | budget | list``.

Exit codes: 0 success, 2 configuration or input error, 3 loop instability.
``PHASELINK_OUT`` sets the base directory for ``simulate`` outputs when
``--out`` is not given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import default_ta_grid, qber_integral, qber_small_phase, sigma_curve, welch_psd
from .interference import CalibrationError, InterferencePattern, retrieve_phase
from .noise import InsufficientDataError, PhaseTrace
from .scenario import (
    GridMismatchError, ScenarioError, budget_tables, compare_runs, load_scenario, run_scenario,
    shipped_scenario, shipped_scenarios,
)

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 2, 3
OUT_ENV = "PHASELINK_OUT"

log = logging.getLogger("phaselink")


def _resolve_scenario(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    if arg in shipped_scenarios():
        return shipped_scenario(arg)
    raise ScenarioError(f"{arg}: no such file or shipped scenario (try 'phaselink list')")


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ScenarioError(f"--set {item!r}: expected key.path=value")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_simulate(args) -> int:
    overrides = _parse_set(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    sc = load_scenario(_resolve_scenario(args.scenario), overrides)
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / f"{sc.name}-seed{sc.seed}"
    log.info("running %s (hash %s, seed %d, %.3g s at %.3g Hz)", sc.name, sc.hash[:12], sc.seed,
             sc.duration, sc.f_s)
    report = run_scenario(sc)
    report.write(out)
    d = report.data
    print(f"scenario  {d['scenario']}  hash {d['scenario_hash'][:16]}  seed {d['seed']}")
    if report.unstable:
        print(f"fiber loop unstable (bandwidth x latency = {d['loop']['bandwidth_latency_product']:.3g}); "
              f"report in {out}", file=sys.stderr)
        return EXIT_UNSTABLE
    for t, s in d["sigma_at"].items():
        print(f"sigma({t} s) = {_fmt(s)} rad")
    print(f"QBER at {d['qber']['t_a']:g} s: small-phase {_fmt(d['qber']['small_phase'])}, "
          f"integral {_fmt(d['qber']['integral'])}")
    for e, t in d["crossings"].items():
        print(f"QBER {float(e):.1%} crossing: " + ("none" if t is None else f"{t:.4g} s"))
    if d["loop"]["suppression_db"] is not None:
        print(f"in-band suppression: {d['loop']['suppression_db']:.1f} dB")
    print(f"outputs in {out}")
    return EXIT_OK


def read_trace_csv(path) -> tuple[PhaseTrace, dict]:
    """Load a ``time_s, phase_rad`` or ``time_s, intensity`` CSV; intensities are converted to phase."""
    path = Path(path)
    meta, header, skip = {}, None, 0
    with path.open() as fh:
        for line in fh:
            skip += 1
            if line.startswith("#"):
                k, _, v = line[1:].partition(":")
                meta[k.strip()] = v.strip()
                continue
            header = [h.strip() for h in line.split(",")]
            break
    if header is None:
        raise ScenarioError(f"{path}: no header row")
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.shape[0] < 2:
        raise InsufficientDataError(f"{path}: fewer than 2 samples")
    cols = {h: data[:, i] for i, h in enumerate(header)}
    if "time_s" in cols:
        t = cols["time_s"]
        f_s = (t.size - 1) / (t[-1] - t[0])
    elif "f_s" in meta:
        f_s = float(meta["f_s"])
    else:
        raise ScenarioError(f"{path}: need a time_s column or an f_s header")
    if "phase_rad" in cols:
        return PhaseTrace(cols["phase_rad"], f_s, 0.0, path.stem), meta
    if "intensity" in cols:
        pat = InterferencePattern(cols["intensity"], f_s, float(meta.get("phi0", 0.0)))
        return retrieve_phase(pat), meta
    raise ScenarioError(f"{path}: expected a phase_rad or intensity column, found {header}")


def cmd_analyze(args) -> int:
    trace, meta = read_trace_csv(args.trace)
    grid = args.ta_grid or default_ta_grid(trace.f_s, trace.duration, args.per_decade)
    curve = sigma_curve(trace, grid)
    summary = {
        "source": str(args.trace),
        "f_s": trace.f_s,
        "samples": len(trace),
        "sigma": {f"{t:.6g}": float(s) for t, s in zip(curve.t_a, curve.sigma)},
        "crossings": {f"{e:g}": v for e, v in curve.crossings.items()},
    }
    if args.qber_ta:
        s = curve.at(args.qber_ta)
        summary["qber"] = {"t_a": args.qber_ta, "sigma": s,
                           "small_phase": qber_small_phase(s).e, "integral": qber_integral(sigma=s).e}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        m = {"source": Path(args.trace).name, "f_s": trace.f_s}
        (out / "sigma_curve.csv").write_text(curve.to_csv(m))
        try:
            (out / "psd.csv").write_text(welch_psd(trace).log_binned().to_csv(m))
        except InsufficientDataError:
            pass
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _fmt(v, spec=".4g"):
    return "-" if v is None else format(v, spec)


def cmd_compare(args) -> int:
    table = compare_runs(args.a, args.b)
    if args.json:
        print(json.dumps(table, indent=2))
        return EXIT_OK
    print(f"a = {table['a']}    b = {table['b']}")
    print(f"{'metric':<28}{'a':>12}{'b':>12}{'a/b':>12}{'dB':>9}")
    for r in table["rows"]:
        print(f"{r['metric']:<28}{_fmt(r['a']):>12}{_fmt(r['b']):>12}{_fmt(r['ratio']):>12}"
              f"{_fmt(r['db'], '.1f'):>9}")
    return EXIT_OK


def cmd_budget(args) -> int:
    sc = load_scenario(_resolve_scenario(args.scenario))
    tab = budget_tables(sc, args.duration)
    if args.json:
        print(json.dumps(tab, indent=2))
        return EXIT_OK
    lb, dl, bg = tab["loss"], tab["delays"], tab["background"]
    print("Loss budget (QKD spans)")
    print(f"  Alice  {lb['alice_db']:6.1f} dB   {lb['alice_db_per_km']:.3f} dB/km")
    print(f"  Bob    {lb['bob_db']:6.1f} dB   {lb['bob_db_per_km']:.3f} dB/km")
    print(f"  total  {lb['total_db']:6.1f} dB over {lb['total_km']:g} km ({lb['average_db_per_km']:.3f} dB/km)")
    print("Propagation delays")
    for k, v in dl["spans"].items():
        print(f"  {k:<14} {v * 1e6:9.2f} us")
    print(f"  QKD skew (Alice - Bob)  {dl['skew'] * 1e6:9.2f} us")
    print(f"  arm unbalance {dl['unbalance_km']:g} km -> differential delay {dl['differential_delay'] * 1e6:.1f} us")
    print(f"Background counts over {bg['duration']:g} s")
    for x in bg["lines"]:
        print(f"  {x['source']:<11} {x['rate']:7.3f} +/- {x['uncertainty']:.4f} /s")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in shipped_scenarios():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="phaselink", description="Twin-field QKD link phase-noise simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write CSV data and report.json")
    s.add_argument("scenario", help="scenario file or shipped scenario name")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<name>-seed<N>, else runs/...)")
    s.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a scenario field by dotted path, value parsed as JSON")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="sigma curve and PSD of a trace CSV")
    a.add_argument("trace")
    a.add_argument("--ta-grid", type=float, nargs="+", metavar="T_A")
    a.add_argument("--per-decade", type=int, default=5)
    a.add_argument("--qber-ta", type=float, default=None)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("compare", help="ratio table of two runs (report.json or run directory)")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("budget", help="loss, delay and background tables of a scenario")
    b.add_argument("scenario")
    b.add_argument("--duration", type=float, default=86400.0, help="integration time for count uncertainties (s)")
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_budget)

    ls = sub.add_parser("list", help="list shipped scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, GridMismatchError, CalibrationError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
