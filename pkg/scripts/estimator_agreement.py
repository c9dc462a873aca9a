"""Ratio of spectral to time-domain sigma versus frame size, for a set of spectra.

Prints one row per frame duration with at least 8 frames.  Frames of
only a few samples lose most of the spectral integral (the band from
1/t_a to f_s/2 shrinks to nothing), so the two estimators meet only
once frames hold enough samples; how many depends on the spectrum.
"""

import argparse
import sys
from pathlib import Path

from phaselink.analysis import default_ta_grid, sigma_from_psd, sigma_time_domain, welch_psd

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from spectra import MATRIX  # noqa: E402


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=6)
    p.add_argument("--per-decade", type=int, default=5)
    args = p.parse_args(argv)
    for name, make in MATRIX.items():
        trace = make(args.seed)
        psd = welch_psd(trace)
        print(f"\n{name}")
        print(f"{'t_a (s)':>12}{'samples':>10}{'frames':>8}{'spectral':>12}{'time':>12}{'ratio':>8}")
        for t_a in default_ta_grid(trace.f_s, trace.duration, args.per_decade):
            if t_a <= 2 / trace.f_s or 1 / t_a < psd.f[0] * (1 - 1e-9):
                continue
            s_t, i = sigma_time_domain(trace, t_a)
            if i < 8:
                continue
            s_f = sigma_from_psd(psd, t_a)
            print(f"{t_a:12.4g}{t_a * trace.f_s:10.1f}{i:8d}{s_f:12.4g}{s_t:12.4g}{s_f / s_t:8.3f}")


if __name__ == "__main__":
    main()
