"""Run one scenario over several seeds in parallel and tabulate the key metrics.

Each worker runs a full simulation, so memory scales with ``--jobs``
(about 2 GB per 4 s run at 5 MHz).

    python scripts/seed_sweep.py paper-stabilized --seeds 1 2 3 --set duration=1
"""

import argparse
import json
from concurrent.futures import ProcessPoolExecutor

from phaselink.cli import _parse_set, _resolve_scenario
from phaselink.scenario import run_scenario


def _one(job):
    path, overrides = job
    d = run_scenario(path, overrides).data
    return {"seed": d["seed"], "unstable": d["loop"]["unstable"], "sigma_at": d.get("sigma_at"),
            "crossings": d.get("crossings"), "suppression_db": d["loop"]["suppression_db"]}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("scenario")
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    args = p.parse_args(argv)
    path = _resolve_scenario(args.scenario)
    base = _parse_set(args.set)
    jobs = [(path, {**base, "seed": s}) for s in args.seeds]
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        for row in pool.map(_one, jobs):
            print(json.dumps(row))


if __name__ == "__main__":
    main()
