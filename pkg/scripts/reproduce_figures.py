"""Run the bundled figure presets and write one CSV plus manifest per figure.

    python scripts/reproduce_figures.py --out results            # all presets
    python scripts/reproduce_figures.py fig3 fig5 --trials 2000   # quicker subset
"""

import argparse
import logging
import time
from pathlib import Path

from audsim.cli import list_presets, preset_path
from audsim.config import load_spec
from audsim.harness import default_workers, run_sweep


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("presets", nargs="*", help="preset names (default: all)")
    p.add_argument("--out", default="results")
    p.add_argument("--trials", type=int, help="override evaluation trials per cell")
    p.add_argument("--calibration-trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=default_workers())
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = {}
    if args.trials:
        overrides["num_trials"] = args.trials
    if args.calibration_trials:
        overrides["calibration_trials"] = args.calibration_trials
    if args.seed is not None:
        overrides["master_seed"] = args.seed

    for name in args.presets or list_presets():
        spec = load_spec(preset_path(name), overrides)
        t0 = time.perf_counter()
        records = run_sweep(spec, Path(args.out), args.workers, name)
        logging.info("%s: %d cells in %.0fs -> %s/%s.csv", name, len(records),
                     time.perf_counter() - t0, args.out, name)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
