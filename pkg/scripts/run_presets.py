"""Run every built-in preset (or the ones named on the command line) and print verdicts."""
import argparse
import json
import os
import time

from hypokinetic.cli import PRESETS, apply_overrides, run_experiment
from hypokinetic.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", default=sorted(PRESETS))
    ap.add_argument("--out", default="results")
    ap.add_argument("--paths", type=int, help="override the number of paths")
    args = ap.parse_args()
    for name in args.names:
        cfg = apply_overrides(parse_config(PRESETS[name]), out=os.path.join(args.out, name), paths=args.paths)
        t0 = time.perf_counter()
        code = run_experiment(cfg)
        print(f"== {name}: exit {code} in {time.perf_counter() - t0:.1f}s")
        with open(os.path.join(cfg.output.directory, "summary.json"), encoding="utf-8") as fh:
            for p in json.load(fh)["probes"]:
                print(f"   {p['verdict']:<13} {p['probe']}")


if __name__ == "__main__":
    main()
