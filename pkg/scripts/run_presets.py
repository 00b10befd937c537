#!/usr/bin/env python3
"""Run shipped presets end to end and print each headline.

    python scripts/run_presets.py                   # every preset
    python scripts/run_presets.py overfit_vs_depth matrix_depth --set T=20000
"""

import argparse
import json
import sys

from robustdln.experiment_cli import ConfigError, preset_names, resolve_config, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawTextHelpFormatter)
    ap.add_argument("presets", nargs="*", help="preset names (default: all)")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override applied to every preset")
    ap.add_argument("--out", default="runs", help="parent directory for outputs")
    args = ap.parse_args(argv)
    status = 0
    for name in args.presets or preset_names():
        try:
            cfg = resolve_config(name, args.set)
            res = run_experiment(cfg, f"{args.out}/{name}")
        except ConfigError as exc:
            print(f"{name}: invalid config", *exc.violations, sep="\n  ", file=sys.stderr)
            status = 1
            continue
        print(f"== {name} -> {res.out_dir}")
        print(json.dumps(res.summary["headline"], indent=2))
        if res.diverged:
            status = max(status, 2)
    return status


if __name__ == "__main__":
    sys.exit(main())
