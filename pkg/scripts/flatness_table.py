#!/usr/bin/env python3
"""Fitted flatness exponent per depth and seed around the balanced solution.

Prints one row per (N, seed) with the log-log slope of the minimum loss
change over the radius grid, then the median per depth.
"""

import argparse

import numpy as np

from robustdln.data import NoiseSpec, generate_dataset
from robustdln.landscape import ProbeMethod, flatness_exponent
from robustdln.model import balanced_solution

METHODS = {
    "linear_program": ProbeMethod.linear_program,
    "projected_descent": ProbeMethod.projected_descent,
    "random_sampling": ProbeMethod.random_sampling,
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depths", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--d", type=int, default=500)
    ap.add_argument("--m", type=int, default=300)
    ap.add_argument("--method", choices=sorted(METHODS), default="linear_program")
    args = ap.parse_args(argv)
    gammas = np.logspace(-4, -2, 6)
    spec = NoiseSpec(0.1, "gaussian", 10.0)
    print(f"{'N':>2} {'seed':>4} {'slope':>8} {'excluded':>8}")
    for N in args.depths:
        slopes = []
        for seed in range(args.seeds):
            ds = generate_dataset(args.d, 5, args.m, 1.0, 2.0, spec, seed)
            fit = flatness_exponent(balanced_solution(ds.theta_star, N), ds, gammas,
                                    METHODS[args.method](), seed=seed)
            slopes.append(fit.slope)
            print(f"{N:>2} {seed:>4} {fit.slope:>8.3f} {len(fit.excluded):>8}")
        print(f"N={N} median slope {np.median(slopes):.3f}")


if __name__ == "__main__":
    main()
