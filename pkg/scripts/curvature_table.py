#!/usr/bin/env python3
"""Smallest Hessian eigenvalue of the smoothed loss at the balanced solution, per depth."""

import argparse

from robustdln.data import NoiseSpec, generate_dataset
from robustdln.landscape import negative_curvature_direction
from robustdln.model import balanced_solution


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--depths", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--d", type=int, default=500)
    ap.add_argument("--m", type=int, default=300)
    ap.add_argument("--eps", type=float, default=1e-7)
    ap.add_argument("--method", default="auto", choices=["auto", "dense", "lanczos", "power"])
    args = ap.parse_args(argv)
    ds = generate_dataset(args.d, 5, args.m, 1.0, 2.0, NoiseSpec(0.1, "gaussian", 10.0), args.seed)
    for N in args.depths:
        rep = negative_curvature_direction(balanced_solution(ds.theta_star, N), ds,
                                           eps_smooth=args.eps, method=args.method, seed=args.seed)
        print(f"N={N} lambda_min {rep.lambda_min_estimate:+.4e} "
              f"rayleigh {rep.rayleigh_quotient:+.4e}")


if __name__ == "__main__":
    main()
