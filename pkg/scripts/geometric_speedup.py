#!/usr/bin/env python3
"""Iterations to reach a target error: halving-every-P schedule vs constant step.

The constant run gets ``budget_factor`` times the geometric run's count, so
an unreached target is reported as a lower bound on the speedup.
"""

import argparse

import numpy as np

from robustdln.data import NoiseSpec, generate_dataset
from robustdln.optimizer import StepSchedule, run_subgm


def reach(traj, tol):
    hit = np.flatnonzero(traj.generalization_error <= tol)
    return int(traj.iterations[hit[0]]) if hit.size else None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--tol", type=float, default=1e-3)
    ap.add_argument("--eta0", type=float, default=1e-2)
    ap.add_argument("--period", type=int, default=10_000)
    ap.add_argument("--eta", type=float, default=1e-3)
    ap.add_argument("--budget-factor", type=int, default=10)
    ap.add_argument("--T", type=int, default=600_000)
    args = ap.parse_args(argv)
    spec = NoiseSpec(0.1, "gaussian", 100.0)
    for seed in args.seeds:
        ds = generate_dataset(500, 5, 300, 2.0, 4.0, spec, seed)
        geo = run_subgm(ds, 2, 1e-8, StepSchedule.halving_every(args.eta0, args.period), args.T,
                        log_stride=10, stop_below=args.tol)
        t_geo = reach(geo, args.tol)
        if t_geo is None:
            print(f"seed {seed}: geometric run did not reach {args.tol} in {args.T} iterations")
            continue
        budget = args.budget_factor * t_geo
        const = run_subgm(ds, 2, 1e-8, StepSchedule.constant(args.eta), budget,
                          log_stride=10, stop_below=args.tol)
        t_const = reach(const, args.tol)
        if t_const is None:
            print(f"seed {seed}: geometric {t_geo}, constant > {budget} "
                  f"(min error {const.min_error():.2e}); speedup > {args.budget_factor}")
        else:
            print(f"seed {seed}: geometric {t_geo}, constant {t_const}; "
                  f"speedup {t_const / t_geo:.1f}")


if __name__ == "__main__":
    main()
