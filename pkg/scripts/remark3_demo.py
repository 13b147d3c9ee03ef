"""SGDA spirals out, SEG does not: the spiral game from z0 = (1, 0)."""

import argparse
from pathlib import Path

import numpy as np

from segclt.core import StepSchedule
from segclt.experiment import divergence_demo


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eta", type=float, default=0.1, help="constant SGDA step")
    ap.add_argument("--eta0", type=float, default=0.1, help="SEG schedule constant")
    ap.add_argument("--a", type=float, default=0.8, help="SEG schedule exponent")
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--replications", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240611)
    ap.add_argument("--out", type=Path, default=Path("out/remark3"))
    args = ap.parse_args()

    res = divergence_demo(args.eta, args.steps, args.replications, args.seed,
                          seg_schedule=StepSchedule(args.eta0, args.a), output_dir=args.out)
    print(f"one-step E|z1|^2 = {res.one_step_mean:.5f} +- {res.one_step_se:.5f} "
          f"(prediction {res.one_step_prediction:.5f})")
    print(f"{'step':>7} {'SGDA E|z|^2':>14} {'SEG E|z|^2':>12} {'SEG E|z|':>10}")
    show = np.unique(np.r_[0, np.searchsorted(res.steps, [10, 100, 200, 1000, 5000]),
                           res.steps.size - 1].clip(0, res.steps.size - 1))
    for i in show:
        print(f"{res.steps[i]:>7d} {res.sgda_mean_sq[i]:>14.4g} {res.seg_mean_sq[i]:>12.4f} "
              f"{res.seg_mean_dist[i]:>10.4f}")
    print("checks:", res.checks)


if __name__ == "__main__":
    main()
