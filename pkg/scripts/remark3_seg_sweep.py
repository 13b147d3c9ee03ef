"""Mean |z_n| of SEG on the spiral game for a grid of (eta0, a) schedules.

Used to study how far the decaying-step SEG gets in 10^4 steps from (1, 0).
"""

import argparse

import numpy as np

from segclt.core import StepSchedule
from segclt.kernels import initial_state
from segclt.models import build_preset
from segclt.optimizers import run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("schedules", nargs="*", default=["0.1,0.8", "0.1,0.6", "0.5,0.51",
                                                    "1.0,0.51", "2.0,0.55"])
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--replications", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20240611)
    args = ap.parse_args()

    pre = build_preset("remark3")
    z0 = np.array([1.0, 0.0])
    print(f"{'eta0':>6} {'a':>5} {'mean|z_n|':>10} {'frac |z_n|>0.5':>15}")
    for item in args.schedules:
        eta0, a = map(float, item.split(","))
        st = initial_state(pre.kernel, z0, args.seed, np.arange(args.replications), channel=5)
        rec = run("seg", pre.problem, pre.kernel, st, StepSchedule(eta0, a), args.steps, z0=z0,
                  on_failure="mark")
        d = np.linalg.norm(rec.final_z[rec.ok], axis=1)
        print(f"{eta0:>6g} {a:>5g} {d.mean():>10.4f} {np.mean(d > 0.5):>15.3f}")


if __name__ == "__main__":
    main()
