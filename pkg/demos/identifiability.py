"""Which parameters can the voltage tell apart?

Propagates the output sensitivities along one discharge half of the drive
cycle (SOC from about 0.97 down to 0.25) and factors the relative
sensitivity matrix into column norms D and a correlation matrix C.  A large
norm means the voltage reacts strongly to that parameter.  An off-diagonal
entry of C near +/-1 means two parameters leave almost the same fingerprint.
"""
import argparse

import numpy as np

from ehmfdi.config import default_bench
from ehmfdi.ehm import simulate
from ehmfdi.sensitivity import identifiability_report, sensitivity_trajectory


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", help="directory for D.csv, C.csv and the traces")
    ap.add_argument("--raw", action="store_true",
                    help="use unscaled sensitivities dy/dtheta instead of theta*dy/dtheta")
    args = ap.parse_args()

    bench, exp = default_bench()
    n = bench.cycle.metadata["half_cycle_samples"]
    u = bench.current(exp.N)[:n]
    tr = simulate(bench.theta0, bench.params, bench.ocp_pos, bench.ocp_neg, u, bench.x0)
    sb = sensitivity_trajectory(bench.theta0, bench.params, bench.ocp_pos, bench.ocp_neg, u,
                                tr.x[:-1])
    rep = identifiability_report(sb.s_y, None if args.raw else bench.theta0)
    print(f"discharge half: {n} samples, SOC {tr.x[0, 0]:.2f} -> {tr.x[-1, 0]:.2f}")
    print("\nsensitivity norms", "(raw)" if args.raw else "(relative)")
    for name, v in zip(rep.names, rep.norms):
        print(f"  {name:10s} {v:12.4f}")
    print("ranking:", " > ".join(rep.ranking()))

    print("\ncorrelation matrix")
    print("  " + " " * 10 + "".join(f"{n:>11s}" for n in rep.names))
    for name, row in zip(rep.names, rep.C):
        print(f"  {name:10s}" + "".join(f"{v:11.3f}" for v in row))
    i, j = np.unravel_index(np.argmax(np.abs(rep.C - np.eye(4))), rep.C.shape)
    print(f"\nmost alike: {rep.names[i]} and {rep.names[j]} (|C| = {abs(rep.C[i, j]):.3f})")
    if args.out:
        for p in rep.write(args.out):
            print("wrote", p)


if __name__ == "__main__":
    main()
