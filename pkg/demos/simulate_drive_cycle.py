"""Drive the default cell through its drive cycle and look at what faults do.

Every fault in the detection study is small on purpose.  This script runs
the plant once healthy and once per fault, then prints the largest voltage
difference each one causes next to the measurement-noise level.  The point
to take away is that none of them is visible by eye.

    python demos/simulate_drive_cycle.py [--config my.yaml] [--csv out.csv]
"""
import argparse

import numpy as np

from ehmfdi.config import bench_from_config, load_config
from ehmfdi.experiment import FaultSpec, simulate_plant

FAULTS = [
    FaultSpec.parameter("eps_s_neg", -1e-3),
    FaultSpec.parameter("R_f", 2e-3),
    FaultSpec.parameter("g_s", 5e-2),
    FaultSpec.parameter("n_Li", -1e-3),
    FaultSpec.side_reaction(3e-5),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--csv", help="write time, current, healthy and faulty voltages here")
    args = ap.parse_args()

    bench, exp = bench_from_config(load_config(args.config))
    healthy = simulate_plant(bench, FaultSpec.none(), exp.N)
    u = bench.current(exp.N)
    print(f"cell capacity {bench.capacity_ah:.2f} Ah, {exp.N} samples, "
          f"current {u.min():.1f}..{u.max():.1f} A")
    print(f"healthy voltage {healthy.y.min():.3f}..{healthy.y.max():.3f} V, "
          f"SOC {healthy.x[:, 0].min():.3f}..{healthy.x[:, 0].max():.3f}")

    noise_sd = np.sqrt(exp.noise_var)
    print(f"\nmeasurement noise standard deviation: {noise_sd * 1e3:.2f} mV")
    cols = [healthy.y]
    for fault in FAULTS:
        tr = simulate_plant(bench, fault, exp.N)
        dy = tr.y - healthy.y
        cols.append(tr.y)
        print(f"  {fault.label:28s} max |dV| = {np.abs(dy).max() * 1e3:7.3f} mV   "
              f"rms = {np.sqrt(np.mean(dy ** 2)) * 1e3:6.3f} mV")
        if fault.kind == "side_reaction":
            print(f"  {'':28s} lithium lost over the record: "
                  f"{100 * (1 - tr.n_li[-1] / bench.theta0[3]):.4f}% of n_Li")

    if args.csv:
        t = np.arange(exp.N) * bench.params.T_s
        header = "time_s,current_a,healthy_v," + ",".join(f.label for f in FAULTS)
        np.savetxt(args.csv, np.column_stack([t, u, *cols]), delimiter=",", header=header,
                   comments="")
        print(f"\nwrote {args.csv}")


if __name__ == "__main__":
    main()
