"""How big are the studied faults in capacity and resistance terms?

A full-charge constant-current discharge at C/2 is simulated for the healthy
cell and for each fault.  The script reports the relative capacity loss and
the change in ohmic drop.  The ohmic drop here is the differential resistance
at the start of the discharge multiplied by the current.
"""
import argparse

from ehmfdi.config import bench_from_config, load_config
from ehmfdi.experiment import FaultSpec, fault_physics


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--c-rate", type=float, default=0.5)
    args = ap.parse_args()
    bench, _ = bench_from_config(load_config(args.config))

    faults = [FaultSpec.parameter("eps_s_neg", -1e-3), FaultSpec.parameter("R_f", 2e-3),
              FaultSpec.parameter("g_s", 5e-2), FaultSpec.parameter("n_Li", -1e-3),
              FaultSpec.side_reaction(3e-5)]
    print(f"constant discharge at {args.c_rate:g}C of a {bench.capacity_ah:.2f} Ah cell\n")
    print(f"{'fault':28s} {'capacity fade':>14s} {'ohmic-drop change':>18s}")
    for f in faults:
        r = fault_physics(bench, f, c_rate=args.c_rate)
        print(f"{f.label:28s} {r['capacity_fade_pct']:13.4f}% {r['ohmic_drop_change_pct']:17.5f}%")
    # n_Li barely moves the capacity here: the discharge ends on the negative
    # electrode, so a small loss of cyclable lithium does not shorten it.


if __name__ == "__main__":
    main()
