"""Command-line entry point: ``ehmfdi <subcommand> [options]``.

Subcommands
-----------
simulate     open-loop plant simulation, writes a voltage/state trace
sensitivity  identifiability report (D, C, sensitivity traces)
detect       one FDI replicate, global test
isolate      one FDI replicate, global plus minmax tests
montecarlo   seeded replicates, summary table and JSON report

Reports go to ``--out``, else ``$EHMFDI_REPORT_DIR``, else ``./reports``.
Exit codes: 0 success, 2 usage error, 3 configuration error, 4 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .ehm import PARAM_NAMES, simulate
from .errors import ConfigError, EhmError
from .experiment import FaultSpec, McSummary, run_experiment, run_monte_carlo, summary_table

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4
REPORT_ENV = "EHMFDI_REPORT_DIR"

log = logging.getLogger("ehmfdi")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file (defaults are built in)")
    common.add_argument("--cycle", help="drive-cycle CSV (time_s,current_a); overrides the config")
    common.add_argument("--out", help=f"report directory (default ${REPORT_ENV} or ./reports)")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--fault", choices=["none", *PARAM_NAMES, "side_reaction"], default="none")
    common.add_argument("--delta-rel", type=float, default=1e-3,
                        help="relative parameter change of a parameter fault (default 0.001)")
    common.add_argument("--jsr0", type=float, help="side-reaction exchange current density [A/m^2]")
    common.add_argument("--ni", type=int, help="number of lags in the Sigma estimate")
    common.add_argument("--alpha-fa", type=float, help="false-alarm probability of the tests")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="ehmfdi", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="open-loop plant simulation")
    sub.add_parser("sensitivity", parents=[common], help="identifiability report")
    sub.add_parser("detect", parents=[common], help="one replicate, global chi2 test")
    sub.add_parser("isolate", parents=[common], help="one replicate, minmax isolation tests")
    mc = sub.add_parser("montecarlo", parents=[common], help="Monte Carlo replicates")
    mc.add_argument("--runs", type=int, help="number of replicates")
    mc.add_argument("--keep-going", action="store_true",
                    help="record failing replicates instead of stopping")
    return parser


def _fault(args) -> FaultSpec:
    if args.fault == "none":
        return FaultSpec.none()
    if args.fault == "side_reaction":
        return FaultSpec.side_reaction(args.jsr0)
    return FaultSpec.parameter(args.fault, args.delta_rel)


def _setup(args):
    from .config import bench_from_config, load_config
    overrides = {}
    exp = {}
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.ni is not None:
        exp["n_i"] = args.ni
    if args.alpha_fa is not None:
        exp["alpha_fa"] = args.alpha_fa
    if getattr(args, "runs", None) is not None:
        exp["n_runs"] = args.runs
    if exp:
        overrides["experiment"] = exp
    cfg = load_config(args.config, overrides)
    return bench_from_config(cfg, cycle_path=args.cycle)


def _out_dir(args) -> Path:
    d = Path(args.out or os.environ.get(REPORT_ENV) or "reports")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _cmd_simulate(args, bench, exp, out: Path) -> None:
    fault = _fault(args)
    theta, params, sr = fault.plant(bench.theta0, bench.params)
    tr = simulate(theta, params, bench.ocp_pos, bench.ocp_neg, bench.current(exp.N), bench.x0,
                  side_reaction=sr)
    path = out / "simulation.csv"
    t = np.arange(exp.N) * params.T_s
    np.savetxt(path, np.column_stack([t, tr.z, tr.u, tr.d, tr.x[:-1], tr.y]), delimiter=",",
               header="time_s,current_a,intercalation_a,side_a,soc,c_ss,voltage_v", comments="")
    print(f"wrote {path}  (voltage {tr.y.min():.4f}..{tr.y.max():.4f} V)")


def _cmd_sensitivity(args, bench, exp, out: Path) -> None:
    from .sensitivity import identifiability_report, sensitivity_trajectory
    u = bench.current(exp.N)
    tr = simulate(bench.theta0, bench.params, bench.ocp_pos, bench.ocp_neg, u, bench.x0)
    sb = sensitivity_trajectory(bench.theta0, bench.params, bench.ocp_pos, bench.ocp_neg, u,
                                tr.x[:-1])
    rep = identifiability_report(sb.s_y, bench.theta0)
    rep.write(out)
    print("relative sensitivity norms (D):")
    for name, v in zip(rep.names, rep.norms):
        print(f"  {name:<10} {v:12.4f}")
    print("ranking:", " > ".join(rep.ranking()))
    print("correlation matrix (C):")
    for name, row in zip(rep.names, rep.C):
        print(f"  {name:<10}" + "".join(f"{v:9.3f}" for v in row))


def _cmd_single(args, bench, exp, out: Path, isolate: bool) -> None:
    fault = _fault(args)
    rep = run_experiment(exp, fault, bench)
    rep.write_json(out / f"report_{args.command}.json")
    flag = "DETECTED" if rep.detected else "not detected"
    print(f"fault {fault.label}: chi2 = {rep.chi2_global:.3f} "
          f"(threshold {rep.threshold_global:.2f}) -> {flag}")
    if isolate:
        for name, v, f in zip(rep.names, rep.chi2_minmax, rep.isolated):
            print(f"  minmax {name:<10} {v:9.3f}{'  *' if f else ''}")
        print(f"  threshold {rep.threshold_minmax:.2f}; most likely (heuristic): {rep.most_likely}")


def _cmd_montecarlo(args, bench, exp, out: Path) -> McSummary:
    fault = _fault(args)
    summary = run_monte_carlo(exp, fault, bench, fail_fast=not args.keep_going)
    paths = summary.write(out)
    print(summary_table([summary]))
    print("wrote", ", ".join(str(p) for p in paths))
    return summary


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        bench, exp = _setup(args)
        out = _out_dir(args)
        if args.command == "simulate":
            _cmd_simulate(args, bench, exp, out)
        elif args.command == "sensitivity":
            _cmd_sensitivity(args, bench, exp, out)
        elif args.command in ("detect", "isolate"):
            _cmd_single(args, bench, exp, out, isolate=args.command == "isolate")
        else:
            _cmd_montecarlo(args, bench, exp, out)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"ehmfdi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EhmError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"ehmfdi: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":      # pragma: no cover
    sys.exit(main())
