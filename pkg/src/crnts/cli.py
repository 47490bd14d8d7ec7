"""Command line: ``crnts run | report | simulate``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, SimulatorError
from .harness import emit_report, parse_sweep, run_experiments
from .metrics import DEFAULT_THRESHOLDS
from .sir import PluginHandle, SirConfig, simulate_sir


def _thresholds(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crnts", description="Trajectory-oriented Thompson Sampling experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a sweep CSV")
    run.add_argument("--sweep", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--parallelism", type=int, default=None)
    run.add_argument("--plugin", default=None, help="external simulator executable")
    run.add_argument("--master-seed", type=int, default=None,
                     help="sweep master seed (CRNTS_MASTER_SEED overrides)")

    report = sub.add_parser("report", help="summarize a results directory")
    report.add_argument("--in", dest="in_dir", required=True)
    report.add_argument("--thresholds", type=_thresholds, default=DEFAULT_THRESHOLDS)
    report.add_argument("--out", default=None)

    sim = sub.add_parser("simulate", help="print one SIR trajectory")
    sim.add_argument("--beta", type=float, required=True)
    sim.add_argument("--gamma", type=float, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--emit", choices=("csv", "json"), default="csv")
    sim.add_argument("--plugin", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            rows = parse_sweep(args.sweep, args.master_seed)
            if not rows:
                print("sweep is empty; nothing to run", file=sys.stderr)
                return 0

            def progress(event):
                print(f"{event['run_id']}: {event['status']} ({event['evaluations']} evals, "
                      f"{event['elapsed_s']}s){' ' + event['message'] if event['message'] else ''}",
                      file=sys.stderr)

            manifest = run_experiments(rows, args.out, args.parallelism, args.plugin, progress)
            return 1 if manifest["n_failed"] else 0
        if args.command == "report":
            result = emit_report(args.in_dir, args.thresholds, args.out)
            for err in result.errors:
                print(f"skipped {err}", file=sys.stderr)
            print(f"wrote {result.n_rows} rows to {result.summary_path}", file=sys.stderr)
            return 1 if result.errors else 0
        if args.command == "simulate":
            if args.plugin:
                traj = PluginHandle(args.plugin)([args.beta, args.gamma], args.seed)
            else:
                traj = simulate_sir(SirConfig(beta=args.beta, gamma=args.gamma, seed=args.seed))
            if args.emit == "json":
                print(traj.to_json())
            else:
                names = list(traj.outputs)
                print(",".join(["t", *names]))
                for i, t in enumerate(traj.times):
                    print(",".join([str(t), *(str(traj.outputs[n][i]) for n in names)]))
            return 0
    except (ConfigError, SimulatorError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
