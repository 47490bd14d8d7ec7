#!/usr/bin/env python3
"""Desk-scale method comparison on the SIR testbed.

Runs every requested method for a number of replicates through the harness,
writes the summary CSV and prints median proportion-below-threshold and rAUC
per method.

    python3 scripts/run_desk_fig4.py --out results/desk --replicates 10 --methods aCRN fHet
"""
import argparse
import csv
import statistics
import sys
from collections import defaultdict
from pathlib import Path

from crnts.harness import emit_report, parse_sweep, run_experiments
from crnts.optimizer import METHODS


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/desk")
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--methods", nargs="+", default=list(METHODS), choices=METHODS)
    ap.add_argument("--Nmax", type=int, default=300)
    ap.add_argument("--n-init", type=int, default=5)
    ap.add_argument("--n-rep", type=int, default=10)
    ap.add_argument("--n-ts", type=int, default=10)
    ap.add_argument("--M", type=int, default=100)
    ap.add_argument("--parallelism", type=int, default=None)
    ap.add_argument("--master-seed", type=int, default=0)
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep = out / "sweep.csv"
    sweep.write_text(
        "method,Nmax,n_init,n_rep,n_TS,M,replicates,beta_true,gamma_true,seed_true\n"
        f"{'|'.join(args.methods)},{args.Nmax},{args.n_init},{args.n_rep},{args.n_ts},{args.M},"
        f"{args.replicates},0.7,0.2,50\n"
    )
    rows = parse_sweep(sweep, args.master_seed)
    manifest = run_experiments(rows, out, args.parallelism,
                               progress=lambda e: print(f"{e['run_id']}: {e['status']} {e['elapsed_s']}s", file=sys.stderr))
    report = emit_report(out, out=out / "summary.csv")

    by = defaultdict(lambda: defaultdict(list))
    with open(report.summary_path, newline="") as fh:
        for r in csv.DictReader(fh):
            by[(r["method"], float(r["threshold"]))]["prop"].append(float(r["proportion_below"]))
            by[(r["method"], float(r["threshold"]))]["rauc"].append(float(r["rauc"]))
    print(f"{'method':8s} {'threshold':>9s} {'median prop':>12s} {'median rAUC':>12s}")
    for (method, t), vals in sorted(by.items()):
        print(f"{method:8s} {t:9g} {statistics.median(vals['prop']):12.3f} {statistics.median(vals['rauc']):12.3f}")
    return 1 if manifest["n_failed"] or report.errors else 0


if __name__ == "__main__":
    sys.exit(main())
