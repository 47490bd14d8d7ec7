#!/usr/bin/env python3
"""How quickly does the fixed grid with fixed seeds run dry?

Runs fCRN (and fgCRN for contrast) with a generous budget and reports how many
evaluations each run consumed before stopping.
"""
import argparse

from crnts.harness import derive_seed
from crnts.optimizer import TsConfig, run_ts
from crnts.sir import sir_simulator


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=10)
    ap.add_argument("--Nmax", type=int, default=700)
    ap.add_argument("--M", type=int, default=100)
    ap.add_argument("--methods", nargs="+", default=["fCRN", "fgCRN"])
    args = ap.parse_args(argv)

    observed = sir_simulator([0.7, 0.2], 50)
    for method in args.methods:
        for k in range(args.replicates):
            cfg = TsConfig(method=method, Nmax=args.Nmax, M=args.M, master_seed=derive_seed(0, 0, "exhaust", k))
            trace = run_ts(cfg, sir_simulator, observed)
            below = int((trace.discrepancies < 30).sum())
            print(f"{method} rep {k}: {len(trace)} evaluations, exhausted={trace.exhausted}, RMSE<30: {below}")


if __name__ == "__main__":
    main()
