#!/usr/bin/env python3
"""Write the full-factorial sweep over the budget/design grid used for the method comparison.

3 budgets x 2 n_init x 2 n_rep x 3 n_TS x 3 M = 108 rows, each expanded over
all five methods by the harness. Running all of it is a cluster-scale job.
"""
import itertools
import sys

rows = ["method,Nmax,n_init,n_rep,n_TS,M,replicates"]
for nmax, n_init, n_rep, n_ts, m in itertools.product([300, 500, 700], [5, 10], [5, 10], [1, 5, 10], [100, 200, 300]):
    rows.append(f"all,{nmax},{n_init},{n_rep},{n_ts},{m},10")
out = sys.argv[1] if len(sys.argv) > 1 else "table1_sweep.csv"
with open(out, "w") as fh:
    fh.write("\n".join(rows) + "\n")
print(f"wrote {len(rows) - 1} rows to {out}")
