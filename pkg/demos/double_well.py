"""Stationary expectations of a noisy double-well system.

A single Euler-Maruyama path provides the snapshots. The data-driven
generator is thresholded, the SDP maximizes E[x1^2 + x2^2] over the
stationary measures it admits, and the predicted Chebyshev expectations are
set against quadrature of the exact density and a histogram of the data.

This takes several minutes at the default 5e5 steps.

Run: python demos/double_well.py [steps]
"""

import sys

from invmeasure import replicate as rep
from invmeasure.pipeline import table_report

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500_000
res = rep.double_well_table(steps=steps)
rows = [{**r, "alpha": ",".join(map(str, r["alpha"]))} for r in res.rows]
print(table_report(rows, fmt="{:.4f}")[1])
print(f"{res.snapshots} snapshots, solver {res.report['status']}, {res.seconds:.0f}s")
