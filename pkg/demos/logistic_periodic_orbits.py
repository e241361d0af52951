"""Periodic orbits of the logistic map as atomic invariant measures.

Minimizing a linear functional of the moments over all invariant measures
lands on an extreme point, which for this map is often an ergodic measure
sitting on a periodic orbit. Atom extraction reads the orbit off the
optimal moment matrix.

Run: python demos/logistic_periodic_orbits.py
"""

import numpy as np

from invmeasure import replicate as rep

for row in rep.logistic_atoms(m=10_000, k=5, objectives=(1, 3, 5)):
    pts = np.round(sorted(row["atoms"]), 5).tolist()
    print(f"minimize y_{row['objective']}: value {row['value']:+.5f}, {len(pts)} atoms at {pts}")

# the period-3 orbit in closed form, for comparison
print("cos(2 pi j / 9), j = 1, 2, 4:", np.round(np.sort(np.cos(2 * np.pi * np.array([1, 2, 4]) / 9)), 5).tolist())
