"""Unstable periodic orbits of the Rossler attractor from section data.

The flow is sampled only where it crosses x1 = 0 upward, which gives about
800 pairs of consecutive x2 values. Random linear costs over the invariant
measures of this one-dimensional return map produce atomic minimizers;
their atoms seed Newton shooting on the full flow, and only orbits that
close to 1e-6 are kept.

Expect tens of minutes on one core at the default of 200 costs.

Run: python demos/rossler_periodic_orbits.py [count]
"""

import sys

from invmeasure import replicate as rep


def progress(j, cat):
    if (j + 1) % 20 == 0:
        print(f"  {j + 1} costs tried, periods so far {cat.periods()}", flush=True)


count = int(sys.argv[1]) if len(sys.argv) > 1 else 200
cat = rep.rossler_upos(count=count, progress=progress)
for orbit in cat.orbits:
    pts = " ".join(f"{v:.5f}" for v in orbit.section_points)
    print(f"period {orbit.period:2d}  T={orbit.T:8.4f}  residual {orbit.residual:.1e}  x2: {pts}")
print(f"{cat.extracted} of {cat.attempts} solutions were atomic; periods found: {cat.periods()}")
