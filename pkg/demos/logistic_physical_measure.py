"""Recover the physical measure of the logistic map from one orbit.

The map x -> 2x^2 - 1 on [-1, 1] has the arcsine law as its physical
measure. We pretend not to know the map: from an orbit of 10^4 points we
estimate the Lie matrix by EDMD, fit the empirical first moment inside the
moment SDP, turn the optimal moments into a polynomial density and compare
its CDF with the exact one.

Run: python demos/logistic_physical_measure.py
"""

import numpy as np

from invmeasure import dynamics as dyn
from invmeasure.edmd import edmd_lie_matrix
from invmeasure.momentsdp import MomentFit, SemialgebraicSet, assemble_problem
from invmeasure.polybasis import BasisSpec
from invmeasure.recovery import cdf, cdf_and_l1, density_from_moments, logistic_cdf
from invmeasure.sdpsolver import solve_problem

snaps = dyn.simulate_map(dyn.logistic_map(), 0.25, 10_000)
y1 = dyn.empirical_moments(snaps, BasisSpec("chebyshev", 1, 1))[1]
print(f"{snaps.m} snapshot pairs, empirical first moment {y1:.5f}")

for k in (5, 10, 20):
    spec = BasisSpec("chebyshev", 1, 2 * k)
    L = edmd_lie_matrix(snaps, k, 2 * k, spec)
    problem = assemble_problem(L, SemialgebraicSet.box(spec), MomentFit([1], [y1], [1.0]))
    y, report = solve_problem(problem)
    rho = density_from_moments(y, k, spec)
    print(f"k={k:2d}: solver {report.status} after {report.iterations} iterations, "
          f"L1 CDF error {cdf_and_l1(rho, logistic_cdf):.5f}")

# the last density next to the exact CDF at a few points
x = np.linspace(-0.9, 0.9, 7)
R = cdf(rho)
for xi, a, b in zip(x, R(x), logistic_cdf(x)):
    print(f"  x={xi:+.2f}  recovered {a:.4f}  exact {b:.4f}")
